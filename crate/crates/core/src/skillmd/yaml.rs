//! The YAML subset accepted in SKILL.md frontmatter.
//!
//! A flat mapping whose values are scalars (plain, single- or double-quoted,
//! plain scalars may fold across indented continuation lines) or lists of
//! scalars (flow `[a, "b"]`, possibly spanning lines, or block `- a`).
//! Anchors, aliases, tags, block scalars and nested mappings are rejected.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum YamlValue {
    Null,
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YamlError {
    /// 1-based line within the frontmatter block.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, YamlError> {
    Err(YamlError {
        line,
        message: message.into(),
    })
}

fn is_blank_or_comment(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn indented(line: &str) -> bool {
    line.starts_with([' ', '\t'])
}

fn split_key(line: &str) -> Option<(&str, &str)> {
    let colon = line.find(':')?;
    let key = &line[..colon];
    let valid = key.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !valid {
        return None;
    }
    let rest = &line[colon + 1..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    Some((key, rest.trim()))
}

/// Parse a frontmatter block into ordered (key, value, line) entries.
pub fn parse_mapping(src: &str) -> Result<Vec<(String, YamlValue, usize)>, YamlError> {
    let lines: Vec<&str> = src.lines().collect();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;
        if is_blank_or_comment(line) {
            i += 1;
            continue;
        }
        if indented(line) {
            return err(lineno, "unexpected indentation; nested mappings are not supported");
        }
        let Some((key, rest)) = split_key(line) else {
            return err(lineno, "expected `key: value`");
        };
        if !seen.insert(key.to_string()) {
            return err(lineno, format!("duplicate key `{key}`"));
        }
        // Indented continuation lines belonging to this key.
        let mut j = i + 1;
        while j < lines.len() && (lines[j].trim().is_empty() || indented(lines[j])) {
            j += 1;
        }
        while j > i + 1 && lines[j - 1].trim().is_empty() {
            j -= 1;
        }
        let cont: Vec<(usize, &str)> = (i + 1..j).map(|k| (k + 1, lines[k])).collect();
        let value = parse_value(lineno, rest, &cont)?;
        out.push((key.to_string(), value, lineno));
        i = j;
    }
    Ok(out)
}

fn parse_value(lineno: usize, rest: &str, cont: &[(usize, &str)]) -> Result<YamlValue, YamlError> {
    let first = rest.chars().next();
    match first {
        None => {
            let items: Vec<&(usize, &str)> = cont.iter().filter(|(_, l)| !is_blank_or_comment(l)).collect();
            if items.is_empty() {
                return Ok(YamlValue::Null);
            }
            let mut list = Vec::new();
            for (n, l) in items {
                let t = l.trim();
                let Some(item) = t.strip_prefix('-').filter(|r| r.is_empty() || r.starts_with(' ')) else {
                    return err(*n, "nested mappings are not supported");
                };
                let item = item.trim();
                if item.starts_with('-') || item.starts_with('[') || item.starts_with('{') {
                    return err(*n, "nested collections are not supported");
                }
                if item.is_empty() {
                    return err(*n, "empty list item");
                }
                list.push(parse_inline_scalar(*n, item)?);
            }
            Ok(YamlValue::List(list))
        }
        Some('[') => {
            let mut text = rest.to_string();
            for (_, l) in cont {
                text.push(' ');
                text.push_str(l.trim());
            }
            parse_flow_list(lineno, &text).map(YamlValue::List)
        }
        Some('{') => err(lineno, "nested mappings are not supported"),
        Some('&') => err(lineno, "anchors are not supported"),
        Some('*') => err(lineno, "aliases are not supported"),
        Some('!') => err(lineno, "tags are not supported"),
        Some('|') | Some('>') => err(lineno, "block scalars are not supported"),
        Some('"') | Some('\'') => {
            let mut text = rest.to_string();
            for (_, l) in cont {
                text.push(' ');
                text.push_str(l.trim());
            }
            let (value, used) = parse_quoted(lineno, &text)?;
            let tail = text[used..].trim();
            if !tail.is_empty() && !tail.starts_with('#') {
                return err(lineno, "unexpected content after quoted scalar");
            }
            Ok(YamlValue::Scalar(value))
        }
        Some(_) => {
            let mut parts = vec![plain_scalar(lineno, rest)?];
            for (n, l) in cont {
                if is_blank_or_comment(l) {
                    continue;
                }
                let t = l.trim();
                if t.starts_with("- ") {
                    return err(*n, "list item after a scalar value");
                }
                parts.push(plain_scalar(*n, t)?);
            }
            Ok(YamlValue::Scalar(parts.join(" ")))
        }
    }
}

fn strip_comment(s: &str) -> &str {
    match s.find(" #") {
        Some(i) => &s[..i],
        None => s,
    }
}

fn plain_scalar(lineno: usize, raw: &str) -> Result<String, YamlError> {
    let s = strip_comment(raw).trim();
    if s.starts_with(['&', '*', '!', '|', '>', '@', '`', '{', '[', '%']) {
        return err(lineno, format!("unsupported indicator at start of `{s}`"));
    }
    if s.contains(": ") || s.ends_with(':') {
        return err(lineno, "`: ` inside a plain scalar; quote the value");
    }
    Ok(s.to_string())
}

fn parse_inline_scalar(lineno: usize, raw: &str) -> Result<String, YamlError> {
    if raw.starts_with(['"', '\'']) {
        let (v, used) = parse_quoted(lineno, raw)?;
        let tail = raw[used..].trim();
        if !tail.is_empty() && !tail.starts_with('#') {
            return err(lineno, "unexpected content after quoted scalar");
        }
        Ok(v)
    } else {
        plain_scalar(lineno, raw)
    }
}

/// Parse a quoted scalar at the start of `s`; returns the value and the byte
/// length consumed including quotes.
fn parse_quoted(lineno: usize, s: &str) -> Result<(String, usize), YamlError> {
    let mut chars = s.char_indices();
    let (_, quote) = chars.next().expect("caller checked first char");
    let mut out = String::new();
    while let Some((i, c)) = chars.next() {
        if quote == '\'' {
            if c == '\'' {
                if s[i + 1..].starts_with('\'') {
                    chars.next();
                    out.push('\'');
                    continue;
                }
                return Ok((out, i + 1));
            }
            out.push(c);
            continue;
        }
        match c {
            '"' => return Ok((out, i + 1)),
            '\\' => {
                let Some((_, e)) = chars.next() else {
                    return err(lineno, "dangling escape");
                };
                match e {
                    '\\' => out.push('\\'),
                    '"' => out.push('"'),
                    '/' => out.push('/'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    ' ' => out.push(' '),
                    'x' | 'u' | 'U' => {
                        let width = match e {
                            'x' => 2,
                            'u' => 4,
                            _ => 8,
                        };
                        let mut hex = String::new();
                        for _ in 0..width {
                            match chars.next() {
                                Some((_, h)) => hex.push(h),
                                None => return err(lineno, "truncated escape"),
                            }
                        }
                        let decoded = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32);
                        match decoded {
                            Some(ch) => out.push(ch),
                            None => return err(lineno, format!("invalid escape \\{e}{hex}")),
                        }
                    }
                    other => return err(lineno, format!("unsupported escape \\{other}")),
                }
            }
            _ => out.push(c),
        }
    }
    err(lineno, "unterminated quoted scalar")
}

fn parse_flow_list(lineno: usize, text: &str) -> Result<Vec<String>, YamlError> {
    let inner = &text[1..];
    let mut items = Vec::new();
    let mut rest = inner.trim_start();
    loop {
        if let Some(after) = rest.strip_prefix(']') {
            let tail = after.trim();
            if !tail.is_empty() && !tail.starts_with('#') {
                return err(lineno, "unexpected content after flow sequence");
            }
            return Ok(items);
        }
        if rest.is_empty() {
            return err(lineno, "unterminated flow sequence");
        }
        let (item, used) = if rest.starts_with(['"', '\'']) {
            parse_quoted(lineno, rest)?
        } else {
            if rest.starts_with(['[', '{']) {
                return err(lineno, "nested collections are not supported");
            }
            let end = rest.find([',', ']']).unwrap_or(rest.len());
            let raw = rest[..end].trim();
            if raw.is_empty() {
                return err(lineno, "empty flow sequence item");
            }
            if raw.contains(['[', '{', '}']) {
                return err(lineno, "nested collections are not supported");
            }
            (plain_scalar(lineno, raw)?, end)
        };
        items.push(item);
        rest = rest[used..].trim_start();
        if let Some(after) = rest.strip_prefix(',') {
            rest = after.trim_start();
        } else if !rest.starts_with(']') {
            return err(lineno, "expected `,` or `]` in flow sequence");
        }
    }
}

const RESERVED: &[&str] = &[
    "null", "Null", "NULL", "~", "true", "True", "TRUE", "false", "False", "FALSE", "yes", "no", "on", "off",
];

/// Whether `s` can be emitted as a plain scalar and read back unchanged by
/// this parser and by a standard YAML loader as a string.
pub fn is_plain_safe(s: &str) -> bool {
    !s.is_empty()
        && s.trim() == s
        && !s.starts_with([
            '-', '?', ':', ',', '[', ']', '{', '}', '#', '&', '*', '!', '|', '>', '\'', '"', '%', '@', '`',
        ])
        && !s.contains(": ")
        && !s.contains(" #")
        && !s.ends_with(':')
        && !s.contains(['\n', '\r', '\t'])
        && !s.chars().any(char::is_control)
        && !RESERVED.contains(&s)
        && s.parse::<f64>().is_err()
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn scalar(s: &str) -> String {
    if is_plain_safe(s) {
        s.to_string()
    } else {
        quote(s)
    }
}

pub fn flow_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|i| quote(i)).collect();
    format!("[{}]", quoted.join(", "))
}
