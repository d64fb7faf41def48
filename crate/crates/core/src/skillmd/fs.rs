//! Reading and writing skill directories.

use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{parse_skill, serialize_skill, ResourceKind, ResourceRef, SkillArtifact, SkillError};

/// Load `<dir>/SKILL.md` and every regular file under its resource
/// directories. Symlinks are not followed.
pub fn load_skill_dir(dir: &Path) -> Result<SkillArtifact, SkillError> {
    let skill_md = dir.join("SKILL.md");
    if !skill_md.is_file() {
        return Err(SkillError::MissingSkillFile {
            path: dir.display().to_string(),
        });
    }
    let text = fs::read_to_string(&skill_md).map_err(|e| SkillError::io(&skill_md, e))?;
    let mut artifact = parse_skill(&text)?;
    for kind in ResourceKind::ALL {
        let sub = dir.join(kind.dir());
        if !sub.is_dir() {
            continue;
        }
        for entry in WalkDir::new(&sub).follow_links(false).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| sub.clone());
                SkillError::io(&path, e.into())
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(dir).expect("walked under dir");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let bytes = fs::read(entry.path()).map_err(|e| SkillError::io(entry.path(), e))?;
            artifact.resources.push(ResourceRef { path: rel, kind, bytes });
        }
    }
    artifact.resources.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(artifact)
}

/// Write the artifact into exactly `dir`, creating it if needed.
pub fn write_skill_into(artifact: &SkillArtifact, dir: &Path) -> Result<(), SkillError> {
    let doc = serialize_skill(artifact)?;
    fs::create_dir_all(dir).map_err(|e| SkillError::io(dir, e))?;
    let skill_md = dir.join("SKILL.md");
    fs::write(&skill_md, doc).map_err(|e| SkillError::io(&skill_md, e))?;
    for res in &artifact.resources {
        let target = dir.join(&res.path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| SkillError::io(parent, e))?;
        }
        fs::write(&target, &res.bytes).map_err(|e| SkillError::io(&target, e))?;
    }
    Ok(())
}

/// Write the artifact to `<parent>/<name>/` and return that directory.
pub fn write_skill_dir(artifact: &SkillArtifact, parent: &Path) -> Result<PathBuf, SkillError> {
    let dir = parent.join(&artifact.frontmatter.name);
    write_skill_into(artifact, &dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut a = parse_skill(super::super::tests::WALKTHROUGH).unwrap();
        a.resources = vec![
            ResourceRef::new("references/notes.md", b"notes".to_vec()).unwrap(),
            ResourceRef::new("scripts/nested/run.py", b"print(1)\n".to_vec()).unwrap(),
        ];
        let dir = write_skill_dir(&a, tmp.path()).unwrap();
        assert_eq!(dir, tmp.path().join("visual-theorem-walkthrough"));
        assert_eq!(load_skill_dir(&dir).unwrap(), a);
    }

    #[test]
    fn missing_skill_file() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_skill_dir(tmp.path()),
            Err(SkillError::MissingSkillFile { .. })
        ));
    }
}
