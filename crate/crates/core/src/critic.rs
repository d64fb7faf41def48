//! Grid-anchored layout critique for rendered frames.
//!
//! A frame is divided into `grid_rows x grid_cols` half-open cells; each
//! element's closed pixel bounding box maps to the cells it touches. Pairs
//! whose cell overlap exceeds the threshold get a relocation directive.
//! All geometry is integer arithmetic, so cell boundaries are exact even
//! when the frame size is not a multiple of the grid.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Cell = (u32, u32);

#[derive(Debug, Error, PartialEq)]
pub enum CriticError {
    #[error("frame {width}x{height} cannot hold a {rows}x{cols} grid")]
    InvalidFrame {
        width: u32,
        height: u32,
        rows: u32,
        cols: u32,
    },
    #[error("element `{0}` has an empty or inverted bounding box")]
    InvalidBBox(String),
    #[error("element `{0}` lies outside the frame")]
    OutOfFrame(String),
    #[error("overlap needs two non-empty cell sets")]
    EmptyCellSet,
    #[error("no elements to critique")]
    NoElements,
    #[error("overlap threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
}

fn default_grid() -> u32 {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default = "default_grid")]
    pub grid_rows: u32,
    #[serde(default = "default_grid")]
    pub grid_cols: u32,
}

impl Frame {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self, CriticError> {
        Self::with_grid(width_px, height_px, 10, 10)
    }

    pub fn with_grid(width_px: u32, height_px: u32, grid_rows: u32, grid_cols: u32) -> Result<Self, CriticError> {
        let f = Frame {
            width_px,
            height_px,
            grid_rows,
            grid_cols,
        };
        f.check()?;
        Ok(f)
    }

    pub fn check(&self) -> Result<(), CriticError> {
        if self.grid_rows == 0
            || self.grid_cols == 0
            || self.width_px < self.grid_cols
            || self.height_px < self.grid_rows
        {
            return Err(CriticError::InvalidFrame {
                width: self.width_px,
                height: self.height_px,
                rows: self.grid_rows,
                cols: self.grid_cols,
            });
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.grid_rows as usize * self.grid_cols as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Text,
    Shape,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: String,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [u32; 4],
    pub kind: ElementKind,
}

impl Element {
    pub fn new(id: impl Into<String>, bbox: [u32; 4], kind: ElementKind) -> Self {
        Element {
            element_id: id.into(),
            bbox,
            kind,
        }
    }

    fn area(&self) -> u64 {
        let [x0, y0, x1, y1] = self.bbox;
        u64::from(x1.saturating_sub(x0)) * u64::from(y1.saturating_sub(y0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub overlap_threshold: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            overlap_threshold: 0.25,
        }
    }
}

impl CriticConfig {
    pub fn new(overlap_threshold: f64) -> Result<Self, CriticError> {
        if !(0.0..=1.0).contains(&overlap_threshold) {
            return Err(CriticError::InvalidThreshold(overlap_threshold));
        }
        Ok(CriticConfig { overlap_threshold })
    }
}

/// Index of the half-open band containing `pos` when `extent` is split
/// into `bands` parts.
fn band(pos: u32, extent: u32, bands: u32) -> u32 {
    let b = (u64::from(pos) * u64::from(bands) / u64::from(extent)) as u32;
    b.min(bands - 1)
}

/// Cells whose half-open pixel rectangle meets the closed bounding box.
pub fn map_to_grid(element: &Element, frame: &Frame) -> Result<BTreeSet<Cell>, CriticError> {
    frame.check()?;
    let [x0, y0, x1, y1] = element.bbox;
    if x0 >= x1 || y0 >= y1 {
        return Err(CriticError::InvalidBBox(element.element_id.clone()));
    }
    if x1 > frame.width_px || y1 > frame.height_px {
        return Err(CriticError::OutOfFrame(element.element_id.clone()));
    }
    let (c0, c1) = (
        band(x0, frame.width_px, frame.grid_cols),
        band(x1, frame.width_px, frame.grid_cols),
    );
    let (r0, r1) = (
        band(y0, frame.height_px, frame.grid_rows),
        band(y1, frame.height_px, frame.grid_rows),
    );
    Ok((r0..=r1).flat_map(|r| (c0..=c1).map(move |c| (r, c))).collect())
}

/// |A ∩ B| / min(|A|, |B|).
pub fn overlap_score(a: &BTreeSet<Cell>, b: &BTreeSet<Cell>) -> Result<f64, CriticError> {
    if a.is_empty() || b.is_empty() {
        return Err(CriticError::EmptyCellSet);
    }
    let shared = a.intersection(b).count();
    Ok(shared as f64 / a.len().min(b.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    /// Tie-break order for equal margins.
    pub const PREFERENCE: [Direction; 4] = [Direction::Right, Direction::Down, Direction::Left, Direction::Up];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Left => "LEFT",
            Direction::Right => "RIGHT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// The element to relocate (the smaller of the pair).
    pub element_id: String,
    /// The element it should be placed next to.
    pub anchor_id: String,
    pub overlap: f64,
    pub direction: Direction,
    /// Current relative placement of the moved element.
    pub current: Direction,
    pub directive: String,
    /// `before → after` refactoring template.
    pub template: String,
}

fn center(e: &Element) -> (i64, i64) {
    let [x0, y0, x1, y1] = e.bbox.map(i64::from);
    (x0 + x1, y0 + y1)
}

fn relative_side(moved: &Element, anchor: &Element) -> Direction {
    let (mx, my) = center(moved);
    let (ax, ay) = center(anchor);
    let (dx, dy) = (mx - ax, my - ay);
    if dx.abs() > dy.abs() {
        if dx > 0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dy > 0 {
        Direction::Down
    } else {
        Direction::Up
    }
}

/// Number of consecutive cell lines, counted inward from the frame edge on
/// `side`, that no other element occupies within the moved element's band.
fn free_margin(side: Direction, cells: &BTreeSet<Cell>, occupied: &BTreeSet<Cell>, frame: &Frame) -> u32 {
    let rows: BTreeSet<u32> = cells.iter().map(|c| c.0).collect();
    let cols: BTreeSet<u32> = cells.iter().map(|c| c.1).collect();
    let (min_r, max_r) = (*rows.first().unwrap(), *rows.last().unwrap());
    let (min_c, max_c) = (*cols.first().unwrap(), *cols.last().unwrap());
    let col_free = |c: u32| (min_r..=max_r).all(|r| !occupied.contains(&(r, c)));
    let row_free = |r: u32| (min_c..=max_c).all(|c| !occupied.contains(&(r, c)));
    match side {
        Direction::Right => (max_c + 1..frame.grid_cols).rev().take_while(|c| col_free(*c)).count() as u32,
        Direction::Left => (0..min_c).take_while(|c| col_free(*c)).count() as u32,
        Direction::Down => (max_r + 1..frame.grid_rows).rev().take_while(|r| row_free(*r)).count() as u32,
        Direction::Up => (0..min_r).take_while(|r| row_free(*r)).count() as u32,
    }
}

/// One suggestion per pair whose overlap strictly exceeds the threshold.
pub fn critique_layout(
    elements: &[Element],
    frame: &Frame,
    config: &CriticConfig,
) -> Result<Vec<Suggestion>, CriticError> {
    if elements.is_empty() {
        return Err(CriticError::NoElements);
    }
    CriticConfig::new(config.overlap_threshold)?;
    let cells: Vec<BTreeSet<Cell>> = elements
        .iter()
        .map(|e| map_to_grid(e, frame))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for i in 0..elements.len() {
        for j in i + 1..elements.len() {
            let score = overlap_score(&cells[i], &cells[j])?;
            if score <= config.overlap_threshold {
                continue;
            }
            let key = |k: usize| {
                (
                    cells[k].len(),
                    elements[k].area(),
                    elements[k].kind != ElementKind::Text,
                )
            };
            let (m, a) = if key(j) < key(i) { (j, i) } else { (i, j) };
            let occupied: BTreeSet<Cell> = cells
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != m)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            let direction = Direction::PREFERENCE
                .into_iter()
                .max_by_key(|d| {
                    let rank = Direction::PREFERENCE.iter().position(|p| p == d).unwrap();
                    (free_margin(*d, &cells[m], &occupied, frame), std::cmp::Reverse(rank))
                })
                .unwrap();
            let (moved, anchor) = (&elements[m].element_id, &elements[a].element_id);
            let current = relative_side(&elements[m], &elements[a]);
            out.push(Suggestion {
                element_id: moved.clone(),
                anchor_id: anchor.clone(),
                overlap: score,
                direction,
                current,
                directive: format!("{moved}.next_to({anchor}, {})", direction.as_str()),
                template: format!(
                    "{moved}.next_to({anchor}, {}) → {moved}.next_to({anchor}, {})",
                    current.as_str(),
                    direction.as_str()
                ),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frame: Frame,
    pub elements: Vec<Element>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_threshold: Option<f64>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub iterations: usize,
    pub clean: bool,
    pub remaining: Vec<Suggestion>,
    pub elements: Vec<Element>,
}

/// Produces the next layout from the current one and its suggestions.
pub type Rerender<'a> = dyn FnMut(&[Element], &[Suggestion]) -> Vec<Element> + 'a;

/// Critique, hand suggestions to `rerender` for a new layout, repeat until
/// clean or `max_iterations` renders have been requested.
pub fn refine_until_clean(
    elements: Vec<Element>,
    frame: &Frame,
    config: &CriticConfig,
    max_iterations: usize,
    rerender: &mut Rerender,
) -> Result<RefineOutcome, CriticError> {
    let mut elements = elements;
    let mut iterations = 0;
    loop {
        let suggestions = critique_layout(&elements, frame, config)?;
        if suggestions.is_empty() || iterations == max_iterations {
            return Ok(RefineOutcome {
                iterations,
                clean: suggestions.is_empty(),
                remaining: suggestions,
                elements,
            });
        }
        elements = rerender(&elements, &suggestions);
        iterations += 1;
    }
}
