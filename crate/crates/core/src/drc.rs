// SPDX-License-Identifier: Apache-2.0

//! Design-rule checking on squish grids.
//!
//! Space is the Euclidean gap between two distinct polygons (facing edges
//! and corner-to-corner alike). Width is the length of every maximal
//! cross-section run of a polygon along x and y. Area is the enclosed area.
//! All three rules are inclusive: a value equal to the minimum is clean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::squish::{encode_labeled, LayoutPattern, SquishError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RulesError {
    #[error("design rules must be positive")]
    NonPositive,
    #[error("min_area {min_area} is smaller than min_width² = {width_sq}")]
    AreaBelowWidth { min_area: i64, width_sq: i64 },
    #[error("rules file: {0}")]
    Parse(String),
}

/// Minimum space, width and area in nm / nm², plus the placement grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRules {
    pub min_space: i64,
    pub min_width: i64,
    pub min_area: i64,
    #[serde(default = "default_unit")]
    pub unit: i64,
}

fn default_unit() -> i64 {
    1
}

impl DesignRules {
    pub fn new(min_space: i64, min_width: i64, min_area: i64) -> Result<Self, RulesError> {
        let rules = Self {
            min_space,
            min_width,
            min_area,
            unit: 1,
        };
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<(), RulesError> {
        if self.min_space <= 0 || self.min_width <= 0 || self.min_area <= 0 || self.unit <= 0 {
            return Err(RulesError::NonPositive);
        }
        if self.min_area < self.min_width * self.min_width {
            return Err(RulesError::AreaBelowWidth {
                min_area: self.min_area,
                width_sq: self.min_width * self.min_width,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RulesError> {
        let rules: Self = serde_json::from_str(text).map_err(|e| RulesError::Parse(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Space,
    Width,
    Area,
    Extent,
}

/// Inclusive cell-index box; `upper`/`bottom` are the lowest/highest row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellBox {
    pub upper: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl CellBox {
    pub fn cell(row: usize, col: usize) -> Self {
        Self {
            upper: row,
            left: col,
            bottom: row,
            right: col,
        }
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            upper: self.upper.min(other.upper),
            left: self.left.min(other.left),
            bottom: self.bottom.max(other.bottom),
            right: self.right.max(other.right),
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.upper..=self.bottom).contains(&row) && (self.left..=self.right).contains(&col)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.upper..=self.bottom).flat_map(move |r| (self.left..=self.right).map(move |c| (r, c)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// For legalizer extent failures, the axis on which zeroing a cell of
    /// `bbox` lowers the width/space bound. This may differ from the
    /// overflowing axis when area bounds drove the overflow.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis: Option<Axis>,
    pub bbox: CellBox,
    /// Polygon (or component) indices involved.
    pub polygons: Vec<usize>,
    /// Offending value: distance, run length, area or summed lower bound.
    pub measured: f64,
    pub required: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Labeled cells with physical scan lines, shared by the checker and the
/// legalizer.
pub(crate) struct CellGrid<'a> {
    pub labels: &'a [Option<usize>],
    pub rows: usize,
    pub cols: usize,
    pub xs: &'a [i64],
    pub ys: &'a [i64],
}

/// Closest violating cell pair between two polygons.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SpacePair {
    pub labels: (usize, usize),
    pub cells: ((usize, usize), (usize, usize)),
    pub dist2: i64,
    pub bbox: CellBox,
}

impl CellGrid<'_> {
    fn label(&self, r: usize, c: usize) -> Option<usize> {
        self.labels[r * self.cols + c]
    }

    fn gap_x(&self, c1: usize, c2: usize) -> i64 {
        match c1.cmp(&c2) {
            std::cmp::Ordering::Less => self.xs[c2] - self.xs[c1 + 1],
            std::cmp::Ordering::Greater => self.xs[c1] - self.xs[c2 + 1],
            std::cmp::Ordering::Equal => 0,
        }
    }

    /// Every pair of distinct polygons closer than `min_space`, keyed by the
    /// ordered label pair.
    pub fn space_pairs(&self, min_space: i64) -> Vec<SpacePair> {
        let s2 = min_space * min_space;
        let mut found: BTreeMap<(usize, usize), SpacePair> = BTreeMap::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let Some(a) = self.label(r, c) else { continue };
                for r2 in r..self.rows {
                    let gy = if r2 == r { 0 } else { self.ys[r2] - self.ys[r + 1] };
                    if gy >= min_space {
                        break;
                    }
                    // same row: only look right, to visit each pair once
                    let lo = if r2 == r { c + 1 } else { 0 };
                    let mut scan = |c2: usize| -> bool {
                        let gx = self.gap_x(c, c2);
                        if gx >= min_space {
                            return false;
                        }
                        let d2 = gx * gx + gy * gy;
                        if let Some(b) = self.label(r2, c2) {
                            if b != a && d2 < s2 {
                                let key = (a.min(b), a.max(b));
                                let (ca, cb) = if a < b { ((r, c), (r2, c2)) } else { ((r2, c2), (r, c)) };
                                let bbox = CellBox::cell(r, c).union(CellBox::cell(r2, c2));
                                found
                                    .entry(key)
                                    .and_modify(|p| {
                                        p.bbox = p.bbox.union(bbox);
                                        if d2 < p.dist2 {
                                            p.dist2 = d2;
                                            p.cells = (ca, cb);
                                        }
                                    })
                                    .or_insert(SpacePair {
                                        labels: key,
                                        cells: (ca, cb),
                                        dist2: d2,
                                        bbox,
                                    });
                            }
                        }
                        true
                    };
                    for c2 in c.max(lo)..self.cols {
                        if !scan(c2) {
                            break;
                        }
                    }
                    if r2 > r {
                        for c2 in (0..c).rev() {
                            if !scan(c2) {
                                break;
                            }
                        }
                    }
                }
            }
        }
        found.into_values().collect()
    }

    /// Maximal same-polygon runs shorter than `min_width`, one violation per
    /// (polygon, axis).
    pub fn width_violations(&self, min_width: i64) -> Vec<Violation> {
        let mut found: BTreeMap<(usize, Axis), Violation> = BTreeMap::new();
        let mut record = |label: usize, axis: Axis, len: i64, bbox: CellBox| {
            found
                .entry((label, axis))
                .and_modify(|v| {
                    v.bbox = v.bbox.union(bbox);
                    v.measured = v.measured.min(len as f64);
                })
                .or_insert(Violation {
                    kind: ViolationKind::Width,
                    axis: Some(axis),
                    bbox,
                    polygons: vec![label],
                    measured: len as f64,
                    required: min_width as f64,
                });
        };
        for r in 0..self.rows {
            let mut c = 0;
            while c < self.cols {
                let Some(a) = self.label(r, c) else {
                    c += 1;
                    continue;
                };
                let start = c;
                while c < self.cols && self.label(r, c) == Some(a) {
                    c += 1;
                }
                let len = self.xs[c] - self.xs[start];
                if len < min_width {
                    record(a, Axis::X, len, CellBox { upper: r, bottom: r, left: start, right: c - 1 });
                }
            }
        }
        for c in 0..self.cols {
            let mut r = 0;
            while r < self.rows {
                let Some(a) = self.label(r, c) else {
                    r += 1;
                    continue;
                };
                let start = r;
                while r < self.rows && self.label(r, c) == Some(a) {
                    r += 1;
                }
                let len = self.ys[r] - self.ys[start];
                if len < min_width {
                    record(a, Axis::Y, len, CellBox { upper: start, bottom: r - 1, left: c, right: c });
                }
            }
        }
        found.into_values().collect()
    }

    /// Per-label area and bounding box.
    pub fn polygon_extents(&self) -> BTreeMap<usize, (i64, CellBox)> {
        let mut out: BTreeMap<usize, (i64, CellBox)> = BTreeMap::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(a) = self.label(r, c) {
                    let area = (self.xs[c + 1] - self.xs[c]) * (self.ys[r + 1] - self.ys[r]);
                    out.entry(a)
                        .and_modify(|(s, b)| {
                            *s += area;
                            *b = b.union(CellBox::cell(r, c));
                        })
                        .or_insert((area, CellBox::cell(r, c)));
                }
            }
        }
        out
    }

    pub fn check(&self, rules: &DesignRules) -> ViolationReport {
        let mut violations: Vec<Violation> = self
            .space_pairs(rules.min_space)
            .into_iter()
            .map(|p| Violation {
                kind: ViolationKind::Space,
                axis: None,
                bbox: p.bbox,
                polygons: vec![p.labels.0, p.labels.1],
                measured: (p.dist2 as f64).sqrt(),
                required: rules.min_space as f64,
            })
            .collect();
        violations.extend(self.width_violations(rules.min_width));
        for (label, (area, bbox)) in self.polygon_extents() {
            if area < rules.min_area {
                violations.push(Violation {
                    kind: ViolationKind::Area,
                    axis: None,
                    bbox,
                    polygons: vec![label],
                    measured: area as f64,
                    required: rules.min_area as f64,
                });
            }
        }
        ViolationReport { violations }
    }
}

/// Reports every space, width and area violation of a pattern. Cell boxes
/// refer to the pattern's own minimal squish grid.
pub fn check(pattern: &LayoutPattern, rules: &DesignRules) -> Result<ViolationReport, SquishError> {
    let grid = encode_labeled(pattern)?;
    let cells = CellGrid {
        labels: &grid.labels,
        rows: grid.rows(),
        cols: grid.cols(),
        xs: &grid.x_lines,
        ys: &grid.y_lines,
    };
    Ok(cells.check(rules))
}
