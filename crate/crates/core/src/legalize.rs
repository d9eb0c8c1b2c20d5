// SPDX-License-Identifier: Apache-2.0

//! Topology legalization: choose geometry vectors so the decoded pattern is
//! DRC-clean at a requested physical extent.
//!
//! Every axis is a system of interval-sum lower bounds over consecutive
//! cell intervals (width runs, spaces between distinct shapes, each interval
//! at least one grid unit). Sorting the bounds by their right end and adding
//! each deficit to the rightmost interval gives the minimum total length, so
//! feasibility is exact. Corner spacing and minimum area are not linear in
//! the intervals; they are handled by checking the candidate geometry and
//! adding interval bounds for whatever still violates, up to a fixed number
//! of rounds.

use serde::{Deserialize, Serialize};

use crate::drc::{Axis, CellBox, CellGrid, DesignRules, Violation, ViolationKind, ViolationReport};
use crate::squish::{label_components, prefix, GeometryVectors, TopologyMatrix};

pub const DEFAULT_MAX_ROUNDS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalExtent {
    pub width: i64,
    pub height: i64,
}

impl PhysicalExtent {
    pub fn new(width: i64, height: i64) -> Self {
        Self { width, height }
    }

    fn along(&self, axis: Axis) -> i64 {
        match axis {
            Axis::X => self.width,
            Axis::Y => self.height,
        }
    }
}

/// `sum(d[lo..=hi]) >= need`, in grid units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Bound {
    lo: usize,
    hi: usize,
    need: i64,
    origin: CellBox,
}

/// Minimum total length of an axis: diagonal contacts between distinct
/// shapes (which no geometry can separate) are counted separately and
/// compare first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LowerBound {
    pub contacts: usize,
    pub total: i64,
}

struct Analysis {
    labels: Vec<Option<usize>>,
    contacts: Vec<CellBox>,
}

fn analyze(topology: &TopologyMatrix) -> Analysis {
    let (labels, _) = label_components(topology);
    let (rows, cols) = (topology.rows(), topology.cols());
    let at = |r: usize, c: usize| labels[r * cols + c];
    let mut contacts = Vec::new();
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            let (a, b, d, e) = (at(r, c), at(r, c + 1), at(r + 1, c), at(r + 1, c + 1));
            let diag = matches!((a, e), (Some(x), Some(y)) if x != y) && b.is_none() && d.is_none();
            let anti = matches!((b, d), (Some(x), Some(y)) if x != y) && a.is_none() && e.is_none();
            if diag || anti {
                contacts.push(CellBox { upper: r, left: c, bottom: r + 1, right: c + 1 });
            }
        }
    }
    Analysis { labels, contacts }
}

/// Width and space bounds along one axis. For `Axis::X` each row is scanned
/// and bounds range over columns.
fn structural_bounds(
    labels: &[Option<usize>],
    rows: usize,
    cols: usize,
    axis: Axis,
    width: i64,
    space: i64,
) -> Vec<Bound> {
    let (lines, len) = match axis {
        Axis::X => (rows, cols),
        Axis::Y => (cols, rows),
    };
    let at = |line: usize, i: usize| match axis {
        Axis::X => labels[line * cols + i],
        Axis::Y => labels[i * cols + line],
    };
    let origin = |line: usize, lo: usize, hi: usize| match axis {
        Axis::X => CellBox { upper: line, bottom: line, left: lo, right: hi },
        Axis::Y => CellBox { upper: lo, bottom: hi, left: line, right: line },
    };
    let mut bounds = Vec::new();
    for line in 0..lines {
        let mut prev_run: Option<(usize, usize)> = None; // (end, label)
        let mut i = 0;
        while i < len {
            let Some(a) = at(line, i) else {
                i += 1;
                continue;
            };
            let start = i;
            while i < len && at(line, i) == Some(a) {
                i += 1;
            }
            bounds.push(Bound { lo: start, hi: i - 1, need: width, origin: origin(line, start, i - 1) });
            if let Some((end, label)) = prev_run {
                if label != a && start > end + 1 {
                    bounds.push(Bound {
                        lo: end + 1,
                        hi: start - 1,
                        need: space,
                        origin: origin(line, end, start),
                    });
                }
            }
            prev_run = Some((i - 1, a));
        }
    }
    bounds
}

/// Minimum-total assignment with every interval at least one unit. Returns
/// the values and the indices of bounds that forced extra length.
fn solve_axis(len: usize, bounds: &[Bound]) -> (Vec<i64>, Vec<usize>) {
    let mut values = vec![1i64; len];
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    order.sort_by_key(|&i| (bounds[i].hi, bounds[i].lo, i));
    let mut tight = Vec::new();
    for i in order {
        let b = bounds[i];
        let sum: i64 = values[b.lo..=b.hi].iter().sum();
        if sum < b.need {
            values[b.hi] += b.need - sum;
            tight.push(i);
        }
    }
    (values, tight)
}

fn units(rules: &DesignRules) -> (i64, i64) {
    let up = |v: i64| (v + rules.unit - 1) / rules.unit;
    (up(rules.min_width), up(rules.min_space))
}

/// Summed lower bound of the width/space system along `axis`, in grid units.
/// Used to localize failures: zeroing a cell that lowers this value relieves
/// the axis.
pub fn lower_bound(topology: &TopologyMatrix, axis: Axis, rules: &DesignRules) -> LowerBound {
    let analysis = analyze(topology);
    lower_bound_of(&analysis, topology, axis, rules)
}

fn lower_bound_of(
    analysis: &Analysis,
    topology: &TopologyMatrix,
    axis: Axis,
    rules: &DesignRules,
) -> LowerBound {
    let (width, space) = units(rules);
    let (rows, cols) = (topology.rows(), topology.cols());
    let bounds = structural_bounds(&analysis.labels, rows, cols, axis, width, space);
    let len = if axis == Axis::X { cols } else { rows };
    let (values, _) = solve_axis(len, &bounds);
    LowerBound {
        contacts: analysis.contacts.len(),
        total: values.iter().sum(),
    }
}

/// Grows `bbox` until it holds a 1-cell whose removal lowers the axis bound.
/// `None` when no cell of the topology does.
fn find_witness(bbox: CellBox, topology: &TopologyMatrix, axis: Axis, rules: &DesignRules) -> Option<CellBox> {
    let base = lower_bound(topology, axis, rules);
    let mut probe = topology.clone();
    let mut relieves = |r: usize, c: usize| -> bool {
        if probe.get(r, c) == 0 {
            return false;
        }
        probe.set(r, c, 0);
        let lb = lower_bound(&probe, axis, rules);
        probe.set(r, c, 1);
        lb < base
    };
    if bbox.cells().any(|(r, c)| relieves(r, c)) {
        return Some(bbox);
    }
    // nearest witness outside the box, by Chebyshev distance then row-major
    let mut best: Option<(usize, usize, usize)> = None;
    for r in 0..topology.rows() {
        for c in 0..topology.cols() {
            let d = r.abs_diff(r.clamp(bbox.upper, bbox.bottom)).max(c.abs_diff(c.clamp(bbox.left, bbox.right)));
            if best.is_some_and(|b| b.0 <= d) {
                continue;
            }
            if relieves(r, c) {
                best = Some((d, r, c));
            }
        }
    }
    best.map(|(_, r, c)| bbox.union(CellBox::cell(r, c)))
}

/// Witness on `axis`, else on the other axis (area and diagonal spacing
/// couple the two), else `bbox` unchanged.
fn attach_witness(bbox: CellBox, topology: &TopologyMatrix, axis: Axis, rules: &DesignRules) -> (Axis, CellBox) {
    let other = if axis == Axis::X { Axis::Y } else { Axis::X };
    [axis, other]
        .into_iter()
        .find_map(|a| find_witness(bbox, topology, a, rules).map(|b| (a, b)))
        .unwrap_or((axis, bbox))
}

fn full_box(topology: &TopologyMatrix) -> CellBox {
    CellBox { upper: 0, left: 0, bottom: topology.rows() - 1, right: topology.cols() - 1 }
}

fn extent_violation(bbox: CellBox, axis: Axis, measured: i64, required: i64) -> Violation {
    Violation {
        kind: ViolationKind::Extent,
        axis: Some(axis),
        bbox,
        polygons: Vec::new(),
        measured: measured as f64,
        required: required as f64,
    }
}

fn add_bound(bounds: &mut Vec<Bound>, new: Bound) {
    match bounds.iter_mut().find(|b| b.lo == new.lo && b.hi == new.hi) {
        Some(b) => {
            b.need = b.need.max(new.need);
            b.origin = b.origin.union(new.origin);
        }
        None => bounds.push(new),
    }
}

/// Spreads the residual evenly; the remainder goes to the last interval.
fn distribute(values: &mut [i64], target: i64) {
    let total: i64 = values.iter().sum();
    let residual = target - total;
    debug_assert!(residual >= 0);
    let n = values.len() as i64;
    for v in values.iter_mut() {
        *v += residual / n;
    }
    *values.last_mut().expect("non-empty axis") += residual % n;
}

/// Legalizes with the default round limit.
pub fn legalize(
    topology: &TopologyMatrix,
    extent: PhysicalExtent,
    rules: &DesignRules,
) -> Result<GeometryVectors, ViolationReport> {
    legalize_with(topology, extent, rules, DEFAULT_MAX_ROUNDS)
}

/// Finds geometry vectors summing exactly to `extent` under which the
/// decoded topology is DRC-clean, or reports the cells that prevent it.
pub fn legalize_with(
    topology: &TopologyMatrix,
    extent: PhysicalExtent,
    rules: &DesignRules,
    max_rounds: usize,
) -> Result<GeometryVectors, ViolationReport> {
    let (rows, cols) = (topology.rows(), topology.cols());
    let unit = rules.unit;
    let mut failures = Vec::new();
    for axis in [Axis::X, Axis::Y] {
        let len = if axis == Axis::X { cols } else { rows } as i64;
        let span = extent.along(axis);
        if span % unit != 0 || span < len * unit {
            failures.push(extent_violation(full_box(topology), axis, len * unit, span));
        }
    }
    if !failures.is_empty() {
        return Err(ViolationReport { violations: failures });
    }

    let analysis = analyze(topology);
    if !analysis.contacts.is_empty() {
        let violations = analysis
            .contacts
            .iter()
            .map(|&bbox| {
                let polygons = bbox
                    .cells()
                    .filter_map(|(r, c)| analysis.labels[r * cols + c])
                    .collect();
                let (axis, bbox) = attach_witness(bbox, topology, Axis::X, rules);
                Violation {
                    kind: ViolationKind::Space,
                    axis: Some(axis),
                    bbox,
                    polygons,
                    measured: 0.0,
                    required: rules.min_space as f64,
                }
            })
            .collect();
        return Err(ViolationReport { violations });
    }

    let (width, space) = units(rules);
    let scaled = rules_in_units(rules);
    let mut bounds_x = structural_bounds(&analysis.labels, rows, cols, Axis::X, width, space);
    let mut bounds_y = structural_bounds(&analysis.labels, rows, cols, Axis::Y, width, space);
    let target = |axis: Axis| extent.along(axis) / unit;

    let mut last_report = ViolationReport::default();
    for _round in 0..=max_rounds {
        let mut solved = Vec::with_capacity(2);
        let mut minimum = [0i64; 2];
        for (axis, bounds, len) in [(Axis::X, &bounds_x, cols), (Axis::Y, &bounds_y, rows)] {
            let (mut values, tight) = solve_axis(len, bounds);
            let total: i64 = values.iter().sum();
            minimum[usize::from(axis == Axis::Y)] = total;
            if total > target(axis) {
                let origin = tight
                    .iter()
                    .map(|&i| bounds[i].origin)
                    .reduce(CellBox::union)
                    .unwrap_or_else(|| full_box(topology));
                let (relief_axis, bbox) = attach_witness(origin, topology, axis, rules);
                let mut violation = extent_violation(bbox, axis, total * unit, extent.along(axis));
                violation.axis = Some(relief_axis);
                return Err(ViolationReport { violations: vec![violation] });
            }
            distribute(&mut values, target(axis));
            solved.push(values);
        }
        let dy = solved.pop().expect("y solved");
        let dx = solved.pop().expect("x solved");
        let xs = prefix(&dx);
        let ys = prefix(&dy);
        let grid = CellGrid { labels: &analysis.labels, rows, cols, xs: &xs, ys: &ys };
        let report = grid.check(&scaled);
        if report.is_clean() {
            return Ok(GeometryVectors {
                dx: dx.iter().map(|v| v * unit).collect(),
                dy: dy.iter().map(|v| v * unit).collect(),
            });
        }

        for pair in grid.space_pairs(space) {
            let ((r1, c1), (r2, c2)) = pair.cells;
            let (rl, rh) = (r1.min(r2), r1.max(r2));
            let (cl, ch) = (c1.min(c2), c1.max(c2));
            let between_cols = ch.saturating_sub(cl + 1);
            let between_rows = rh.saturating_sub(rl + 1);
            let origin = pair.bbox;
            if between_cols >= between_rows && between_cols > 0 {
                add_bound(&mut bounds_x, Bound { lo: cl + 1, hi: ch - 1, need: space, origin });
            } else if between_rows > 0 {
                add_bound(&mut bounds_y, Bound { lo: rl + 1, hi: rh - 1, need: space, origin });
            }
        }
        let min_area = scaled.min_area;
        for (_, (area, bbox)) in grid.polygon_extents() {
            if area >= min_area {
                continue;
            }
            let wx = xs[bbox.right + 1] - xs[bbox.left];
            let hy = ys[bbox.bottom + 1] - ys[bbox.upper];
            // grow along an axis that still has room; the shorter side otherwise
            let need_x = ceil_div(wx * min_area, area).max(wx + 1);
            let need_y = ceil_div(hy * min_area, area).max(hy + 1);
            let fits_x = minimum[0] + need_x - wx <= target(Axis::X);
            let fits_y = minimum[1] + need_y - hy <= target(Axis::Y);
            let along_x = match (fits_x, fits_y) {
                (true, false) => true,
                (false, true) => false,
                _ => wx <= hy,
            };
            let (axis, lo, hi, need) = if along_x {
                (Axis::X, bbox.left, bbox.right, need_x)
            } else {
                (Axis::Y, bbox.upper, bbox.bottom, need_y)
            };
            let bound = Bound { lo, hi, need, origin: bbox };
            match axis {
                Axis::X => add_bound(&mut bounds_x, bound),
                Axis::Y => add_bound(&mut bounds_y, bound),
            }
        }
        last_report = report;
    }

    // Out of rounds: report what is still violated, in nm.
    for v in &mut last_report.violations {
        let (axis, bbox) = attach_witness(v.bbox, topology, v.axis.unwrap_or(Axis::X), rules);
        v.axis = Some(axis);
        v.bbox = bbox;
        v.measured *= unit as f64;
        v.required = match v.kind {
            ViolationKind::Space => rules.min_space as f64,
            ViolationKind::Width => rules.min_width as f64,
            ViolationKind::Area => rules.min_area as f64,
            ViolationKind::Extent => v.required,
        };
    }
    Err(last_report)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

fn rules_in_units(rules: &DesignRules) -> DesignRules {
    let (width, space) = units(rules);
    DesignRules {
        min_space: space,
        min_width: width,
        min_area: ceil_div(rules.min_area, rules.unit * rules.unit),
        unit: 1,
    }
}
