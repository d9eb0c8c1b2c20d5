// SPDX-License-Identifier: Apache-2.0

//! Squish-pattern representation.
//!
//! A layout pattern (non-overlapping rectilinear polygons inside a physical
//! extent) is cut by scan lines at every polygon edge coordinate. The cells
//! between scan lines form a binary [`TopologyMatrix`]; the scan-line spacing
//! forms the [`GeometryVectors`]. Row `i` of a topology spans `dy[i]` along y,
//! column `j` spans `dx[j]` along x, both counted from the origin.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer nanometer coordinate `[x, y]`.
pub type Point = [i64; 2];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SquishError {
    #[error("malformed pattern: {0}")]
    Malformed(String),
    #[error("dimension mismatch: topology is {rows}x{cols}, geometry has {n_dy} rows and {n_dx} columns")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        n_dx: usize,
        n_dy: usize,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("topology is {rows}x{cols}, larger than normalization target {target}; use extension instead")]
    TooLarge {
        rows: usize,
        cols: usize,
        target: usize,
    },
    #[error("cannot split intervals further to reach {target} cells (all intervals are 1 nm)")]
    CannotSplit { target: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

/// A rectilinear polygon with optional holes. The outer ring is
/// counterclockwise, holes are clockwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polygon {
    pub outer: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(outer: Vec<Point>) -> Self {
        Self {
            outer,
            holes: Vec::new(),
        }
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Enclosed area in nm².
    pub fn area(&self) -> i64 {
        let outer = ring_area2(&self.outer);
        let holes: i64 = self.holes.iter().map(|h| ring_area2(h)).sum();
        (outer + holes) / 2
    }

    fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }
}

/// Twice the signed area of a ring (positive for counterclockwise).
pub fn ring_area2(ring: &[Point]) -> i64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

/// A set of polygons inside a `[0, w] x [0, h]` extent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatternFile", into = "PatternFile")]
pub struct LayoutPattern {
    pub extent: [i64; 2],
    pub polygons: Vec<Polygon>,
}

/// On-disk form: every ring is a vertex list; counterclockwise rings are
/// polygon outlines and clockwise rings are holes of the enclosing outline.
#[derive(Serialize, Deserialize)]
struct PatternFile {
    extent: [i64; 2],
    polygons: Vec<Vec<Point>>,
}

impl From<LayoutPattern> for PatternFile {
    fn from(p: LayoutPattern) -> Self {
        let polygons = p
            .polygons
            .into_iter()
            .flat_map(|poly| std::iter::once(poly.outer).chain(poly.holes))
            .collect();
        Self {
            extent: p.extent,
            polygons,
        }
    }
}

impl TryFrom<PatternFile> for LayoutPattern {
    type Error = SquishError;

    fn try_from(f: PatternFile) -> Result<Self, Self::Error> {
        let mut outers: Vec<Polygon> = Vec::new();
        let mut holes = Vec::new();
        for ring in f.polygons {
            let ring = simplify_ring(&ring)?;
            if ring_area2(&ring) > 0 {
                outers.push(Polygon::new(ring));
            } else {
                holes.push(ring);
            }
        }
        for hole in holes {
            // A point just inside the hole, in doubled coordinates.
            let n = hole.len();
            let (a, b) = (0..n)
                .map(|i| (hole[i], hole[(i + 1) % n]))
                .find(|(a, b)| a[1] == b[1])
                .expect("rectilinear ring has a horizontal edge");
            let mid = [a[0] + b[0], a[1] + b[1]];
            let dir = [(b[0] - a[0]).signum(), (b[1] - a[1]).signum()];
            // Interior of a clockwise ring lies to the right of each edge.
            let probe = [mid[0] + dir[1], mid[1] - dir[0]];
            let owner = outers
                .iter()
                .enumerate()
                .filter(|(_, o)| winding2(&o.outer, probe) != 0)
                .min_by_key(|(_, o)| ring_area2(&o.outer))
                .map(|(i, _)| i)
                .ok_or_else(|| SquishError::Malformed("hole outside every polygon".into()))?;
            outers[owner].holes.push(hole);
        }
        Ok(Self {
            extent: f.extent,
            polygons: outers,
        })
    }
}

impl LayoutPattern {
    pub fn empty(width: i64, height: i64) -> Self {
        Self {
            extent: [width, height],
            polygons: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SquishError> {
        serde_json::from_str(text).map_err(|e| SquishError::Parse(e.to_string()))
    }

    /// Total covered area in nm².
    pub fn covered_area(&self) -> i64 {
        self.polygons.iter().map(Polygon::area).sum()
    }
}

/// Winding number of a ring around a point given in doubled coordinates.
/// The point must not lie on a ring edge.
fn winding2(ring: &[Point], p: Point) -> i32 {
    let n = ring.len();
    let mut w = 0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if a[0] != b[0] || 2 * a[0] >= p[0] {
            continue;
        }
        let (lo, hi) = (a[1].min(b[1]) * 2, a[1].max(b[1]) * 2);
        if lo < p[1] && p[1] < hi {
            w += if b[1] < a[1] { 1 } else { -1 };
        }
    }
    w
}

/// Drops repeated and collinear vertices; rejects non-rectilinear rings.
fn simplify_ring(ring: &[Point]) -> Result<Vec<Point>, SquishError> {
    let mut pts: Vec<Point> = Vec::with_capacity(ring.len());
    for &p in ring {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        if a[0] != b[0] && a[1] != b[1] {
            return Err(SquishError::Malformed(format!(
                "edge {a:?} -> {b:?} is not axis-parallel"
            )));
        }
    }
    let mut changed = true;
    while changed && pts.len() >= 3 {
        changed = false;
        let n = pts.len();
        for i in 0..n {
            let prev = pts[(i + n - 1) % n];
            let cur = pts[i];
            let next = pts[(i + 1) % n];
            if (prev[0] == cur[0] && cur[0] == next[0]) || (prev[1] == cur[1] && cur[1] == next[1])
            {
                pts.remove(i);
                changed = true;
                break;
            }
        }
    }
    if pts.len() < 4 || ring_area2(&pts) == 0 {
        return Err(SquishError::Malformed("degenerate ring".into()));
    }
    Ok(pts)
}

/// Binary topology grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TopologyMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl TopologyMatrix {
    /// All-zero topology. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "topology dimensions must be positive");
        Self {
            rows,
            cols,
            cells: vec![0; rows * cols],
        }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self, SquishError> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(SquishError::Malformed(format!(
                "{} cells do not form a {rows}x{cols} topology",
                cells.len()
            )));
        }
        if cells.iter().any(|&v| v > 1) {
            return Err(SquishError::Malformed("topology entries must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self, SquishError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SquishError::Malformed("ragged rows".into()));
        }
        Self::from_cells(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        assert!(value <= 1);
        self.cells[row * self.cols + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    /// Copies the `height x width` block whose top-left cell is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Self {
        assert!(row + height <= self.rows && col + width <= self.cols);
        let mut out = Self::zeros(height, width);
        for r in 0..height {
            let src = (row + r) * self.cols + col;
            out.cells[r * width..(r + 1) * width].copy_from_slice(&self.cells[src..src + width]);
        }
        out
    }

    /// Writes `block` with its top-left cell at `(row, col)`.
    pub fn paste(&mut self, row: usize, col: usize, block: &TopologyMatrix) {
        assert!(row + block.rows <= self.rows && col + block.cols <= self.cols);
        for r in 0..block.rows {
            let dst = (row + r) * self.cols + col;
            self.cells[dst..dst + block.cols]
                .copy_from_slice(&block.cells[r * block.cols..(r + 1) * block.cols]);
        }
    }

    /// SHA-256 over the dimensions and cells, hex encoded.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        h.update(&self.cells);
        hex::encode(h.finalize())
    }

    /// `P-TOPO v1 <rows> <cols>` followed by one line of `0`/`1` per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("P-TOPO v1 {} {}\n", self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.get(r, c) == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SquishError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SquishError::Parse("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "P-TOPO" || fields[1] != "v1" {
            return Err(SquishError::Parse(format!("bad topology header {header:?}")));
        }
        let rows: usize = parse_field(fields[2])?;
        let cols: usize = parse_field(fields[3])?;
        let mut cells = Vec::with_capacity(rows * cols);
        for (i, line) in lines.take(rows).enumerate() {
            let line = line.trim_end();
            if line.len() != cols {
                return Err(SquishError::Parse(format!("row {i} has {} cells", line.len())));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '0' => 0,
                    '1' => 1,
                    _ => return Err(SquishError::Parse(format!("bad cell {ch:?}"))),
                });
            }
        }
        Self::from_cells(rows, cols, cells)
    }
}

impl fmt::Display for TopologyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                f.write_str(if self.get(r, c) == 1 { "#" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T, SquishError> {
    s.parse()
        .map_err(|_| SquishError::Parse(format!("not a number: {s:?}")))
}

/// Column widths (`dx`) and row heights (`dy`) in nanometers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeometryVectors {
    pub dx: Vec<i64>,
    pub dy: Vec<i64>,
}

impl GeometryVectors {
    pub fn new(dx: Vec<i64>, dy: Vec<i64>) -> Result<Self, SquishError> {
        let g = Self { dx, dy };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SquishError> {
        if self.dx.is_empty() || self.dy.is_empty() {
            return Err(SquishError::InvalidGeometry("empty interval vector".into()));
        }
        if self.dx.iter().chain(&self.dy).any(|&d| d < 1) {
            return Err(SquishError::InvalidGeometry("intervals must be at least 1 nm".into()));
        }
        Ok(())
    }

    pub fn extent(&self) -> [i64; 2] {
        [self.dx.iter().sum(), self.dy.iter().sum()]
    }

    /// Scan-line positions along x (`cols + 1` entries starting at 0).
    pub fn x_lines(&self) -> Vec<i64> {
        prefix(&self.dx)
    }

    pub fn y_lines(&self) -> Vec<i64> {
        prefix(&self.dy)
    }

    /// `P-GEOM v1 <n_dx> <n_dy>`, then the dx line and the dy line.
    pub fn to_text(&self) -> String {
        let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
        format!(
            "P-GEOM v1 {} {}\n{}\n{}\n",
            self.dx.len(),
            self.dy.len(),
            join(&self.dx),
            join(&self.dy)
        )
    }

    pub fn from_text(text: &str) -> Result<Self, SquishError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SquishError::Parse("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "P-GEOM" || fields[1] != "v1" {
            return Err(SquishError::Parse(format!("bad geometry header {header:?}")));
        }
        let n_dx: usize = parse_field(fields[2])?;
        let n_dy: usize = parse_field(fields[3])?;
        let mut read = |n: usize| -> Result<Vec<i64>, SquishError> {
            let line = lines.next().unwrap_or("");
            let v = line
                .split_whitespace()
                .map(parse_field)
                .collect::<Result<Vec<i64>, _>>()?;
            if v.len() != n {
                return Err(SquishError::Parse(format!("expected {n} intervals, got {}", v.len())));
            }
            Ok(v)
        };
        let dx = read(n_dx)?;
        let dy = read(n_dy)?;
        Self::new(dx, dy)
    }
}

pub(crate) fn prefix(d: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(d.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &v in d {
        acc += v;
        out.push(acc);
    }
    out
}

/// Scan-line grid of a pattern with the owning polygon of every cell.
#[derive(Clone, Debug)]
pub struct LabeledGrid {
    pub x_lines: Vec<i64>,
    pub y_lines: Vec<i64>,
    /// Row-major polygon index per cell.
    pub labels: Vec<Option<usize>>,
}

impl LabeledGrid {
    pub fn rows(&self) -> usize {
        self.y_lines.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.x_lines.len() - 1
    }

    pub fn label(&self, row: usize, col: usize) -> Option<usize> {
        self.labels[row * self.cols() + col]
    }

    pub fn geometry(&self) -> GeometryVectors {
        GeometryVectors {
            dx: self.x_lines.windows(2).map(|w| w[1] - w[0]).collect(),
            dy: self.y_lines.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    pub fn topology(&self) -> TopologyMatrix {
        let cells = self.labels.iter().map(|l| u8::from(l.is_some())).collect();
        TopologyMatrix::from_cells(self.rows(), self.cols(), cells).expect("non-empty grid")
    }
}

/// Validates a pattern and cuts it at every distinct edge coordinate.
pub fn encode_labeled(pattern: &LayoutPattern) -> Result<LabeledGrid, SquishError> {
    let [w, h] = pattern.extent;
    if w < 1 || h < 1 {
        return Err(SquishError::Malformed(format!("extent {w}x{h} must be positive")));
    }
    let mut polygons = Vec::with_capacity(pattern.polygons.len());
    for (idx, poly) in pattern.polygons.iter().enumerate() {
        let mut rings = Vec::new();
        for (ri, ring) in poly.rings().enumerate() {
            let ring = simplify_ring(ring)?;
            if ring.iter().any(|p| p[0] < 0 || p[0] > w || p[1] < 0 || p[1] > h) {
                return Err(SquishError::Malformed(format!("polygon {idx} leaves the extent")));
            }
            let a = ring_area2(&ring);
            if (ri == 0) != (a > 0) {
                return Err(SquishError::Malformed(format!(
                    "polygon {idx}: outer rings must be counterclockwise and holes clockwise"
                )));
            }
            rings.push(ring);
        }
        polygons.push(rings);
    }

    let mut xs = vec![0, w];
    let mut ys = vec![0, h];
    for p in polygons.iter().flatten().flatten() {
        xs.push(p[0]);
        ys.push(p[1]);
    }
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let rows = ys.len() - 1;
    let cols = xs.len() - 1;

    let mut labels: Vec<Option<usize>> = vec![None; rows * cols];
    let mut diff = vec![0i32; cols + 1];
    for (idx, rings) in polygons.iter().enumerate() {
        // Vertical edges with +1 for downward direction; a cell's winding
        // number is the sum over edges at or left of its left scan line.
        let mut edges = Vec::new();
        for ring in rings {
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                if a[0] == b[0] {
                    let col = xs.binary_search(&a[0]).expect("edge on scan line");
                    let sign = if b[1] < a[1] { 1 } else { -1 };
                    edges.push((col, a[1].min(b[1]), a[1].max(b[1]), sign));
                }
            }
        }
        for row in 0..rows {
            let yc2 = ys[row] + ys[row + 1];
            diff.iter_mut().for_each(|d| *d = 0);
            let mut any = false;
            for &(col, lo, hi, sign) in &edges {
                if 2 * lo < yc2 && yc2 < 2 * hi {
                    diff[col] += sign;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let mut wind = 0;
            for col in 0..cols {
                wind += diff[col];
                match wind {
                    0 => {}
                    1 => {
                        let cell = &mut labels[row * cols + col];
                        if let Some(other) = *cell {
                            return Err(SquishError::Malformed(format!(
                                "polygons {other} and {idx} overlap"
                            )));
                        }
                        *cell = Some(idx);
                    }
                    _ => {
                        return Err(SquishError::Malformed(format!(
                            "polygon {idx} self-overlaps or is misoriented"
                        )))
                    }
                }
            }
        }
    }
    Ok(LabeledGrid {
        x_lines: xs,
        y_lines: ys,
        labels,
    })
}

/// Squish encoding of a pattern.
pub fn encode(pattern: &LayoutPattern) -> Result<(TopologyMatrix, GeometryVectors), SquishError> {
    let grid = encode_labeled(pattern)?;
    Ok((grid.topology(), grid.geometry()))
}

fn check_dims(topology: &TopologyMatrix, geometry: &GeometryVectors) -> Result<(), SquishError> {
    if geometry.dx.len() != topology.cols() || geometry.dy.len() != topology.rows() {
        return Err(SquishError::DimensionMismatch {
            rows: topology.rows(),
            cols: topology.cols(),
            n_dx: geometry.dx.len(),
            n_dy: geometry.dy.len(),
        });
    }
    geometry.validate()
}

/// 4-connected components of the 1-cells, numbered in row-major order of
/// their first cell. Returns per-cell labels and the component count.
pub fn label_components(topology: &TopologyMatrix) -> (Vec<Option<usize>>, usize) {
    let (rows, cols) = (topology.rows(), topology.cols());
    let mut labels = vec![None; rows * cols];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..rows * cols {
        if topology.cells[start] == 0 || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / cols, idx % cols);
            let mut visit = |n: usize| {
                if topology.cells[n] == 1 && labels[n].is_none() {
                    labels[n] = Some(count);
                    queue.push_back(n);
                }
            };
            if r > 0 {
                visit(idx - cols);
            }
            if r + 1 < rows {
                visit(idx + cols);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < cols {
                visit(idx + 1);
            }
        }
        count += 1;
    }
    (labels, count)
}

const DIRS: [Point; 4] = [[1, 0], [0, 1], [-1, 0], [0, -1]];

/// Traces the boundary rings of one component in grid coordinates. Pinch
/// vertices are resolved by turning left first, which keeps every ring simple.
fn trace_component(
    labels: &[Option<usize>],
    rows: usize,
    cols: usize,
    id: usize,
) -> Vec<Vec<Point>> {
    let inside = |r: i64, c: i64| {
        r >= 0
            && c >= 0
            && (r as usize) < rows
            && (c as usize) < cols
            && labels[r as usize * cols + c as usize] == Some(id)
    };
    // Directed unit edges (start, dir index) with the component on the left.
    let mut edges: Vec<(Point, usize)> = Vec::new();
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            if !inside(r, c) {
                continue;
            }
            if !inside(r - 1, c) {
                edges.push(([c, r], 0));
            }
            if !inside(r, c + 1) {
                edges.push(([c + 1, r], 1));
            }
            if !inside(r + 1, c) {
                edges.push(([c + 1, r + 1], 2));
            }
            if !inside(r, c - 1) {
                edges.push(([c, r + 1], 3));
            }
        }
    }
    let mut by_start: HashMap<Point, Vec<usize>> = HashMap::new();
    for (i, (p, _)) in edges.iter().enumerate() {
        by_start.entry(*p).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        let mut ring = Vec::new();
        let mut cur = first;
        loop {
            used[cur] = true;
            let (start, dir) = edges[cur];
            ring.push(start);
            let end = [start[0] + DIRS[dir][0], start[1] + DIRS[dir][1]];
            let candidates = &by_start[&end];
            // left, straight, right
            let next = [(dir + 1) % 4, dir, (dir + 3) % 4]
                .iter()
                .find_map(|&want| {
                    candidates
                        .iter()
                        .copied()
                        .find(|&e| edges[e].1 == want && (!used[e] || e == first))
                })
                .expect("boundary edges form closed loops");
            if next == first {
                break;
            }
            cur = next;
        }
        rings.push(drop_collinear(ring));
    }
    rings
}

fn drop_collinear(ring: Vec<Point>) -> Vec<Point> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let prev = ring[(i + n - 1) % n];
            let cur = ring[i];
            let next = ring[(i + 1) % n];
            !((prev[0] == cur[0] && cur[0] == next[0]) || (prev[1] == cur[1] && cur[1] == next[1]))
        })
        .map(|i| ring[i])
        .collect()
}

/// Rebuilds the polygons of a squish pattern: one polygon (with holes) per
/// 4-connected component of 1-cells, with collinear vertices merged.
pub fn decode(
    topology: &TopologyMatrix,
    geometry: &GeometryVectors,
) -> Result<LayoutPattern, SquishError> {
    check_dims(topology, geometry)?;
    let xs = geometry.x_lines();
    let ys = geometry.y_lines();
    let (labels, count) = label_components(topology);
    let mut polygons = Vec::with_capacity(count);
    for id in 0..count {
        let rings = trace_component(&labels, topology.rows(), topology.cols(), id);
        let mut outer = None;
        let mut holes = Vec::new();
        for ring in rings {
            let scaled: Vec<Point> = ring
                .iter()
                .map(|p| [xs[p[0] as usize], ys[p[1] as usize]])
                .collect();
            if ring_area2(&ring) > 0 {
                debug_assert!(outer.is_none(), "component has a single outline");
                outer = Some(scaled);
            } else {
                holes.push(scaled);
            }
        }
        polygons.push(Polygon {
            outer: outer.expect("component outline"),
            holes,
        });
    }
    Ok(LayoutPattern {
        extent: geometry.extent(),
        polygons,
    })
}

/// Splits intervals until the topology is `target x target`. The widest
/// interval is split first (lowest index on ties); the odd nanometer of an
/// odd split goes to the first half. The decoded pattern is unchanged.
pub fn normalize(
    topology: &TopologyMatrix,
    geometry: &GeometryVectors,
    target: usize,
) -> Result<(TopologyMatrix, GeometryVectors), SquishError> {
    check_dims(topology, geometry)?;
    if topology.rows() > target || topology.cols() > target {
        return Err(SquishError::TooLarge {
            rows: topology.rows(),
            cols: topology.cols(),
            target,
        });
    }
    let split_plan = |d: &[i64]| -> Result<(Vec<i64>, Vec<usize>), SquishError> {
        // source index of every output interval
        let mut sizes = d.to_vec();
        let mut origin: Vec<usize> = (0..d.len()).collect();
        while sizes.len() < target {
            let (idx, &widest) = sizes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty");
            if widest < 2 {
                return Err(SquishError::CannotSplit { target });
            }
            let first = widest - widest / 2;
            sizes[idx] = first;
            sizes.insert(idx + 1, widest / 2);
            origin.insert(idx + 1, origin[idx]);
        }
        Ok((sizes, origin))
    };
    let (dx, col_src) = split_plan(&geometry.dx)?;
    let (dy, row_src) = split_plan(&geometry.dy)?;
    let mut out = TopologyMatrix::zeros(target, target);
    for (r, &sr) in row_src.iter().enumerate() {
        for (c, &sc) in col_src.iter().enumerate() {
            out.set(r, c, topology.get(sr, sc));
        }
    }
    Ok((out, GeometryVectors { dx, dy }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center_rect() -> LayoutPattern {
        LayoutPattern {
            extent: [100, 100],
            polygons: vec![Polygon::rect(20, 20, 60, 80)],
        }
    }

    #[test]
    fn empty_pattern_is_one_cell() {
        let (t, g) = encode(&LayoutPattern::empty(100, 100)).unwrap();
        assert_eq!(t, TopologyMatrix::from_rows(&[&[0]]).unwrap());
        assert_eq!(g.dx, vec![100]);
        assert_eq!(g.dy, vec![100]);
        assert!(decode(&t, &g).unwrap().polygons.is_empty());
    }

    #[test]
    fn single_rectangle_encodes_to_center_cell() {
        let (t, g) = encode(&center_rect()).unwrap();
        assert_eq!(
            t,
            TopologyMatrix::from_rows(&[&[0, 0, 0], &[0, 1, 0], &[0, 0, 0]]).unwrap()
        );
        assert_eq!(g.dx, vec![20, 40, 40]);
        assert_eq!(g.dy, vec![20, 60, 20]);
        let back = decode(&t, &g).unwrap();
        assert_eq!(back, center_rect());
    }

    #[test]
    fn overlapping_polygons_are_rejected() {
        let p = LayoutPattern {
            extent: [100, 100],
            polygons: vec![Polygon::rect(0, 0, 50, 50), Polygon::rect(40, 40, 90, 90)],
        };
        assert!(matches!(encode(&p), Err(SquishError::Malformed(_))));
    }

    #[test]
    fn diagonal_edge_is_rejected() {
        let p = LayoutPattern {
            extent: [100, 100],
            polygons: vec![Polygon::new(vec![[0, 0], [50, 0], [50, 50], [10, 60]])],
        };
        assert!(matches!(encode(&p), Err(SquishError::Malformed(_))));
    }

    #[test]
    fn clockwise_outline_is_rejected() {
        let p = LayoutPattern {
            extent: [100, 100],
            polygons: vec![Polygon::new(vec![[0, 0], [0, 50], [50, 50], [50, 0]])],
        };
        assert!(encode(&p).is_err());
    }

    #[test]
    fn ring_with_hole_roundtrips() {
        let t = TopologyMatrix::from_rows(&[&[1, 1, 1], &[1, 0, 1], &[1, 1, 1]]).unwrap();
        let g = GeometryVectors::new(vec![10, 20, 30], vec![5, 6, 7]).unwrap();
        let p = decode(&t, &g).unwrap();
        assert_eq!(p.polygons.len(), 1);
        assert_eq!(p.polygons[0].holes.len(), 1);
        assert_eq!(p.covered_area(), 60 * 18 - 20 * 6);
        let (t2, g2) = encode(&p).unwrap();
        assert_eq!((t2, g2), (t, g));
        let json = LayoutPattern::from_json(&p.to_json()).unwrap();
        assert_eq!(json, p);
    }

    #[test]
    fn pinch_vertex_keeps_hole_separate() {
        // The hole touches the outline at a single corner.
        let t = TopologyMatrix::from_rows(&[
            &[1, 1, 1, 0],
            &[1, 0, 1, 0],
            &[1, 1, 0, 1],
            &[0, 0, 1, 1],
        ])
        .unwrap();
        let g = GeometryVectors::new(vec![1; 4], vec![1; 4]).unwrap();
        let p = decode(&t, &g).unwrap();
        let (t2, _) = encode(&p).unwrap();
        assert_eq!(t2, t);
    }

    #[test]
    fn decode_rejects_dimension_mismatch() {
        let t = TopologyMatrix::zeros(2, 2);
        let g = GeometryVectors::new(vec![1, 1, 1], vec![1, 1]).unwrap();
        assert!(matches!(decode(&t, &g), Err(SquishError::DimensionMismatch { .. })));
    }

    #[test]
    fn normalize_identity_and_growth() {
        let (t, g) = encode(&center_rect()).unwrap();
        assert_eq!(normalize(&t, &g, 3).unwrap(), (t.clone(), g.clone()));
        let (t4, g4) = normalize(&t, &g, 4).unwrap();
        assert_eq!((t4.rows(), t4.cols()), (4, 4));
        // widest dx is 40 at index 1, widest dy is 60 at index 1
        assert_eq!(g4.dx, vec![20, 20, 20, 40]);
        assert_eq!(g4.dy, vec![20, 30, 30, 20]);
        assert_eq!(decode(&t4, &g4).unwrap(), center_rect());
    }

    #[test]
    fn normalize_odd_split_favors_first_half() {
        let t = TopologyMatrix::zeros(1, 1);
        let g = GeometryVectors::new(vec![7], vec![2]).unwrap();
        let (_, g2) = normalize(&t, &g, 2).unwrap();
        assert_eq!(g2.dx, vec![4, 3]);
        assert_eq!(g2.dy, vec![1, 1]);
    }

    #[test]
    fn normalize_errors() {
        let t = TopologyMatrix::zeros(3, 3);
        let g = GeometryVectors::new(vec![1; 3], vec![1; 3]).unwrap();
        assert!(matches!(normalize(&t, &g, 2), Err(SquishError::TooLarge { .. })));
        assert!(matches!(normalize(&t, &g, 4), Err(SquishError::CannotSplit { .. })));
    }

    #[test]
    fn text_formats_roundtrip() {
        let t = TopologyMatrix::from_rows(&[&[0, 1], &[1, 1], &[0, 0]]).unwrap();
        assert_eq!(t.to_text(), "P-TOPO v1 3 2\n01\n11\n00\n");
        assert_eq!(TopologyMatrix::from_text(&t.to_text()).unwrap(), t);
        let g = GeometryVectors::new(vec![3, 4], vec![5, 6, 7]).unwrap();
        assert_eq!(g.to_text(), "P-GEOM v1 2 3\n3 4\n5 6 7\n");
        assert_eq!(GeometryVectors::from_text(&g.to_text()).unwrap(), g);
        assert!(TopologyMatrix::from_text("P-TOPO v1 1 2\n0x\n").is_err());
    }
}
