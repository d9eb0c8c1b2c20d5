// SPDX-License-Identifier: Apache-2.0

//! Independent oracles shared by the integration tests: even-odd 1 nm
//! rasterization, a brute-force raster DRC and random pattern generators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use layoutgen::drc::{Axis, DesignRules, ViolationKind, ViolationReport};
use layoutgen::squish::{decode, GeometryVectors, LayoutPattern, Polygon, TopologyMatrix};
use rand::Rng;

/// Polygon index owning every 1 nm pixel, row-major from y = 0.
pub struct Raster {
    pub w: usize,
    pub h: usize,
    pub labels: Vec<Option<usize>>,
}

fn inside_even_odd(rings: &[Vec<[i64; 2]>], px2: i64, py2: i64) -> bool {
    // doubled coordinates; ray towards +x
    let mut crossings = 0;
    for ring in rings {
        for i in 0..ring.len() {
            let a = ring[i];
            let b = ring[(i + 1) % ring.len()];
            if a[0] != b[0] {
                continue;
            }
            let (lo, hi) = (2 * a[1].min(b[1]), 2 * a[1].max(b[1]));
            if lo < py2 && py2 < hi && 2 * a[0] > px2 {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

pub fn rasterize(p: &LayoutPattern) -> Raster {
    let (w, h) = (p.extent[0] as usize, p.extent[1] as usize);
    let mut labels = vec![None; w * h];
    for (idx, poly) in p.polygons.iter().enumerate() {
        let rings: Vec<Vec<[i64; 2]>> = std::iter::once(poly.outer.clone()).chain(poly.holes.clone()).collect();
        let xmin = rings.iter().flatten().map(|q| q[0]).min().unwrap() as usize;
        let xmax = rings.iter().flatten().map(|q| q[0]).max().unwrap() as usize;
        let ymin = rings.iter().flatten().map(|q| q[1]).min().unwrap() as usize;
        let ymax = rings.iter().flatten().map(|q| q[1]).max().unwrap() as usize;
        for y in ymin..ymax {
            for x in xmin..xmax {
                if inside_even_odd(&rings, 2 * x as i64 + 1, 2 * y as i64 + 1) {
                    assert!(labels[y * w + x].is_none(), "oracle: overlap");
                    labels[y * w + x] = Some(idx);
                }
            }
        }
    }
    Raster { w, h, labels }
}

pub fn coverage(p: &LayoutPattern) -> Vec<bool> {
    rasterize(p).labels.iter().map(Option::is_some).collect()
}

/// Canonical violation summary: space by polygon pair (squared distance),
/// width by (polygon, axis) (shortest run), area by polygon.
#[derive(Debug, PartialEq, Eq, Default)]
pub struct Summary {
    pub space: BTreeMap<(usize, usize), i64>,
    pub width: BTreeMap<(usize, Axis), i64>,
    pub area: BTreeMap<usize, i64>,
}

pub fn summarize(report: &ViolationReport) -> Summary {
    let mut s = Summary::default();
    for v in &report.violations {
        match v.kind {
            ViolationKind::Space => {
                let d2 = (v.measured * v.measured).round() as i64;
                assert!(s.space.insert((v.polygons[0], v.polygons[1]), d2).is_none());
            }
            ViolationKind::Width => {
                assert!(s.width.insert((v.polygons[0], v.axis.unwrap()), v.measured as i64).is_none());
            }
            ViolationKind::Area => {
                assert!(s.area.insert(v.polygons[0], v.measured as i64).is_none());
            }
            ViolationKind::Extent => panic!("check never reports extent"),
        }
    }
    s
}

pub fn raster_drc(p: &LayoutPattern, rules: &DesignRules) -> Summary {
    let r = rasterize(p);
    let mut s = Summary::default();
    let at = |x: usize, y: usize| r.labels[y * r.w + x];
    // area
    let mut areas: BTreeMap<usize, i64> = BTreeMap::new();
    for l in r.labels.iter().flatten() {
        *areas.entry(*l).or_default() += 1;
    }
    for (l, a) in areas {
        if a < rules.min_area {
            s.area.insert(l, a);
        }
    }
    // width: maximal same-label runs along rows and columns
    let mut runs = |axis: Axis, outer: usize, inner: usize, get: &dyn Fn(usize, usize) -> Option<usize>| {
        for o in 0..outer {
            let mut i = 0;
            while i < inner {
                let Some(l) = get(o, i) else {
                    i += 1;
                    continue;
                };
                let start = i;
                while i < inner && get(o, i) == Some(l) {
                    i += 1;
                }
                let len = (i - start) as i64;
                if len < rules.min_width {
                    let e = s.width.entry((l, axis)).or_insert(len);
                    *e = (*e).min(len);
                }
            }
        }
    };
    runs(Axis::X, r.h, r.w, &|y, x| at(x, y));
    runs(Axis::Y, r.w, r.h, &|x, y| at(x, y));
    // space: closest pixel pair of every distinct polygon pair
    let pix: Vec<(usize, i64, i64)> = (0..r.h)
        .flat_map(|y| (0..r.w).map(move |x| (x, y)))
        .filter_map(|(x, y)| at(x, y).map(|l| (l, x as i64, y as i64)))
        .collect();
    let s2 = rules.min_space * rules.min_space;
    for (i, &(la, xa, ya)) in pix.iter().enumerate() {
        for &(lb, xb, yb) in &pix[i + 1..] {
            if la == lb {
                continue;
            }
            let gx = ((xa - xb).abs() - 1).max(0);
            let gy = ((ya - yb).abs() - 1).max(0);
            let d2 = gx * gx + gy * gy;
            if d2 < s2 {
                let key = (la.min(lb), la.max(lb));
                let e = s.space.entry(key).or_insert(d2);
                *e = (*e).min(d2);
            }
        }
    }
    s
}

/// Random positive intervals summing to `total`.
pub fn random_intervals(rng: &mut impl Rng, n: usize, total: i64) -> Vec<i64> {
    assert!(total >= n as i64);
    let mut cuts: Vec<i64> = Vec::new();
    while cuts.len() < n - 1 {
        let c = rng.random_range(1..total);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut prev = 0;
    let mut out = Vec::with_capacity(n);
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

pub fn random_topology(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> TopologyMatrix {
    let cells = (0..rows * cols).map(|_| u8::from(rng.random::<f64>() < density)).collect();
    TopologyMatrix::from_cells(rows, cols, cells).unwrap()
}

/// Decoded random topology: polygons with holes, pinches and corner contacts.
pub fn random_decoded_pattern(rng: &mut impl Rng, max_cells: usize, max_extent: i64) -> LayoutPattern {
    let rows = rng.random_range(1..=max_cells);
    let cols = rng.random_range(1..=max_cells);
    let w = rng.random_range(cols as i64..=max_extent.max(cols as i64));
    let h = rng.random_range(rows as i64..=max_extent.max(rows as i64));
    let density = rng.random_range(0.2..0.7);
    let t = random_topology(rng, rows, cols, density);
    let g = GeometryVectors {
        dx: random_intervals(rng, cols, w),
        dy: random_intervals(rng, rows, h),
    };
    decode(&t, &g).unwrap()
}

/// Non-overlapping rectangles that may share edges or corners.
pub fn random_rect_pattern(rng: &mut impl Rng, extent: i64, count: usize) -> LayoutPattern {
    let mut rects: Vec<[i64; 4]> = Vec::new();
    for _ in 0..count * 10 {
        if rects.len() == count {
            break;
        }
        let x0 = rng.random_range(0..extent - 1);
        let y0 = rng.random_range(0..extent - 1);
        let x1 = rng.random_range(x0 + 1..=extent.min(x0 + extent / 2 + 1));
        let y1 = rng.random_range(y0 + 1..=extent.min(y0 + extent / 2 + 1));
        let overlaps = rects
            .iter()
            .any(|r| x0 < r[2] && r[0] < x1 && y0 < r[3] && r[1] < y1);
        if !overlaps {
            rects.push([x0, y0, x1, y1]);
        }
    }
    LayoutPattern {
        extent: [extent, extent],
        polygons: rects.iter().map(|r| Polygon::rect(r[0], r[1], r[2], r[3])).collect(),
    }
}

/// Every violation box holds a 1-cell whose removal strictly lowers the
/// summed lower bound on the violation's axis (X when the axis is unset).
pub fn localized(t: &TopologyMatrix, report: &ViolationReport, rules: &DesignRules) -> bool {
    use layoutgen::legalize::lower_bound;
    !report.violations.is_empty()
        && report.violations.iter().all(|v| {
            let axis = v.axis.unwrap_or(Axis::X);
            let base = lower_bound(t, axis, rules);
            v.bbox.cells().any(|(r, c)| {
                if t.get(r, c) == 0 {
                    return false;
                }
                let mut probe = t.clone();
                probe.set(r, c, 0);
                lower_bound(&probe, axis, rules) < base
            })
        })
}

/// Whether zeroing any single 1-cell lowers the summed bound on either
/// axis. When none does, no report can be localized.
pub fn relievable(t: &TopologyMatrix, rules: &DesignRules) -> bool {
    use layoutgen::legalize::lower_bound;
    [Axis::X, Axis::Y].into_iter().any(|axis| {
        let base = lower_bound(t, axis, rules);
        (0..t.rows()).any(|r| {
            (0..t.cols()).any(|c| {
                if t.get(r, c) == 0 {
                    return false;
                }
                let mut probe = t.clone();
                probe.set(r, c, 0);
                lower_bound(&probe, axis, rules) < base
            })
        })
    })
}

/// A clean topology with `flips` random cells toggled, mimicking an
/// imperfect sample.
pub fn perturb(rng: &mut impl Rng, t: &TopologyMatrix, flips: usize) -> TopologyMatrix {
    let mut out = t.clone();
    for _ in 0..flips {
        let r = rng.random_range(0..t.rows());
        let c = rng.random_range(0..t.cols());
        out.set(r, c, 1 - out.get(r, c));
    }
    out
}

/// Per 1 nm row, the covered `[x0, x1)` runs with their polygon index,
/// from an even-odd scanline over vertical edges.
pub fn row_runs(p: &LayoutPattern, transpose: bool) -> Vec<Vec<(i64, i64, usize)>> {
    let flip = |q: [i64; 2]| if transpose { [q[1], q[0]] } else { q };
    let h = if transpose { p.extent[0] } else { p.extent[1] } as usize;
    let mut rows: Vec<Vec<(i64, i64, usize)>> = vec![Vec::new(); h];
    for (idx, poly) in p.polygons.iter().enumerate() {
        let mut edges = Vec::new();
        for ring in std::iter::once(&poly.outer).chain(&poly.holes) {
            for i in 0..ring.len() {
                let (a, b) = (flip(ring[i]), flip(ring[(i + 1) % ring.len()]));
                if a[0] == b[0] && a[1] != b[1] {
                    edges.push((a[0], a[1].min(b[1]), a[1].max(b[1])));
                }
            }
        }
        let ylo = edges.iter().map(|e| e.1).min().unwrap_or(0);
        let yhi = edges.iter().map(|e| e.2).max().unwrap_or(0);
        for y in ylo..yhi {
            let mut xs: Vec<i64> = edges.iter().filter(|e| e.1 <= y && y < e.2).map(|e| e.0).collect();
            xs.sort_unstable();
            for pair in xs.chunks(2) {
                if pair[0] < pair[1] {
                    rows[y as usize].push((pair[0], pair[1], idx));
                }
            }
        }
    }
    for row in &mut rows {
        row.sort_unstable();
        // merge abutting runs of one polygon
        let mut merged: Vec<(i64, i64, usize)> = Vec::with_capacity(row.len());
        for &r in row.iter() {
            match merged.last_mut() {
                Some(m) if m.2 == r.2 && m.1 == r.0 => m.1 = r.1,
                Some(m) => {
                    assert!(m.1 <= r.0, "oracle: overlap");
                    merged.push(r);
                }
                None => merged.push(r),
            }
        }
        *row = merged;
    }
    rows
}

/// The same checks as `raster_drc` on a run-length raster; scales to
/// extents in the thousands of nm.
pub fn scan_drc(p: &LayoutPattern, rules: &DesignRules) -> Summary {
    let rows = row_runs(p, false);
    let cols = row_runs(p, true);
    let mut s = Summary::default();
    let mut areas: BTreeMap<usize, i64> = BTreeMap::new();
    for r in rows.iter().flatten() {
        *areas.entry(r.2).or_default() += r.1 - r.0;
    }
    for (l, a) in areas {
        if a < rules.min_area {
            s.area.insert(l, a);
        }
    }
    for (axis, lines) in [(Axis::X, &rows), (Axis::Y, &cols)] {
        for r in lines.iter().flatten() {
            let len = r.1 - r.0;
            if len < rules.min_width {
                let e = s.width.entry((r.2, axis)).or_insert(len);
                *e = (*e).min(len);
            }
        }
    }
    let sp = rules.min_space;
    for (ya, row) in rows.iter().enumerate() {
        for dy in 0..=sp as usize {
            let Some(other) = rows.get(ya + dy) else { break };
            let gy = (dy as i64 - 1).max(0);
            for (ia, a) in row.iter().enumerate() {
                let lo = other.partition_point(|b| b.1 <= a.0 - sp);
                for (ib, b) in other.iter().enumerate().skip(lo) {
                    if b.0 >= a.1 + sp {
                        break;
                    }
                    if a.2 == b.2 || (dy == 0 && ib <= ia) {
                        continue;
                    }
                    let gx = (b.0 - a.1).max(a.0 - b.1).max(0);
                    let d2 = gx * gx + gy * gy;
                    if d2 < sp * sp {
                        let key = (a.2.min(b.2), a.2.max(b.2));
                        let e = s.space.entry(key).or_insert(d2);
                        *e = (*e).min(d2);
                    }
                }
            }
        }
    }
    s
}

/// Linear betas recomputed from the endpoints.
pub fn oracle_betas(k: usize, b1: f64, bk: f64) -> Vec<f64> {
    (0..k).map(|i| b1 + (bk - b1) * i as f64 / (k.max(2) - 1) as f64).collect()
}

fn step_matrix(b: f64) -> [[f64; 2]; 2] {
    [[1.0 - b, b], [b, 1.0 - b]]
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

/// Explicit product `Q_1 · … · Q_k` of 2x2 matrices.
pub fn oracle_cumulative(betas: &[f64], k: usize) -> [[f64; 2]; 2] {
    betas[..k].iter().fold([[1.0, 0.0], [0.0, 1.0]], |acc, &b| matmul(acc, step_matrix(b)))
}

/// `P(x_{k-1} = 1 | x_k, x_0)` by summing the joint probability of every
/// path `x_1 … x_k` (feasible for k up to about 16).
pub fn oracle_posterior_paths(betas: &[f64], xk: u8, x0: u8, k: usize) -> f64 {
    let mut num = [0.0; 2];
    for path in 0u32..(1 << (k - 1)) {
        // bits 0..k-2 hold x_1 … x_{k-1}
        let mut prev = x0;
        let mut p = 1.0;
        for i in 0..k - 1 {
            let x = ((path >> i) & 1) as u8;
            p *= step_matrix(betas[i])[prev as usize][x as usize];
            prev = x;
        }
        p *= step_matrix(betas[k - 1])[prev as usize][xk as usize];
        num[prev as usize] += p;
    }
    num[1] / (num[0] + num[1])
}

/// The same posterior from explicit matrix products and Bayes' rule.
pub fn oracle_posterior_products(betas: &[f64], xk: u8, x0: u8, k: usize) -> f64 {
    let prior = oracle_cumulative(betas, k - 1)[x0 as usize];
    let step = step_matrix(betas[k - 1]);
    let joint = [prior[0] * step[0][xk as usize], prior[1] * step[1][xk as usize]];
    joint[1] / (joint[0] + joint[1])
}
