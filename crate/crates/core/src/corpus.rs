// SPDX-License-Identifier: Apache-2.0

//! Synthetic two-style corpus, dataset files and splitting.
//!
//! Shapes are painted on a raster of `grid` nm cells, decoded to polygons,
//! checked against the rules and squish-encoded. Style A draws horizontal
//! bars on tracks with occasional vertical jogs; style B draws arrays of
//! square vias with the odd short bar.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::drc::{check, DesignRules};
use crate::seed::derived_stream;
use crate::squish::{decode, encode, normalize, GeometryVectors, LayoutPattern, SquishError, TopologyMatrix};

/// Consecutive rejected draws after which a spec is declared infeasible.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("spec is infeasible: {0} consecutive draws were rejected")]
    Infeasible(usize),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("fractions must be non-negative and sum to 1, got {0:?}")]
    Fractions(Vec<f64>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Squish(#[from] SquishError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Probability that a candidate shape slot is filled.
    pub density: f64,
    /// Preferred shape run length in raster cells, inclusive range.
    pub run: [usize; 2],
    /// Fraction of shapes kept horizontal (style A jogs, style B bars).
    pub orientation_bias: f64,
}

impl GeneratorParams {
    pub fn for_style(style: &str) -> Self {
        match style {
            "B" => Self {
                density: 0.6,
                run: [1, 4],
                orientation_bias: 0.9,
            },
            _ => Self {
                density: 0.55,
                run: [8, 32],
                orientation_bias: 0.85,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub style: String,
    pub count: usize,
    pub window: usize,
    /// Square physical extent in nm.
    pub extent: i64,
    /// Raster pitch shapes are snapped to, in nm.
    pub grid: i64,
    pub rules: DesignRules,
    pub params: GeneratorParams,
    pub seed: u64,
}

impl CorpusSpec {
    /// The built-in toy setup: 2048 nm patterns, 32-cell window, rules 48/48/4608.
    pub fn toy(style: &str, count: usize, seed: u64) -> Self {
        Self {
            style: style.to_string(),
            count,
            window: 32,
            extent: 2048,
            grid: 32,
            rules: toy_rules(),
            params: GeneratorParams::for_style(style),
            seed,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Spec(m));
        if self.style != "A" && self.style != "B" {
            return bad(format!("unknown style {:?}", self.style));
        }
        if self.grid <= 0 || self.extent <= 0 || self.extent % self.grid != 0 {
            return bad(format!("extent {} is not a multiple of grid {}", self.extent, self.grid));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        self.rules.validate().map_err(|e| CorpusError::Spec(e.to_string()))?;
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.density) || !(0.0..=1.0).contains(&p.orientation_bias) {
            return bad("density and orientation bias must be probabilities".into());
        }
        if p.run[0] == 0 || p.run[0] > p.run[1] {
            return bad(format!("bad run range {:?}", p.run));
        }
        Ok(())
    }
}

pub fn toy_rules() -> DesignRules {
    DesignRules::new(48, 48, 4608).expect("valid rules")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusItem {
    pub topology: TopologyMatrix,
    pub geometry: GeometryVectors,
    pub style: String,
}

impl CorpusItem {
    pub fn pattern(&self) -> LayoutPattern {
        decode(&self.topology, &self.geometry).expect("corpus items are consistent")
    }
}

struct Raster {
    n: usize,
    cells: Vec<u8>,
}

impl Raster {
    fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![0; n * n],
        }
    }

    /// Fills rows `r0..r1`, columns `c0..c1`, clipped to the raster.
    fn fill(&mut self, r0: usize, r1: usize, c0: usize, c1: usize) {
        for r in r0..r1.min(self.n) {
            for c in c0..c1.min(self.n) {
                self.cells[r * self.n + c] = 1;
            }
        }
    }

    fn pattern(self, grid: i64) -> LayoutPattern {
        let t = TopologyMatrix::from_cells(self.n, self.n, self.cells).expect("square raster");
        let g = GeometryVectors {
            dx: vec![grid; self.n],
            dy: vec![grid; self.n],
        };
        decode(&t, &g).expect("raster dims match")
    }
}

fn draw_bars(spec: &CorpusSpec, rng: &mut impl Rng) -> LayoutPattern {
    let n = (spec.extent / spec.grid) as usize;
    let p = &spec.params;
    let mut raster = Raster::new(n);
    let pitch = rng.random_range(6..=8);
    let height = rng.random_range(2..=3);
    // shared cut columns keep the scan-line count low
    let mut cuts: Vec<usize> = Vec::new();
    let mut x = rng.random_range(0..4);
    while x < n {
        cuts.push(x);
        x += rng.random_range(3..=10);
    }
    cuts.push(n);
    // (top row, bars) per track
    let mut tracks: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    let mut y = rng.random_range(0..pitch);
    while y + height <= n {
        let mut bars = Vec::new();
        let mut i = 0;
        while i + 1 < cuts.len() {
            if rng.random::<f64>() < p.density {
                if let Some(j) = (i + 1..cuts.len()).find(|&j| cuts[j] - cuts[i] >= p.run[0]) {
                    let j = (j + rng.random_range(0..3)).min(cuts.len() - 1);
                    let end = cuts[j].min(cuts[i] + p.run[1]);
                    if end - cuts[i] >= p.run[0] {
                        bars.push((cuts[i], end));
                        raster.fill(y, y + height, cuts[i], end);
                    }
                    i = j + 1;
                    continue;
                }
            }
            i += 1;
        }
        tracks.push((y, bars));
        y += pitch;
    }
    // vertical jogs joining a bar to an overlapping bar on the next track
    for pair in tracks.windows(2) {
        let (top, ref bars) = pair[0];
        for &(a, b) in bars {
            if rng.random::<f64>() < p.orientation_bias {
                continue;
            }
            if let Some(&(c, d)) = pair[1].1.iter().find(|&&(c, d)| c < b && a < d) {
                let (lo, hi) = (a.max(c), b.min(d));
                if hi - lo >= 2 {
                    let x0 = if rng.random::<bool>() { lo } else { hi - 2 };
                    raster.fill(top + height, pair[1].0, x0, x0 + 2);
                }
            }
        }
    }
    raster.pattern(spec.grid)
}

fn draw_vias(spec: &CorpusSpec, rng: &mut impl Rng) -> LayoutPattern {
    let n = (spec.extent / spec.grid) as usize;
    let p = &spec.params;
    let mut raster = Raster::new(n);
    let arrays = 1 + (0..3).filter(|_| rng.random::<f64>() < p.density).count();
    for _ in 0..arrays {
        let size = rng.random_range(2..=3);
        let pitch = size + rng.random_range(2..=4);
        let rows = rng.random_range(p.run[0]..=p.run[1]);
        let cols = rng.random_range(p.run[0]..=p.run[1]);
        let span_r = (rows - 1) * pitch + size;
        let span_c = (cols - 1) * pitch + size;
        if span_r > n || span_c > n {
            continue;
        }
        let r0 = rng.random_range(0..=n - span_r);
        let c0 = rng.random_range(0..=n - span_c);
        for i in 0..rows {
            for j in 0..cols {
                let (r, c) = (r0 + i * pitch, c0 + j * pitch);
                raster.fill(r, r + size, c, c + size);
            }
        }
    }
    if rng.random::<f64>() > p.orientation_bias {
        let len = rng.random_range(6..=12);
        let r = rng.random_range(0..n - 2);
        let c = rng.random_range(0..n - len);
        raster.fill(r, r + 2, c, c + len);
    }
    raster.pattern(spec.grid)
}

fn draw_once(spec: &CorpusSpec, rng: &mut impl Rng) -> Result<Option<CorpusItem>, CorpusError> {
    let pattern = match spec.style.as_str() {
        "A" => draw_bars(spec, rng),
        _ => draw_vias(spec, rng),
    };
    if !check(&pattern, &spec.rules)?.is_clean() {
        return Ok(None);
    }
    let (t, g) = encode(&pattern)?;
    if t.rows() > spec.window || t.cols() > spec.window {
        return Ok(None);
    }
    let (topology, geometry) = normalize(&t, &g, spec.window)?;
    Ok(Some(CorpusItem {
        topology,
        geometry,
        style: spec.style.clone(),
    }))
}

/// Draws `spec.count` clean patterns; item `i` depends only on `(seed, i)`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusItem>, CorpusError> {
    spec.validate()?;
    (0..spec.count).map(|i| generate_item(spec, i)).collect()
}

pub fn generate_item(spec: &CorpusSpec, index: usize) -> Result<CorpusItem, CorpusError> {
    let mut rng = derived_stream(spec.seed, &format!("corpus-{}", spec.style), index as u64);
    for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
        if let Some(item) = draw_once(spec, &mut rng)? {
            return Ok(item);
        }
    }
    Err(CorpusError::Infeasible(MAX_CONSECUTIVE_REJECTIONS))
}

/// Row and column run statistics of the 1-cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub mean_horizontal: f64,
    pub mean_vertical: f64,
}

fn mean_run(len_outer: usize, len_inner: usize, at: impl Fn(usize, usize) -> u8) -> f64 {
    let (mut total, mut runs) = (0usize, 0usize);
    for o in 0..len_outer {
        let mut run = 0;
        for i in 0..=len_inner {
            if i < len_inner && at(o, i) == 1 {
                run += 1;
            } else if run > 0 {
                total += run;
                runs += 1;
                run = 0;
            }
        }
    }
    if runs == 0 {
        0.0
    } else {
        total as f64 / runs as f64
    }
}

pub fn run_stats(t: &TopologyMatrix) -> RunStats {
    RunStats {
        mean_horizontal: mean_run(t.rows(), t.cols(), |r, c| t.get(r, c)),
        mean_vertical: mean_run(t.cols(), t.rows(), |c, r| t.get(r, c)),
    }
}

/// Threshold on the mean horizontal run length: longer runs mean style A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleDiscriminator {
    pub threshold: f64,
}

impl StyleDiscriminator {
    pub fn feature(t: &TopologyMatrix) -> f64 {
        run_stats(t).mean_horizontal
    }

    /// Picks the threshold with the best accuracy on the given samples;
    /// ties go to the midpoint of the widest gap.
    pub fn fit(a: &[TopologyMatrix], b: &[TopologyMatrix]) -> Self {
        let mut pts: Vec<(f64, bool)> = a
            .iter()
            .map(|t| (Self::feature(t), true))
            .chain(b.iter().map(|t| (Self::feature(t), false)))
            .collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        // threshold between pts[i-1] and pts[i]: everything from i up is A
        let mut best = (usize::MAX, f64::NEG_INFINITY, 0.0);
        let mut a_below = 0usize;
        let mut b_below = 0usize;
        let b_total = b.len();
        for i in 0..=pts.len() {
            if i > 0 {
                if pts[i - 1].1 {
                    a_below += 1;
                } else {
                    b_below += 1;
                }
            }
            if i > 0 && i < pts.len() && pts[i - 1].0 == pts[i].0 {
                continue;
            }
            let errors = a_below + (b_total - b_below);
            let lo = if i == 0 { pts.first().map_or(0.0, |p| p.0 - 1.0) } else { pts[i - 1].0 };
            let hi = if i == pts.len() { pts.last().map_or(0.0, |p| p.0 + 1.0) } else { pts[i].0 };
            let gap = hi - lo;
            if errors < best.0 || (errors == best.0 && gap > best.1) {
                best = (errors, gap, 0.5 * (lo + hi));
            }
        }
        Self { threshold: best.2 }
    }

    pub fn classify(&self, t: &TopologyMatrix) -> &'static str {
        if Self::feature(t) > self.threshold {
            "A"
        } else {
            "B"
        }
    }
}

/// Partitions `items` by `fractions` after a seeded shuffle. Sizes use the
/// largest-remainder method, ties to the lowest index.
pub fn split<T: Clone>(items: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>, CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Fractions(fractions.to_vec()));
    }
    let n = items.len();
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    let mut missing = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[i] += 1;
        missing -= 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_stream(seed, "split", 0));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(idx[start..start + s].iter().map(|&i| items[i].clone()).collect());
        start += s;
    }
    Ok(parts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub style: String,
    pub topology: String,
    pub geometry: String,
    pub topology_sha256: String,
    pub geometry_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub specs: Vec<CorpusSpec>,
    pub items: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `NNNNN.topo` / `NNNNN.geom` pairs and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, specs: &[CorpusSpec], items: &[CorpusItem]) -> Result<DatasetManifest, CorpusError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let topo = item.topology.to_text();
        let geom = item.geometry.to_text();
        let (tn, gn) = (format!("{i:05}.topo"), format!("{i:05}.geom"));
        let tp = dir.join(&tn);
        std::fs::write(&tp, &topo).map_err(io_err(&tp))?;
        let gp = dir.join(&gn);
        std::fs::write(&gp, &geom).map_err(io_err(&gp))?;
        entries.push(ManifestEntry {
            style: item.style.clone(),
            topology: tn,
            geometry: gn,
            topology_sha256: sha256_hex(topo.as_bytes()),
            geometry_sha256: sha256_hex(geom.as_bytes()),
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        specs: specs.to_vec(),
        items: entries,
    };
    let mp = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CorpusError::Dataset(e.to_string()))?;
    std::fs::write(&mp, text).map_err(io_err(&mp))?;
    Ok(manifest)
}

/// Loads a dataset directory, verifying every checksum.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<CorpusItem>), CorpusError> {
    let mp = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CorpusError::Dataset(e.to_string()))?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for e in &manifest.items {
        let tp = dir.join(&e.topology);
        let topo = std::fs::read_to_string(&tp).map_err(io_err(&tp))?;
        let gp = dir.join(&e.geometry);
        let geom = std::fs::read_to_string(&gp).map_err(io_err(&gp))?;
        if sha256_hex(topo.as_bytes()) != e.topology_sha256 || sha256_hex(geom.as_bytes()) != e.geometry_sha256 {
            return Err(CorpusError::Dataset(format!("checksum mismatch for {}", e.topology)));
        }
        items.push(CorpusItem {
            topology: TopologyMatrix::from_text(&topo)?,
            geometry: GeometryVectors::from_text(&geom)?,
            style: e.style.clone(),
        });
    }
    Ok((manifest, items))
}
