// SPDX-License-Identifier: Apache-2.0

//! Masked regeneration and free-size extension.
//!
//! `modify` resamples the masked-out cells while the kept cells follow the
//! forward process of the known topology, so the result agrees with the
//! input exactly wherever the mask keeps. Extension runs `modify` over a
//! sequence of `L × L` windows; only one window's diffusion state exists at
//! a time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    forward_sample, reverse_step, sample, uniform_noise, Denoiser, DiffusionError, NoiseSchedule, NoisyTopology,
    StyleCondition,
};
use crate::drc::CellBox;
use crate::seed::derive_seed;
use crate::squish::TopologyMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("mask is {mask_rows}x{mask_cols}, topology is {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        mask_rows: usize,
        mask_cols: usize,
    },
    #[error("mask keeps every cell; nothing to regenerate")]
    NothingToRegenerate,
    #[error("invalid extension plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Binary mask over a topology: 1 keeps a cell, 0 regenerates it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditMask(TopologyMatrix);

impl EditMask {
    pub fn new(mask: TopologyMatrix) -> Result<Self, EditError> {
        if mask.count_ones() == mask.rows() * mask.cols() {
            return Err(EditError::NothingToRegenerate);
        }
        Ok(Self(mask))
    }

    /// Keeps everything except the cells inside `region`.
    pub fn regenerate_box(rows: usize, cols: usize, region: CellBox) -> Result<Self, EditError> {
        let mut m = TopologyMatrix::from_cells(rows, cols, vec![1; rows * cols]).expect("shape");
        for (r, c) in region.cells() {
            if r < rows && c < cols {
                m.set(r, c, 0);
            }
        }
        Self::new(m)
    }

    pub fn keeps(&self, row: usize, col: usize) -> bool {
        self.0.get(row, col) == 1
    }

    pub fn matrix(&self) -> &TopologyMatrix {
        &self.0
    }
}

fn compose(mask: &EditMask, known: &TopologyMatrix, unknown: &TopologyMatrix) -> TopologyMatrix {
    let cells = mask
        .0
        .cells()
        .iter()
        .zip(known.cells().iter().zip(unknown.cells()))
        .map(|(&m, (&k, &u))| if m == 1 { k } else { u })
        .collect();
    TopologyMatrix::from_cells(known.rows(), known.cols(), cells).expect("same shape")
}

/// Regenerates the cells where `mask` is 0, conditioned on the kept cells.
pub fn modify(
    known: &TopologyMatrix,
    mask: &EditMask,
    condition: &StyleCondition,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<TopologyMatrix, EditError> {
    let (rows, cols) = (known.rows(), known.cols());
    if mask.0.rows() != rows || mask.0.cols() != cols {
        return Err(EditError::Shape {
            rows,
            cols,
            mask_rows: mask.0.rows(),
            mask_cols: mask.0.cols(),
        });
    }
    let big_k = schedule.steps();
    let known_seed = derive_seed(seed, "known", 0);
    let start = compose(
        mask,
        &forward_sample(known, big_k, schedule, known_seed)?.cells,
        &uniform_noise(rows, cols, seed),
    );
    let mut state = NoisyTopology {
        cells: start,
        step: big_k,
    };
    while state.step > 0 {
        let next = reverse_step(&state, condition, denoiser, schedule, seed)?;
        let kept = if next.step == 0 {
            known.clone()
        } else {
            forward_sample(known, next.step, schedule, known_seed)?.cells
        };
        state = NoisyTopology {
            cells: compose(mask, &kept, &next.cells),
            step: next.step,
        };
    }
    Ok(state.cells)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtensionMethod {
    In,
    Out,
}

impl std::str::FromStr for ExtensionMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "in" | "in-painting" | "inpainting" => Ok(Self::In),
            "out" | "out-painting" | "outpainting" => Ok(Self::Out),
            other => Err(format!("unknown extension method {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementKind {
    Tile,
    VerticalSeam,
    HorizontalSeam,
    Corner,
    Sweep,
}

/// Which cells of a window are regenerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regenerate {
    /// Every cell not yet finalized by the seed or an earlier window.
    Pending,
    /// The given canvas box.
    Band(CellBox),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub kind: PlacementKind,
    pub row: usize,
    pub col: usize,
    pub regenerate: Regenerate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionPlan {
    pub method: ExtensionMethod,
    /// Size of the seed topology placed at the origin, `[rows, cols]`.
    pub current: [usize; 2],
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub stride: usize,
    pub placements: Vec<Placement>,
}

impl ExtensionPlan {
    pub fn window_count(&self) -> usize {
        self.placements.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Window offsets along one axis: step `stride`, last one flush.
fn offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let n = (len - window).div_ceil(stride) + 1;
    (0..n).map(|i| (i * stride).min(len - window)).collect()
}

/// `⌈(W − L)/S⌉ + 1` windows per row and column.
pub fn out_painting_count(w: usize, h: usize, l: usize, s: usize) -> usize {
    ((w - l).div_ceil(s) + 1) * ((h - l).div_ceil(s) + 1)
}

/// `(2⌈W/L⌉ − 1)(2⌈H/L⌉ − 1)` windows.
pub fn in_painting_count(w: usize, h: usize, l: usize) -> usize {
    (2 * w.div_ceil(l) - 1) * (2 * h.div_ceil(l) - 1)
}

/// Half-width of a seam band.
fn band_half(window: usize) -> usize {
    (window / 4).max(1)
}

pub fn plan_extension(
    current: [usize; 2],
    target: [usize; 2],
    window: usize,
    stride: usize,
    method: ExtensionMethod,
) -> Result<ExtensionPlan, EditError> {
    let [width, height] = target;
    let bad = |m: String| Err(EditError::Plan(m));
    if window == 0 || window > width || window > height {
        return bad(format!("window {window} does not fit a {width}x{height} target"));
    }
    if current[0] > height || current[1] > width {
        return bad(format!("current {}x{} exceeds target {width}x{height}", current[0], current[1]));
    }
    if method == ExtensionMethod::Out && (stride == 0 || stride > window) {
        return bad(format!("stride {stride} must be in 1..={window}"));
    }
    let mut placements = Vec::new();
    match method {
        ExtensionMethod::Out => {
            for &row in &offsets(height, window, stride) {
                for &col in &offsets(width, window, stride) {
                    placements.push(Placement {
                        kind: PlacementKind::Sweep,
                        row,
                        col,
                        regenerate: Regenerate::Pending,
                    });
                }
            }
        }
        ExtensionMethod::In => {
            let rows = offsets(height, window, window);
            let cols = offsets(width, window, window);
            let half = band_half(window);
            let centered = |seam: usize, len: usize| seam.saturating_sub(window / 2).min(len - window);
            for &row in &rows {
                for &col in &cols {
                    placements.push(Placement {
                        kind: PlacementKind::Tile,
                        row,
                        col,
                        regenerate: Regenerate::Pending,
                    });
                }
            }
            let x_seams: Vec<usize> = cols[..cols.len() - 1].iter().map(|c| c + window).collect();
            let y_seams: Vec<usize> = rows[..rows.len() - 1].iter().map(|r| r + window).collect();
            for &row in &rows {
                for &xs in &x_seams {
                    let col = centered(xs, width);
                    let band = CellBox {
                        upper: row,
                        bottom: row + window - 1,
                        left: xs - half,
                        right: (xs + half - 1).min(width - 1),
                    };
                    placements.push(Placement {
                        kind: PlacementKind::VerticalSeam,
                        row,
                        col,
                        regenerate: Regenerate::Band(band),
                    });
                }
            }
            for &ys in &y_seams {
                for &col in &cols {
                    let row = centered(ys, height);
                    let band = CellBox {
                        upper: ys - half,
                        bottom: (ys + half - 1).min(height - 1),
                        left: col,
                        right: col + window - 1,
                    };
                    placements.push(Placement {
                        kind: PlacementKind::HorizontalSeam,
                        row,
                        col,
                        regenerate: Regenerate::Band(band),
                    });
                }
            }
            for &ys in &y_seams {
                for &xs in &x_seams {
                    let band = CellBox {
                        upper: ys - half,
                        bottom: (ys + half - 1).min(height - 1),
                        left: xs - half,
                        right: (xs + half - 1).min(width - 1),
                    };
                    placements.push(Placement {
                        kind: PlacementKind::Corner,
                        row: centered(ys, height),
                        col: centered(xs, width),
                        regenerate: Regenerate::Band(band),
                    });
                }
            }
        }
    }
    Ok(ExtensionPlan {
        method,
        current,
        width,
        height,
        window,
        stride,
        placements,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub seed: u64,
    /// False when the window was already fully finalized.
    pub sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtensionRun {
    pub topology: TopologyMatrix,
    pub windows: Vec<WindowRecord>,
    pub sampler_calls: usize,
    /// Largest diffusion state handed to the sampler, in cells.
    pub peak_state_cells: usize,
}

/// Executes `plan`, placing `seed` (if any) at the origin first.
pub fn extend(
    seed: Option<&TopologyMatrix>,
    plan: &ExtensionPlan,
    condition: &StyleCondition,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<ExtensionRun, EditError> {
    let (w, h, l) = (plan.width, plan.height, plan.window);
    let mut canvas = TopologyMatrix::zeros(h, w);
    let mut done = TopologyMatrix::zeros(h, w);
    match seed {
        Some(s) => {
            if [s.rows(), s.cols()] != plan.current {
                return Err(EditError::Plan(format!(
                    "seed is {}x{}, plan expects {}x{}",
                    s.rows(),
                    s.cols(),
                    plan.current[0],
                    plan.current[1]
                )));
            }
            canvas.paste(0, 0, s);
            done.paste(0, 0, &TopologyMatrix::from_cells(s.rows(), s.cols(), vec![1; s.rows() * s.cols()]).expect("shape"));
        }
        None if plan.current != [0, 0] => {
            return Err(EditError::Plan("plan expects a seed topology".into()));
        }
        None => {}
    }
    let mut windows = Vec::with_capacity(plan.placements.len());
    let mut sampler_calls = 0;
    let mut peak = 0;
    for (index, p) in plan.placements.iter().enumerate() {
        if p.row + l > h || p.col + l > w {
            return Err(EditError::Plan(format!("window {index} overhangs the canvas")));
        }
        let wseed = derive_seed(rng_seed, "window", index as u64);
        let mut keep = TopologyMatrix::zeros(l, l);
        for r in 0..l {
            for c in 0..l {
                let (cr, cc) = (p.row + r, p.col + c);
                let kept = match p.regenerate {
                    Regenerate::Pending => done.get(cr, cc) == 1,
                    Regenerate::Band(b) => !b.contains(cr, cc),
                };
                keep.set(r, c, u8::from(kept));
            }
        }
        let known = canvas.window(p.row, p.col, l, l);
        let sampled = keep.count_ones() < l * l;
        if sampled {
            let out = if keep.count_ones() == 0 {
                sample(l, l, condition, denoiser, schedule, wseed)?
            } else {
                modify(&known, &EditMask(keep), condition, denoiser, schedule, wseed)?
            };
            canvas.paste(p.row, p.col, &out);
            sampler_calls += 1;
            peak = peak.max(l * l);
        }
        done.paste(p.row, p.col, &TopologyMatrix::from_cells(l, l, vec![1; l * l]).expect("shape"));
        windows.push(WindowRecord {
            index,
            seed: wseed,
            sampled,
        });
    }
    Ok(ExtensionRun {
        topology: canvas,
        windows,
        sampler_calls,
        peak_state_cells: peak,
    })
}
