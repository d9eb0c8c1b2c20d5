// SPDX-License-Identifier: Apache-2.0

//! Conditional convolutional denoiser with hand-written backpropagation.
//!
//! Activations are stored channel-major, `[C][B·H·W]`. Each 3×3 convolution
//! runs as im2col followed by one GEMM. The time/style embedding goes through
//! a three-layer linear stack and is projected into a per-channel bias of
//! every convolution.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DiffusionError, StyleCondition};
use crate::seed::derived_stream;
use crate::squish::TopologyMatrix;

/// Inference runs in chunks of this many topologies to bound scratch memory.
const INFERENCE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Side of the square topology window the network accepts.
    pub window: usize,
    pub channels: usize,
    /// One 3×3 convolution per entry; all but the first are residual.
    pub dilations: Vec<usize>,
    pub embed: usize,
    pub time_features: usize,
    /// Number of diffusion steps, for the `k / K` time feature.
    pub steps: usize,
    pub classes: Vec<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            window: 32,
            channels: 32,
            dilations: vec![1, 2, 4, 8],
            embed: 32,
            time_features: 16,
            steps: 100,
            classes: vec!["A".into(), "B".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
struct ConvSlots {
    w: Range<usize>,
    b: Range<usize>,
    cond: Range<usize>,
    cin: usize,
    dilation: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<TensorSpec>,
    ranges: Vec<Range<usize>>,
    time_w: Range<usize>,
    style: Range<usize>,
    embed: Vec<(Range<usize>, Range<usize>)>,
    conv: Vec<ConvSlots>,
    head_w: Range<usize>,
    head_b: Range<usize>,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut specs = Vec::new();
        let mut ranges = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let r = offset..offset + n;
            offset += n;
            specs.push(TensorSpec { name, shape });
            ranges.push(r.clone());
            r
        };
        let (c, e) = (cfg.channels, cfg.embed);
        let time_w = push("time.w".into(), vec![e, cfg.time_features]);
        let style = push("style.table".into(), vec![cfg.classes.len(), e]);
        let embed = (0..3)
            .map(|i| (push(format!("embed.{i}.w"), vec![e, e]), push(format!("embed.{i}.b"), vec![e])))
            .collect();
        let conv = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(l, &dilation)| {
                let cin = if l == 0 { 1 } else { c };
                ConvSlots {
                    w: push(format!("conv.{l}.w"), vec![c, cin * 9]),
                    b: push(format!("conv.{l}.b"), vec![c]),
                    cond: push(format!("conv.{l}.cond"), vec![c, e]),
                    cin,
                    dilation,
                }
            })
            .collect();
        let head_w = push("head.w".into(), vec![c]);
        let head_b = push("head.b".into(), vec![1]);
        Self {
            specs,
            ranges,
            time_w,
            style,
            embed,
            conv,
            head_w,
            head_b,
        }
    }

    fn total(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

/// Weights of the denoiser, stored as one flat vector of named tensors.
#[derive(Clone, Debug)]
pub struct DenoiserParameters {
    config: NetworkConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl PartialEq for DenoiserParameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `c = a·b + beta·c` with optional transposes; all operands row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct Geom {
    batch: usize,
    h: usize,
    w: usize,
}

impl Geom {
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn n(&self) -> usize {
        self.batch * self.hw()
    }
}

/// Source column range `[x0, x1)` whose shifted source `x + off` is in bounds.
fn valid_span(w: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (w as isize - off).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(a: &[f64], cin: usize, g: Geom, d: usize, cols: &mut [f64]) {
    let (n, hw, h, w) = (g.n(), g.hw(), g.h as isize, g.w);
    for ci in 0..cin {
        for tap in 0..9 {
            let oy = (tap as isize / 3 - 1) * d as isize;
            let ox = (tap as isize % 3 - 1) * d as isize;
            let (x0, x1) = valid_span(w, ox);
            let row = &mut cols[(ci * 9 + tap) * n..][..n];
            for b in 0..g.batch {
                for y in 0..g.h {
                    let dst = &mut row[b * hw + y * w..][..w];
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &a[ci * n + b * hw + sy as usize * w..][..w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    for x in x0..x1 {
                        dst[x] = src[(x as isize + ox) as usize];
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, g: Geom, d: usize, a: &mut [f64]) {
    let (n, hw, h, w) = (g.n(), g.hw(), g.h as isize, g.w);
    a[..cin * n].fill(0.0);
    for ci in 0..cin {
        for tap in 0..9 {
            let oy = (tap as isize / 3 - 1) * d as isize;
            let ox = (tap as isize % 3 - 1) * d as isize;
            let (x0, x1) = valid_span(w, ox);
            let row = &cols[(ci * 9 + tap) * n..][..n];
            for b in 0..g.batch {
                for y in 0..g.h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let src = &row[b * hw + y * w..][..w];
                    let dst = &mut a[ci * n + b * hw + sy as usize * w..][..w];
                    for x in x0..x1 {
                        dst[(x as isize + ox) as usize] += src[x];
                    }
                }
            }
        }
    }
}

/// `out = m·v` for an `[rows][v.len()]` matrix.
fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let k = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(k)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// `out += mᵀ·v`.
fn matvec_t_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let k = out.len();
    for (&vi, row) in v.iter().zip(m.chunks_exact(k)) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `m += u ⊗ v`.
fn outer_add(m: &mut [f64], u: &[f64], v: &[f64]) {
    let k = v.len();
    for (&ui, row) in u.iter().zip(m.chunks_exact_mut(k)) {
        for (a, &b) in row.iter_mut().zip(v) {
            *a += ui * b;
        }
    }
}

struct EmbedCache {
    style: usize,
    tf: Vec<f64>,
    e0: Vec<f64>,
    z: [Vec<f64>; 2],
    h: [Vec<f64>; 2],
    e: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    z: Vec<f64>,
    mask: Option<Vec<f64>>,
}

/// Activations retained by a training forward pass.
pub struct ForwardCache {
    geom: Geom,
    embeds: Vec<EmbedCache>,
    layers: Vec<LayerCache>,
    last: Vec<f64>,
}

/// Dropout applied after every convolution's activation.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl DenoiserParameters {
    /// Fan-in scaled uniform initialization. With `zero_head` the output
    /// layer starts at zero, so every prediction is exactly 0.5.
    pub fn init(config: NetworkConfig, seed: u64, zero_head: bool) -> Self {
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total()];
        let mut rng = derived_stream(seed, "init-params", 0);
        for (spec, range) in layout.specs.iter().zip(&layout.ranges) {
            let is_bias = spec.name.ends_with(".b");
            if is_bias || (zero_head && spec.name == "head.w") {
                continue;
            }
            let fan_in = if spec.name == "style.table" {
                1
            } else {
                *spec.shape.last().expect("non-scalar")
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut data[range.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Self { config, layout, data }
    }

    /// Rebuilds parameters from named tensors in layout order.
    pub fn from_tensors(config: NetworkConfig, tensors: Vec<(TensorSpec, Vec<f64>)>) -> Result<Self, String> {
        let layout = Layout::new(&config);
        if tensors.len() != layout.specs.len() {
            return Err(format!("expected {} tensors, found {}", layout.specs.len(), tensors.len()));
        }
        let mut data = Vec::with_capacity(layout.total());
        for ((spec, values), want) in tensors.into_iter().zip(&layout.specs) {
            if spec != *want {
                return Err(format!("tensor {} {:?} does not match {} {:?}", spec.name, spec.shape, want.name, want.shape));
            }
            if values.len() != spec.shape.iter().product::<usize>() {
                return Err(format!("tensor {} has wrong length", spec.name));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(format!("tensor {} has non-finite values", spec.name));
            }
            data.extend(values);
        }
        Ok(Self { config, layout, data })
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&TensorSpec, &[f64])> {
        self.layout
            .specs
            .iter()
            .zip(&self.layout.ranges)
            .map(|(s, r)| (s, &self.data[r.clone()]))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn class_index(&self, style: &str) -> Option<usize> {
        self.config.classes.iter().position(|c| c == style)
    }

    fn time_features(&self, k: usize) -> Vec<f64> {
        let t = k as f64 / self.config.steps.max(1) as f64;
        let half = self.config.time_features / 2;
        let mut f = Vec::with_capacity(self.config.time_features);
        for i in 0..half {
            let freq = std::f64::consts::PI * (1u64 << i.min(30)) as f64;
            f.push((freq * t).sin());
            f.push((freq * t).cos());
        }
        f.resize(self.config.time_features, t);
        f
    }

    fn embed(&self, k: usize, style: usize) -> EmbedCache {
        let l = &self.layout;
        let e = self.config.embed;
        let tf = self.time_features(k);
        let mut e0 = vec![0.0; e];
        matvec(&self.data[l.time_w.clone()], &tf, &mut e0);
        for (v, t) in e0.iter_mut().zip(&self.data[l.style.clone()][style * e..][..e]) {
            *v += t;
        }
        let mut zs: [Vec<f64>; 2] = [vec![0.0; e], vec![0.0; e]];
        let mut hs: [Vec<f64>; 2] = [vec![0.0; e], vec![0.0; e]];
        let mut out = vec![0.0; e];
        let mut x = e0.clone();
        for (i, (w, b)) in l.embed.iter().enumerate() {
            let mut z = vec![0.0; e];
            matvec(&self.data[w.clone()], &x, &mut z);
            for (v, bias) in z.iter_mut().zip(&self.data[b.clone()]) {
                *v += bias;
            }
            if i < 2 {
                x = z.iter().map(|&v| silu(v)).collect();
                hs[i] = x.clone();
                zs[i] = z;
            } else {
                out = z;
            }
        }
        EmbedCache {
            style,
            tf,
            e0,
            z: zs,
            h: hs,
            e: out,
        }
    }

    /// Raw logits for a batch, optionally keeping activations for backprop.
    fn forward<R: Rng>(
        &self,
        inputs: &[&TopologyMatrix],
        ks: &[usize],
        styles: &[usize],
        mut dropout: Option<Dropout<'_, R>>,
        keep: bool,
    ) -> (Vec<f64>, Option<ForwardCache>) {
        let g = Geom {
            batch: inputs.len(),
            h: inputs[0].rows(),
            w: inputs[0].cols(),
        };
        let (n, hw, c) = (g.n(), g.hw(), self.config.channels);
        let embeds: Vec<EmbedCache> = ks.iter().zip(styles).map(|(&k, &s)| self.embed(k, s)).collect();
        let mut a: Vec<f64> = inputs
            .iter()
            .flat_map(|t| t.cells().iter().map(|&v| 2.0 * f64::from(v) - 1.0))
            .collect();
        let mut layers = Vec::new();
        let mut cols = Vec::new();
        for (l, slot) in self.layout.conv.iter().enumerate() {
            cols.resize(slot.cin * 9 * n, 0.0);
            im2col(&a, slot.cin, g, slot.dilation, &mut cols);
            let mut z = vec![0.0; c * n];
            gemm(c, slot.cin * 9, n, &self.data[slot.w.clone()], false, &cols, false, 0.0, &mut z);
            let bias = &self.data[slot.b.clone()];
            let proj = &self.data[slot.cond.clone()];
            for (bi, emb) in embeds.iter().enumerate() {
                let mut cb = vec![0.0; c];
                matvec(proj, &emb.e, &mut cb);
                for ch in 0..c {
                    let add = bias[ch] + cb[ch];
                    for v in &mut z[ch * n + bi * hw..][..hw] {
                        *v += add;
                    }
                }
            }
            let mut s: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            let mask = dropout.as_mut().filter(|d| d.rate > 0.0).map(|d| {
                let scale = 1.0 / (1.0 - d.rate);
                let m: Vec<f64> = (0..c * n)
                    .map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { scale })
                    .collect();
                for (v, k) in s.iter_mut().zip(&m) {
                    *v *= k;
                }
                m
            });
            let out = if l == 0 {
                s
            } else {
                s.iter().zip(&a).map(|(x, y)| x + y).collect()
            };
            let input = std::mem::replace(&mut a, out);
            if keep {
                layers.push(LayerCache { input, z, mask });
            }
        }
        let hwt = &self.data[self.layout.head_w.clone()];
        let hb = self.data[self.layout.head_b.start];
        let mut logits = vec![hb; n];
        for (ch, &wc) in hwt.iter().enumerate() {
            for (o, &v) in logits.iter_mut().zip(&a[ch * n..][..n]) {
                *o += wc * v;
            }
        }
        let cache = keep.then(|| ForwardCache {
            geom: g,
            embeds,
            layers,
            last: a,
        });
        (logits, cache)
    }

    /// Training forward pass: per-item steps and class indices.
    pub fn forward_train<R: Rng>(
        &self,
        inputs: &[&TopologyMatrix],
        ks: &[usize],
        styles: &[usize],
        dropout: Option<Dropout<'_, R>>,
    ) -> (Vec<f64>, ForwardCache) {
        let (logits, cache) = self.forward(inputs, ks, styles, dropout, true);
        (logits, cache.expect("kept"))
    }

    /// Inference logits for a batch, flattened item-major.
    pub fn logits(&self, inputs: &[&TopologyMatrix], ks: &[usize], styles: &[usize]) -> Vec<f64> {
        self.forward::<rand_chacha::ChaCha8Rng>(inputs, ks, styles, None, false).0
    }

    /// Gradient of `Σ dlogits · logits` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
        let g = cache.geom;
        let (n, hw, c, e) = (g.n(), g.hw(), self.config.channels, self.config.embed);
        let l = &self.layout;
        let mut grad = vec![0.0; self.data.len()];

        let hwt = &self.data[l.head_w.clone()];
        grad[l.head_b.start] = dlogits.iter().sum();
        let mut da = vec![0.0; c * n];
        for ch in 0..c {
            let act = &cache.last[ch * n..][..n];
            grad[l.head_w.start + ch] = act.iter().zip(dlogits).map(|(a, d)| a * d).sum();
            for (o, &d) in da[ch * n..][..n].iter_mut().zip(dlogits) {
                *o = hwt[ch] * d;
            }
        }

        let mut de = vec![vec![0.0; e]; g.batch];
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for (li, (slot, lc)) in l.conv.iter().zip(&cache.layers).enumerate().rev() {
            let mut dz = da.clone();
            if let Some(m) = &lc.mask {
                for (v, k) in dz.iter_mut().zip(m) {
                    *v *= k;
                }
            }
            for (v, &z) in dz.iter_mut().zip(&lc.z) {
                *v *= silu_grad(z);
            }
            let kk = slot.cin * 9;
            cols.resize(kk * n, 0.0);
            im2col(&lc.input, slot.cin, g, slot.dilation, &mut cols);
            gemm(c, n, kk, &dz, false, &cols, true, 0.0, &mut grad[slot.w.clone()]);
            let proj = &self.data[slot.cond.clone()];
            let mut dcb = vec![0.0; c];
            for (bi, emb) in cache.embeds.iter().enumerate() {
                for (ch, v) in dcb.iter_mut().enumerate() {
                    *v = dz[ch * n + bi * hw..][..hw].iter().sum();
                    grad[slot.b.start + ch] += *v;
                }
                outer_add(&mut grad[slot.cond.clone()], &dcb, &emb.e);
                matvec_t_add(proj, &dcb, &mut de[bi]);
            }
            if li == 0 {
                break;
            }
            dcols.resize(kk * n, 0.0);
            gemm(kk, c, n, &self.data[slot.w.clone()], true, &dz, false, 0.0, &mut dcols);
            let mut din = vec![0.0; slot.cin * n];
            col2im(&dcols, slot.cin, g, slot.dilation, &mut din);
            // residual path
            for (x, y) in din.iter_mut().zip(&da) {
                *x += y;
            }
            da = din;
        }

        for (emb, de) in cache.embeds.iter().zip(&de) {
            self.embed_backward(emb, de, &mut grad);
        }
        grad
    }

    fn embed_backward(&self, emb: &EmbedCache, de: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        let e = self.config.embed;
        let inputs = [&emb.e0, &emb.h[0], &emb.h[1]];
        let mut d = de.to_vec();
        for i in (0..3).rev() {
            let (w, b) = &l.embed[i];
            if i < 2 {
                for (v, &z) in d.iter_mut().zip(&emb.z[i]) {
                    *v *= silu_grad(z);
                }
            }
            outer_add(&mut grad[w.clone()], &d, inputs[i]);
            for (g, v) in grad[b.clone()].iter_mut().zip(&d) {
                *g += v;
            }
            let mut prev = vec![0.0; e];
            matvec_t_add(&self.data[w.clone()], &d, &mut prev);
            d = prev;
        }
        outer_add(&mut grad[l.time_w.clone()], &d, &emb.tf);
        for (g, v) in grad[l.style.clone()][emb.style * e..][..e].iter_mut().zip(&d) {
            *g += v;
        }
    }

    fn check_inputs(&self, inputs: &[&TopologyMatrix], k: usize, style: &str) -> Result<usize, DiffusionError> {
        let class = self
            .class_index(style)
            .ok_or_else(|| DiffusionError::Denoiser(format!("unknown style {style:?}")))?;
        let w = self.config.window;
        if let Some(t) = inputs.iter().find(|t| t.rows() != w || t.cols() != w) {
            return Err(DiffusionError::Denoiser(format!(
                "input is {}x{}, network window is {w}x{w}",
                t.rows(),
                t.cols()
            )));
        }
        if k == 0 || k > self.config.steps {
            return Err(DiffusionError::Step {
                k,
                max: self.config.steps,
            });
        }
        Ok(class)
    }
}

impl Denoiser for DenoiserParameters {
    fn predict_x0(
        &self,
        inputs: &[&TopologyMatrix],
        k: usize,
        condition: &StyleCondition,
    ) -> Result<Vec<Vec<f64>>, DiffusionError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let class = self.check_inputs(inputs, k, &condition.style)?;
        let hw = self.config.window * self.config.window;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(INFERENCE_CHUNK) {
            let ks = vec![k; chunk.len()];
            let styles = vec![class; chunk.len()];
            let logits = self.logits(chunk, &ks, &styles);
            out.extend(logits.chunks_exact(hw).map(|l| l.iter().map(|&x| sigmoid(x)).collect()));
        }
        Ok(out)
    }
}
