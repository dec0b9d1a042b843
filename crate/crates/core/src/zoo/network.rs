//! Parameters, forward pass and reverse pass of a plain/residual/branched CNN.
//!
//! Every convolution is followed by ReLU. An optional per-kernel mask scales
//! the convolution output (bias included) before the residual add and the
//! ReLU, so a zero entry removes that kernel's feature map from everything
//! downstream, exactly as if the kernel had been sliced away.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{ArchitectureSpec, Plan};
use crate::datasets::{ImageBatch, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::{col2im, gemm, im2col, max_pool2, max_unpool2, ConvGeometry, FeatureMap, Matrix};

/// Per-channel input standardization on the `[0, 1]` pixel scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics of a training split.
    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        let (_, _, c) = ds.dims();
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for (i, &p) in ds.pixels().iter().enumerate() {
            let v = p as f64 / 255.0;
            sum[i % c] += v;
            sq[i % c] += v * v;
        }
        let n = (ds.pixels().len() / c.max(1)).max(1) as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sq
            .iter()
            .zip(&sum)
            .map(|(q, s)| ((q / n - (s / n).powi(2)).max(0.0).sqrt() as f32).max(1e-3))
            .collect();
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    /// `[out][in][k][k]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    plan: Plan,
    pub conv: Vec<ConvParams>,
    pub fc: Vec<DenseParams>,
    pub norm: Normalization,
}

/// Activations recorded by a forward pass for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    stage_in: Vec<FeatureMap>,
    pre_pool: Vec<(usize, usize)>,
    pool_index: Vec<Vec<u32>>,
    z: Vec<Option<FeatureMap>>,
    act: Vec<FeatureMap>,
    fc_in: Vec<Matrix>,
    fc_pre: Vec<Matrix>,
}

/// Parameter gradients, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub conv_w: Vec<Vec<f32>>,
    pub conv_b: Vec<Vec<f32>>,
    pub fc_w: Vec<Vec<f32>>,
    pub fc_b: Vec<Vec<f32>>,
}

/// A normalized batch plus its unfolded input patches.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    norm: Normalization,
    x: FeatureMap,
    cols: Vec<(ConvGeometry, Vec<f32>)>,
}

impl PreparedInput {
    pub fn input(&self) -> &FeatureMap {
        &self.x
    }
}

pub type Probe<'a> = &'a mut dyn FnMut(usize, &FeatureMap);

/// Images per forward pass when predicting large batches. Small enough that
/// a chunk's feature maps stay in cache.
pub const PREDICT_CHUNK: usize = 32;

impl Network {
    /// He-initialized parameters, deterministic in `seed`.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let plan = spec.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(spec.conv_layers.len());
        for (l, cs) in spec.conv_layers.iter().enumerate() {
            let cin = plan.in_channels[l];
            let fan_in = cin * cs.kernel_size * cs.kernel_size;
            // layers that receive a skip start small so the sum keeps its scale
            let receives_skip = plan.stages[plan.stage_of_layer[l]].residual_from.is_some();
            let gain = if receives_skip { 0.5 } else { 2.0 };
            let dist = Normal::new(0.0f32, (gain / fan_in as f32).sqrt()).expect("positive std");
            conv.push(ConvParams {
                out_channels: cs.out_kernels,
                in_channels: cin,
                kernel: cs.kernel_size,
                weight: (0..cs.out_kernels * fan_in).map(|_| dist.sample(&mut rng)).collect(),
                bias: vec![0.0; cs.out_kernels],
            });
        }
        let last = plan.fc_dims.len() - 1;
        let fc = plan
            .fc_dims
            .iter()
            .enumerate()
            .map(|(i, &(inp, out))| {
                let gain = if i == last { 1.0 } else { 2.0 };
                let dist = Normal::new(0.0f32, (gain / inp as f32).sqrt()).expect("positive std");
                DenseParams {
                    in_features: inp,
                    out_features: out,
                    weight: (0..inp * out).map(|_| dist.sample(&mut rng)).collect(),
                    bias: vec![0.0; out],
                }
            })
            .collect();
        let norm = Normalization::identity(spec.input.channels);
        Ok(Self {
            spec,
            plan,
            conv,
            fc,
            norm,
        })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(spec: ArchitectureSpec, conv: Vec<ConvParams>, fc: Vec<DenseParams>, norm: Normalization) -> Result<Self> {
        let plan = spec.plan()?;
        if conv.len() != spec.conv_layers.len() || fc.len() != plan.fc_dims.len() {
            return Err(Error::Shape("layer count differs from spec".into()));
        }
        for (l, (p, cs)) in conv.iter().zip(&spec.conv_layers).enumerate() {
            let ok = p.out_channels == cs.out_kernels
                && p.in_channels == plan.in_channels[l]
                && p.kernel == cs.kernel_size
                && p.weight.len() == p.out_channels * p.patch_len()
                && p.bias.len() == p.out_channels;
            if !ok {
                return Err(Error::Shape(format!("conv layer {l} parameters do not match spec")));
            }
        }
        for (i, (p, &(inp, out))) in fc.iter().zip(&plan.fc_dims).enumerate() {
            if p.in_features != inp || p.out_features != out || p.weight.len() != inp * out || p.bias.len() != out {
                return Err(Error::Shape(format!("fc layer {i} parameters do not match spec")));
            }
        }
        if norm.mean.len() != spec.input.channels || norm.std.len() != spec.input.channels {
            return Err(Error::Shape("normalization channel count differs from input".into()));
        }
        Ok(Self {
            spec,
            plan,
            conv,
            fc,
            norm,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn total_kernels(&self) -> usize {
        self.spec.total_kernels()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter buffer in storage order: per conv layer weight then
    /// bias, then per FC layer weight then bias.
    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for c in &self.conv {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for f in &self.fc {
            out.push(&f.weight);
            out.push(&f.bias);
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for f in &mut self.fc {
            out.push(&mut f.weight);
            out.push(&mut f.bias);
        }
        out
    }

    pub fn geometry(&self, layer: usize) -> ConvGeometry {
        let cs = &self.spec.conv_layers[layer];
        let (in_h, in_w) = self.plan.in_hw[layer];
        ConvGeometry {
            in_channels: self.plan.in_channels[layer],
            in_h,
            in_w,
            kernel: cs.kernel_size,
            stride: cs.stride,
            padding: cs.padding,
        }
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let inp = self.spec.input;
        if (batch.height, batch.width, batch.channels) != (inp.height, inp.width, inp.channels) {
            return Err(Error::arg(format!(
                "input {}x{}x{} does not match model input {}x{}x{}",
                batch.height, batch.width, batch.channels, inp.height, inp.width, inp.channels
            )));
        }
        Ok(())
    }

    /// Normalized network input for a batch of HWC images.
    pub fn input_map(&self, batch: &ImageBatch) -> Result<FeatureMap> {
        self.check_batch(batch)?;
        let (h, w, c) = (batch.height, batch.width, batch.channels);
        let plane = h * w;
        let mut fm = FeatureMap::zeros(c, batch.len, h, w);
        for b in 0..batch.len {
            let img = batch.image(b);
            for ch in 0..c {
                let (m, s) = (self.norm.mean[ch], 1.0 / self.norm.std[ch]);
                let dst = &mut fm.data[(ch * batch.len + b) * plane..][..plane];
                for (p, d) in dst.iter_mut().enumerate() {
                    *d = (img[p * c + ch] as f32 / 255.0 - m) * s;
                }
            }
        }
        Ok(fm)
    }

    /// `B×N` logits.
    pub fn predict(&self, batch: &ImageBatch) -> Result<Matrix> {
        self.predict_masked(batch, None)
    }

    pub fn predict_masked(&self, batch: &ImageBatch, masks: Option<&[Vec<f32>]>) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut out = Matrix::zeros(batch.len, self.n_classes());
        for start in (0..batch.len).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(batch.len);
            let part = batch.slice(start, end);
            let x = self.input_map(&part)?;
            let logits = self.forward(&x, masks, None, None);
            out.data[start * out.cols..end * out.cols].copy_from_slice(&logits.data);
        }
        Ok(out)
    }

    /// Predicted class per image of `ds`.
    pub fn predict_labels(&self, ds: &LabeledDataset) -> Result<Vec<usize>> {
        Ok(self.predict(&ds.full_batch())?.argmax_rows())
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        let pred = self.predict_labels(ds)?;
        Ok(accuracy(&pred, ds.labels()))
    }

    fn conv_forward(&self, layer: usize, input: &FeatureMap, col: &mut Vec<f32>, cached: Option<&[f32]>) -> FeatureMap {
        let p = &self.conv[layer];
        let g = self.geometry(layer);
        let (oh, ow) = (g.out_h(), g.out_w());
        let n = input.batch * oh * ow;
        let mut z = FeatureMap::zeros(p.out_channels, input.batch, oh, ow);
        for (c, &b) in p.bias.iter().enumerate() {
            z.channel_mut(c).fill(b);
        }
        let k = p.patch_len();
        let src: &[f32] = if g.is_pointwise() {
            &input.data
        } else if let Some(c) = cached {
            c
        } else {
            im2col(input, &g, col);
            col
        };
        gemm(p.out_channels, k, n, &p.weight, k, 1, src, n, 1, &mut z.data, n, 1.0);
        z
    }

    /// Normalizes a batch and unfolds it once for every distinct geometry of
    /// the layers reading the raw input, so several networks sharing this
    /// input stage can skip that work.
    pub fn prepare(&self, batch: &ImageBatch) -> Result<PreparedInput> {
        let x = self.input_map(batch)?;
        let mut cols: Vec<(ConvGeometry, Vec<f32>)> = Vec::new();
        for &l in &self.plan.stages[0].layers {
            let g = self.geometry(l);
            if !g.is_pointwise() && !cols.iter().any(|(h, _)| *h == g) {
                let mut col = Vec::new();
                im2col(&x, &g, &mut col);
                cols.push((g, col));
            }
        }
        Ok(PreparedInput {
            norm: self.norm.clone(),
            x,
            cols,
        })
    }

    /// Forward pass over a [`PreparedInput`]; identical to [`Self::forward`]
    /// on the same batch. Falls back to normalizing afresh when the input was
    /// prepared under different statistics.
    pub fn forward_prepared(&self, input: &PreparedInput, batch: &ImageBatch) -> Result<Matrix> {
        if input.norm != self.norm {
            let x = self.input_map(batch)?;
            return Ok(self.forward(&x, None, None, None));
        }
        Ok(self.run(&input.x, Some(&input.cols), None, None, None))
    }

    /// Masked forward over a [`PreparedInput`] made by this network, optionally
    /// recording a tape.
    pub fn forward_with(&self, input: &PreparedInput, masks: Option<&[Vec<f32>]>, tape: Option<&mut Tape>) -> Result<Matrix> {
        if input.norm != self.norm {
            return Err(Error::arg("input was prepared under different normalization"));
        }
        Ok(self.run(&input.x, Some(&input.cols), masks, tape, None))
    }

    /// Forward pass over a normalized input. `masks[l][k]` scales kernel `k`
    /// of layer `l`. With a tape every activation needed by [`Self::backward`]
    /// is recorded. The probe sees each layer's raw convolution output.
    pub fn forward(&self, x: &FeatureMap, masks: Option<&[Vec<f32>]>, tape: Option<&mut Tape>, probe: Option<Probe<'_>>) -> Matrix {
        self.run(x, None, masks, tape, probe)
    }

    fn run(
        &self,
        x: &FeatureMap,
        cached_cols: Option<&[(ConvGeometry, Vec<f32>)]>,
        masks: Option<&[Vec<f32>]>,
        mut tape: Option<&mut Tape>,
        mut probe: Option<Probe<'_>>,
    ) -> Matrix {
        let n_layers = self.conv.len();
        let mut is_source = vec![false; n_layers];
        for s in &self.plan.stages {
            if let Some(a) = s.residual_from {
                is_source[a] = true;
            }
        }
        if let Some(t) = tape.as_deref_mut() {
            *t = Tape {
                z: vec![None; n_layers],
                ..Tape::default()
            };
        }
        let recording = tape.is_some();
        let mut acts: Vec<Option<FeatureMap>> = vec![None; n_layers];
        let mut col = Vec::new();
        let mut current = x.clone();
        for (si, stage) in self.plan.stages.iter().enumerate() {
            let mut parts: Vec<FeatureMap> = Vec::with_capacity(stage.layers.len());
            for &l in &stage.layers {
                let cached = match (si, cached_cols) {
                    (0, Some(cols)) => {
                        let g = self.geometry(l);
                        cols.iter().find(|(h, _)| *h == g).map(|(_, c)| c.as_slice())
                    }
                    _ => None,
                };
                let z = self.conv_forward(l, &current, &mut col, cached);
                if let Some(p) = probe.as_deref_mut() {
                    p(l, &z);
                }
                let mut pre = match masks {
                    Some(m) => {
                        let mut pre = z.clone();
                        for (c, &mv) in m[l].iter().enumerate() {
                            if mv != 1.0 {
                                pre.channel_mut(c).iter_mut().for_each(|v| *v *= mv);
                            }
                        }
                        if let Some(t) = tape.as_deref_mut() {
                            t.z[l] = Some(z);
                        }
                        pre
                    }
                    None => z,
                };
                if let Some(a) = stage.residual_from {
                    let src = acts[a].as_ref().expect("residual source precedes target");
                    for (v, &r) in pre.data.iter_mut().zip(&src.data) {
                        *v += r;
                    }
                }
                pre.data.iter_mut().for_each(|v| *v = v.max(0.0));
                if recording || is_source[l] {
                    acts[l] = Some(pre.clone());
                }
                parts.push(pre);
            }
            let mut out = if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                let (b, h, w) = (parts[0].batch, parts[0].height, parts[0].width);
                let channels = parts.iter().map(|p| p.channels).sum();
                let mut data = Vec::with_capacity(channels * b * h * w);
                for p in &parts {
                    data.extend_from_slice(&p.data);
                }
                FeatureMap {
                    channels,
                    batch: b,
                    height: h,
                    width: w,
                    data,
                }
            };
            let input = std::mem::replace(&mut current, FeatureMap::zeros(0, 0, 0, 0));
            if let Some(t) = tape.as_deref_mut() {
                t.stage_in.push(input);
                t.pre_pool.push((out.height, out.width));
            }
            if stage.pool {
                let (pooled, index) = max_pool2(&out, recording);
                out = pooled;
                if let Some(t) = tape.as_deref_mut() {
                    t.pool_index.push(index);
                }
            } else if let Some(t) = tape.as_deref_mut() {
                t.pool_index.push(Vec::new());
            }
            current = out;
        }
        let mut h = current.to_rows();
        let last = self.fc.len() - 1;
        for (i, f) in self.fc.iter().enumerate() {
            let mut y = Matrix::zeros(h.rows, f.out_features);
            for r in 0..h.rows {
                y.row_mut(r).copy_from_slice(&f.bias);
            }
            gemm(h.rows, f.in_features, f.out_features, &h.data, f.in_features, 1, &f.weight, 1, f.in_features, &mut y.data, f.out_features, 1.0);
            let next = if i < last {
                let mut a = y.clone();
                a.data.iter_mut().for_each(|v| *v = v.max(0.0));
                if let Some(t) = tape.as_deref_mut() {
                    t.fc_pre.push(y);
                }
                a
            } else {
                y
            };
            let input = std::mem::replace(&mut h, next);
            if let Some(t) = tape.as_deref_mut() {
                t.fc_in.push(input);
            }
        }
        if let Some(t) = tape {
            t.act = acts.into_iter().map(|a| a.expect("recorded")).collect();
        }
        h
    }

    /// Reverse pass from `dlogits` (`B×N`). Returns parameter gradients when
    /// `want_params`, and `Σ g·z` per kernel when the forward was masked.
    pub fn backward(
        &self,
        tape: &Tape,
        dlogits: &Matrix,
        masks: Option<&[Vec<f32>]>,
        want_params: bool,
    ) -> (Option<Gradients>, Option<Vec<Vec<f32>>>) {
        let nfc = self.fc.len();
        let mut grads = want_params.then(|| Gradients {
            conv_w: self.conv.iter().map(|c| vec![0.0; c.weight.len()]).collect(),
            conv_b: self.conv.iter().map(|c| vec![0.0; c.bias.len()]).collect(),
            fc_w: self.fc.iter().map(|f| vec![0.0; f.weight.len()]).collect(),
            fc_b: self.fc.iter().map(|f| vec![0.0; f.bias.len()]).collect(),
        });
        let mut mask_grads: Option<Vec<Vec<f32>>> = masks.map(|_| self.conv.iter().map(|c| vec![0.0; c.out_channels]).collect());

        let mut g = dlogits.clone();
        for i in (0..nfc).rev() {
            let f = &self.fc[i];
            if i + 1 < nfc {
                for (gv, &p) in g.data.iter_mut().zip(&tape.fc_pre[i].data) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let input = &tape.fc_in[i];
            let b = g.rows;
            if let Some(gr) = grads.as_mut() {
                gemm(f.out_features, b, f.in_features, &g.data, 1, f.out_features, &input.data, f.in_features, 1, &mut gr.fc_w[i], f.in_features, 0.0);
                for r in 0..b {
                    for (db, &gv) in gr.fc_b[i].iter_mut().zip(g.row(r)) {
                        *db += gv;
                    }
                }
            }
            let mut dx = Matrix::zeros(b, f.in_features);
            gemm(b, f.out_features, f.in_features, &g.data, f.out_features, 1, &f.weight, f.in_features, 1, &mut dx.data, f.in_features, 0.0);
            g = dx;
        }
        let (c, h, w) = self.plan.flatten;
        let mut gmap = FeatureMap::from_rows(&g, c, h, w);

        let mut extra: Vec<Option<FeatureMap>> = vec![None; self.conv.len()];
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for s in (0..self.plan.stages.len()).rev() {
            let stage = &self.plan.stages[s];
            if stage.pool {
                gmap = max_unpool2(&gmap, &tape.pool_index[s], tape.pre_pool[s]);
            }
            let input = &tape.stage_in[s];
            let need_dx = s > 0;
            let mut dx = need_dx.then(|| FeatureMap::zeros(input.channels, input.batch, input.height, input.width));
            for &l in &stage.layers {
                let p = &self.conv[l];
                let cout = p.out_channels;
                let off = self.plan.channel_offset[l];
                let len = gmap.channel_len();
                let mut gl = FeatureMap {
                    channels: cout,
                    batch: gmap.batch,
                    height: gmap.height,
                    width: gmap.width,
                    data: gmap.data[off * len..(off + cout) * len].to_vec(),
                };
                if let Some(e) = extra[l].take() {
                    for (a, b) in gl.data.iter_mut().zip(&e.data) {
                        *a += b;
                    }
                }
                for (gv, &a) in gl.data.iter_mut().zip(&tape.act[l].data) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
                if let Some(a) = stage.residual_from {
                    match extra[a].as_mut() {
                        Some(e) => e.data.iter_mut().zip(&gl.data).for_each(|(x, y)| *x += y),
                        None => extra[a] = Some(gl.clone()),
                    }
                }
                if let (Some(m), Some(mg)) = (masks, mask_grads.as_mut()) {
                    let z = tape.z[l].as_ref().expect("masked forward records z");
                    for k in 0..cout {
                        let gk = gl.channel_mut(k);
                        let zk = z.channel(k);
                        mg[l][k] = gk.iter().zip(zk).map(|(a, b)| (a * b) as f64).sum::<f64>() as f32;
                        let mv = m[l][k];
                        if mv != 1.0 {
                            gk.iter_mut().for_each(|v| *v *= mv);
                        }
                    }
                }
                let geo = self.geometry(l);
                let n = gl.channel_len();
                let kl = p.patch_len();
                if let Some(gr) = grads.as_mut() {
                    for k in 0..cout {
                        gr.conv_b[l][k] = gl.channel(k).iter().sum();
                    }
                    let src: &[f32] = if geo.is_pointwise() {
                        &input.data
                    } else {
                        im2col(input, &geo, &mut col);
                        &col
                    };
                    gemm(cout, n, kl, &gl.data, n, 1, src, 1, n, &mut gr.conv_w[l], kl, 0.0);
                }
                if let Some(dx) = dx.as_mut() {
                    if geo.is_pointwise() {
                        gemm(kl, cout, n, &p.weight, 1, kl, &gl.data, n, 1, &mut dx.data, n, 1.0);
                    } else {
                        dcol.clear();
                        dcol.resize(kl * n, 0.0);
                        gemm(kl, cout, n, &p.weight, 1, kl, &gl.data, n, 1, &mut dcol, n, 0.0);
                        col2im(&dcol, &geo, dx);
                    }
                }
            }
            if let Some(dx) = dx {
                gmap = dx;
            }
        }
        (grads, mask_grads)
    }
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Softmax cross-entropy over logit rows: mean loss and `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.rows;
    let mut grad = Matrix::zeros(b, logits.cols);
    let mut loss = 0.0;
    for r in 0..b {
        let row: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[r]];
        let p = crate::tensor::softmax(&row);
        for (k, (g, &pk)) in grad.row_mut(r).iter_mut().zip(&p).enumerate() {
            let t = if k == labels[r] { 1.0 } else { 0.0 };
            *g = ((pk - t) / b as f64) as f32;
        }
    }
    (loss / b as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_synthetic;

    fn probe_input(net: &Network, batch: usize, seed: u64) -> FeatureMap {
        let ds = gen_synthetic(net.n_classes(), batch, net.spec().input.height, seed).unwrap();
        net.input_map(&ds.batch(&(0..batch).collect::<Vec<_>>())).unwrap()
    }

    fn loss_of(net: &Network, x: &FeatureMap, labels: &[usize], masks: Option<&[Vec<f32>]>) -> f64 {
        softmax_cross_entropy(&net.forward(x, masks, None, None), labels).0
    }

    // ReLU and max-pool kinks make any single step size unreliable, so the
    // analytic value must agree with the difference quotient at one of
    // several step sizes. A few entries sitting right on a kink are tolerated;
    // a wrong reverse pass fails nearly all of them.
    fn agrees(analytic: f64, fd_at: impl Fn(f32) -> f64) -> Result<(), String> {
        let quotients: Vec<f64> = [3e-3f32, 1e-3, 3e-4, 1e-4, 3e-5].iter().map(|&e| fd_at(e)).collect();
        let ok = quotients
            .iter()
            .any(|&fd| (fd - analytic).abs() <= 1e-2 * fd.abs().max(analytic.abs()) + 5e-5);
        if ok {
            Ok(())
        } else {
            Err(format!("analytic {analytic} vs {quotients:?}"))
        }
    }

    fn assert_mostly(results: Vec<Result<(), String>>) {
        let bad: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
        assert!(bad.len() * 10 <= results.len(), "{} of {} disagree: {bad:?}", bad.len(), results.len());
    }

    fn check_param_grads(spec: ArchitectureSpec) {
        let mut net = Network::new(spec, 3).unwrap();
        // non-zero biases so ReLU kinks are exercised away from zero
        for c in &mut net.conv {
            c.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.01 * (i as f32 % 3.0 - 1.0));
        }
        let x = probe_input(&net, 3, 5);
        let labels = [0, 1, 2];
        let mut tape = Tape::default();
        let logits = net.forward(&x, None, Some(&mut tape), None);
        let (_, dl) = softmax_cross_entropy(&logits, &labels);
        let (grads, _) = net.backward(&tape, &dl, None, true);
        let grads = grads.unwrap();
        let flat: Vec<f32> = grads
            .conv_w
            .iter()
            .zip(&grads.conv_b)
            .flat_map(|(w, b)| w.iter().chain(b))
            .chain(grads.fc_w.iter().zip(&grads.fc_b).flat_map(|(w, b)| w.iter().chain(b)))
            .copied()
            .collect();
        let total = net.param_count();
        let mut results = Vec::new();
        for idx in (0..total).step_by(total / 40 + 1) {
            let fd_at = |eps: f32| {
                let mut locate = idx;
                let mut plus = net.clone();
                let mut minus = net.clone();
                for (sp, sm) in plus.param_slices_mut().into_iter().zip(minus.param_slices_mut()) {
                    if locate < sp.len() {
                        sp[locate] += eps;
                        sm[locate] -= eps;
                        break;
                    }
                    locate -= sp.len();
                }
                (loss_of(&plus, &x, &labels, None) - loss_of(&minus, &x, &labels, None)) / (2.0 * eps as f64)
            };
            results.push(agrees(flat[idx] as f64, fd_at).map_err(|e| format!("param {idx}: {e}")));
        }
        assert!(results.len() > 10);
        assert_mostly(results);
    }

    #[test]
    fn parameter_gradients_plain() {
        check_param_grads(ArchitectureSpec::desk_plain(3).with_input_side(8));
    }

    #[test]
    fn parameter_gradients_residual() {
        check_param_grads(ArchitectureSpec::desk_res(3).with_input_side(8));
    }

    #[test]
    fn parameter_gradients_branched() {
        check_param_grads(ArchitectureSpec::desk_ince(3).with_input_side(8));
    }

    #[test]
    fn mask_gradient_matches_finite_difference() {
        let net = Network::new(ArchitectureSpec::desk_res(3).with_input_side(8), 1).unwrap();
        let x = probe_input(&net, 3, 2);
        let labels = [2, 0, 1];
        let masks: Vec<Vec<f32>> = net.conv.iter().map(|c| (0..c.out_channels).map(|k| 0.5 + 0.1 * (k % 4) as f32).collect()).collect();
        let mut tape = Tape::default();
        let logits = net.forward(&x, Some(&masks), Some(&mut tape), None);
        let (_, dl) = softmax_cross_entropy(&logits, &labels);
        let (_, mg) = net.backward(&tape, &dl, Some(&masks), false);
        let mg = mg.unwrap();
        let mut results = Vec::new();
        for (l, k) in (0..6).flat_map(|l| [(l, 0), (l, 3), (l, 5), (l, 7)]) {
            let fd_at = |eps: f32| {
                let mut p = masks.clone();
                p[l][k] += eps;
                let mut m = masks.clone();
                m[l][k] -= eps;
                (loss_of(&net, &x, &labels, Some(&p)) - loss_of(&net, &x, &labels, Some(&m))) / (2.0 * eps as f64)
            };
            results.push(agrees(mg[l][k] as f64, fd_at).map_err(|e| format!("mask ({l},{k}): {e}")));
        }
        assert_mostly(results);
    }

    #[test]
    fn ones_mask_is_identity() {
        let net = Network::new(ArchitectureSpec::desk_ince(4), 9).unwrap();
        let x = probe_input(&net, 4, 1);
        let ones: Vec<Vec<f32>> = net.conv.iter().map(|c| vec![1.0; c.out_channels]).collect();
        assert_eq!(net.forward(&x, None, None, None), net.forward(&x, Some(&ones), None, None));
    }

    #[test]
    fn zero_mask_hides_kernel_weights() {
        let net = Network::new(ArchitectureSpec::desk_plain(4), 2).unwrap();
        let x = probe_input(&net, 2, 1);
        let mut masks: Vec<Vec<f32>> = net.conv.iter().map(|c| vec![1.0; c.out_channels]).collect();
        masks[2][4] = 0.0;
        let before = net.forward(&x, Some(&masks), None, None);
        let mut other = net.clone();
        let k = other.conv[2].patch_len();
        other.conv[2].weight[4 * k..5 * k].iter_mut().for_each(|w| *w = 7.0);
        other.conv[2].bias[4] = -3.0;
        assert_eq!(before, other.forward(&x, Some(&masks), None, None));
    }

    #[test]
    fn predict_shape_and_dims() {
        let net = Network::new(ArchitectureSpec::desk_plain(4), 0).unwrap();
        let ds = gen_synthetic(4, 2, 16, 0).unwrap();
        let out = net.predict(&ds.batch(&[0, 0])).unwrap();
        assert_eq!((out.rows, out.cols), (2, 4));
        assert_eq!(out.row(0), out.row(1));
        let small = gen_synthetic(4, 1, 8, 0).unwrap();
        assert!(matches!(net.predict(&small.full_batch()), Err(Error::Argument(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::new(ArchitectureSpec::desk_plain(4), 5).unwrap();
        let b = Network::new(ArchitectureSpec::desk_plain(4), 5).unwrap();
        let c = Network::new(ArchitectureSpec::desk_plain(4), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
