//! Transformation network `f(x_s, y_s, y_t) = p_f(concat(p_s(x_s), p_y(y_t - y_s)))`.
//!
//! - `p_s`: d -> 1024 -> 512, ReLU and dropout 0.3 after the hidden layer.
//! - `p_y`: m -> 64 -> 128, ReLU and dropout 0.4 after the hidden layer.
//! - `p_f`: dropout 0.3 on the 640-wide concatenation, then linear to d.
//!
//! Projector outputs are linear. Dropout is inverted (kept units scaled by
//! `1 / keep` during training) so evaluation runs without masks.
//! Weights are stored `[in, out]` row-major so a layer is `X * W + b`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::MoodLabel;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Real};
use crate::rng::{self, Rng};

const MAGIC: &[u8; 4] = b"MDL1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub seed_hidden: usize,
    pub seed_out: usize,
    pub guide_hidden: usize,
    pub guide_out: usize,
    pub seed_dropout: f64,
    pub guide_dropout: f64,
    pub concat_dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            seed_hidden: 1024,
            seed_out: 512,
            guide_hidden: 64,
            guide_out: 128,
            seed_dropout: 0.3,
            guide_dropout: 0.4,
            concat_dropout: 0.3,
        }
    }
}

impl Architecture {
    pub fn concat_width(&self) -> usize {
        self.seed_out + self.guide_out
    }

    /// Total number of scalar parameters for embedding dim `d` and `m` moods.
    pub fn param_count(&self, d: usize, m: usize) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        dense(d, self.seed_hidden)
            + dense(self.seed_hidden, self.seed_out)
            + dense(m, self.guide_hidden)
            + dense(self.guide_hidden, self.guide_out)
            + dense(self.concat_width(), d)
    }

    fn validate(&self) -> Result<()> {
        let widths = [self.seed_hidden, self.seed_out, self.guide_hidden, self.guide_out];
        let rates = [self.seed_dropout, self.guide_dropout, self.concat_dropout];
        if widths.contains(&0) || rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidInput(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Mat::zeros(input, output),
            bias: vec![T::zero(); output],
        }
    }

    /// He-uniform weights, zero bias.
    fn he_uniform(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        Dense {
            weight: Mat::from_vec(input, output, data),
            bias: vec![T::zero(); output],
        }
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64().unwrap())).collect(),
        }
    }
}

/// Parameters (or, with the same layout, gradients) of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub dim: usize,
    pub mood_count: usize,
    pub arch: Architecture,
    pub seed_hidden: Dense<T>,
    pub seed_out: Dense<T>,
    pub guide_hidden: Dense<T>,
    pub guide_out: Dense<T>,
    pub output: Dense<T>,
}

/// Training parameters are `f32`; checkpoints store exactly these values.
pub type ModelParams = Params<f32>;

pub const TENSOR_NAMES: [&str; 10] = [
    "seed_hidden.weight",
    "seed_hidden.bias",
    "seed_out.weight",
    "seed_out.bias",
    "guide_hidden.weight",
    "guide_hidden.bias",
    "guide_out.weight",
    "guide_out.bias",
    "output.weight",
    "output.bias",
];

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.mood_count, self.arch)
    }

    fn zeros(d: usize, m: usize, arch: Architecture) -> Self {
        Params {
            dim: d,
            mood_count: m,
            arch,
            seed_hidden: Dense::zeros(d, arch.seed_hidden),
            seed_out: Dense::zeros(arch.seed_hidden, arch.seed_out),
            guide_hidden: Dense::zeros(m, arch.guide_hidden),
            guide_out: Dense::zeros(arch.guide_hidden, arch.guide_out),
            output: Dense::zeros(arch.concat_width(), d),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [&[T]; 10] {
        [
            &self.seed_hidden.weight.data,
            &self.seed_hidden.bias,
            &self.seed_out.weight.data,
            &self.seed_out.bias,
            &self.guide_hidden.weight.data,
            &self.guide_hidden.bias,
            &self.guide_out.weight.data,
            &self.guide_out.bias,
            &self.output.weight.data,
            &self.output.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 10] {
        [
            &mut self.seed_hidden.weight.data,
            &mut self.seed_hidden.bias,
            &mut self.seed_out.weight.data,
            &mut self.seed_out.bias,
            &mut self.guide_hidden.weight.data,
            &mut self.guide_hidden.bias,
            &mut self.guide_out.weight.data,
            &mut self.guide_out.bias,
            &mut self.output.weight.data,
            &mut self.output.bias,
        ]
    }

    fn shapes(&self) -> [Vec<usize>; 10] {
        let w = |d: &Dense<T>| vec![d.weight.rows, d.weight.cols];
        let b = |d: &Dense<T>| vec![d.bias.len()];
        [
            w(&self.seed_hidden),
            b(&self.seed_hidden),
            w(&self.seed_out),
            b(&self.seed_out),
            w(&self.guide_hidden),
            b(&self.guide_hidden),
            w(&self.guide_out),
            b(&self.guide_out),
            w(&self.output),
            b(&self.output),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            dim: self.dim,
            mood_count: self.mood_count,
            arch: self.arch,
            seed_hidden: self.seed_hidden.cast(),
            seed_out: self.seed_out.cast(),
            guide_hidden: self.guide_hidden.cast(),
            guide_out: self.guide_out.cast(),
            output: self.output.cast(),
        }
    }

    /// Order-sensitive checksum of the parameter bits, for comparing runs.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                let bits = v.to_f64().unwrap().to_bits();
                h = (h ^ bits).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// He-uniform initialization with zero biases, deterministic in `seed`.
pub fn init_params<T: Real>(d: usize, m: usize, arch: Architecture, seed: u64) -> Result<Params<T>> {
    if d == 0 || m < 2 {
        return Err(Error::InvalidInput(format!("need d >= 1 and m >= 2, got d={d}, m={m}")));
    }
    arch.validate()?;
    let mut r = rng::rng_from(seed);
    Ok(Params {
        dim: d,
        mood_count: m,
        arch,
        seed_hidden: Dense::he_uniform(d, arch.seed_hidden, &mut r),
        seed_out: Dense::he_uniform(arch.seed_hidden, arch.seed_out, &mut r),
        guide_hidden: Dense::he_uniform(m, arch.guide_hidden, &mut r),
        guide_out: Dense::he_uniform(arch.guide_hidden, arch.guide_out, &mut r),
        output: Dense::he_uniform(arch.concat_width(), d, &mut r),
    })
}

/// `onehot(y_t) - onehot(y_s)`: entries in {-1, 0, 1}, summing to zero.
pub fn guidance(y_s: MoodLabel, y_t: MoodLabel, m: usize) -> Vec<f64> {
    let mut g = vec![0.0; m];
    g[y_t.index()] += 1.0;
    g[y_s.index()] -= 1.0;
    g
}

/// Scaled keep masks (`0` or `1 / keep`) for the three dropout sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub seed_hidden: Mat<T>,
    pub guide_hidden: Mat<T>,
    pub concat: Mat<T>,
}

impl<T: Real> DropoutMasks<T> {
    pub fn sample(rows: usize, arch: &Architecture, rng: &mut Rng) -> Self {
        let mut mask = |cols: usize, rate: f64| {
            let keep = 1.0 - rate;
            let scale = T::from_f64(1.0 / keep);
            Mat::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                    .collect(),
            )
        };
        DropoutMasks {
            seed_hidden: mask(arch.seed_hidden, arch.seed_dropout),
            guide_hidden: mask(arch.guide_hidden, arch.guide_dropout),
            concat: mask(arch.concat_width(), arch.concat_dropout),
        }
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    input: Mat<T>,
    guide: Mat<T>,
    seed_pre: Mat<T>,
    seed_act: Mat<T>,
    guide_pre: Mat<T>,
    guide_act: Mat<T>,
    concat: Mat<T>,
    masks: Option<DropoutMasks<T>>,
    shapes: [Vec<usize>; 10],
}

impl<T: Real> ForwardTrace<T> {
    pub fn masks(&self) -> Option<&DropoutMasks<T>> {
        self.masks.as_ref()
    }
}

fn relu_inplace<T: Real>(m: &mut Mat<T>) {
    for v in &mut m.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn apply_mask<T: Real>(m: &mut Mat<T>, mask: Option<&Mat<T>>) {
    if let Some(mask) = mask {
        for (v, k) in m.data.iter_mut().zip(&mask.data) {
            *v = *v * *k;
        }
    }
}

fn check_inputs<T: Real>(params: &Params<T>, x_s: &Mat<T>, y_s: &[MoodLabel], y_t: &[MoodLabel]) -> Result<()> {
    if x_s.cols != params.dim || y_s.len() != x_s.rows || y_t.len() != x_s.rows {
        return Err(Error::Shape(format!(
            "batch of {} rows x {} cols with {} / {} labels; model dim {}",
            x_s.rows,
            x_s.cols,
            y_s.len(),
            y_t.len(),
            params.dim
        )));
    }
    for r in 0..x_s.rows {
        if x_s.row(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "model input".into(),
                row: r,
            });
        }
        if y_s[r].index() >= params.mood_count || y_t[r].index() >= params.mood_count {
            return Err(Error::InvalidInput(format!("mood label out of range at row {r}")));
        }
    }
    Ok(())
}

/// Computes `x̂_t` for a batch. Train mode draws fresh dropout masks.
pub fn forward<T: Real>(
    params: &Params<T>,
    x_s: &Mat<T>,
    y_s: &[MoodLabel],
    y_t: &[MoodLabel],
    mode: Mode<'_>,
) -> Result<(Mat<T>, ForwardTrace<T>)> {
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train(rng) => Some(DropoutMasks::sample(x_s.rows, &params.arch, rng)),
    };
    forward_with_masks(params, x_s, y_s, y_t, masks)
}

/// Forward pass with caller-supplied dropout masks (`None` = eval).
pub fn forward_with_masks<T: Real>(
    params: &Params<T>,
    x_s: &Mat<T>,
    y_s: &[MoodLabel],
    y_t: &[MoodLabel],
    masks: Option<DropoutMasks<T>>,
) -> Result<(Mat<T>, ForwardTrace<T>)> {
    check_inputs(params, x_s, y_s, y_t)?;
    let b = x_s.rows;
    let m = params.mood_count;
    let mut guide = Mat::zeros(b, m);
    for r in 0..b {
        for (g, v) in guide.row_mut(r).iter_mut().zip(guidance(y_s[r], y_t[r], m)) {
            *g = T::from_f64(v);
        }
    }

    let seed_pre = x_s.matmul_bias(&params.seed_hidden.weight, &params.seed_hidden.bias);
    let mut seed_act = seed_pre.clone();
    relu_inplace(&mut seed_act);
    apply_mask(&mut seed_act, masks.as_ref().map(|k| &k.seed_hidden));
    let seed_proj = seed_act.matmul_bias(&params.seed_out.weight, &params.seed_out.bias);

    let guide_pre = guide.matmul_bias(&params.guide_hidden.weight, &params.guide_hidden.bias);
    let mut guide_act = guide_pre.clone();
    relu_inplace(&mut guide_act);
    apply_mask(&mut guide_act, masks.as_ref().map(|k| &k.guide_hidden));
    let guide_proj = guide_act.matmul_bias(&params.guide_out.weight, &params.guide_out.bias);

    let width = params.arch.concat_width();
    let mut concat = Mat::zeros(b, width);
    for r in 0..b {
        let row = concat.row_mut(r);
        row[..params.arch.seed_out].copy_from_slice(seed_proj.row(r));
        row[params.arch.seed_out..].copy_from_slice(guide_proj.row(r));
    }
    apply_mask(&mut concat, masks.as_ref().map(|k| &k.concat));
    let out = concat.matmul_bias(&params.output.weight, &params.output.bias);

    let trace = ForwardTrace {
        input: x_s.clone(),
        guide,
        seed_pre,
        seed_act,
        guide_pre,
        guide_act,
        concat,
        masks,
        shapes: params.shapes(),
    };
    Ok((out, trace))
}

/// Back-propagates `d_out = dL/dx̂_t` through the cached forward pass and
/// returns gradients for every parameter, summed over the batch.
pub fn backward<T: Real>(params: &Params<T>, trace: &ForwardTrace<T>, d_out: &Mat<T>) -> Result<Params<T>> {
    if trace.shapes != params.shapes() {
        return Err(Error::Shape("forward trace was produced by a different parameter set".into()));
    }
    if d_out.rows != trace.input.rows || d_out.cols != params.dim {
        return Err(Error::Shape(format!(
            "upstream gradient {}x{}, expected {}x{}",
            d_out.rows, d_out.cols, trace.input.rows, params.dim
        )));
    }
    let a = &params.arch;
    let mut grads = params.zeros_like();

    grads.output.weight = trace.concat.t_matmul(d_out);
    grads.output.bias = d_out.col_sums();
    let mut d_concat = d_out.matmul_t(&params.output.weight);
    apply_mask(&mut d_concat, trace.masks.as_ref().map(|k| &k.concat));

    let b = d_out.rows;
    let mut d_seed_proj = Mat::zeros(b, a.seed_out);
    let mut d_guide_proj = Mat::zeros(b, a.guide_out);
    for r in 0..b {
        let row = d_concat.row(r);
        d_seed_proj.row_mut(r).copy_from_slice(&row[..a.seed_out]);
        d_guide_proj.row_mut(r).copy_from_slice(&row[a.seed_out..]);
    }

    grads.seed_out.weight = trace.seed_act.t_matmul(&d_seed_proj);
    grads.seed_out.bias = d_seed_proj.col_sums();
    let mut d_seed = d_seed_proj.matmul_t(&params.seed_out.weight);
    apply_mask(&mut d_seed, trace.masks.as_ref().map(|k| &k.seed_hidden));
    relu_grad(&mut d_seed, &trace.seed_pre);
    grads.seed_hidden.weight = trace.input.t_matmul(&d_seed);
    grads.seed_hidden.bias = d_seed.col_sums();

    grads.guide_out.weight = trace.guide_act.t_matmul(&d_guide_proj);
    grads.guide_out.bias = d_guide_proj.col_sums();
    let mut d_guide = d_guide_proj.matmul_t(&params.guide_out.weight);
    apply_mask(&mut d_guide, trace.masks.as_ref().map(|k| &k.guide_hidden));
    relu_grad(&mut d_guide, &trace.guide_pre);
    grads.guide_hidden.weight = trace.guide.t_matmul(&d_guide);
    grads.guide_hidden.bias = d_guide.col_sums();

    Ok(grads)
}

fn relu_grad<T: Real>(d: &mut Mat<T>, pre: &Mat<T>) {
    for (g, &z) in d.data.iter_mut().zip(&pre.data) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Writes the binary checkpoint: `"MDL1" | u32 version | u32 d | u32 m`,
/// then each tensor as `u32 rank | u32 dims.. | f32 payload`.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(params.mood_count as u32).to_le_bytes()).map_err(io)?;
    for (shape, data) in params.shapes().iter().zip(params.tensors()) {
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io)?;
        for &s in shape {
            w.write_all(&(s as u32).to_le_bytes()).map_err(io)?;
        }
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint. Layer widths come from the stored shapes; dropout
/// rates take `dropout` (they only matter for further training).
pub fn load_checkpoint(path: &Path, dropout: Option<Architecture>) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(&name, format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::format(&name, "bad magic, expected \"MDL1\""));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let version = u32_at(take(4)?);
    if version != VERSION as usize {
        return Err(Error::format(&name, format!("unsupported version {version}")));
    }
    let d = u32_at(take(4)?);
    let m = u32_at(take(4)?);
    let mut tensors: Vec<(Vec<usize>, Vec<f32>)> = Vec::with_capacity(10);
    for t in 0..10 {
        let rank = u32_at(take(4)?);
        let expected_rank = if t % 2 == 0 { 2 } else { 1 };
        if rank != expected_rank {
            return Err(Error::format(&name, format!("{}: rank {rank}", TENSOR_NAMES[t])));
        }
        let dims: Vec<usize> = (0..rank).map(|_| take(4).map(u32_at)).collect::<Result<_>>()?;
        let len: usize = dims.iter().product();
        let payload = take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((dims, payload));
    }
    if pos != bytes.len() {
        return Err(Error::format(&name, "trailing bytes"));
    }
    let base = dropout.unwrap_or_default();
    let arch = Architecture {
        seed_hidden: tensors[0].0[1],
        seed_out: tensors[2].0[1],
        guide_hidden: tensors[4].0[1],
        guide_out: tensors[6].0[1],
        ..base
    };
    let mut params: ModelParams = Params::zeros(d, m, arch);
    if params.shapes().iter().zip(&tensors).any(|(s, (dims, _))| s != dims) {
        return Err(Error::format(&name, "tensor shapes inconsistent with header"));
    }
    for (dst, (_, src)) in params.tensors_mut().into_iter().zip(tensors) {
        dst.copy_from_slice(&src);
    }
    Ok(params)
}
