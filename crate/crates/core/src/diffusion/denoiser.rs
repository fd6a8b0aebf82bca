//! Noise predictors ε_θ(x_t, noise level, condition).

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::io::{BlobSidecar, TensorBundle};
use crate::{Error, Result};

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;
    /// Predicts the noise in `x` given `noise_level = √(1−ᾱ_t)` and a
    /// condition vector (all zeros for unconditional).
    fn predict(&self, x: &Grid, noise_level: f64, cond: &[f32]) -> Result<Grid>;
}

/// Returns the same value everywhere, ignoring its inputs.
#[derive(Clone, Copy, Debug)]
pub struct ConstantDenoiser {
    pub value: f32,
}

impl Denoiser for ConstantDenoiser {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict(&self, x: &Grid, _noise_level: f64, _cond: &[f32]) -> Result<Grid> {
        Ok(Grid::filled(x.channels, x.height, x.width, self.value))
    }
}

type PredictFn = dyn Fn(&Grid, f64, &[f32]) -> Grid + Send + Sync;

/// Wraps a closure, for hand-built predictors in tests and examples.
pub struct FnDenoiser {
    name: String,
    f: Box<PredictFn>,
}

impl FnDenoiser {
    pub fn new(name: impl Into<String>, f: impl Fn(&Grid, f64, &[f32]) -> Grid + Send + Sync + 'static) -> Self {
        FnDenoiser { name: name.into(), f: Box::new(f) }
    }
}

impl Denoiser for FnDenoiser {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, x: &Grid, noise_level: f64, cond: &[f32]) -> Result<Grid> {
        let out = (self.f)(x, noise_level, cond);
        x.same_shape(&out)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvArch {
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
}

impl ConvArch {
    /// Three hidden 3×3 layers of width 32: receptive field 9 latent pixels.
    pub fn shapes_default() -> Self {
        ConvArch { channels: 3, hidden: vec![32, 32, 32], kernel: 3, cond_dim: super::COND_DIM, time_dim: 8 }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.channels];
        w.extend(&self.hidden);
        w.push(self.channels);
        w
    }

    pub fn receptive_field(&self) -> usize {
        (self.hidden.len() + 1) * (self.kernel - 1) + 1
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernel % 2 == 0 || self.hidden.contains(&0) || self.time_dim % 2 == 1 {
            return Err(Error::InvalidArgument(format!("unsupported denoiser architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
    wc: usize,
    wt: usize,
}

/// Convolutional noise predictor: a stack of same-padded convolutions with
/// SiLU between them. Every layer adds a per-channel bias computed linearly
/// from the condition vector and from sinusoidal features of the noise
/// level. All parameters live in one flat vector.
#[derive(Clone, Debug)]
pub struct ConvDenoiser {
    pub arch: ConvArch,
    pub params: Vec<f32>,
    layers: Vec<Layer>,
}

fn silu(z: f32) -> f32 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f32) -> f32 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// `out[o] += Σ_i W[o,i] ⋆ input[i]` with zero padding.
fn conv_add(input: &[f32], cin: usize, w: &[f32], cout: usize, k: usize, h: usize, wd: usize, out: &mut [f32]) {
    let p = (k / 2) as isize;
    let plane = h * wd;
    for o in 0..cout {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let wv = w[((o * cin + i) * k + ky) * k + kx];
                    let (x0, x1) = ((-dx).max(0) as usize, (wd as isize - dx.max(0)) as usize);
                    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut out_plane[y * wd + x0..y * wd + x1];
                        let src_start = (sy * wd) as isize + x0 as isize + dx;
                        let src = &in_plane[src_start as usize..src_start as usize + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv_add`]: accumulates `dw` and (optionally) `din`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f32],
    cin: usize,
    w: &[f32],
    cout: usize,
    k: usize,
    h: usize,
    wd: usize,
    dout: &[f32],
    dw: &mut [f32],
    mut din: Option<&mut [f32]>,
) {
    let p = (k / 2) as isize;
    let plane = h * wd;
    for o in 0..cout {
        let g_plane = &dout[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let wi = ((o * cin + i) * k + ky) * k + kx;
                    let wv = w[wi];
                    let (x0, x1) = ((-dx).max(0) as usize, (wd as isize - dx.max(0)) as usize);
                    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy.max(0)) as usize);
                    let mut acc = 0.0f32;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let g = &g_plane[y * wd + x0..y * wd + x1];
                        let src_start = ((sy * wd) as isize + x0 as isize + dx) as usize;
                        let src = &in_plane[src_start..src_start + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                        if let Some(din) = din.as_deref_mut() {
                            let dst = &mut din[i * plane + src_start..i * plane + src_start + (x1 - x0)];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    dw[wi] += acc;
                }
            }
        }
    }
}

/// Sinusoidal noise-level features.
pub fn time_features(noise_level: f64, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let a = std::f64::consts::PI * (j + 1) as f64 * noise_level;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    out
}

struct Trace {
    /// Input to each layer (layer 0 gets x).
    inputs: Vec<Vec<f32>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f32>>,
}

impl ConvDenoiser {
    fn build_layers(arch: &ConvArch) -> (Vec<Layer>, usize) {
        let widths = arch.widths();
        let mut off = 0;
        let mut layers = Vec::new();
        for l in 0..widths.len() - 1 {
            let (cin, cout) = (widths[l], widths[l + 1]);
            let w = off;
            off += cout * cin * arch.kernel * arch.kernel;
            let b = off;
            off += cout;
            let wc = off;
            off += cout * arch.cond_dim;
            let wt = off;
            off += cout * arch.time_dim;
            layers.push(Layer { cin, cout, w, b, wc, wt });
        }
        (layers, off)
    }

    pub fn zeros(arch: ConvArch) -> Result<Self> {
        arch.validate()?;
        let (layers, n) = Self::build_layers(&arch);
        Ok(ConvDenoiser { arch, params: vec![0.0; n], layers })
    }

    /// He-scaled Gaussian convolution weights; the output layer starts at a
    /// tenth of that scale so initial predictions are near zero.
    pub fn init(arch: ConvArch, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let k2 = (m.arch.kernel * m.arch.kernel) as f64;
        let last = m.layers.len() - 1;
        for (li, l) in m.layers.clone().iter().enumerate() {
            let mut sd = (2.0 / (l.cin as f64 * k2)).sqrt();
            if li == last {
                sd *= 0.1;
            }
            let conv = Normal::new(0.0, sd).unwrap();
            for v in &mut m.params[l.w..l.b] {
                *v = conv.sample(rng) as f32;
            }
            let emb = Normal::new(0.0, 0.5 / ((m.arch.cond_dim + m.arch.time_dim).max(1) as f64).sqrt()).unwrap();
            for v in &mut m.params[l.wc..l.wt + l.cout * m.arch.time_dim] {
                *v = emb.sample(rng) as f32;
            }
        }
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Grid, cond: &[f32]) -> Result<()> {
        if x.channels != self.arch.channels {
            return Err(Error::dims(format!("{} channels", self.arch.channels), x.channels));
        }
        if cond.len() != self.arch.cond_dim {
            return Err(Error::dims(format!("condition of length {}", self.arch.cond_dim), cond.len()));
        }
        Ok(())
    }

    fn layer_bias(&self, l: &Layer, cond: &[f32], tf: &[f32]) -> Vec<f32> {
        let (cd, td) = (self.arch.cond_dim, self.arch.time_dim);
        (0..l.cout)
            .map(|o| {
                let mut v = self.params[l.b + o];
                for (k, c) in cond.iter().enumerate() {
                    v += self.params[l.wc + o * cd + k] * c;
                }
                for (k, t) in tf.iter().enumerate() {
                    v += self.params[l.wt + o * td + k] * t;
                }
                v
            })
            .collect()
    }

    fn forward(&self, x: &Grid, noise_level: f64, cond: &[f32], keep: bool) -> (Vec<f32>, Option<Trace>) {
        let (h, w) = (x.height, x.width);
        let plane = h * w;
        let tf = time_features(noise_level, self.arch.time_dim);
        let k = self.arch.kernel;
        let mut act = x.values.clone();
        let mut trace = keep.then(|| Trace { inputs: vec![], pre: vec![] });
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let bias = self.layer_bias(l, cond, &tf);
            let mut z = vec![0.0f32; l.cout * plane];
            for (o, b) in bias.iter().enumerate() {
                z[o * plane..(o + 1) * plane].fill(*b);
            }
            conv_add(&act, l.cin, &self.params[l.w..l.b], l.cout, k, h, w, &mut z);
            let next = if li == last { z.clone() } else { z.iter().map(|&v| silu(v)).collect() };
            if let Some(t) = trace.as_mut() {
                t.inputs.push(std::mem::take(&mut act));
                t.pre.push(z);
            }
            act = next;
        }
        (act, trace)
    }

    /// Squared-error loss `Σ (ε_θ − ε)²` for one sample and its gradient in
    /// the flat parameter layout.
    pub fn loss_and_grad(&self, xt: &Grid, noise_level: f64, cond: &[f32], eps: &Grid) -> Result<(f64, Vec<f32>)> {
        self.check_input(xt, cond)?;
        xt.same_shape(eps)?;
        let (h, w) = (xt.height, xt.width);
        let plane = h * w;
        let k = self.arch.kernel;
        let (cd, td) = (self.arch.cond_dim, self.arch.time_dim);
        let tf = time_features(noise_level, td);
        let (out, trace) = self.forward(xt, noise_level, cond, true);
        let trace = trace.expect("trace requested");
        let mut loss = 0.0f64;
        let mut dz: Vec<f32> = out
            .iter()
            .zip(&eps.values)
            .map(|(p, e)| {
                let d = p - e;
                loss += (d as f64) * (d as f64);
                2.0 * d
            })
            .collect();
        let mut grad = vec![0.0f32; self.params.len()];
        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            for o in 0..l.cout {
                let gb: f32 = dz[o * plane..(o + 1) * plane].iter().sum();
                grad[l.b + o] += gb;
                for (kk, c) in cond.iter().enumerate() {
                    grad[l.wc + o * cd + kk] += gb * c;
                }
                for (kk, t) in tf.iter().enumerate() {
                    grad[l.wt + o * td + kk] += gb * t;
                }
            }
            let input = &trace.inputs[li];
            let (dw, _) = grad[l.w..].split_at_mut(l.b - l.w);
            if li == 0 {
                conv_backward(input, l.cin, &self.params[l.w..l.b], l.cout, k, h, w, &dz, dw, None);
                break;
            }
            let mut din = vec![0.0f32; l.cin * plane];
            conv_backward(input, l.cin, &self.params[l.w..l.b], l.cout, k, h, w, &dz, dw, Some(&mut din));
            // din is the gradient w.r.t. the previous layer's activation
            let pre = &trace.pre[li - 1];
            for (d, &z) in din.iter_mut().zip(pre) {
                *d *= silu_grad(z);
            }
            dz = din;
        }
        Ok((loss, grad))
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let mut b = TensorBundle::new("conv-denoiser", serde_json::to_value(&self.arch).expect("arch serializes"));
        let k = self.arch.kernel;
        for (i, l) in self.layers.iter().enumerate() {
            b.push(&format!("layer{i}.weight"), vec![l.cout, l.cin, k, k], self.params[l.w..l.b].to_vec());
            b.push(&format!("layer{i}.bias"), vec![l.cout], self.params[l.b..l.wc].to_vec());
            b.push(&format!("layer{i}.cond"), vec![l.cout, self.arch.cond_dim], self.params[l.wc..l.wt].to_vec());
            let end = l.wt + l.cout * self.arch.time_dim;
            b.push(&format!("layer{i}.time"), vec![l.cout, self.arch.time_dim], self.params[l.wt..end].to_vec());
        }
        b
    }

    pub fn from_bundle(bundle: &TensorBundle) -> Result<Self> {
        if bundle.kind != "conv-denoiser" {
            return Err(Error::format("denoiser params", format!("unexpected kind {:?}", bundle.kind)));
        }
        let arch: ConvArch = serde_json::from_value(bundle.meta.clone())?;
        let mut m = Self::zeros(arch)?;
        let mut params = Vec::with_capacity(m.params.len());
        for i in 0..m.layers.len() {
            for part in ["weight", "bias", "cond", "time"] {
                params.extend_from_slice(bundle.get(&format!("layer{i}.{part}"))?);
            }
        }
        if params.len() != m.params.len() {
            return Err(Error::format("denoiser params", "tensor sizes do not match the architecture"));
        }
        m.params = params;
        Ok(m)
    }

    /// Writes the flat blob at `path` and its JSON sidecar at `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&TensorBundle::load(path)?)
    }

    /// The denoiser trained on the synthetic shapes set, embedded at build
    /// time.
    pub fn shipped() -> Result<Self> {
        let blob = include_bytes!("../../data/shapes_denoiser.bin");
        let sidecar: BlobSidecar = serde_json::from_slice(include_bytes!("../../data/shapes_denoiser.bin.json"))?;
        Self::from_bundle(&TensorBundle::decode(blob, &sidecar)?)
    }
}

impl Denoiser for ConvDenoiser {
    fn name(&self) -> &str {
        "conv"
    }

    fn predict(&self, x: &Grid, noise_level: f64, cond: &[f32]) -> Result<Grid> {
        self.check_input(x, cond)?;
        let (out, _) = self.forward(x, noise_level, cond, false);
        Ok(Grid { values: out, ..x.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn conv_matches_direct_sum() {
        let arch = ConvArch { channels: 2, hidden: vec![], kernel: 3, cond_dim: 0, time_dim: 0 };
        let m = ConvDenoiser::init(arch, &mut seed::rng(4)).unwrap();
        let x = crate::diffusion::gaussian_like((2, 4, 5), 2);
        let y = m.predict(&x, 0.3, &[]).unwrap();
        let l = m.layers[0];
        for o in 0..2 {
            for yy in 0..4isize {
                for xx in 0..5isize {
                    let mut s = m.params[l.b + o];
                    for i in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    s += m.params[l.w + ((o * 2 + i) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    assert!((y.get(o, yy as usize, xx as usize) - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        let m = ConvDenoiser::init(ConvArch::shapes_default(), &mut seed::rng(1)).unwrap();
        let back = ConvDenoiser::from_bundle(&m.to_bundle()).unwrap();
        assert_eq!(
            back.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.arch, m.arch);
        assert!(m.arch.receptive_field() >= 7 && m.arch.hidden.len() >= 2);
    }
}
