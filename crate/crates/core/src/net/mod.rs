//! A small two-stream fully convolutional predictor.
//!
//! A shared trunk of dilated 3x3 convolutions feeds two heads: a boundary head
//! ending in a sigmoid and an orientation head ending in an identity, so the
//! orientation output is an unbounded regression of `theta*`. Every
//! convolution has stride 1 and zero padding, so both outputs keep the input
//! resolution. Input intensities in `[0, 1]` are mapped to `[-1, 1]` before
//! the first layer.

mod conv;
mod model_file;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use conv::Real;
pub use model_file::{MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::loss::{balance_beta, boundary_pixel_loss, orient_pixel_loss, reduce, sigmoid, LossConfig};
use crate::raster::Raster;
use crate::repr::OrientedBoundaryMap;
use conv::{conv_backward, conv_forward, ConvShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Trunk,
    Boundary,
    Orientation,
}

/// One convolution. Weights are laid out `out x in x k x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub activation: Activation,
    pub head: Head,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    fn shape(&self, h: usize, w: usize) -> ConvShape {
        ConvShape {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            dilation: self.dilation,
            h,
            w,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `(out_channels, kernel, dilation, activation)` for one layer.
pub type LayerSpec = (usize, usize, usize, Activation);

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub in_channels: usize,
    pub trunk: Vec<LayerSpec>,
    pub boundary_head: Vec<LayerSpec>,
    pub orientation_head: Vec<LayerSpec>,
}

impl Architecture {
    /// Trunk 3x3x16 (d1), 3x3x16 (d2), 3x3x32 (d4), all ReLU; boundary head 1x1 + sigmoid;
    /// orientation head 3x3x16 + ReLU then 1x1 identity.
    pub fn standard(in_channels: usize) -> Self {
        use Activation::*;
        Self {
            in_channels,
            trunk: vec![(16, 3, 1, Relu), (16, 3, 2, Relu), (32, 3, 4, Relu)],
            boundary_head: vec![(1, 1, 1, Sigmoid)],
            orientation_head: vec![(16, 3, 1, Relu), (1, 1, 1, Identity)],
        }
    }

    /// A three-convolution network for gradient checks.
    pub fn tiny(in_channels: usize) -> Self {
        use Activation::*;
        Self {
            in_channels,
            trunk: vec![(3, 3, 1, Relu)],
            boundary_head: vec![(1, 1, 1, Sigmoid)],
            orientation_head: vec![(1, 3, 2, Identity)],
        }
    }

    /// Side of the square input window seen by one output pixel of `head`.
    pub fn receptive_field(&self, head: Head) -> usize {
        let span = |specs: &[LayerSpec]| specs.iter().map(|&(_, k, d, _)| (k - 1) * d).sum::<usize>();
        let extra = match head {
            Head::Trunk => 0,
            Head::Boundary => span(&self.boundary_head),
            Head::Orientation => span(&self.orientation_head),
        };
        1 + span(&self.trunk) + extra
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<ConvLayer>,
}

impl ModelParams {
    /// He-style initialisation (normal, std = sqrt(2 / fan_in)) from a seeded generator; biases zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut build = |specs: &[LayerSpec], head: Head, mut in_ch: usize, layers: &mut Vec<ConvLayer>| {
            for &(out_ch, kernel, dilation, activation) in specs {
                let fan_in = in_ch * kernel * kernel;
                let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                let weights = (0..out_ch * fan_in).map(|_| normal.sample(&mut rng) as f32).collect();
                layers.push(ConvLayer {
                    in_ch,
                    out_ch,
                    kernel,
                    dilation,
                    activation,
                    head,
                    weights,
                    bias: vec![0.0; out_ch],
                });
                in_ch = out_ch;
            }
            in_ch
        };
        let trunk_out = build(&arch.trunk, Head::Trunk, arch.in_channels, &mut layers);
        build(&arch.boundary_head, Head::Boundary, trunk_out, &mut layers);
        build(&arch.orientation_head, Head::Orientation, trunk_out, &mut layers);
        let params = Self { layers };
        params.check()?;
        Ok(params)
    }

    /// Same layer structure with every weight and bias set to zero.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        for l in &mut p.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        p
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_ch)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    fn head_layers(&self, head: Head) -> impl Iterator<Item = (usize, &ConvLayer)> {
        self.layers.iter().enumerate().filter(move |(_, l)| l.head == head)
    }

    pub fn receptive_field(&self, head: Head) -> usize {
        let span = |h: Head| self.head_layers(h).map(|(_, l)| (l.kernel - 1) * l.dilation).sum::<usize>();
        1 + span(Head::Trunk) + if head == Head::Trunk { 0 } else { span(head) }
    }

    /// Structural invariants: trunk first, consistent channel counts, head endings.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::format("model", msg));
        if self.layers.is_empty() {
            return bad("layers: empty".into());
        }
        let trunk: Vec<_> = self.head_layers(Head::Trunk).collect();
        if trunk.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return bad("layers: trunk layers must come first".into());
        }
        let mut ch = self.layers[0].in_ch;
        for (i, l) in &trunk {
            if l.in_ch != ch {
                return bad(format!("layer {i}: in_ch {} != {ch}", l.in_ch));
            }
            ch = l.out_ch;
        }
        let trunk_out = ch;
        for (head, last_act) in [(Head::Boundary, Activation::Sigmoid), (Head::Orientation, Activation::Identity)] {
            let layers: Vec<_> = self.head_layers(head).collect();
            let Some((last_i, last)) = layers.last() else {
                return bad(format!("layers: missing {head:?} head"));
            };
            let mut ch = trunk_out;
            for (i, l) in &layers {
                if l.in_ch != ch {
                    return bad(format!("layer {i}: in_ch {} != {ch}", l.in_ch));
                }
                ch = l.out_ch;
            }
            if last.out_ch != 1 || last.activation != last_act {
                return bad(format!("layer {last_i}: {head:?} head must end in one {last_act:?} channel"));
            }
            if layers[..layers.len() - 1].iter().any(|(_, l)| l.activation != Activation::Relu) {
                return bad(format!("layers: inner {head:?} layers must use Relu"));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.dilation == 0 {
                return bad(format!("layer {i}: kernel must be odd and dilation >= 1"));
            }
            if l.weights.len() != l.out_ch * l.in_ch * l.kernel * l.kernel || l.bias.len() != l.out_ch {
                return bad(format!("layer {i}: weight count does not match dims"));
            }
            if l.head == Head::Trunk && l.activation != Activation::Relu {
                return bad(format!("layer {i}: trunk layers must use Relu"));
            }
        }
        Ok(())
    }

    /// Flattened parameters in layer order (weights then bias).
    pub fn flatten(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f32]) {
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
    }
}

/// Parameter gradients, same layout as [`ModelParams::flatten`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }
}

/// Activations kept for the backward pass.
struct Trace<T> {
    /// Input to each layer, planar.
    inputs: Vec<Vec<T>>,
    /// Post-activation output of each layer (pre-sigmoid for the boundary head's last layer).
    outputs: Vec<Vec<T>>,
    h: usize,
    w: usize,
}

fn planar<T: Real>(image: &Raster) -> Vec<T> {
    let c = image.channels();
    let mut out = vec![T::ZERO; image.data().len()];
    let hw = image.len();
    for (i, px) in image.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * hw + i] = T::from_f64(2.0 * v as f64 - 1.0);
        }
    }
    out
}

fn run<T: Real>(params: &ModelParams, image: &Raster) -> Result<Trace<T>> {
    if image.channels() != params.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, model expects {}",
            image.channels(),
            params.in_channels()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let x0 = planar::<T>(image);
    let mut inputs: Vec<Vec<T>> = Vec::with_capacity(params.layers.len());
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(params.layers.len());
    let mut trunk_out: Option<usize> = None;
    for (i, l) in params.layers.iter().enumerate() {
        let input: Vec<T> = match l.head {
            Head::Trunk => {
                if i == 0 {
                    x0.clone()
                } else {
                    outputs[i - 1].clone()
                }
            }
            _ => {
                let first_of_head = i == 0 || params.layers[i - 1].head != l.head;
                if first_of_head {
                    match trunk_out {
                        Some(t) => outputs[t].clone(),
                        None => x0.clone(),
                    }
                } else {
                    outputs[i - 1].clone()
                }
            }
        };
        let weights: Vec<T> = l.weights.iter().map(|&v| T::from_f64(v as f64)).collect();
        let bias: Vec<T> = l.bias.iter().map(|&v| T::from_f64(v as f64)).collect();
        let mut out = conv_forward(&l.shape(h, w), &input, &weights, &bias);
        if l.activation == Activation::Relu {
            out.iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v = T::ZERO
                }
            });
        }
        if l.head == Head::Trunk {
            trunk_out = Some(i);
        }
        inputs.push(input);
        outputs.push(out);
    }
    Ok(Trace { inputs, outputs, h, w })
}

fn last_of(params: &ModelParams, head: Head) -> usize {
    params.head_layers(head).map(|(i, _)| i).last().expect("checked model has both heads")
}

/// Boundary probability and orientation maps at input resolution.
pub fn forward(params: &ModelParams, image: &Raster) -> Result<(Raster, Raster)> {
    let (act, orient) = forward_raw::<f32>(params, image)?;
    let prob = act.iter().map(|&a| sigmoid(a.to_f64()) as f32).collect();
    let (w, h) = (image.width(), image.height());
    Ok((
        Raster::from_vec(w, h, 1, prob)?,
        Raster::from_vec(w, h, 1, orient)?,
    ))
}

/// Boundary pre-sigmoid activation and orientation, both planar `h x w`, in scalar type `T`.
pub fn forward_raw<T: Real>(params: &ModelParams, image: &Raster) -> Result<(Vec<T>, Vec<T>)> {
    let mut trace = run::<T>(params, image)?;
    let b = last_of(params, Head::Boundary);
    let o = last_of(params, Head::Orientation);
    let orient = std::mem::take(&mut trace.outputs[o]);
    let act = std::mem::take(&mut trace.outputs[b]);
    Ok((act, orient))
}

/// Per-image objective and its gradient with respect to every parameter.
///
/// Orientation gradients flow only from ground-truth edge pixels.
pub fn backward(params: &ModelParams, image: &Raster, gt: &OrientedBoundaryMap, cfg: &LossConfig) -> Result<(f64, Gradients)> {
    backward_in::<f32>(params, image, gt, cfg)
}

/// Summed objective and gradients over a batch.
pub fn backward_batch(
    params: &ModelParams,
    batch: &[(&Raster, &OrientedBoundaryMap)],
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for (img, gt) in batch {
        let (l, g) = backward(params, img, gt, cfg)?;
        total += l;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// [`backward`] in an explicit scalar type (`f64` for gradient checks).
pub fn backward_in<T: Real>(
    params: &ModelParams,
    image: &Raster,
    gt: &OrientedBoundaryMap,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    if !image.same_size(&gt.edge) {
        return Err(Error::ShapeMismatch("image vs ground truth".into()));
    }
    let trace = run::<T>(params, image)?;
    let (h, w) = (trace.h, trace.w);
    let hw = h * w;
    let b_last = last_of(params, Head::Boundary);
    let o_last = last_of(params, Head::Orientation);

    let beta = balance_beta(&gt.edge, cfg.boundary.beta_mode);
    let mut terms = Vec::with_capacity(hw * 2);
    let mut d_act = vec![T::ZERO; hw];
    let mut d_orient = vec![T::ZERO; hw];
    let edge = gt.edge.data();
    let theta = gt.orient.data();
    for j in 0..hw {
        let positive = edge[j] > 0.5;
        let (l, g, _) = boundary_pixel_loss(trace.outputs[b_last][j].to_f64(), positive, beta);
        terms.push(l);
        d_act[j] = T::from_f64(g);
    }
    for j in 0..hw {
        if edge[j] > 0.5 {
            let (l, g) = orient_pixel_loss(trace.outputs[o_last][j].to_f64(), theta[j] as f64, &cfg.orientation, !cfg.skip_log_z);
            terms.push(l);
            d_orient[j] = T::from_f64(g);
        }
    }
    let loss = reduce(&terms, cfg.reduction);

    let n = params.layers.len();
    let mut grads = Gradients::zeros_like(params);
    // gradient w.r.t. each layer's post-activation output
    let mut d_out: Vec<Option<Vec<T>>> = vec![None; n];
    d_out[b_last] = Some(d_act);
    d_out[o_last] = Some(d_orient);

    for i in (0..n).rev() {
        let l = &params.layers[i];
        let Some(mut g) = d_out[i].take() else {
            continue;
        };
        if l.activation == Activation::Relu {
            for (gv, &ov) in g.iter_mut().zip(&trace.outputs[i]) {
                if !(ov > T::ZERO) {
                    *gv = T::ZERO;
                }
            }
        }
        let weights: Vec<T> = l.weights.iter().map(|&v| T::from_f64(v as f64)).collect();
        let (dw, db, d_in) = conv_backward(&l.shape(h, w), &trace.inputs[i], &weights, &g, i > 0);
        grads.layers[i].weights = dw.iter().map(|v| v.to_f64()).collect();
        grads.layers[i].bias = db.iter().map(|v| v.to_f64()).collect();
        let Some(d_in) = d_in else { continue };
        // route to the producer of this layer's input
        let producer = if l.head == Head::Trunk || (i > 0 && params.layers[i - 1].head == l.head) {
            Some(i - 1)
        } else {
            params.head_layers(Head::Trunk).map(|(t, _)| t).last()
        };
        if let Some(p) = producer {
            match &mut d_out[p] {
                Some(acc) => acc.iter_mut().zip(&d_in).for_each(|(a, b)| *a += *b),
                slot @ None => *slot = Some(d_in),
            }
        }
    }
    Ok((loss, grads))
}
