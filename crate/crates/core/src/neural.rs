//! A small dense-network engine: batched forward passes that record a tape,
//! exact reverse-mode gradients, fan-in initialization and Adam.
//!
//! Inputs are row-major batches (`batch × features`). Weights are stored as
//! `(out, in)` matrices so a layer computes `Z = X·Wᵀ + b`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Softsign,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Softsign => softsign(z),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. Kinks take the positive-side slope.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Softsign => softsign_derivative(z),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn softsign(z: f64) -> f64 {
    z / (1.0 + z.abs())
}

#[inline]
pub fn softsign_derivative(z: f64) -> f64 {
    let d = 1.0 + z.abs();
    1.0 / (d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(input: usize, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.width)
    }

    /// `(fan_in, fan_out)` for every layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input;
        self.layers
            .iter()
            .map(|l| {
                let s = (fan_in, l.width);
                fan_in = l.width;
                s
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.layers.is_empty() || self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::Dimension(format!("degenerate network spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// A multilayer perceptron.
///
/// Every mutation bumps an internal generation counter; a [`Tape`] is only
/// accepted by the network instance and generation that produced it.
#[derive(Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

/// Intermediates retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("tape has at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.input.nrows()
    }

    /// Pre-activation values of every layer.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    /// `self += scale · params` (e.g. the gradient of an L2 penalty).
    pub fn add_scaled_params(&mut self, net: &Mlp, scale: f64) {
        for (g, l) in self.layers.iter_mut().zip(&net.layers) {
            g.w.scaled_add(scale, &l.w);
            g.b.scaled_add(scale, &l.b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat read in the same order as [`Mlp::param_mut`].
    pub fn get(&self, mut index: usize) -> f64 {
        for l in &self.layers {
            if index < l.w.len() {
                let cols = l.w.ncols();
                return l.w[[index / cols, index % cols]];
            }
            index -= l.w.len();
            if index < l.b.len() {
                return l.b[index];
            }
            index -= l.b.len();
        }
        panic!("gradient index out of range")
    }
}

/// Below this many rows, matrix products run as per-row vector loops: the
/// packing done by the blocked GEMM costs more than the product itself.
const SMALL_ROWS: usize = 4;

/// `dᵀ·a`, the weight gradient of a dense layer.
fn outer_sum(d: &Array2<f64>, a: &ArrayView2<f64>) -> Array2<f64> {
    if d.nrows() > SMALL_ROWS / 2 {
        return d.t().dot(a);
    }
    let mut g = Array2::zeros((d.ncols(), a.ncols()));
    for (dr, ar) in d.outer_iter().zip(a.outer_iter()) {
        for (mut gr, &dv) in g.outer_iter_mut().zip(dr.iter()) {
            gr.scaled_add(dv, &ar);
        }
    }
    g
}

/// `d·w` for the input gradient of a dense layer.
fn row_times(d: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    if d.nrows() > SMALL_ROWS {
        return d.dot(w);
    }
    let mut out = Array2::zeros((d.nrows(), w.ncols()));
    for (mut orow, dr) in out.outer_iter_mut().zip(d.outer_iter()) {
        for (wr, &dv) in w.outer_iter().zip(dr.iter()) {
            orow.scaled_add(dv, &wr);
        }
    }
    out
}

impl Mlp {
    /// Uniform fan-in initialization, `w ~ U(±sqrt(1/fan_in))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (1.0 / fan_in as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-bound..=bound)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp {
            spec: spec.clone(),
            layers,
            id: fresh_id(),
            generation: 0,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self::from_layers(
            spec.clone(),
            spec.shapes()
                .into_iter()
                .map(|(i, o)| Dense {
                    w: Array2::zeros((o, i)),
                    b: Array1::zeros(o),
                })
                .collect(),
        )
        .expect("shapes derived from spec")
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Dimension(format!(
                "spec has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.w.dim() != (*o, *i) || l.b.len() != *o {
                return Err(Error::Dimension(format!(
                    "layer {k}: expected w {o}x{i} and b {o}, got w {:?} and b {}",
                    l.w.dim(),
                    l.b.len()
                )));
            }
            if !(l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite(format!("layer {k} parameters")));
            }
        }
        Ok(Mlp {
            spec,
            layers,
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access: each layer's weights row-major, then its bias.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        self.generation += 1;
        for l in &mut self.layers {
            if index < l.w.len() {
                let cols = l.w.ncols();
                return &mut l.w[[index / cols, index % cols]];
            }
            index -= l.w.len();
            if index < l.b.len() {
                return &mut l.b[index];
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn param(&self, mut index: usize) -> f64 {
        for l in &self.layers {
            if index < l.w.len() {
                let cols = l.w.ncols();
                return l.w[[index / cols, index % cols]];
            }
            index -= l.w.len();
            if index < l.b.len() {
                return l.b[index];
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn sum_squares(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|v| v * v).sum::<f64>() + l.b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.spec.input,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Dense, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = if a.nrows() <= SMALL_ROWS {
            let mut z = Array2::zeros((a.nrows(), layer.w.nrows()));
            for (mut zr, ar) in z.outer_iter_mut().zip(a.outer_iter()) {
                zr.assign(&layer.w.dot(&ar));
            }
            z
        } else {
            a.dot(&layer.w.t())
        };
        z += &layer.b;
        z
    }

    /// Forward pass without recording intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for (layer, spec) in self.layers.iter().zip(&self.spec.layers) {
            let mut z = Self::affine(layer, &a.view());
            let act = spec.activation;
            if act != Activation::Identity {
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(a)
    }

    /// Forward pass recording a [`Tape`]; the output is `tape.output()`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(&x)?;
        let input = x.to_owned();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (layer, spec) in self.layers.iter().zip(&self.spec.layers) {
            let z = {
                let a = post.last().map_or(input.view(), |p| p.view());
                Self::affine(layer, &a)
            };
            let act = spec.activation;
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|v| act.apply(v))
            };
            pre.push(z);
            post.push(a);
        }
        if !post.last().expect("non-empty").iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(Tape {
            net_id: self.id,
            generation: self.generation,
            input,
            pre,
            post,
        })
    }

    /// Reverse pass: parameter gradients and the gradient with respect to
    /// the input, for an upstream gradient `d_out` on the tape's output.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let (g, dx) = self.backward_impl(tape, d_out, true)?;
        Ok((g.expect("requested"), dx))
    }

    /// Reverse pass that only propagates to the input.
    pub fn backward_input(&self, tape: &Tape, d_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.backward_impl(tape, d_out, false)?.1)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        d_out: ArrayView2<f64>,
        want_params: bool,
    ) -> Result<(Option<MlpGrads>, Array2<f64>)> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::StaleTape);
        }
        if d_out.dim() != tape.output().dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient {:?} does not match output {:?}",
                d_out.dim(),
                tape.output().dim()
            )));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(if want_params { n } else { 0 });
        let mut delta = d_out.to_owned();
        for k in (0..n).rev() {
            let act = self.spec.layers[k].activation;
            if act != Activation::Identity {
                Zip::from(&mut delta)
                    .and(&tape.pre[k])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            let a_prev = if k == 0 { tape.input.view() } else { tape.post[k - 1].view() };
            if want_params {
                grads.push(DenseGrad {
                    w: outer_sum(&delta, &a_prev),
                    b: delta.sum_axis(Axis(0)),
                });
            }
            delta = row_times(&delta, &self.layers[k].w);
        }
        grads.reverse();
        Ok((want_params.then_some(MlpGrads { layers: grads }), delta))
    }

    /// Signs of every pre-activation feeding a piecewise-linear unit. Two
    /// parameter settings with equal signatures lie on the same linear piece,
    /// which is what a finite-difference check needs.
    pub fn kink_signature(&self, tape: &Tape, out: &mut Vec<bool>) {
        for (z, spec) in tape.pre.iter().zip(&self.spec.layers) {
            if matches!(spec.activation, Activation::Relu | Activation::LeakyRelu) {
                out.extend(z.iter().map(|&v| v > 0.0));
            }
        }
    }

    /// `θ' ← θ' + rate·(θ − θ')`
    pub fn soft_update_from(&mut self, online: &Mlp, rate: f64) {
        self.generation += 1;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w).and(&o.w).for_each(|t, &o| *t += rate * (o - *t));
            Zip::from(&mut t.b).and(&o.b).for_each(|t, &o| *t += rate * (o - *t));
        }
    }

    /// Euclidean distance between two same-shaped parameter sets.
    pub fn distance(&self, other: &Mlp) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let dw: f64 = a.w.iter().zip(b.w.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = a.b.iter().zip(b.b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                dw + db
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients without
/// touching the parameters.
pub fn adam_update(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Dimension("gradient/parameter layer count".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    net.generation += 1;
    let step = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (k, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[k];
        let (m, v) = (&mut state.m.layers[k], &mut state.v.layers[k]);
        Zip::from(&mut layer.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .and(&g.w)
            .for_each(|p, m, v, &g| step(p, m, v, g));
        Zip::from(&mut layer.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .and(&g.b)
            .for_each(|p, m, v, &g| step(p, m, v, g));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major `(out, in)` weights.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    spec: MlpSpec,
    layers: Vec<LayerFile>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpFile {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.w.iter().copied().collect(),
                    b: l.b.to_vec(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = MlpFile::deserialize(d)?;
        let shapes = f.spec.shapes();
        if shapes.len() != f.layers.len() {
            return Err(D::Error::custom("layer count does not match spec"));
        }
        let layers = shapes
            .iter()
            .zip(f.layers)
            .map(|(&(i, o), l)| {
                let w = Array2::from_shape_vec((o, i), l.w).map_err(D::Error::custom)?;
                Ok(Dense {
                    w,
                    b: Array1::from_vec(l.b),
                })
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        Mlp::from_layers(f.spec, layers).map_err(D::Error::custom)
    }
}
