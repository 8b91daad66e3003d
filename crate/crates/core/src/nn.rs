//! Classification heads.
//!
//! Two head kinds share one parameter layout ([`ParamSet`]): a plain MLP and
//! a gated MLP whose hidden blocks split their activated channels into two
//! halves `Z₁ | Z₂` and emit `Z₁ ⊙ (Z₂ Wᵀ + b)`. Each hidden block applies
//! its activation and then inverted dropout; the output layer emits raw
//! logits. There are no residual connections or normalization layers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{matmul, matmul_nt, matmul_tn, Matrix, Scalar};
use crate::rng::RngState;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Mlp,
    Gmlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Forward,
    Derivative,
}

/// Architecture of one head. `layer_dims` runs from the input width to the
/// number of classes, e.g. `[768, 2048, 512, 18]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub dropout: f32,
}

impl HeadSpec {
    pub fn mlp(layer_dims: Vec<usize>, activation: Activation, dropout: f32) -> Self {
        HeadSpec {
            kind: HeadKind::Mlp,
            layer_dims,
            activation,
            dropout,
        }
    }

    pub fn gmlp(layer_dims: Vec<usize>, activation: Activation, dropout: f32) -> Self {
        HeadSpec {
            kind: HeadKind::Gmlp,
            layer_dims,
            activation,
            dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 {
            return Err(Error::Parameter(format!(
                "head needs at least 2 dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Parameter(format!("zero-width layer in {dims:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.kind == HeadKind::Gmlp {
            if let Some(h) = self.hidden_dims().iter().find(|h| *h % 2 != 0) {
                return Err(Error::Parameter(format!("gated block width {h} is odd")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec")
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    /// `(d_out, d_in)` of every linear map, in declaration order.
    pub fn linear_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim();
        for &h in self.hidden_dims() {
            shapes.push((h, width));
            width = match self.kind {
                HeadKind::Mlp => h,
                HeadKind::Gmlp => {
                    shapes.push((h / 2, h / 2));
                    h / 2
                }
            };
        }
        shapes.push((self.output_dim(), width));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T: Scalar = f32> {
    /// `d_out × d_in`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        LinearLayer {
            weight: Matrix::zeros(d_out, d_in),
            bias: vec![T::ZERO; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

/// `x · Wᵀ + b`.
pub fn linear_forward<T: Scalar>(layer: &LinearLayer<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != layer.d_in() {
        return Err(Error::shape(
            "linear_forward",
            x.shape(),
            layer.weight.shape(),
        ));
    }
    let mut out = matmul_nt(x, &layer.weight)?;
    out.add_row_broadcast(&layer.bias)?;
    Ok(out)
}

/// Returns `(dW, db, dx)`; `dx` only when requested.
fn linear_backward<T: Scalar>(
    layer: &LinearLayer<T>,
    x: &Matrix<T>,
    dy: &Matrix<T>,
    need_dx: bool,
) -> Result<(LinearLayer<T>, Option<Matrix<T>>)> {
    let weight = matmul_tn(dy, x)?;
    let bias = dy.col_sums().into_iter().map(T::from_f64).collect();
    let dx = if need_dx {
        Some(matmul(dy, &layer.weight)?)
    } else {
        None
    };
    Ok((LinearLayer { weight, bias }, dx))
}

/// Parameters (or gradients) of one head, linear maps in declaration order:
/// for a gated head each hidden block contributes its projection followed by
/// its gate map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    pub layers: Vec<LinearLayer<T>>,
}

pub type ParamGrads<T = f32> = ParamSet<T>;

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(spec: &HeadSpec) -> Self {
        ParamSet {
            layers: spec
                .linear_shapes()
                .into_iter()
                .map(|(o, i)| LinearLayer::zeros(o, i))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LinearLayer::zeros(l.d_out(), l.d_in()))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter blocks: weight then bias of each layer.
    pub fn blocks(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flat_map(|l| {
            let LinearLayer { weight, bias } = l;
            [weight.data_mut(), bias.as_mut_slice()]
        })
    }

    pub fn block_name(index: usize) -> String {
        let kind = if index.is_multiple_of(2) {
            "weight"
        } else {
            "bias"
        };
        format!("layer {} {kind}", index / 2)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LinearLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    fn check(&self, spec: &HeadSpec) -> Result<()> {
        let expected = spec.linear_shapes();
        let ok = expected.len() == self.layers.len()
            && expected
                .iter()
                .zip(&self.layers)
                .all(|(&(o, i), l)| l.weight.shape() == (o, i) && l.bias.len() == o);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "parameters do not match head dims {:?}",
                spec.layer_dims
            )))
        }
    }
}

/// Weights drawn from `Normal(0, sqrt(2 / fan_in))`, biases zero.
pub fn param_init<T: Scalar>(spec: &HeadSpec, rng: &mut RngState) -> Result<ParamSet<T>> {
    spec.validate()?;
    let layers = spec
        .linear_shapes()
        .into_iter()
        .map(|(d_out, d_in)| LinearLayer {
            weight: rng.normal_matrix(d_out, d_in, 0.0, libm::sqrt(2.0 / d_in as f64)),
            bias: vec![T::ZERO; d_out],
        })
        .collect();
    Ok(ParamSet { layers })
}

// ---------------------------------------------------------------------------
// Activations and dropout
// ---------------------------------------------------------------------------

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn gelu_derivative(x: f64, cdf: f64) -> f64 {
    cdf + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

impl Activation {
    /// `(f(x), f'(x))`, sharing the CDF evaluation for GeLU.
    #[inline]
    fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = normal_cdf(x);
                (x * cdf, gelu_derivative(x, cdf))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => x * normal_cdf(x),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_derivative(x, normal_cdf(x)),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
        }
    }
}

pub fn activate<T: Scalar>(x: &Matrix<T>, kind: Activation, mode: ActMode) -> Matrix<T> {
    match mode {
        ActMode::Forward => x.map(|v| T::from_f64(kind.apply(v.to_f64()))),
        ActMode::Derivative => x.map(|v| T::from_f64(kind.derivative(v.to_f64()))),
    }
}

fn activate_both<T: Scalar>(x: &Matrix<T>, kind: Activation) -> (Matrix<T>, Matrix<T>) {
    let mut value = Vec::with_capacity(x.data().len());
    let mut slope = Vec::with_capacity(x.data().len());
    for v in x.data() {
        let (a, d) = kind.apply_with_derivative(v.to_f64());
        value.push(T::from_f64(a));
        slope.push(T::from_f64(d));
    }
    let (r, c) = x.shape();
    (
        Matrix::new(r, c, value).expect("same shape"),
        Matrix::new(r, c, slope).expect("same shape"),
    )
}

/// Inverted dropout. The returned mask holds the per-entry scale applied
/// (`0` or `1 / (1 − rate)`), which is also the backward multiplier.
pub fn dropout_forward<T: Scalar>(
    x: &Matrix<T>,
    rate: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Matrix::filled(x.rows(), x.cols(), T::ONE)));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut out = Vec::with_capacity(x.data().len());
    let mut mask = Vec::with_capacity(x.data().len());
    for &v in x.data() {
        let m = if rng.uniform() < rate { T::ZERO } else { keep };
        out.push(T::from_f64(v.to_f64() * m.to_f64()));
        mask.push(m);
    }
    let (r, c) = x.shape();
    Ok((Matrix::new(r, c, out)?, Matrix::new(r, c, mask)?))
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BlockCache<T: Scalar> {
    input: Matrix<T>,
    /// Activation derivative at the pre-activation.
    slope: Matrix<T>,
    /// Activated channels `[Z₁ | Z₂]`; gated blocks only.
    act: Matrix<T>,
    /// Gate map output `f(Z₂)`, gated blocks only.
    gate: Option<Matrix<T>>,
    mask: Matrix<T>,
}

/// Intermediates recorded by [`head_forward`] for [`head_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar = f32> {
    kind: HeadKind,
    blocks: Vec<BlockCache<T>>,
    final_input: Matrix<T>,
}

fn forward_impl<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    x: &Matrix<T>,
    mode: Mode,
    rng: &mut RngState,
    keep_cache: bool,
) -> Result<(Matrix<T>, Option<ForwardCache<T>>)> {
    spec.validate()?;
    params.check(spec)?;
    if x.cols() != spec.input_dim() {
        return Err(Error::shape(
            "head_forward",
            x.shape(),
            (x.rows(), spec.input_dim()),
        ));
    }
    let mut blocks = Vec::new();
    let mut h = x.clone();
    let mut layer = 0;
    for _ in spec.hidden_dims() {
        let pre = linear_forward(&params.layers[layer], &h)?;
        let (act, slope) = if keep_cache {
            activate_both(&pre, spec.activation)
        } else {
            (
                activate(&pre, spec.activation, ActMode::Forward),
                Matrix::zeros(0, 0),
            )
        };
        layer += 1;
        let (gated, gate, act) = match spec.kind {
            HeadKind::Mlp => (act, None, Matrix::zeros(0, 0)),
            HeadKind::Gmlp => {
                let half = act.cols() / 2;
                let z1 = act.col_slice(0, half);
                let z2 = act.col_slice(half, act.cols());
                let g = linear_forward(&params.layers[layer], &z2)?;
                layer += 1;
                (z1.hadamard(&g)?, Some(g), act)
            }
        };
        let (out, mask) = dropout_forward(&gated, spec.dropout as f64, mode, rng)?;
        if keep_cache {
            blocks.push(BlockCache {
                input: h,
                slope,
                act,
                gate,
                mask,
            });
        }
        h = out;
    }
    let logits = linear_forward(&params.layers[layer], &h)?;
    let cache = keep_cache.then_some(ForwardCache {
        kind: spec.kind,
        blocks,
        final_input: h,
    });
    Ok((logits, cache))
}

/// Runs the head, returning logits and the cache needed for backward.
pub fn head_forward<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    x: &Matrix<T>,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    let (logits, cache) = forward_impl(spec, params, x, mode, rng, true)?;
    Ok((logits, cache.expect("cache requested")))
}

/// Eval-mode logits without recording a cache.
pub fn head_infer<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    x: &Matrix<T>,
) -> Result<Matrix<T>> {
    // Eval mode never draws from the stream.
    let mut rng = RngState::new(0);
    Ok(forward_impl(spec, params, x, Mode::Eval, &mut rng, false)?.0)
}

fn backward_impl<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    cache: &ForwardCache<T>,
    dlogits: &Matrix<T>,
    need_dinput: bool,
) -> Result<(ParamGrads<T>, Option<Matrix<T>>)> {
    params.check(spec)?;
    if cache.kind != spec.kind || cache.blocks.len() != spec.hidden_dims().len() {
        return Err(Error::State(
            "forward cache does not match head spec".into(),
        ));
    }
    if dlogits.shape() != (cache.final_input.rows(), spec.output_dim()) {
        return Err(Error::shape(
            "head_backward",
            dlogits.shape(),
            (cache.final_input.rows(), spec.output_dim()),
        ));
    }
    let n_layers = params.layers.len();
    let mut grads: Vec<Option<LinearLayer<T>>> = vec![None; n_layers];
    let mut layer = n_layers - 1;
    let need_dh = need_dinput || !cache.blocks.is_empty();
    let (g, dh) = linear_backward(&params.layers[layer], &cache.final_input, dlogits, need_dh)?;
    grads[layer] = Some(g);
    let mut dh = dh;

    for (b, block) in cache.blocks.iter().enumerate().rev() {
        let d_out = dh.take().expect("upstream gradient");
        let d_gated = d_out.hadamard(&block.mask)?;
        let d_act = match cache.kind {
            HeadKind::Mlp => d_gated,
            HeadKind::Gmlp => {
                layer -= 1;
                let half = block.act.cols() / 2;
                let z1 = block.act.col_slice(0, half);
                let z2 = block.act.col_slice(half, block.act.cols());
                let g = block.gate.as_ref().expect("gated block cache");
                let dz1 = d_gated.hadamard(g)?;
                let dg = d_gated.hadamard(&z1)?;
                let (gg, dz2) = linear_backward(&params.layers[layer], &z2, &dg, true)?;
                grads[layer] = Some(gg);
                dz1.hcat(&dz2.expect("requested"))?
            }
        };
        let d_pre = d_act.hadamard(&block.slope)?;
        layer -= 1;
        let need = need_dinput || b > 0;
        let (g, dx) = linear_backward(&params.layers[layer], &block.input, &d_pre, need)?;
        grads[layer] = Some(g);
        dh = dx;
    }
    let layers = grads
        .into_iter()
        .map(|g| g.expect("every layer visited"))
        .collect();
    Ok((ParamSet { layers }, dh))
}

/// Exact reverse-mode gradients of all parameters and of the input.
pub fn head_backward<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    cache: &ForwardCache<T>,
    dlogits: &Matrix<T>,
) -> Result<(ParamGrads<T>, Matrix<T>)> {
    let (grads, dx) = backward_impl(spec, params, cache, dlogits, true)?;
    Ok((grads, dx.expect("input gradient requested")))
}

/// Parameter gradients only; skips the input-gradient product.
pub fn head_param_grads<T: Scalar>(
    spec: &HeadSpec,
    params: &ParamSet<T>,
    cache: &ForwardCache<T>,
    dlogits: &Matrix<T>,
) -> Result<ParamGrads<T>> {
    Ok(backward_impl(spec, params, cache, dlogits, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &Matrix<f32>) -> Vec<u32> {
        m.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = RngState::new(1).normal_matrix::<f32>(3, 4, 0.0, 1.0);
        let id = LinearLayer {
            weight: Matrix::identity(4),
            bias: vec![0.0; 4],
        };
        assert_eq!(linear_forward(&id, &x).unwrap(), x);
        let ones = LinearLayer {
            weight: Matrix::zeros(2, 4),
            bias: vec![1.0f32; 2],
        };
        assert_eq!(linear_forward(&ones, &x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = RngState::new(17);
        let x = rng.normal_matrix::<f32>(5, 7, 0.0, 1.0);
        let layer = LinearLayer {
            weight: rng.normal_matrix(3, 7, 0.0, 1.0),
            bias: vec![0.25f32, -1.5, 3.0],
        };
        let oracle = Matrix::from_fn(5, 3, |i, j| {
            let mut acc = 0.0f64;
            for t in 0..7 {
                acc += x.get(i, t) as f64 * layer.weight.get(j, t) as f64;
            }
            (acc as f32) + layer.bias[j]
        });
        assert_eq!(bits(&linear_forward(&layer, &x).unwrap()), bits(&oracle));
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::LeakyRelu.apply(-1.0), -0.01);
        // Φ(1) to 20 digits: 0.84134474606854294858...
        assert!((Activation::Gelu.apply(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let mut rng = RngState::new(9);
        let h = 1e-6;
        for kind in [Activation::Gelu, Activation::Relu, Activation::LeakyRelu] {
            for _ in 0..100 {
                let mut x = rng.normal(0.0, 3.0);
                if x.abs() < 1e-3 {
                    x += 0.5;
                }
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let an = kind.derivative(x);
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-6, "{kind:?} at {x}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let x = RngState::new(2).normal_matrix::<f32>(4, 4, 0.0, 1.0);
        let mut rng = RngState::new(3);
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(dropout_forward(&x, 0.0, mode, &mut rng).unwrap().0, x);
        }
        assert_eq!(dropout_forward(&x, 0.6, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_keep_fraction_and_expectation() {
        let x = Matrix::<f32>::filled(100, 1000, 1.5);
        let mut rng = RngState::new(4);
        let (out, mask) = dropout_forward(&x, 0.6, Mode::Train, &mut rng).unwrap();
        let kept = mask.data().iter().filter(|v| **v != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.4).abs() < 0.01, "kept {kept}");
        let mean = out.sum() / 1e5;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let spec = HeadSpec::mlp(vec![3, 18], Activation::Gelu, 0.0);
        let x = RngState::new(5).normal_matrix::<f32>(2, 3, 0.0, 1.0);
        let logits = head_infer(&spec, &ParamSet::zeros(&spec), &x).unwrap();
        assert!(logits.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_gate_passes_first_half() {
        // Gate map W = 0, b = 1 leaves s(Z) = Z₁, so the head equals an MLP
        // built from the first half of the projection.
        let mut rng = RngState::new(6);
        let g = HeadSpec::gmlp(vec![5, 8, 3], Activation::Gelu, 0.0);
        let mut gp: ParamSet<f32> = param_init(&g, &mut rng).unwrap();
        gp.layers[1] = LinearLayer {
            weight: Matrix::zeros(4, 4),
            bias: vec![1.0; 4],
        };
        let m = HeadSpec::mlp(vec![5, 4, 3], Activation::Gelu, 0.0);
        let proj = &gp.layers[0];
        let mp = ParamSet {
            layers: vec![
                LinearLayer {
                    weight: Matrix::new(4, 5, proj.weight.data()[..20].to_vec()).unwrap(),
                    bias: proj.bias[..4].to_vec(),
                },
                gp.layers[2].clone(),
            ],
        };
        let x = rng.normal_matrix::<f32>(6, 5, 0.0, 1.0);
        assert_eq!(
            bits(&head_infer(&g, &gp, &x).unwrap()),
            bits(&head_infer(&m, &mp, &x).unwrap())
        );
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = HeadSpec::gmlp(vec![6, 8, 4], Activation::Relu, 0.0);
        let mut rng = RngState::new(7);
        let p: ParamSet<f32> = param_init(&spec, &mut rng).unwrap();
        let x = rng.normal_matrix(3, 6, 0.0, 1.0);
        let (_, cache) = head_forward(&spec, &p, &x, Mode::Train, &mut rng).unwrap();
        let (g, dx) = head_backward(&spec, &p, &cache, &Matrix::zeros(3, 4)).unwrap();
        assert!(g.blocks().all(|b| b.iter().all(|v| *v == 0.0)));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_statistics() {
        let spec = HeadSpec::mlp(vec![768, 2048, 18], Activation::Gelu, 0.0);
        let p: ParamSet<f32> = param_init(&spec, &mut RngState::new(8)).unwrap();
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        let w = p.layers[0].weight.data();
        let n = w.len() as f64;
        let mean = w.iter().map(|v| *v as f64).sum::<f64>() / n;
        let std = libm::sqrt(w.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0));
        let target = libm::sqrt(2.0 / 768.0);
        assert!((std / target - 1.0).abs() < 0.03, "std {std} vs {target}");
        let again: ParamSet<f32> = param_init(&spec, &mut RngState::new(8)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn spec_validation() {
        assert!(HeadSpec::mlp(vec![4], Activation::Relu, 0.0)
            .validate()
            .is_err());
        assert!(HeadSpec::gmlp(vec![4, 7, 2], Activation::Relu, 0.0)
            .validate()
            .is_err());
        assert!(HeadSpec::mlp(vec![4, 2], Activation::Relu, 1.0)
            .validate()
            .is_err());
        let spec = HeadSpec::gmlp(vec![6, 8, 4, 3], Activation::Relu, 0.1);
        assert_eq!(
            spec.linear_shapes(),
            vec![(8, 6), (4, 4), (4, 4), (2, 2), (3, 2)]
        );
    }
}
