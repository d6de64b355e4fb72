//! Small feed-forward networks with exact input derivatives.
//!
//! A network is described by a [`NetSpec`] and a flat [`ParamVector`].
//! Evaluation records a [`Tape`] that carries the value, the input
//! Jacobian and (optionally) the input Hessian of every layer. Reverse
//! accumulation over that tape yields parameter gradients of objectives
//! that depend on all three, which is what the physics losses need: the
//! Euler-Lagrange residual contains input derivatives of the networks.

mod io;
mod tape;

pub use io::{net_to_string, read_net, write_net};
pub(crate) use io::read_net_block;
pub use tape::{Order, Tape};

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
    Linear,
}

impl Activation {
    /// Value and first three derivatives at `x`.
    #[inline]
    pub fn eval(self, x: f64) -> [f64; 4] {
        match self {
            Activation::Softplus => {
                // max(x, 0) + ln(1 + e^{-|x|}) stays finite for large |x|
                let value = x.max(0.0) + (-x.abs()).exp().ln_1p();
                let s = logistic(x);
                let ds = s * (1.0 - s);
                [value, s, ds, ds * (1.0 - 2.0 * s)]
            }
            Activation::Tanh => {
                let t = x.tanh();
                let sech2 = 1.0 - t * t;
                [t, sech2, -2.0 * t * sech2, sech2 * (6.0 * t * t - 2.0)]
            }
            Activation::Linear => [x, 1.0, 0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Activation::Softplus),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Format(format!("unknown activation '{other}'"))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softplus, `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    Activation::Softplus.eval(x)[0]
}

/// Architecture of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub layer_widths: Vec<usize>,
    pub output_dim: usize,
    pub activations: Vec<Activation>,
}

/// Geometry of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(
        input_dim: usize,
        layer_widths: Vec<usize>,
        output_dim: usize,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(
                "network input and output dimensions must be positive".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if activations.len() != layer_widths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} activations given for {} hidden layers",
                activations.len(),
                layer_widths.len()
            )));
        }
        Ok(Self {
            input_dim,
            layer_widths,
            output_dim,
            activations,
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform(
        input_dim: usize,
        layer_widths: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(
            input_dim,
            layer_widths.to_vec(),
            output_dim,
            vec![activation; layer_widths.len()],
        )
    }

    pub(crate) fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.layer_widths.len() + 1);
        let mut fan_in = self.input_dim;
        let mut offset = 0;
        let outs = self
            .layer_widths
            .iter()
            .copied()
            .zip(self.activations.iter().copied())
            .chain(std::iter::once((self.output_dim, Activation::Linear)));
        for (fan_out, activation) in outs {
            let weight_offset = offset;
            let bias_offset = offset + fan_in * fan_out;
            shapes.push(LayerShape {
                fan_in,
                fan_out,
                weight_offset,
                bias_offset,
                activation,
            });
            offset = bias_offset + fan_out;
            fan_in = fan_out;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .last()
            .map(|l| l.bias_offset + l.fan_out)
            .unwrap_or(0)
    }

    /// Offset of the output-layer biases inside the parameter vector.
    pub fn output_bias_offset(&self) -> usize {
        self.layers().last().map(|l| l.bias_offset).unwrap_or(0)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::InputShape {
                expected,
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Flat parameter storage: per layer, weights row-major then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    /// Hidden and output weights ~ N(0, 1/fan_in), zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.param_count()];
        for layer in spec.layers() {
            let normal = Normal::new(0.0, 1.0 / (layer.fan_in as f64).sqrt())
                .expect("finite standard deviation");
            for w in &mut values[layer.weight_offset..layer.bias_offset] {
                *w = normal.sample(rng);
            }
        }
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl Net {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.check_params(&params)?;
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let params = ParamVector::zeros(&spec);
        Self { spec, params }
    }

    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let params = ParamVector::init(&spec, rng);
        Self { spec, params }
    }

    pub fn record(&self, x: &[f64], order: Order) -> Result<Tape<'_>> {
        Tape::record(&self.spec, &self.params, x, order)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        net_eval(&self.spec, &self.params, x)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// Network output `y(x)`.
pub fn net_eval(spec: &NetSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(Tape::record(spec, params, x, Order::Value)?.output().to_vec())
}

/// Input Jacobian `∂y/∂x` (output_dim × input_dim).
pub fn net_input_jacobian(spec: &NetSpec, params: &ParamVector, x: &[f64]) -> Result<DMatrix<f64>> {
    let tape = Tape::record(spec, params, x, Order::Jacobian)?;
    Ok(DMatrix::from_row_slice(
        spec.output_dim,
        spec.input_dim,
        tape.jacobian(),
    ))
}

/// Input Hessian of every output component; entry `k` is `∂²y_k/∂x²`.
pub fn net_input_hessian(
    spec: &NetSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let tape = Tape::record(spec, params, x, Order::Hessian)?;
    let d = spec.input_dim;
    Ok(tape
        .hessian()
        .chunks(d * d)
        .map(|slice| DMatrix::from_row_slice(d, d, slice))
        .collect())
}

/// Cotangents of one batch element's objective with respect to the
/// recorded network quantities. Layouts match [`Tape`] accessors.
#[derive(Debug, Clone, Default)]
pub struct Cotangents {
    pub output: Vec<f64>,
    pub jacobian: Option<Vec<f64>>,
    pub hessian: Option<Vec<f64>>,
}

/// Value and parameter gradient of `Σ_i objective_i(tape(x_i))`.
///
/// `objective` receives the batch index and the recorded tape and returns
/// the element's contribution together with its cotangents. Elements are
/// reduced in batch order so the result is reproducible.
pub fn objective_param_grad<F>(
    spec: &NetSpec,
    params: &ParamVector,
    inputs: &[Vec<f64>],
    order: Order,
    mut objective: F,
) -> Result<(f64, ParamVector)>
where
    F: FnMut(usize, &Tape<'_>) -> (f64, Cotangents),
{
    let mut grad = ParamVector::zeros(spec);
    let mut total = 0.0;
    for (index, x) in inputs.iter().enumerate() {
        let tape = Tape::record(spec, params, x, order)?;
        let (value, cot) = objective(index, &tape);
        let finite = value.is_finite()
            && cot.output.iter().all(|v| v.is_finite())
            && cot.jacobian.iter().flatten().all(|v| v.is_finite())
            && cot.hessian.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NumericOverflow { index });
        }
        tape.backward(
            &cot.output,
            cot.jacobian.as_deref(),
            cot.hessian.as_deref(),
            &mut grad,
        );
        total += value;
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, act: Activation) -> (NetSpec, ParamVector) {
        let spec = NetSpec::uniform(3, &[5, 4], 2, act).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamVector::init(&spec, &mut rng);
        // nonzero biases exercise every code path
        for v in p.iter_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        (spec, p)
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = NetSpec::uniform(4, &[8, 6], 3, Activation::Tanh).unwrap();
        assert_eq!(spec.param_count(), 4 * 8 + 8 + 8 * 6 + 6 + 6 * 3 + 3);
        assert_eq!(spec.output_bias_offset(), spec.param_count() - 3);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(NetSpec::new(0, vec![2], 1, vec![Activation::Tanh]).is_err());
        assert!(NetSpec::new(2, vec![0], 1, vec![Activation::Tanh]).is_err());
        assert!(NetSpec::new(2, vec![2, 2], 1, vec![Activation::Tanh]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = NetSpec::uniform(2, &[4], 3, Activation::Softplus).unwrap();
        let y = net_eval(&spec, &ParamVector::zeros(&spec), &[0.7, -3.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let spec = NetSpec::uniform(2, &[], 2, Activation::Linear).unwrap();
        let p = ParamVector(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(net_eval(&spec, &p, &[0.3, -1.2]).unwrap(), vec![0.3, -1.2]);
        let j = net_input_jacobian(&spec, &p, &[0.3, -1.2]).unwrap();
        assert_eq!(j, DMatrix::identity(2, 2));
    }

    #[test]
    fn input_shape_error() {
        let spec = NetSpec::uniform(2, &[3], 1, Activation::Tanh).unwrap();
        let err = net_eval(&spec, &ParamVector::zeros(&spec), &[1.0]).unwrap_err();
        assert_eq!(err, Error::InputShape { expected: 2, got: 1 });
    }

    #[test]
    fn softplus_unit_derivative_is_logistic() {
        let spec = NetSpec::uniform(1, &[1], 1, Activation::Softplus).unwrap();
        // w1 = 1.7, b1 = -0.4, w2 = 1, b2 = 0 -> y = softplus(1.7 x - 0.4)
        let p = ParamVector(vec![1.7, -0.4, 1.0, 0.0]);
        let x = 0.35;
        let j = net_input_jacobian(&spec, &p, &[x]).unwrap();
        assert!((j[(0, 0)] - 1.7 * logistic(1.7 * x - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn tanh_curvature_vanishes_at_origin() {
        let spec = NetSpec::uniform(1, &[1], 1, Activation::Tanh).unwrap();
        let p = ParamVector(vec![1.0, 0.0, 1.0, 0.0]);
        let h = net_input_hessian(&spec, &p, &[0.0]).unwrap();
        assert_eq!(h[0][(0, 0)], 0.0);
    }

    #[test]
    fn linear_network_has_zero_hessian() {
        let spec = NetSpec::uniform(3, &[4], 2, Activation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParamVector::init(&spec, &mut rng);
        for h in net_input_hessian(&spec, &p, &[0.1, 0.2, -0.3]).unwrap() {
            assert!(h.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Softplus, Activation::Tanh] {
            for &x in &[-2.3, -0.1, 0.0, 0.4, 3.1] {
                let h = 1e-5;
                let e = act.eval(x);
                let ep = act.eval(x + h);
                let em = act.eval(x - h);
                for k in 0..3 {
                    let fd = (ep[k] - em[k]) / (2.0 * h);
                    assert!((fd - e[k + 1]).abs() < 1e-8, "{act} order {k} at {x}");
                }
            }
        }
    }

    #[test]
    fn hessian_slices_are_exactly_symmetric() {
        let (spec, p) = random_net(11, Activation::Softplus);
        for h in net_input_hessian(&spec, &p, &[0.3, -0.8, 1.1]).unwrap() {
            assert_eq!(h.clone(), h.transpose());
        }
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let (spec, p) = random_net(2, Activation::Tanh);
        let inputs = vec![vec![0.1, 0.2, 0.3]; 4];
        let (v, g) = objective_param_grad(&spec, &p, &inputs, Order::Value, |_, tape| {
            (
                1.5,
                Cotangents {
                    output: vec![0.0; tape.output().len()],
                    ..Default::default()
                },
            )
        })
        .unwrap();
        assert_eq!(v, 6.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_objective_reports_batch_index() {
        let (spec, p) = random_net(2, Activation::Tanh);
        let inputs = vec![vec![0.1, 0.2, 0.3]; 4];
        let err = objective_param_grad(&spec, &p, &inputs, Order::Value, |i, tape| {
            let v = if i == 2 { f64::NAN } else { 0.0 };
            (
                v,
                Cotangents {
                    output: vec![0.0; tape.output().len()],
                    ..Default::default()
                },
            )
        })
        .unwrap_err();
        assert_eq!(err, Error::NumericOverflow { index: 2 });
    }

    #[test]
    fn linear_net_gradient_scales_with_params() {
        // objective = ½‖y(x₀)‖²; y is linear in the weights when biases vanish
        let spec = NetSpec::uniform(2, &[], 2, Activation::Linear).unwrap();
        let p = ParamVector(vec![0.5, -1.0, 2.0, 0.25, 0.0, 0.0]);
        let grad_of = |p: &ParamVector| {
            objective_param_grad(&spec, p, &[vec![0.3, 0.9]], Order::Value, |_, tape| {
                let y = tape.output();
                (
                    0.5 * y.iter().map(|v| v * v).sum::<f64>(),
                    Cotangents {
                        output: y.to_vec(),
                        ..Default::default()
                    },
                )
            })
            .unwrap()
            .1
        };
        let g1 = grad_of(&p);
        let p2 = ParamVector(p.iter().map(|v| 2.0 * v).collect());
        let g2 = grad_of(&p2);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }
}
