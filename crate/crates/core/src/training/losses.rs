use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::adjoint::{BlackBoxHamiltonianPoint, BlackBoxLagrangianPoint, DelanPoint, HnnPoint};
use crate::dynamics::stack;
use crate::energy_models::EnergyModel;
use crate::error::{Error, Result};
use crate::evaluation::{variance, Sample, VARIANCE_FLOOR};
use crate::integrators::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Torque residual of the inverse model.
    #[serde(rename = "inverse")]
    Inverse,
    /// Torque residual plus acceleration residual of the forward model.
    #[serde(rename = "combined")]
    Combined,
    /// Residuals of both of Hamilton's equations.
    #[serde(rename = "hamiltonian")]
    Hamiltonian,
    /// One-step state prediction through explicit Euler.
    #[serde(rename = "state-euler")]
    StateEuler,
    /// One-step state prediction through RK4.
    #[serde(rename = "state-rk4")]
    StateRk4,
}

impl LossKind {
    pub const ALL: [LossKind; 5] =
        [LossKind::Inverse, LossKind::Combined, LossKind::Hamiltonian, LossKind::StateEuler, LossKind::StateRk4];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Inverse => "inverse",
            LossKind::Combined => "combined",
            LossKind::Hamiltonian => "hamiltonian",
            LossKind::StateEuler => "state-euler",
            LossKind::StateRk4 => "state-rk4",
        }
    }

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            LossKind::StateEuler => Some(Scheme::Euler),
            LossKind::StateRk4 => Some(Scheme::Rk4),
            _ => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind '{s}'")))
    }
}

/// Inverse-variance weights of the residual channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagWeights {
    pub tau: DVector<f64>,
    pub qdd: DVector<f64>,
    pub qd: DVector<f64>,
    pub pd: DVector<f64>,
}

impl DiagWeights {
    pub fn ones(n: usize) -> Self {
        let one = DVector::from_element(n, 1.0);
        Self { tau: one.clone(), qdd: one.clone(), qd: one.clone(), pd: one }
    }

    pub fn dof(&self) -> usize {
        self.tau.len()
    }
}

/// `w_d = 1 / max(var_d, 1e-8)` for each channel.
pub fn estimate_weights(samples: &[Sample]) -> Result<DiagWeights> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weight = |f: fn(&Sample) -> &DVector<f64>| {
        let col: Vec<DVector<f64>> = samples.iter().map(|s| f(s).clone()).collect();
        variance(&col).map(|v| 1.0 / v.max(VARIANCE_FLOOR))
    };
    Ok(DiagWeights { tau: weight(|s| &s.tau), qdd: weight(|s| &s.qdd), qd: weight(|s| &s.qd), pd: weight(|s| &s.pd) })
}

/// Loss configuration shared by every sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    pub kind: LossKind,
    pub weights: DiagWeights,
    /// Step of the next-state pairs for state losses.
    pub dt: f64,
    /// Coefficient of `‖θ‖²` added to the batch mean.
    pub l2: f64,
}

impl LossContext {
    pub fn new(kind: LossKind, weights: DiagWeights, dt: f64) -> Self {
        Self { kind, weights, dt, l2: 0.0 }
    }
}

fn weighted_sq(r: &DVector<f64>, w: &DVector<f64>) -> f64 {
    r.iter().zip(w.iter()).map(|(a, b)| b * a * a).sum()
}

fn weighted_bar(r: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    2.0 * r.component_mul(w)
}

fn unsupported(kind: LossKind, model: &EnergyModel) -> Error {
    Error::InvalidArgument(format!("loss '{kind}' does not apply to variant '{}'", model.variant().name()))
}

/// Loss of one sample; parameter gradients accumulate into `grad` when
/// given.
pub(crate) fn sample_loss(
    model: &EnergyModel,
    s: &Sample,
    ctx: &LossContext,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let w = &ctx.weights;
    match (ctx.kind, model) {
        (LossKind::StateEuler | LossKind::StateRk4, _) => state_sample_loss(model, s, ctx, grad),
        (LossKind::Inverse | LossKind::Combined, EnergyModel::StructuredLagrangian(m)) => {
            let pt = DelanPoint::new(m, &s.q);
            let r = pt.inverse(&s.qd, &s.qdd) - &s.tau;
            let mut loss = weighted_sq(&r, &w.tau);
            let mut grad = grad;
            if let Some(g) = grad.as_deref_mut() {
                pt.inverse_backward(&s.qd, &s.qdd, &weighted_bar(&r, &w.tau), g);
            }
            if ctx.kind == LossKind::Combined {
                let qdd = pt.forward(&s.qd, &s.tau)?;
                let rf = &qdd - &s.qdd;
                loss += weighted_sq(&rf, &w.qdd);
                if let Some(g) = grad {
                    pt.forward_backward(&s.qd, &qdd, &weighted_bar(&rf, &w.qdd), g);
                }
            }
            Ok(loss)
        }
        (LossKind::Inverse | LossKind::Combined, EnergyModel::BlackBoxLagrangian(m)) => {
            let pt = BlackBoxLagrangianPoint::new(m, &s.q, &s.qd);
            let r = pt.inverse(&s.qdd) - &s.tau;
            let mut loss = weighted_sq(&r, &w.tau);
            let mut grad = grad;
            if let Some(g) = grad.as_deref_mut() {
                pt.inverse_backward(&s.qdd, &weighted_bar(&r, &w.tau), g);
            }
            if ctx.kind == LossKind::Combined {
                let qdd = pt.forward(&s.tau)?;
                let rf = &qdd - &s.qdd;
                loss += weighted_sq(&rf, &w.qdd);
                if let Some(g) = grad {
                    pt.forward_backward(&qdd, &weighted_bar(&rf, &w.qdd), g)?;
                }
            }
            Ok(loss)
        }
        // For Hamiltonian models the torque residual of the inverse model
        // equals the momentum-rate residual of the forward model.
        (LossKind::Inverse | LossKind::Hamiltonian, EnergyModel::StructuredHamiltonian(m)) => {
            let pt = HnnPoint::new(m, &s.q);
            let (qd, pd) = pt.forward(&s.p, &s.tau);
            hamiltonian_terms(ctx, s, &qd, &pd, grad, |qd_bar, pd_bar, g| {
                pt.forward_backward(&s.p, qd_bar, pd_bar, g);
            })
        }
        (LossKind::Inverse | LossKind::Hamiltonian, EnergyModel::BlackBoxHamiltonian(m)) => {
            let pt = BlackBoxHamiltonianPoint::new(m, &s.q, &s.p);
            let (qd, pd) = pt.forward(&s.tau);
            hamiltonian_terms(ctx, s, &qd, &pd, grad, |qd_bar, pd_bar, g| {
                pt.forward_backward(qd_bar, pd_bar, g);
            })
        }
        (kind, model) => Err(unsupported(kind, model)),
    }
}

fn hamiltonian_terms<B>(
    ctx: &LossContext,
    s: &Sample,
    qd: &DVector<f64>,
    pd: &DVector<f64>,
    grad: Option<&mut [f64]>,
    backward: B,
) -> Result<f64>
where
    B: FnOnce(&DVector<f64>, &DVector<f64>, &mut [f64]),
{
    let w = &ctx.weights;
    // ṗ_pred − ṗ is the negated residual ṗ + ∂ℋ/∂q − τ
    let rp = pd - &s.pd;
    let (wp, with_qd) = match ctx.kind {
        LossKind::Inverse => (&w.tau, false),
        _ => (&w.pd, true),
    };
    let mut loss = weighted_sq(&rp, wp);
    let rq = qd - &s.qd;
    let qd_bar = if with_qd {
        loss += weighted_sq(&rq, &w.qd);
        weighted_bar(&rq, &w.qd)
    } else {
        DVector::zeros(qd.len())
    };
    if let Some(g) = grad {
        backward(&qd_bar, &weighted_bar(&rp, wp), g);
    }
    Ok(loss)
}

/// State `(q, q̇)` or `(q, p)` of a sample and of its successor, in the
/// model's coordinates.
fn state_pair(model: &EnergyModel, s: &Sample) -> Result<(DVector<f64>, DVector<f64>)> {
    let next = s
        .next
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("state loss needs next-state samples".into()))?;
    Ok(if model.variant().is_hamiltonian() {
        (stack((s.q.clone(), s.p.clone())), stack((next.q.clone(), next.p.clone())))
    } else {
        (stack((s.q.clone(), s.qd.clone())), stack((next.q.clone(), next.qd.clone())))
    })
}

/// `‖x' − Φ_dt(x, τ)‖²` with `Φ` one Euler or RK4 step of the model.
fn state_sample_loss(model: &EnergyModel, s: &Sample, ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
    let (x, x_next) = state_pair(model, s)?;
    let u = &s.tau;
    let dt = ctx.dt;
    let Some(g) = grad else {
        let f = |x: &DVector<f64>| model.state_derivative(x, u);
        let pred = match ctx.kind {
            LossKind::StateEuler => &x + dt * f(&x)?,
            _ => {
                let k1 = f(&x)?;
                let k2 = f(&(&x + 0.5 * dt * &k1))?;
                let k3 = f(&(&x + 0.5 * dt * &k2))?;
                let k4 = f(&(&x + dt * &k3))?;
                &x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        return Ok((pred - x_next).norm_squared());
    };

    match ctx.kind {
        LossKind::StateEuler => {
            let k1 = model.state_derivative(&x, u)?;
            let r = &x + dt * k1 - x_next;
            model.state_derivative_vjp(&x, u, &(2.0 * dt * &r), g)?;
            Ok(r.norm_squared())
        }
        _ => {
            // forward pass keeps the stage points
            let k1 = model.state_derivative(&x, u)?;
            let x1 = &x + 0.5 * dt * &k1;
            let k2 = model.state_derivative(&x1, u)?;
            let x2 = &x + 0.5 * dt * &k2;
            let k3 = model.state_derivative(&x2, u)?;
            let x3 = &x + dt * &k3;
            let k4 = model.state_derivative(&x3, u)?;
            let r = &x + dt / 6.0 * (&k1 + 2.0 * &k2 + 2.0 * &k3 + &k4) - x_next;
            let out_bar = 2.0 * &r;
            // reverse through the stages; only parameter cotangents are kept
            let k4_bar = dt / 6.0 * &out_bar;
            let (_, x3_bar) = model.state_derivative_vjp(&x3, u, &k4_bar, g)?;
            let k3_bar = dt / 3.0 * &out_bar + dt * x3_bar;
            let (_, x2_bar) = model.state_derivative_vjp(&x2, u, &k3_bar, g)?;
            let k2_bar = dt / 3.0 * &out_bar + 0.5 * dt * x2_bar;
            let (_, x1_bar) = model.state_derivative_vjp(&x1, u, &k2_bar, g)?;
            let k1_bar = dt / 6.0 * &out_bar + 0.5 * dt * x1_bar;
            model.state_derivative_vjp(&x, u, &k1_bar, g)?;
            Ok(r.norm_squared())
        }
    }
}
