//! Reverse-mode companions of the dynamics maps. Each point type caches
//! one model evaluation and pulls output cotangents back to the model
//! parameters (accumulated into a flat gradient laid out like
//! [`Parametric::params`](crate::energy_models::Parametric::params)) and to
//! the inputs.

use nalgebra::{DMatrix, DVector};

use super::{coriolis_from_terms, guard_condition, quadratic_terms, stack};
use crate::diffnet::Order;
use crate::energy_models::{
    BlackBoxHamiltonianModel, BlackBoxLagrangianModel, EnergyModel, MassEval, PotentialEval, ScalarEval,
    StructuredHamiltonianModel, StructuredLagrangianModel,
};
use crate::error::{Error, Result};

/// Gradient of `wᵀ c(q̇)` in `q̇`, `c = Ḣ q̇ − ½ (q̇ᵀ ∂H/∂q q̇)`.
fn coriolis_vjp(dh: &[DMatrix<f64>], qd: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let n = qd.len();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        out[j] = w.dot(&(&dh[j] * qd));
    }
    for (k, d) in dh.iter().enumerate() {
        out += d * w * qd[k] - d * qd * w[k];
    }
    out
}

/// `Σ_k` cotangent of `(vᵀ ∂A/∂q_k v)_k` weighted by `w_k`: `w_k v vᵀ`.
fn quadratic_bar(w: &DVector<f64>, v: &DVector<f64>, scale: f64) -> Vec<DMatrix<f64>> {
    let vv = v * v.transpose();
    w.iter().map(|wk| &vv * (scale * wk)).collect()
}

pub(crate) struct DelanPoint<'a> {
    model: &'a StructuredLagrangianModel,
    q: DVector<f64>,
    mass: MassEval<'a>,
    pot: PotentialEval<'a>,
}

impl<'a> DelanPoint<'a> {
    pub fn new(model: &'a StructuredLagrangianModel, q: &DVector<f64>) -> Self {
        Self {
            model,
            q: q.clone(),
            mass: model.mass_eval(q.as_slice()),
            pot: model.potential_eval(q.as_slice()),
        }
    }

    pub fn inverse(&self, qd: &DVector<f64>, qdd: &DVector<f64>) -> DVector<f64> {
        &self.mass.h * qdd + coriolis_from_terms(&self.mass.dh, qd) + &self.pot.grad
    }

    pub fn forward(&self, qd: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = tau - coriolis_from_terms(&self.mass.dh, qd) - &self.pot.grad;
        super::cholesky_solve(self.mass.h.clone(), &rhs)
    }

    fn backward_terms(
        &self,
        h_bar: &DMatrix<f64>,
        dh_bar: &[DMatrix<f64>],
        g_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> DVector<f64> {
        let split = self.model.mass.net.param_count();
        let (gm, gp) = grad.split_at_mut(split);
        let ft = &self.model.features;
        let q = self.q.as_slice();
        self.mass.backward(ft, q, h_bar, dh_bar, gm) + self.pot.backward(ft, q, 0.0, g_bar, gp)
    }

    /// Returns `(q̄, q̇̄, q̈̄)` for the torque cotangent `tau_bar`.
    pub fn inverse_backward(
        &self,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        tau_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let h_bar = tau_bar * qdd.transpose();
        let mut dh_bar = quadratic_bar(tau_bar, qd, -0.5);
        let outer = tau_bar * qd.transpose();
        for (k, d) in dh_bar.iter_mut().enumerate() {
            *d += &outer * qd[k];
        }
        let q_bar = self.backward_terms(&h_bar, &dh_bar, tau_bar, grad);
        let qd_bar = coriolis_vjp(&self.mass.dh, qd, tau_bar);
        let qdd_bar = &self.mass.h * tau_bar;
        (q_bar, qd_bar, qdd_bar)
    }

    /// Returns `(q̄, q̇̄, τ̄)` for the acceleration cotangent `qdd_bar`;
    /// `qdd` is the forward output at the same point.
    pub fn forward_backward(
        &self,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        qdd_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let b = self
            .mass
            .h
            .clone()
            .cholesky()
            .expect("mass matrix is positive definite")
            .solve(qdd_bar);
        let h_bar = -(&b * qdd.transpose());
        let mut dh_bar = quadratic_bar(&b, qd, 0.5);
        let outer = &b * qd.transpose();
        for (k, d) in dh_bar.iter_mut().enumerate() {
            *d -= &outer * qd[k];
        }
        let q_bar = self.backward_terms(&h_bar, &dh_bar, &(-&b), grad);
        let qd_bar = -coriolis_vjp(&self.mass.dh, qd, &b);
        (q_bar, qd_bar, b)
    }
}

pub(crate) struct HnnPoint<'a> {
    model: &'a StructuredHamiltonianModel,
    q: DVector<f64>,
    mass: MassEval<'a>,
    pot: PotentialEval<'a>,
}

impl<'a> HnnPoint<'a> {
    pub fn new(model: &'a StructuredHamiltonianModel, q: &DVector<f64>) -> Self {
        Self {
            model,
            q: q.clone(),
            mass: model.mass_eval(q.as_slice()),
            pot: model.potential_eval(q.as_slice()),
        }
    }

    pub fn forward(&self, p: &DVector<f64>, tau: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qd = &self.mass.h * p;
        let pd = tau - 0.5 * quadratic_terms(&self.mass.dh, p) - &self.pot.grad;
        (qd, pd)
    }

    /// Returns `(q̄, p̄, τ̄)` for cotangents of `(q̇, ṗ)`.
    pub fn forward_backward(
        &self,
        p: &DVector<f64>,
        qd_bar: &DVector<f64>,
        pd_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let b_bar = qd_bar * p.transpose();
        let db_bar = quadratic_bar(pd_bar, p, -0.5);
        let mut p_bar = &self.mass.h * qd_bar;
        for (k, d) in self.mass.dh.iter().enumerate() {
            p_bar -= d * p * pd_bar[k];
        }
        let split = self.model.inv_mass.net.param_count();
        let (gm, gp) = grad.split_at_mut(split);
        let ft = &self.model.features;
        let q = self.q.as_slice();
        let q_bar = self.mass.backward(ft, q, &b_bar, &db_bar, gm) + self.pot.backward(ft, q, 0.0, &(-pd_bar), gp);
        (q_bar, p_bar, pd_bar.clone())
    }
}

pub(crate) struct BlackBoxLagrangianPoint<'a> {
    model: &'a BlackBoxLagrangianModel,
    q: DVector<f64>,
    qd: DVector<f64>,
    eval: ScalarEval<'a>,
    m: DMatrix<f64>,
}

impl<'a> BlackBoxLagrangianPoint<'a> {
    pub fn new(model: &'a BlackBoxLagrangianModel, q: &DVector<f64>, qd: &DVector<f64>) -> Self {
        let eval = model.eval(q.as_slice(), qd.as_slice(), Order::Hessian);
        let n = q.len();
        let m = &eval.hess_vv + DMatrix::identity(n, n) * model.hessian_damping;
        Self { model, q: q.clone(), qd: qd.clone(), eval, m }
    }

    pub fn inverse(&self, qdd: &DVector<f64>) -> DVector<f64> {
        &self.m * qdd + &self.eval.hess_vq * &self.qd - &self.eval.grad_q
    }

    pub fn forward(&self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        guard_condition(&self.m, self.model.condition_bound)?;
        let rhs = tau - &self.eval.hess_vq * &self.qd + &self.eval.grad_q;
        self.m
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::NearSingularHessian { condition: f64::INFINITY })
    }

    fn backward_terms(
        &self,
        vv_bar: &DMatrix<f64>,
        vq_bar: &DMatrix<f64>,
        gq_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let zero = DVector::zeros(self.q.len());
        self.eval.backward(
            &self.model.features,
            self.q.as_slice(),
            0.0,
            gq_bar,
            &zero,
            Some((vv_bar, vq_bar)),
            grad,
        )
    }

    /// Returns `(q̄, q̇̄, q̈̄)`.
    pub fn inverse_backward(
        &self,
        qdd: &DVector<f64>,
        tau_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let vv_bar = tau_bar * qdd.transpose();
        let vq_bar = tau_bar * self.qd.transpose();
        let (q_bar, v_bar) = self.backward_terms(&vv_bar, &vq_bar, &(-tau_bar), grad);
        let qd_bar = v_bar + self.eval.hess_vq.transpose() * tau_bar;
        (q_bar, qd_bar, &self.m * tau_bar)
    }

    /// Returns `(q̄, q̇̄, τ̄)`; `qdd` is the forward output.
    pub fn forward_backward(
        &self,
        qdd: &DVector<f64>,
        qdd_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let b = self
            .m
            .transpose()
            .lu()
            .solve(qdd_bar)
            .ok_or(Error::NearSingularHessian { condition: f64::INFINITY })?;
        let vv_bar = -(&b * qdd.transpose());
        let vq_bar = -(&b * self.qd.transpose());
        let (q_bar, v_bar) = self.backward_terms(&vv_bar, &vq_bar, &b, grad);
        let qd_bar = v_bar - self.eval.hess_vq.transpose() * &b;
        Ok((q_bar, qd_bar, b))
    }
}

pub(crate) struct BlackBoxHamiltonianPoint<'a> {
    model: &'a BlackBoxHamiltonianModel,
    q: DVector<f64>,
    eval: ScalarEval<'a>,
}

impl<'a> BlackBoxHamiltonianPoint<'a> {
    pub fn new(model: &'a BlackBoxHamiltonianModel, q: &DVector<f64>, p: &DVector<f64>) -> Self {
        let eval = model.eval(q.as_slice(), p.as_slice(), Order::Jacobian);
        Self { model, q: q.clone(), eval }
    }

    pub fn forward(&self, tau: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.eval.grad_v.clone(), tau - &self.eval.grad_q)
    }

    /// Returns `(q̄, p̄, τ̄)`.
    pub fn forward_backward(
        &self,
        qd_bar: &DVector<f64>,
        pd_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (q_bar, p_bar) = self.eval.backward(
            &self.model.features,
            self.q.as_slice(),
            0.0,
            &(-pd_bar),
            qd_bar,
            None,
            grad,
        );
        (q_bar, p_bar, pd_bar.clone())
    }
}

impl EnergyModel {
    /// State derivative `ẋ` at `(x, u)` and the cotangent of `x` for the
    /// output cotangent `xdot_bar`; parameter cotangents accumulate into
    /// `grad`.
    pub(crate) fn state_derivative_vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        xdot_bar: &DVector<f64>,
        grad: &mut [f64],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.dof();
        let q = x.rows(0, n).into_owned();
        let v = x.rows(n, n).into_owned();
        let top_bar = xdot_bar.rows(0, n).into_owned();
        let bottom_bar = xdot_bar.rows(n, n).into_owned();
        match self {
            EnergyModel::StructuredLagrangian(m) => {
                let pt = DelanPoint::new(m, &q);
                let qdd = pt.forward(&v, u)?;
                let (q_bar, qd_bar, _) = pt.forward_backward(&v, &qdd, &bottom_bar, grad);
                Ok((stack((v, qdd)), stack((q_bar, qd_bar + top_bar))))
            }
            EnergyModel::BlackBoxLagrangian(m) => {
                let pt = BlackBoxLagrangianPoint::new(m, &q, &v);
                let qdd = pt.forward(u)?;
                let (q_bar, qd_bar, _) = pt.forward_backward(&qdd, &bottom_bar, grad)?;
                Ok((stack((v, qdd)), stack((q_bar, qd_bar + top_bar))))
            }
            EnergyModel::StructuredHamiltonian(m) => {
                let pt = HnnPoint::new(m, &q);
                let out = pt.forward(&v, u);
                let (q_bar, p_bar, _) = pt.forward_backward(&v, &top_bar, &bottom_bar, grad);
                Ok((stack(out), stack((q_bar, p_bar))))
            }
            EnergyModel::BlackBoxHamiltonian(m) => {
                let pt = BlackBoxHamiltonianPoint::new(m, &q, &v);
                let out = pt.forward(u);
                let (q_bar, p_bar, _) = pt.forward_backward(&top_bar, &bottom_bar, grad);
                Ok((stack(out), stack((q_bar, p_bar))))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Activation;
    use crate::energy_models::{FeatureKind, FeatureTransform, ModelConfig, ModelVariant, Parametric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(variant: ModelVariant, seed: u64) -> EnergyModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ft = FeatureTransform::new(vec![FeatureKind::SinCos, FeatureKind::Identity]).unwrap();
        let cfg = ModelConfig { hidden: vec![7, 6], activation: Activation::Softplus, ..Default::default() };
        let mut m = EnergyModel::new(variant, ft, &cfg, &mut rng).unwrap();
        let mut p = m.params();
        for v in p.iter_mut() {
            *v += 0.2 * rng.random_range(-1.0..1.0);
        }
        m.set_params(&p).unwrap();
        m
    }

    fn vec2(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5))
    }

    fn close(fd: f64, an: f64) -> bool {
        (fd - an).abs() <= 1e-6 + 1e-5 * an.abs().max(fd.abs())
    }

    /// Checks parameter and input gradients of `f(model, inputs)` against
    /// central differences.
    fn check<F, G>(m: &EnergyModel, inputs: &[DVector<f64>], f: F, analytic: G)
    where
        F: Fn(&EnergyModel, &[DVector<f64>]) -> f64,
        G: Fn(&EnergyModel, &[DVector<f64>], &mut [f64]) -> Vec<DVector<f64>>,
    {
        let mut grad = vec![0.0; m.param_count()];
        let input_bars = analytic(m, inputs, &mut grad);
        let h = 1e-6;
        let p0 = m.params();
        for i in 0..p0.len() {
            let mut mp = m.clone();
            let mut pp = p0.clone();
            pp[i] += h;
            mp.set_params(&pp).unwrap();
            let fp = f(&mp, inputs);
            pp[i] -= 2.0 * h;
            mp.set_params(&pp).unwrap();
            let fm = f(&mp, inputs);
            let fd = (fp - fm) / (2.0 * h);
            assert!(close(fd, grad[i]), "param {i}: fd {fd} vs {}", grad[i]);
        }
        for (a, bar) in input_bars.iter().enumerate() {
            for k in 0..bar.len() {
                let mut xp = inputs.to_vec();
                xp[a][k] += h;
                let fp = f(m, &xp);
                xp[a][k] -= 2.0 * h;
                let fm = f(m, &xp);
                let fd = (fp - fm) / (2.0 * h);
                assert!(close(fd, bar[k]), "input {a}[{k}]: fd {fd} vs {}", bar[k]);
            }
        }
    }

    #[test]
    fn delan_inverse_and_forward_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(ModelVariant::StructuredLagrangian, 1);
        let w = vec2(&mut rng);
        let inputs = [vec2(&mut rng), vec2(&mut rng), vec2(&mut rng)];
        let w1 = w.clone();
        check(
            &m,
            &inputs,
            |m, x| match m {
                EnergyModel::StructuredLagrangian(s) => w1.dot(&DelanPoint::new(s, &x[0]).inverse(&x[1], &x[2])),
                _ => unreachable!(),
            },
            |m, x, g| match m {
                EnergyModel::StructuredLagrangian(s) => {
                    let (a, b, c) = DelanPoint::new(s, &x[0]).inverse_backward(&x[1], &x[2], &w, g);
                    vec![a, b, c]
                }
                _ => unreachable!(),
            },
        );
        check(
            &m,
            &inputs,
            |m, x| match m {
                EnergyModel::StructuredLagrangian(s) => w.dot(&DelanPoint::new(s, &x[0]).forward(&x[1], &x[2]).unwrap()),
                _ => unreachable!(),
            },
            |m, x, g| match m {
                EnergyModel::StructuredLagrangian(s) => {
                    let pt = DelanPoint::new(s, &x[0]);
                    let qdd = pt.forward(&x[1], &x[2]).unwrap();
                    let (a, b, c) = pt.forward_backward(&x[1], &qdd, &w, g);
                    vec![a, b, c]
                }
                _ => unreachable!(),
            },
        );
    }

    #[test]
    fn blackbox_lagrangian_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = model(ModelVariant::BlackBoxLagrangian, 2);
        let w = vec2(&mut rng);
        let inputs = [vec2(&mut rng), vec2(&mut rng), vec2(&mut rng)];
        let w1 = w.clone();
        check(
            &m,
            &inputs,
            |m, x| match m {
                EnergyModel::BlackBoxLagrangian(s) => {
                    w1.dot(&BlackBoxLagrangianPoint::new(s, &x[0], &x[1]).inverse(&x[2]))
                }
                _ => unreachable!(),
            },
            |m, x, g| match m {
                EnergyModel::BlackBoxLagrangian(s) => {
                    let (a, b, c) = BlackBoxLagrangianPoint::new(s, &x[0], &x[1]).inverse_backward(&x[2], &w, g);
                    vec![a, b, c]
                }
                _ => unreachable!(),
            },
        );
        check(
            &m,
            &inputs,
            |m, x| match m {
                EnergyModel::BlackBoxLagrangian(s) => {
                    w.dot(&BlackBoxLagrangianPoint::new(s, &x[0], &x[1]).forward(&x[2]).unwrap())
                }
                _ => unreachable!(),
            },
            |m, x, g| match m {
                EnergyModel::BlackBoxLagrangian(s) => {
                    let pt = BlackBoxLagrangianPoint::new(s, &x[0], &x[1]);
                    let qdd = pt.forward(&x[2]).unwrap();
                    let (a, b, c) = pt.forward_backward(&qdd, &w, g).unwrap();
                    vec![a, b, c]
                }
                _ => unreachable!(),
            },
        );
    }

    #[test]
    fn state_derivative_adjoints_all_variants() {
        for (seed, variant) in ModelVariant::ALL.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed as u64);
            let m = model(variant, 20 + seed as u64);
            let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let x = DVector::from_fn(4, |_, _| rng.random_range(-1.5..1.5));
            let u = vec2(&mut rng);
            let w1 = w.clone();
            check(
                &m,
                &[x, u],
                |m, x| w1.dot(&m.state_derivative(&x[0], &x[1]).unwrap()),
                |m, x, g| {
                    let (xd, xb) = m.state_derivative_vjp(&x[0], &x[1], &w, g).unwrap();
                    assert_eq!(xd, m.state_derivative(&x[0], &x[1]).unwrap());
                    vec![xb]
                },
            );
        }
    }
}
