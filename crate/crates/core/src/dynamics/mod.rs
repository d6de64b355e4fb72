//! Forward, inverse and decomposition maps derived from energy models via
//! the Euler-Lagrange equation or Hamilton's equations.
//!
//! Conventions: `(q̇ᵀ ∂H/∂q q̇)` is the vector whose `k`-th entry is
//! `q̇ᵀ (∂H/∂q_k) q̇`, and `Ḣ = Σ_k (∂H/∂q_k) q̇_k`.

pub(crate) mod adjoint;

use nalgebra::{DMatrix, DVector};

use crate::diffnet::Order;
use crate::energy_models::{
    check_dim, BlackBoxHamiltonianModel, BlackBoxLagrangianModel, EnergyModel, InverseMassPotential,
    MassPotential,
};
use crate::error::{Error, Result};

/// Inverse-model torque split into its physical components.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceDecomposition {
    /// `H q̈`
    pub inertial: DVector<f64>,
    /// `Ḣ q̇ − ½ (q̇ᵀ ∂H/∂q q̇)`
    pub coriolis: DVector<f64>,
    /// `∂V/∂q`
    pub gravitational: DVector<f64>,
}

impl ForceDecomposition {
    pub fn total(&self) -> DVector<f64> {
        &self.inertial + &self.coriolis + &self.gravitational
    }
}

/// `(vᵀ ∂A/∂q_k v)_k`
pub(crate) fn quadratic_terms(da: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(da.len(), da.iter().map(|d| v.dot(&(d * v))))
}

/// `Σ_k v_k ∂A/∂q_k`
pub(crate) fn rate(da: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    da.iter().zip(v.iter()).fold(DMatrix::zeros(n, n), |acc, (d, vk)| acc + d * *vk)
}

/// Centripetal and Coriolis forces `Ḣ q̇ − ½ (q̇ᵀ ∂H/∂q q̇)`.
pub fn coriolis_from_terms(dh: &[DMatrix<f64>], qd: &DVector<f64>) -> DVector<f64> {
    rate(dh, qd) * qd - 0.5 * quadratic_terms(dh, qd)
}

fn check3(n: usize, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<()> {
    check_dim(n, a)?;
    check_dim(n, b)?;
    check_dim(n, c)
}

pub fn delan_decompose<M: MassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<ForceDecomposition> {
    check3(model.dof(), q, qd, qdd)?;
    let (h, dh) = model.mass_matrix(q);
    let (_, g) = model.potential(q);
    Ok(ForceDecomposition {
        inertial: h * qdd,
        coriolis: coriolis_from_terms(&dh, qd),
        gravitational: g,
    })
}

/// `τ = H q̈ + Ḣ q̇ − ½ (q̇ᵀ ∂H/∂q q̇) + ∂V/∂q`
pub fn delan_inverse<M: MassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(delan_decompose(model, q, qd, qdd)?.total())
}

/// `q̈ = H⁻¹ [τ − Ḣ q̇ + ½ (q̇ᵀ ∂H/∂q q̇) − ∂V/∂q]`, solved by Cholesky.
pub fn delan_forward<M: MassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    check3(model.dof(), q, qd, tau)?;
    let (h, dh) = model.mass_matrix(q);
    let (_, g) = model.potential(q);
    let rhs = tau - coriolis_from_terms(&dh, qd) - g;
    cholesky_solve(h, &rhs)
}

pub(crate) fn cholesky_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = h
        .cholesky()
        .ok_or(Error::NearSingularHessian { condition: f64::INFINITY })?;
    Ok(chol.solve(rhs))
}

/// `dE/dt = (∂E/∂q) q̇ + (∂E/∂q̇) q̈` for `E = ½ q̇ᵀ H q̇ + V`.
pub fn delan_energy_rate<M: MassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<f64> {
    check3(model.dof(), q, qd, qdd)?;
    let (h, dh) = model.mass_matrix(q);
    let (_, g) = model.potential(q);
    let de_dq = 0.5 * quadratic_terms(&dh, qd) + g;
    Ok(de_dq.dot(qd) + (h * qd).dot(qdd))
}

/// Hamilton's equations with control: `q̇ = B p`,
/// `ṗ = −½ (pᵀ ∂B/∂q p) − ∂V/∂q + τ`.
pub fn hnn_forward<M: InverseMassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    p: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check3(model.dof(), q, p, tau)?;
    let (b, db) = model.inverse_mass_matrix(q);
    let (_, g) = model.potential(q);
    let qd = b * p;
    let pd = tau - 0.5 * quadratic_terms(&db, p) - g;
    Ok((qd, pd))
}

/// `τ = ṗ + ∂ℋ/∂q = ṗ + ½ (pᵀ ∂B/∂q p) + ∂V/∂q`
pub fn hnn_inverse<M: InverseMassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    p: &DVector<f64>,
    pd: &DVector<f64>,
) -> Result<DVector<f64>> {
    check3(model.dof(), q, p, pd)?;
    let (_, db) = model.inverse_mass_matrix(q);
    let (_, g) = model.potential(q);
    Ok(pd + 0.5 * quadratic_terms(&db, p) + g)
}

/// `dℋ/dt = (∂ℋ/∂q) q̇ + (∂ℋ/∂p) ṗ` for `ℋ = ½ pᵀ B p + V`.
pub fn hnn_energy_rate<M: InverseMassPotential + ?Sized>(
    model: &M,
    q: &DVector<f64>,
    p: &DVector<f64>,
    qd: &DVector<f64>,
    pd: &DVector<f64>,
) -> Result<f64> {
    check3(model.dof(), q, p, qd)?;
    check_dim(model.dof(), pd)?;
    let (b, db) = model.inverse_mass_matrix(q);
    let (_, g) = model.potential(q);
    let dh_dq = 0.5 * quadratic_terms(&db, p) + g;
    Ok(dh_dq.dot(qd) + (b * p).dot(pd))
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rejects matrices whose condition number exceeds `bound`.
pub fn guard_condition(m: &DMatrix<f64>, bound: f64) -> Result<()> {
    let condition = condition_number(m);
    if !(condition <= bound) {
        return Err(Error::NearSingularHessian { condition });
    }
    Ok(())
}

/// Black-box Lagrangian terms at `(q, q̇)`: damped velocity Hessian
/// `M = ∂²L/∂q̇² + δI`, mixed Hessian `K = ∂²L/∂q̇∂q` and `∂L/∂q`.
pub(crate) fn blackbox_lagrangian_terms(
    model: &BlackBoxLagrangianModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let e = model.eval(q.as_slice(), qd.as_slice(), Order::Hessian);
    let n = q.len();
    let m = &e.hess_vv + DMatrix::identity(n, n) * model.hessian_damping;
    (m, e.hess_vq, e.grad_q)
}

/// Solves `(∂²L/∂q̇² + δI) q̈ = τ − (∂²L/∂q̇∂q) q̇ + ∂L/∂q`.
pub fn blackbox_lagrangian_forward(
    model: &BlackBoxLagrangianModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    check3(model.dof(), q, qd, tau)?;
    let (m, k, lq) = blackbox_lagrangian_terms(model, q, qd);
    guard_condition(&m, model.condition_bound)?;
    let rhs = tau - k * qd + lq;
    m.lu()
        .solve(&rhs)
        .ok_or(Error::NearSingularHessian { condition: f64::INFINITY })
}

/// `τ = (∂²L/∂q̇² + δI) q̈ + (∂²L/∂q̇∂q) q̇ − ∂L/∂q`
pub fn blackbox_lagrangian_inverse(
    model: &BlackBoxLagrangianModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<DVector<f64>> {
    check3(model.dof(), q, qd, qdd)?;
    let (m, k, lq) = blackbox_lagrangian_terms(model, q, qd);
    Ok(m * qdd + k * qd - lq)
}

/// `q̇ = ∂ℋ/∂p`, `ṗ = −∂ℋ/∂q + τ`
pub fn blackbox_hamiltonian_forward(
    model: &BlackBoxHamiltonianModel,
    q: &DVector<f64>,
    p: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check3(model.dof(), q, p, tau)?;
    let e = model.eval(q.as_slice(), p.as_slice(), Order::Jacobian);
    Ok((e.grad_v, tau - e.grad_q))
}

/// `τ = ṗ + ∂ℋ/∂q`
pub fn blackbox_hamiltonian_inverse(
    model: &BlackBoxHamiltonianModel,
    q: &DVector<f64>,
    p: &DVector<f64>,
    pd: &DVector<f64>,
) -> Result<DVector<f64>> {
    check3(model.dof(), q, p, pd)?;
    let e = model.eval(q.as_slice(), p.as_slice(), Order::Jacobian);
    Ok(pd + e.grad_q)
}

impl EnergyModel {
    /// Forward dynamics in the model's own coordinates: `q̈` for Lagrangian
    /// variants at `(q, q̇)`, and `(q̇, ṗ)` stacked for Hamiltonian variants
    /// at `(q, p)`.
    pub fn forward(&self, q: &DVector<f64>, v: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            EnergyModel::StructuredLagrangian(m) => delan_forward(m, q, v, tau),
            EnergyModel::BlackBoxLagrangian(m) => blackbox_lagrangian_forward(m, q, v, tau),
            EnergyModel::StructuredHamiltonian(m) => hnn_forward(m, q, v, tau).map(stack),
            EnergyModel::BlackBoxHamiltonian(m) => blackbox_hamiltonian_forward(m, q, v, tau).map(stack),
        }
    }

    /// Inverse dynamics in the model's own coordinates: from `(q, q̇, q̈)` or
    /// `(q, p, ṗ)`.
    pub fn inverse(&self, q: &DVector<f64>, v: &DVector<f64>, v_dot: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            EnergyModel::StructuredLagrangian(m) => delan_inverse(m, q, v, v_dot),
            EnergyModel::BlackBoxLagrangian(m) => blackbox_lagrangian_inverse(m, q, v, v_dot),
            EnergyModel::StructuredHamiltonian(m) => hnn_inverse(m, q, v, v_dot),
            EnergyModel::BlackBoxHamiltonian(m) => blackbox_hamiltonian_inverse(m, q, v, v_dot),
        }
    }

    /// Time derivative of the state `x = (q, v)` under control `tau`.
    pub fn state_derivative(&self, x: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dof();
        if x.len() != 2 * n {
            return Err(Error::InputShape { expected: 2 * n, got: x.len() });
        }
        let q = x.rows(0, n).into_owned();
        let v = x.rows(n, n).into_owned();
        let out = self.forward(&q, &v, tau)?;
        if self.variant().is_hamiltonian() {
            Ok(out)
        } else {
            Ok(stack((v, out)))
        }
    }
}

/// Concatenates two vectors, e.g. `(q, q̇)` into a state.
pub fn stack((a, b): (DVector<f64>, DVector<f64>)) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(&a);
    out.rows_mut(a.len(), b.len()).copy_from(&b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn condition_guard() {
        let m = dmatrix![1.0, 0.0; 0.0, 1e-9];
        assert!((condition_number(&m) - 1e9).abs() < 1.0);
        assert!(matches!(guard_condition(&m, 1e8), Err(Error::NearSingularHessian { .. })));
        assert!(guard_condition(&DMatrix::identity(2, 2), 1e8).is_ok());
        assert_eq!(condition_number(&DMatrix::zeros(2, 2)), f64::INFINITY);
    }
}
