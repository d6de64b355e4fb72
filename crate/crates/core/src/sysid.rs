//! Linear-in-parameters system identification with ridge regularization
//! towards nominal parameters.

use nalgebra::{DMatrix, DVector};

use crate::energy_models::{MassPotential, Potential};
use crate::error::{Error, Result};
use crate::evaluation::Sample;
use crate::plants::{base, PlantKind};

/// Number of base parameters of a plant kind.
pub fn parameter_count(kind: PlantKind) -> usize {
    base::param_count(kind)
}

/// `A(q, q̇, q̈)` with `τ = A θ` for the base parameters `θ` of
/// [`Plant::base_parameters`](crate::plants::Plant::base_parameters).
pub fn build_regressor(
    kind: PlantKind,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    for v in [q, qd, qdd] {
        if v.len() != 2 {
            return Err(Error::InputShape { expected: 2, got: v.len() });
        }
    }
    Ok(base::regressor(kind, q, qd, qdd))
}

/// Stacked regressor and torque vector over samples.
pub fn stack(kind: PlantKind, samples: &[Sample]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = parameter_count(kind);
    let mut a = DMatrix::zeros(2 * samples.len(), k);
    let mut y = DVector::zeros(2 * samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rows = build_regressor(kind, &s.q, &s.qd, &s.qdd)?;
        a.view_mut((2 * i, 0), (2, k)).copy_from(&rows);
        y.rows_mut(2 * i, 2).copy_from(&s.tau);
    }
    Ok((a, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysIdFit {
    pub theta: DVector<f64>,
    /// Largest absolute torque residual on the fitting data.
    pub max_residual: f64,
    pub rms_residual: f64,
    /// Ratio of extreme singular values of the stacked regressor.
    pub condition_number: f64,
    /// Indices of recovered parameters that are not strictly positive.
    pub positivity_violations: Vec<usize>,
}

/// Ridge regression `θ* = θ₀ + (AᵀA + λ²I)⁻¹ Aᵀ(τ − Aθ₀)`, solved by QR on
/// the stacked system `[A; λI] δ = [τ − Aθ₀; 0]`.
pub fn fit(kind: PlantKind, samples: &[Sample], theta0: &DVector<f64>, lambda: f64) -> Result<SysIdFit> {
    let k = parameter_count(kind);
    if theta0.len() != k {
        return Err(Error::InputShape { expected: k, got: theta0.len() });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge weight must be non-negative, got {lambda}")));
    }
    let (a, y) = stack(kind, samples)?;
    if a.nrows() < k {
        return Err(Error::InvalidArgument(format!("need at least {k} torque rows, got {}", a.nrows())));
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if lambda == 0.0 {
        let tol = smax * f64::EPSILON * a.nrows().max(k) as f64;
        let nullity = sv.iter().filter(|&&s| s <= tol).count();
        if nullity > 0 {
            return Err(Error::RankDeficient { nullity });
        }
    }

    let r = &y - &a * theta0;
    let m = a.nrows();
    let mut stacked = DMatrix::zeros(m + k, k);
    stacked.view_mut((0, 0), (m, k)).copy_from(&a);
    for i in 0..k {
        stacked[(m + i, i)] = lambda;
    }
    let mut rhs = DVector::zeros(m + k);
    rhs.rows_mut(0, m).copy_from(&r);
    let qr = stacked.qr();
    let qtb = qr.q().transpose() * rhs;
    let delta = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { nullity: 1 })?;
    let theta = theta0 + delta;

    let res = &y - &a * &theta;
    let max_residual = res.amax();
    let rms_residual = (res.norm_squared() / m.max(1) as f64).sqrt();
    let positivity_violations = theta.iter().enumerate().filter(|(_, v)| !(**v > 0.0)).map(|(i, _)| i).collect();
    Ok(SysIdFit { theta, max_residual, rms_residual, condition_number, positivity_violations })
}

/// Regularized objective `‖τ − Aθ‖² + λ²‖θ − θ₀‖²`.
pub fn ridge_objective(
    kind: PlantKind,
    samples: &[Sample],
    theta: &DVector<f64>,
    theta0: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let (a, y) = stack(kind, samples)?;
    Ok((y - a * theta).norm_squared() + lambda * lambda * (theta - theta0).norm_squared())
}

/// Rigid-body model defined by identified base parameters; usable wherever
/// a mass matrix and potential are needed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParamModel {
    pub kind: PlantKind,
    pub theta: DVector<f64>,
}

impl LinearParamModel {
    pub fn new(kind: PlantKind, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != parameter_count(kind) {
            return Err(Error::InputShape { expected: parameter_count(kind), got: theta.len() });
        }
        Ok(Self { kind, theta })
    }

    /// `τ = A(q, q̇, q̈) θ`
    pub fn inverse(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(build_regressor(self.kind, q, qd, qdd)? * &self.theta)
    }

    pub fn energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let h = base::mass_matrix(self.kind, self.theta.as_slice(), q);
        0.5 * qd.dot(&(h * qd)) + base::potential(self.kind, self.theta.as_slice(), q)
    }
}

impl Potential for LinearParamModel {
    fn dof(&self) -> usize {
        2
    }
    fn potential(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        let th = self.theta.as_slice();
        (base::potential(self.kind, th, q), base::gravity(self.kind, th, q))
    }
}

impl MassPotential for LinearParamModel {
    fn mass_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let th = self.theta.as_slice();
        (base::mass_matrix(self.kind, th, q), base::mass_matrix_derivative(self.kind, th, q))
    }
}
