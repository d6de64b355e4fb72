//! Discrete-time LQR balancing around the upright equilibrium.

use nalgebra::{DMatrix, DVector};

use super::wrap_angle;
use crate::error::{Error, Result};
use crate::integrators::{rk4_step, PlantField, VectorField};
use crate::plants::Plant;

/// Jacobians `(A, B)` of one RK4 step `x⁺ = Φ(x, u)` at `(x0, u0)`, by
/// central differences. Only the columns in `inputs` enter `B`.
pub fn linearize<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    inputs: &[usize],
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = 1e-6;
    let nx = x0.len();
    let mut a = DMatrix::zeros(nx, nx);
    for j in 0..nx {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let d = (rk4_step(f, &xp, u0, 0.0, dt)? - rk4_step(f, &xm, u0, 0.0, dt)?) / (2.0 * h);
        a.set_column(j, &d);
    }
    let mut b = DMatrix::zeros(nx, inputs.len());
    for (c, &j) in inputs.iter().enumerate() {
        let mut up = u0.clone();
        let mut um = u0.clone();
        up[j] += h;
        um[j] -= h;
        let d = (rk4_step(f, x0, &up, 0.0, dt)? - rk4_step(f, x0, &um, 0.0, dt)?) / (2.0 * h);
        b.set_column(c, &d);
    }
    Ok((a, b))
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let k = s
            .clone()
            .lu()
            .solve(&(&btp * a))
            .ok_or_else(|| Error::InvalidArgument("Riccati iteration hit a singular input weight".into()))?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * k;
        let next = 0.5 * (&next + next.transpose());
        let change = (&next - &p).amax();
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-11 * p.amax().max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument("Riccati iteration did not converge".into()))
}

/// Feedback gain `K` with `u = −K x` for the linearized step.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = dare(a, b, q, r)?;
    let btp = b.transpose() * &p;
    (r + &btp * b)
        .lu()
        .solve(&(btp * a))
        .ok_or_else(|| Error::InvalidArgument("singular gain equation".into()))
}

/// Linear balancing law around a target state, active only while the
/// pendulum is within `catch_angle` of its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilizer {
    /// 1 × 2n gain on the single actuated input.
    pub gain: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Coordinates whose error is wrapped into `(−π, π]`.
    pub wrapped: Vec<usize>,
    pub pendulum: usize,
    pub catch_angle: f64,
}

impl Stabilizer {
    /// Balancing input, or `None` outside the catch region.
    pub fn control(&self, x: &DVector<f64>) -> Option<f64> {
        let mut e = x - &self.target;
        for &i in &self.wrapped {
            e[i] = wrap_angle(e[i]);
        }
        if e[self.pendulum].abs() > self.catch_angle {
            return None;
        }
        Some(-(&self.gain * e)[0])
    }
}

/// LQR balancing law for an underactuated plant, designed on the
/// frictionless analytic model linearized at its upright rest state.
pub fn upright_stabilizer(
    plant: &Plant,
    dt: f64,
    state_weights: &[f64],
    input_weight: f64,
    catch_angle: f64,
) -> Result<Stabilizer> {
    let kind = plant.kind();
    let pendulum = kind.pendulum_index().ok_or_else(|| Error::UnsupportedPlant(kind.to_string()))?;
    let n = plant.dof();
    if state_weights.len() != 2 * n {
        return Err(Error::InputShape { expected: 2 * n, got: state_weights.len() });
    }
    let target = plant.target_state();
    let x0 = DVector::from_iterator(2 * n, target.iter().copied().chain(std::iter::repeat(0.0).take(n)));
    let field = PlantField::frictionless(plant.clone());
    let (a, b) = linearize(&field, &x0, &DVector::zeros(n), &[1 - pendulum], dt)?;
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(state_weights));
    let gain = lqr_gain(&a, &b, &q, &DMatrix::from_element(1, 1, input_weight))?;
    let wrapped = (0..n).filter(|&i| kind.revolute()[i]).collect();
    Ok(Stabilizer { gain, target: x0, wrapped, pendulum, catch_angle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_riccati_closed_form() {
        // x⁺ = a x + b u, cost x² + u²: p = 1 + a²p − a²b²p²/(1 + b²p)
        let (a, b) = (1.2, 0.5);
        let p = dare(&dmatrix![a], &dmatrix![b], &dmatrix![1.0], &dmatrix![1.0]).unwrap()[0];
        let resid = 1.0 + a * a * p - a * a * b * b * p * p / (1.0 + b * b * p) - p;
        assert!(resid.abs() < 1e-9);
        let k = lqr_gain(&dmatrix![a], &dmatrix![b], &dmatrix![1.0], &dmatrix![1.0]).unwrap()[0];
        assert!((a - b * k).abs() < 1.0);
    }

    #[test]
    fn double_integrator_is_stabilized() {
        let dt = 0.01;
        let a = dmatrix![1.0, dt; 0.0, 1.0];
        let b = dmatrix![0.5 * dt * dt; dt];
        let k = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &dmatrix![0.1]).unwrap();
        let closed = &a - &b * &k;
        let rho = closed.complex_eigenvalues().iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        assert!(rho < 1.0);
    }
}
