//! Fixed-step explicit integrators and rollouts.
//!
//! Controls are held constant over a step (zero-order hold) for every RK4
//! stage. Timestamps are always `k·dt`, never accumulated sums.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::energy_models::EnergyModel;
use crate::error::{Error, Result};
use crate::plants::{FrictionModel, Plant};

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// `ẋ = f(x, u, t)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>>;
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        (self.f)(x, u, t)
    }
}

/// Analytic plant dynamics on the state `(q, q̇)`.
#[derive(Debug, Clone)]
pub struct PlantField {
    pub plant: Plant,
    pub friction: FrictionModel,
}

impl PlantField {
    pub fn new(plant: Plant, friction: FrictionModel) -> Self {
        Self { plant, friction }
    }

    pub fn frictionless(plant: Plant) -> Self {
        Self { plant, friction: FrictionModel::none() }
    }
}

impl VectorField for PlantField {
    fn dim(&self) -> usize {
        2 * self.plant.dof()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        let n = self.plant.dof();
        if x.len() != 2 * n || u.len() != n {
            return Err(Error::InputShape { expected: 2 * n, got: x.len() });
        }
        let q = x.rows(0, n).into_owned();
        let qd = x.rows(n, n).into_owned();
        let qdd = self.plant.forward(&q, &qd, u, &self.friction);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&qd);
        out.rows_mut(n, n).copy_from(&qdd);
        Ok(out)
    }
}

impl VectorField for EnergyModel {
    fn dim(&self) -> usize {
        2 * self.dof()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        self.state_derivative(x, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::InvalidArgument(format!("unknown integrator '{other}'"))),
        }
    }
}

fn finite(v: DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NumericOverflow { index: 0 })
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// `x' = x + dt·f(x, u, t)`
pub fn euler_step<F: VectorField + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    check_dt(dt)?;
    let k1 = finite(f.eval(x, u, t)?)?;
    Ok(x + k1 * dt)
}

/// Classical four-stage Runge-Kutta step.
pub fn rk4_step<F: VectorField + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    check_dt(dt)?;
    let half = 0.5 * dt;
    let k1 = finite(f.eval(x, u, t)?)?;
    let k2 = finite(f.eval(&(x + &k1 * half), u, t + half)?)?;
    let k3 = finite(f.eval(&(x + &k2 * half), u, t + half)?)?;
    let k4 = finite(f.eval(&(x + &k3 * dt), u, t + dt)?)?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

pub fn step<F: VectorField + ?Sized>(
    scheme: Scheme,
    f: &F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    match scheme {
        Scheme::Euler => euler_step(f, x, u, t, dt),
        Scheme::Rk4 => rk4_step(f, x, u, t, dt),
    }
}

/// Uniformly sampled rollout. `controls[k]` is applied on `[k·dt, (k+1)·dt)`;
/// `energies` is empty when no energy function was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64) -> Self {
        Self { dt, states: Vec::new(), controls: Vec::new(), energies: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// First `n` components of every state.
    pub fn positions(&self, n: usize) -> Vec<DVector<f64>> {
        self.states.iter().map(|x| x.rows(0, n).into_owned()).collect()
    }

    /// Duration covered, `(len − 1)·dt`.
    pub fn horizon(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Abort once any state component exceeds this magnitude.
    pub divergence_bound: f64,
}

impl RolloutOptions {
    pub fn new(scheme: Scheme, dt: f64, steps: usize) -> Self {
        Self { scheme, dt, steps, divergence_bound: DEFAULT_DIVERGENCE_BOUND }
    }
}

/// Energy along a rollout, evaluated on the state.
pub type EnergyFn<'a> = &'a dyn Fn(&DVector<f64>) -> Result<f64>;

/// Rolls out until the horizon or the first failure. The returned
/// trajectory holds every state reached before the failure.
pub fn rollout_until_failure<F, P>(
    f: &F,
    x0: &DVector<f64>,
    mut policy: P,
    opts: &RolloutOptions,
    energy: Option<EnergyFn<'_>>,
) -> (Trajectory, Option<Error>)
where
    F: VectorField + ?Sized,
    P: FnMut(usize, f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut traj = Trajectory::new(opts.dt);
    if let Err(e) = check_dt(opts.dt) {
        return (traj, Some(e));
    }
    if opts.steps == 0 {
        return (traj, Some(Error::InvalidArgument("rollout needs at least one step".into())));
    }
    let record_energy = |traj: &mut Trajectory, x: &DVector<f64>| -> Result<()> {
        if let Some(e) = energy {
            traj.energies.push(e(x)?);
        }
        Ok(())
    };
    if let Err(e) = record_energy(&mut traj, x0) {
        return (traj, Some(e));
    }
    traj.states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..opts.steps {
        let t = traj.time(k);
        let next = policy(k, t, &x).and_then(|u| {
            let x_next = step(opts.scheme, f, &x, &u, t, opts.dt)?;
            Ok((u, x_next))
        });
        let (u, x_next) = match next {
            Ok(v) => v,
            Err(Error::NumericOverflow { .. }) => {
                return (traj, Some(Error::DivergedRollout { step: k + 1, magnitude: f64::INFINITY }))
            }
            Err(e) => return (traj, Some(e)),
        };
        let magnitude = x_next.iter().fold(0.0_f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY });
        if !(magnitude <= opts.divergence_bound) {
            return (traj, Some(Error::DivergedRollout { step: k + 1, magnitude }));
        }
        traj.controls.push(u);
        if let Err(e) = record_energy(&mut traj, &x_next) {
            return (traj, Some(e));
        }
        traj.states.push(x_next.clone());
        x = x_next;
    }
    (traj, None)
}

/// Rollout of `steps` steps from `x0`; the result has `steps + 1` states.
pub fn rollout<F, P>(
    f: &F,
    x0: &DVector<f64>,
    policy: P,
    opts: &RolloutOptions,
    energy: Option<EnergyFn<'_>>,
) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    P: FnMut(usize, f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    match rollout_until_failure(f, x0, policy, opts, energy) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Open-loop rollout applying `controls[k]` at step `k`.
pub fn rollout_sequence<F: VectorField + ?Sized>(
    f: &F,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    scheme: Scheme,
    dt: f64,
    energy: Option<EnergyFn<'_>>,
) -> Result<Trajectory> {
    let opts = RolloutOptions::new(scheme, dt, controls.len());
    rollout(f, x0, |k, _, _| Ok(controls[k].clone()), &opts, energy)
}
