//! Model-based controllers and the closed-loop simulation harness.

mod closed_loop;
mod desired;
mod lqr;

pub use closed_loop::{
    closed_loop_simulate, episode_to_csv, swing_up_success, tracking_mse, write_episode, ClosedLoopOptions,
    ControlMetrics, SWING_UP_ANGLE_TOL, SWING_UP_VELOCITY_TOL, SWING_UP_WINDOW,
};
pub use desired::{ChirpJoint, ChirpSpec, DesiredTrajectory};
pub use lqr::{dare, linearize, lqr_gain, upright_stabilizer, Stabilizer};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::delan_inverse;
use crate::energy_models::{EnergyModel, InverseMassPotential};
use crate::error::{Error, Result};
use crate::plants::{sign0, FrictionModel, Plant, PlantKind};
use crate::sysid::LinearParamModel;

/// What a controller needs from a dynamics model, in `(q, q̇)` coordinates.
pub trait ControlModel {
    fn dof(&self) -> usize;

    /// Torque realizing `q̈` at `(q, q̇)`.
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>>;

    /// Total energy at `(q, q̇)`.
    fn energy(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> Result<f64> {
        Err(Error::InvalidArgument("model does not provide an energy".into()))
    }
}

impl ControlModel for Plant {
    fn dof(&self) -> usize {
        Plant::dof(self)
    }
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inverse(q, qd, qdd, &FrictionModel::none()))
    }
    fn energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        Ok(Plant::energy(self, q, qd))
    }
}

impl ControlModel for LinearParamModel {
    fn dof(&self) -> usize {
        2
    }
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        delan_inverse(self, q, qd, qdd)
    }
    fn energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        Ok(LinearParamModel::energy(self, q, qd))
    }
}

/// Lagrangian variants work on `(q, q̇)` directly. The structured
/// Hamiltonian converts through `p = B⁻¹ q̇`; the black-box Hamiltonian has
/// no way to recover momenta from velocities and is rejected.
impl ControlModel for EnergyModel {
    fn dof(&self) -> usize {
        EnergyModel::dof(self)
    }

    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            EnergyModel::StructuredLagrangian(_) | EnergyModel::BlackBoxLagrangian(_) => self.inverse(q, qd, qdd),
            EnergyModel::StructuredHamiltonian(m) => {
                let (b, db) = m.inverse_mass_matrix(q);
                let h = inverse_spd(&b)?;
                let b_rate = db.iter().zip(qd.iter()).fold(DMatrix::zeros(b.nrows(), b.ncols()), |acc, (d, v)| acc + d * *v);
                let h_rate = -(&h * b_rate * &h);
                let p = &h * qd;
                let pd = h_rate * qd + &h * qdd;
                self.inverse(q, &p, &pd)
            }
            EnergyModel::BlackBoxHamiltonian(_) => Err(unsupported_hamiltonian()),
        }
    }

    fn energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        match self {
            EnergyModel::StructuredLagrangian(_) | EnergyModel::BlackBoxLagrangian(_) => self.energy_value(q, qd),
            EnergyModel::StructuredHamiltonian(m) => {
                let (b, _) = m.inverse_mass_matrix(q);
                let p = inverse_spd(&b)? * qd;
                self.energy_value(q, &p)
            }
            EnergyModel::BlackBoxHamiltonian(_) => Err(unsupported_hamiltonian()),
        }
    }
}

fn unsupported_hamiltonian() -> Error {
    Error::InvalidArgument("black-box Hamiltonian cannot be driven from velocity observations".into())
}

fn inverse_spd(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    b.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NearSingularHessian { condition: f64::INFINITY })
}

/// `f⁻¹ ≡ 0`, turning the tracking controller into plain PD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroModel {
    pub dof: usize,
}

impl ControlModel for ZeroModel {
    fn dof(&self) -> usize {
        self.dof
    }
    fn inverse_dynamics(&self, q: &DVector<f64>, _qd: &DVector<f64>, _qdd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(q.len()))
    }
    fn energy(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> Result<f64> {
        Ok(0.0)
    }
}

/// Controller gains. `kp`/`kd` drive tracking; `k_energy`/`k_position`
/// drive the energy swing-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub k_energy: f64,
    pub k_position: f64,
}

impl Gains {
    pub fn tracking(kp: Vec<f64>, kd: Vec<f64>) -> Self {
        Self { kp, kd, k_energy: 1.0, k_position: 1.0 }
    }

    pub fn swing_up(k_energy: f64, k_position: f64) -> Self {
        Self { kp: vec![1.0, 1.0], kd: vec![1.0, 1.0], k_energy, k_position }
    }

    /// Tracking gains for the two-link pendulum and swing-up gains for the
    /// underactuated plants, tuned on the analytic models.
    pub fn default_for(kind: PlantKind) -> Self {
        match kind {
            PlantKind::TwoLinkPendulum => Self::tracking(vec![60.0, 30.0], vec![8.0, 4.0]),
            PlantKind::Cartpole => Self::swing_up(50.0, 1.0),
            PlantKind::Furuta => Self::swing_up(0.5, 0.02),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.kp.iter().chain(&self.kd).chain([&self.k_energy, &self.k_position]);
        for v in all {
            if !(*v > 0.0) {
                return Err(Error::InvalidArgument(format!("gains must be positive, got {v}")));
            }
        }
        if self.kp.len() != self.kd.len() {
            return Err(Error::InvalidArgument("kp and kd lengths differ".into()));
        }
        Ok(())
    }
}

/// State-feedback law evaluated at a sampled state `x = (q, q̇)`.
pub trait Controller {
    fn dof(&self) -> usize;

    fn control(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>>;

    /// Position setpoint at `t`, for tracking error accounting.
    fn reference(&self, _t: f64) -> Option<DVector<f64>> {
        None
    }

    /// `(E, E_des)` of the controller's own energy model at `x`.
    fn energy(&self, _x: &DVector<f64>) -> Result<Option<(f64, f64)>> {
        Ok(None)
    }
}

fn split_state(x: &DVector<f64>, n: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != 2 * n {
        return Err(Error::InputShape { expected: 2 * n, got: x.len() });
    }
    Ok((x.rows(0, n).into_owned(), x.rows(n, n).into_owned()))
}

/// Zero torque with a fixed setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroController {
    pub setpoint: DVector<f64>,
}

impl Controller for ZeroController {
    fn dof(&self) -> usize {
        self.setpoint.len()
    }
    fn control(&self, x: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        split_state(x, self.dof())?;
        Ok(DVector::zeros(self.dof()))
    }
    fn reference(&self, _t: f64) -> Option<DVector<f64>> {
        Some(self.setpoint.clone())
    }
}

/// `τ = K_p(q_des − q) + K_d(q̇_des − q̇) + f⁻¹(q_des, q̇_des, q̈_des)`.
/// Past the horizon the last setpoint is held with pure PD.
pub struct InverseDynamicsController<'a, M: ControlModel + ?Sized> {
    pub model: &'a M,
    pub gains: Gains,
    pub traj: &'a DesiredTrajectory,
}

pub fn inverse_dynamics_controller<'a, M: ControlModel + ?Sized>(
    model: &'a M,
    gains: Gains,
    traj: &'a DesiredTrajectory,
) -> Result<InverseDynamicsController<'a, M>> {
    gains.validate()?;
    let n = model.dof();
    if gains.kp.len() != n {
        return Err(Error::InputShape { expected: n, got: gains.kp.len() });
    }
    if traj.is_empty() || traj.q[0].len() != n {
        return Err(Error::InvalidArgument("desired trajectory is empty or has the wrong dimension".into()));
    }
    Ok(InverseDynamicsController { model, gains, traj })
}

impl<M: ControlModel + ?Sized> Controller for InverseDynamicsController<'_, M> {
    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn control(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let n = self.dof();
        let (q, qd) = split_state(x, n)?;
        let kp = DVector::from_column_slice(&self.gains.kp);
        let kd = DVector::from_column_slice(&self.gains.kd);
        match self.traj.index(t) {
            Some(k) => {
                let (qr, qdr, qddr) = (&self.traj.q[k], &self.traj.qd[k], &self.traj.qdd[k]);
                let ff = self.model.inverse_dynamics(qr, qdr, qddr)?;
                Ok(kp.component_mul(&(qr - &q)) + kd.component_mul(&(qdr - &qd)) + ff)
            }
            None => {
                let qr = self.traj.q.last().expect("non-empty trajectory");
                Ok(kp.component_mul(&(qr - &q)) - kd.component_mul(&qd))
            }
        }
    }

    fn reference(&self, t: f64) -> Option<DVector<f64>> {
        let k = self.traj.index(t).unwrap_or(self.traj.len() - 1);
        Some(self.traj.q[k].clone())
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Which energy the swing-up law regulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// `E(q, q̇)` of the whole system.
    Total,
    /// `E(q, q̇)` with the actuated velocity set to zero, which for the
    /// cartpole and Furuta pendulum is the pendulum's own energy.
    #[default]
    Pendulum,
}

/// Energy swing-up for the cartpole and Furuta pendulum:
/// `u = k_E (E − E_des) sign(θ̇ cos θ) − k_p q_a` on the actuated coordinate
/// `q_a`, with `θ` the pendulum angle measured from upright.
///
/// With a [`Stabilizer`] attached, the linear balancing law takes over once
/// the pendulum is within the catch angle of upright.
pub struct EnergyController<'a, M: ControlModel + ?Sized> {
    pub model: &'a M,
    pub gains: Gains,
    pub energy_target: f64,
    pub mode: EnergyMode,
    pub actuated: usize,
    pub pendulum: usize,
    pub stabilizer: Option<Stabilizer>,
}

pub fn energy_controller<'a, M: ControlModel + ?Sized>(
    model: &'a M,
    kind: PlantKind,
    gains: Gains,
    energy_target: f64,
) -> Result<EnergyController<'a, M>> {
    gains.validate()?;
    let pendulum = kind.pendulum_index().ok_or_else(|| Error::UnsupportedPlant(kind.to_string()))?;
    Ok(EnergyController {
        model,
        gains,
        energy_target,
        mode: EnergyMode::default(),
        actuated: 1 - pendulum,
        pendulum,
        stabilizer: None,
    })
}

/// `E_des` as the model's own energy at the upright rest state.
pub fn upright_energy<M: ControlModel + ?Sized>(model: &M) -> Result<f64> {
    let z = DVector::zeros(model.dof());
    model.energy(&z, &z)
}

impl<'a, M: ControlModel + ?Sized> EnergyController<'a, M> {
    pub fn with_stabilizer(mut self, stabilizer: Stabilizer) -> Self {
        self.stabilizer = Some(stabilizer);
        self
    }

    pub fn with_mode(mut self, mode: EnergyMode) -> Self {
        self.mode = mode;
        self
    }

    /// The regulated energy at `(q, q̇)`.
    pub fn regulated_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        match self.mode {
            EnergyMode::Total => self.model.energy(q, qd),
            EnergyMode::Pendulum => {
                let mut v = qd.clone();
                v[self.actuated] = 0.0;
                self.model.energy(q, &v)
            }
        }
    }

    /// Swing-up term alone, without the stabilizer hand-off.
    pub fn swing_up_action(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        let e = self.regulated_energy(q, qd)?;
        let th = q[self.pendulum];
        let pump = sign0(qd[self.pendulum] * th.cos());
        Ok(self.gains.k_energy * (e - self.energy_target) * pump - self.gains.k_position * q[self.actuated])
    }
}

impl<M: ControlModel + ?Sized> Controller for EnergyController<'_, M> {
    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn control(&self, x: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        let n = self.dof();
        let (q, qd) = split_state(x, n)?;
        let mut tau = DVector::zeros(n);
        if let Some(s) = &self.stabilizer {
            if let Some(u) = s.control(x) {
                tau[self.actuated] = u;
                return Ok(tau);
            }
        }
        tau[self.actuated] = self.swing_up_action(&q, &qd)?;
        Ok(tau)
    }

    fn energy(&self, x: &DVector<f64>) -> Result<Option<(f64, f64)>> {
        let (q, qd) = split_state(x, self.dof())?;
        Ok(Some((self.regulated_energy(&q, &qd)?, self.energy_target)))
    }
}

/// Everything that defines a swing-up episode besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwingUpConfig {
    pub k_energy: f64,
    pub k_position: f64,
    pub mode: EnergyMode,
    /// Symmetric limit on the actuated input.
    pub torque_limit: f64,
    /// Diagonal LQR state weights `(q, q̇)` of the balancing law.
    pub state_weights: Vec<f64>,
    pub input_weight: f64,
    pub catch_angle: f64,
    pub dt: f64,
    pub duration: f64,
    /// Initial pendulum offset from hanging, rad.
    pub initial_offset: f64,
}

impl SwingUpConfig {
    /// Settings tuned on the analytic cartpole and Furuta pendulum.
    pub fn default_for(kind: PlantKind) -> Result<Self> {
        let gains = Gains::default_for(kind);
        let (mode, torque_limit, state_weights, input_weight) = match kind {
            PlantKind::Cartpole => (EnergyMode::Pendulum, 5.0, vec![10.0, 50.0, 1.0, 1.0], 1.0),
            PlantKind::Furuta => (EnergyMode::Total, 0.1, vec![1.0, 10.0, 0.1, 0.1], 10.0),
            PlantKind::TwoLinkPendulum => return Err(Error::UnsupportedPlant(kind.to_string())),
        };
        Ok(Self {
            k_energy: gains.k_energy,
            k_position: gains.k_position,
            mode,
            torque_limit,
            state_weights,
            input_weight,
            catch_angle: 0.3,
            dt: 2e-3,
            duration: 15.0,
            initial_offset: 0.1,
        })
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Hanging rest state nudged by the initial offset.
    pub fn initial_state(&self, kind: PlantKind) -> Result<DVector<f64>> {
        let p = kind.pendulum_index().ok_or_else(|| Error::UnsupportedPlant(kind.to_string()))?;
        let mut x = DVector::zeros(4);
        x[p] = PI - self.initial_offset;
        Ok(x)
    }
}

/// Energy swing-up of `plant` using `model`'s energy, with the balancing law
/// designed on the analytic plant.
pub fn swing_up_episode<M: ControlModel + ?Sized>(
    plant: &Plant,
    friction: &FrictionModel,
    model: &M,
    cfg: &SwingUpConfig,
    sensor_noise: f64,
    seed: u64,
) -> Result<(crate::integrators::Trajectory, ControlMetrics)> {
    let kind = plant.kind();
    let e_des = upright_energy(model)?;
    let stab = upright_stabilizer(plant, cfg.dt, &cfg.state_weights, cfg.input_weight, cfg.catch_angle)?;
    let c = energy_controller(model, kind, Gains::swing_up(cfg.k_energy, cfg.k_position), e_des)?
        .with_mode(cfg.mode)
        .with_stabilizer(stab);
    let field = crate::integrators::PlantField::new(plant.clone(), friction.clone());
    let mut opts = ClosedLoopOptions::new(cfg.dt, cfg.steps());
    opts.sensor_noise = sensor_noise;
    opts.seed = seed;
    let mut limit = vec![0.0; 2];
    limit[c.actuated] = cfg.torque_limit;
    opts.torque_limit = Some(limit);
    closed_loop_simulate(&field, &c, &opts, &cfg.initial_state(kind)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn on_trajectory_torque_is_feed_forward() {
        let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
        let traj = DesiredTrajectory::sample(&ChirpSpec::default_for(2), 0.01, 100).unwrap();
        let c = inverse_dynamics_controller(&plant, Gains::default_for(plant.kind()), &traj).unwrap();
        let k = 37;
        let x = crate::dynamics::stack((traj.q[k].clone(), traj.qd[k].clone()));
        let tau = c.control(&x, k as f64 * 0.01).unwrap();
        let truth = plant.inverse(&traj.q[k], &traj.qd[k], &traj.qdd[k], &FrictionModel::none());
        assert!((tau - truth).amax() < 1e-12);
    }

    #[test]
    fn zero_model_is_pd() {
        let traj = DesiredTrajectory::sample(&ChirpSpec::default_for(2), 0.01, 10).unwrap();
        let gains = Gains::tracking(vec![3.0, 5.0], vec![0.5, 0.25]);
        let zero = ZeroModel { dof: 2 };
        let c = inverse_dynamics_controller(&zero, gains, &traj).unwrap();
        let x = dvector![0.1, -0.2, 0.3, 0.4];
        let tau = c.control(&x, 0.05).unwrap();
        let k = 5;
        let want0 = 3.0 * (traj.q[k][0] - 0.1) + 0.5 * (traj.qd[k][0] - 0.3);
        let want1 = 5.0 * (traj.q[k][1] + 0.2) + 0.25 * (traj.qd[k][1] - 0.4);
        assert!((tau[0] - want0).abs() < 1e-14 && (tau[1] - want1).abs() < 1e-14);
    }

    #[test]
    fn holds_last_setpoint_past_horizon() {
        let traj = DesiredTrajectory::sample(&ChirpSpec::default_for(2), 0.01, 10).unwrap();
        let zero = ZeroModel { dof: 2 };
        let c = inverse_dynamics_controller(&zero, Gains::tracking(vec![1.0, 1.0], vec![1.0, 1.0]), &traj).unwrap();
        let q_last = traj.q.last().unwrap().clone();
        let x = crate::dynamics::stack((q_last.clone(), DVector::zeros(2)));
        assert_eq!(c.control(&x, 5.0).unwrap(), DVector::zeros(2));
        assert_eq!(c.reference(5.0).unwrap(), q_last);
    }

    #[test]
    fn energy_law_signs() {
        let plant = Plant::default_for(PlantKind::Cartpole);
        let e_des = upright_energy(&plant).unwrap();
        let c = energy_controller(&plant, PlantKind::Cartpole, Gains::swing_up(1.0, 1.0), e_des).unwrap();
        // at the desired energy with the cart centred nothing is applied
        let u = c.control(&dvector![0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(u, DVector::zeros(2));
        // below the desired energy, θ̇ cos θ > 0 pushes negative
        let u = c.control(&dvector![0.0, 0.3, 0.0, 0.5], 0.0).unwrap();
        assert!(u[0] < 0.0 && u[1] == 0.0);
    }

    #[test]
    fn angle_wrapping() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(-0.2) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_fully_actuated_plant() {
        let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
        assert!(energy_controller(&plant, PlantKind::TwoLinkPendulum, Gains::swing_up(1.0, 1.0), 0.0).is_err());
    }
}
