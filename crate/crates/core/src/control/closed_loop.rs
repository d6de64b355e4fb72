use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use super::{wrap_angle, Controller};
use crate::error::{Error, Result};
use crate::evaluation::stream_rng;
use crate::integrators::{rk4_step, PlantField, Trajectory, DEFAULT_DIVERGENCE_BOUND};
use crate::textio::fmt_f64;

/// Final window over which a swing-up must hold, in seconds.
pub const SWING_UP_WINDOW: f64 = 2.0;
/// Allowed pendulum deviation from upright, rad.
pub const SWING_UP_ANGLE_TOL: f64 = 0.1;
/// Allowed joint speed magnitude.
pub const SWING_UP_VELOCITY_TOL: f64 = 0.5;

const NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopOptions {
    /// Control period; the input is held over each period.
    pub dt: f64,
    pub steps: usize,
    /// RK4 steps of the plant per control period.
    pub substeps: usize,
    /// Standard deviation of additive Gaussian noise on observed positions.
    pub sensor_noise: f64,
    pub seed: u64,
    /// Symmetric per-coordinate actuation limits.
    pub torque_limit: Option<Vec<f64>>,
    pub divergence_bound: f64,
}

impl ClosedLoopOptions {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            substeps: 1,
            sensor_noise: 0.0,
            seed: 0,
            torque_limit: None,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlMetrics {
    /// Mean over time and joints of the squared position error against the
    /// controller's reference.
    pub tracking_mse: Option<f64>,
    /// Controller-model energy at every recorded state.
    pub model_energy: Vec<f64>,
    pub energy_target: Option<f64>,
    pub swing_up_success: Option<bool>,
    /// Control periods in which at least one input was clipped.
    pub saturated_steps: usize,
}

impl ControlMetrics {
    /// `E − E_des` series of the controller's own energy.
    pub fn energy_error(&self) -> Vec<f64> {
        match self.energy_target {
            Some(t) => self.model_energy.iter().map(|e| e - t).collect(),
            None => Vec::new(),
        }
    }
}

/// Simulates `plant` under `controller` with zero-order hold, RK4 between
/// control updates and optional position noise on the controller's input.
pub fn closed_loop_simulate<C: Controller + ?Sized>(
    plant: &PlantField,
    controller: &C,
    opts: &ClosedLoopOptions,
    x0: &DVector<f64>,
) -> Result<(Trajectory, ControlMetrics)> {
    let n = plant.plant.dof();
    if x0.len() != 2 * n {
        return Err(Error::InputShape { expected: 2 * n, got: x0.len() });
    }
    if controller.dof() != n {
        return Err(Error::InputShape { expected: n, got: controller.dof() });
    }
    if !(opts.dt > 0.0) || opts.substeps == 0 {
        return Err(Error::InvalidArgument("control period and substeps must be positive".into()));
    }
    if !(opts.sensor_noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("sensor noise must be non-negative, got {}", opts.sensor_noise)));
    }
    if let Some(l) = &opts.torque_limit {
        if l.len() != n || l.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("torque limits must be non-negative, one per coordinate".into()));
        }
    }
    let noise = Normal::new(0.0, opts.sensor_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(opts.seed, NOISE_STREAM);
    let h = opts.dt / opts.substeps as f64;

    let mut traj = Trajectory::new(opts.dt);
    let mut metrics = ControlMetrics::default();
    let mut sq_err = 0.0;
    let mut ref_count = 0usize;
    let mut record = |traj: &mut Trajectory, metrics: &mut ControlMetrics, x: &DVector<f64>| -> Result<()> {
        let t = traj.time(traj.len());
        traj.energies.push(plant.plant.energy(&x.rows(0, n).into_owned(), &x.rows(n, n).into_owned()));
        if let Some((e, target)) = controller.energy(x)? {
            metrics.model_energy.push(e);
            metrics.energy_target = Some(target);
        }
        if let Some(r) = controller.reference(t) {
            sq_err += (x.rows(0, n) - r).norm_squared() / n as f64;
            ref_count += 1;
        }
        traj.states.push(x.clone());
        Ok(())
    };

    record(&mut traj, &mut metrics, x0)?;
    let mut x = x0.clone();
    for k in 0..opts.steps {
        let t = traj.time(k);
        let mut obs = x.clone();
        if opts.sensor_noise > 0.0 {
            for i in 0..n {
                obs[i] += noise.sample(&mut rng);
            }
        }
        let mut u = controller.control(&obs, t)?;
        if let Some(limit) = &opts.torque_limit {
            let mut clipped = false;
            for (ui, li) in u.iter_mut().zip(limit) {
                if ui.abs() > *li {
                    *ui = ui.clamp(-li, *li);
                    clipped = true;
                }
            }
            metrics.saturated_steps += clipped as usize;
        }
        for s in 0..opts.substeps {
            x = rk4_step(plant, &x, &u, t + s as f64 * h, h).map_err(|_| Error::DivergedRollout {
                step: k + 1,
                magnitude: f64::INFINITY,
            })?;
        }
        let magnitude = x.amax();
        if !(magnitude <= opts.divergence_bound) {
            return Err(Error::DivergedRollout { step: k + 1, magnitude });
        }
        traj.controls.push(u);
        record(&mut traj, &mut metrics, &x)?;
    }

    if ref_count > 0 {
        metrics.tracking_mse = Some(sq_err / ref_count as f64);
    }
    if let Some(p) = plant.plant.kind().pendulum_index() {
        metrics.swing_up_success = Some(swing_up_success(&traj, p, n));
    }
    Ok((traj, metrics))
}

/// Mean squared position error between realized and desired positions.
pub fn tracking_mse(realized: &[DVector<f64>], desired: &[DVector<f64>]) -> Result<f64> {
    if realized.len() != desired.len() || realized.is_empty() {
        return Err(Error::InputShape { expected: desired.len(), got: realized.len() });
    }
    let n = desired[0].len() as f64;
    Ok(realized.iter().zip(desired).map(|(a, b)| (a - b).norm_squared() / n).sum::<f64>() / realized.len() as f64)
}

/// Pendulum within [`SWING_UP_ANGLE_TOL`] of upright and every joint speed
/// within [`SWING_UP_VELOCITY_TOL`] over the final [`SWING_UP_WINDOW`].
pub fn swing_up_success(traj: &Trajectory, pendulum: usize, n: usize) -> bool {
    let horizon = traj.horizon();
    if horizon < SWING_UP_WINDOW {
        return false;
    }
    let start = horizon - SWING_UP_WINDOW - 1e-9;
    traj.states.iter().enumerate().filter(|(k, _)| traj.time(*k) >= start).all(|(_, x)| {
        wrap_angle(x[pendulum]).abs() <= SWING_UP_ANGLE_TOL
            && x.rows(n, n).iter().all(|v| v.abs() <= SWING_UP_VELOCITY_TOL)
    })
}

/// Episode log with columns `t, q…, dq…, u…, E, E_des`. `E` is the
/// controller model's energy when it has one, otherwise the plant energy;
/// the final row has no input.
pub fn episode_to_csv(traj: &Trajectory, metrics: &ControlMetrics, n: usize) -> String {
    let mut header = vec!["t".to_string()];
    for prefix in ["q", "dq", "u"] {
        header.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    header.push("E".into());
    header.push("E_des".into());
    let mut out = header.join(",");
    out.push('\n');
    let use_model = metrics.model_energy.len() == traj.len();
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![fmt_f64(traj.time(k))];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| fmt_f64(*v))),
            None => row.extend((0..n).map(|_| String::new())),
        }
        let e = if use_model { metrics.model_energy[k] } else { traj.energies[k] };
        row.push(fmt_f64(e));
        row.push(metrics.energy_target.map(fmt_f64).unwrap_or_default());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_episode(path: &Path, traj: &Trajectory, metrics: &ControlMetrics, n: usize) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(episode_to_csv(traj, metrics, n).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ZeroController;
    use crate::plants::{Plant, PlantKind};

    #[test]
    fn zero_control_at_rest() {
        let field = PlantField::frictionless(Plant::default_for(PlantKind::TwoLinkPendulum));
        let c = ZeroController { setpoint: DVector::zeros(2) };
        let (traj, m) = closed_loop_simulate(&field, &c, &ClosedLoopOptions::new(0.01, 200), &DVector::zeros(4)).unwrap();
        assert_eq!(traj.len(), 201);
        assert_eq!(m.tracking_mse, Some(0.0));
        assert_eq!(m.swing_up_success, None);
    }

    #[test]
    fn noise_is_seeded() {
        use crate::control::{inverse_dynamics_controller, ChirpSpec, DesiredTrajectory, Gains};
        let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
        let field = PlantField::frictionless(plant.clone());
        let traj = DesiredTrajectory::sample(&ChirpSpec::default_for(2), 0.01, 100).unwrap();
        let c = inverse_dynamics_controller(&plant, Gains::default_for(plant.kind()), &traj).unwrap();
        let mut opts = ClosedLoopOptions::new(0.01, 100);
        opts.sensor_noise = 1e-3;
        opts.seed = 9;
        let x0 = crate::dynamics::stack((traj.q[0].clone(), traj.qd[0].clone()));
        let a = closed_loop_simulate(&field, &c, &opts, &x0).unwrap();
        let b = closed_loop_simulate(&field, &c, &opts, &x0).unwrap();
        assert_eq!(a, b);
        opts.seed = 10;
        let d = closed_loop_simulate(&field, &c, &opts, &x0).unwrap();
        assert_ne!(a.0.states, d.0.states);
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let field = PlantField::frictionless(Plant::default_for(PlantKind::Cartpole));
        let c = ZeroController { setpoint: DVector::zeros(2) };
        let (traj, m) = closed_loop_simulate(&field, &c, &ClosedLoopOptions::new(0.01, 5), &DVector::zeros(4)).unwrap();
        let text = episode_to_csv(&traj, &m, 2);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,q0,q1,dq0,dq1,u0,u1,E,E_des");
        assert_eq!(lines.len(), 7);
    }
}
