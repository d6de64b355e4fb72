use std::fmt::Write as _;

use nalgebra::DVector;
use physnet::control::{
    closed_loop_simulate, episode_to_csv, inverse_dynamics_controller, swing_up_episode, ChirpSpec, ClosedLoopOptions,
    ControlModel, DesiredTrajectory, Gains, SwingUpConfig,
};
use physnet::dynamics::{delan_forward, stack};
use physnet::energy_models::{model_from_str, model_to_string, EnergyModel, FeatureTransform, MassPotential};
use physnet::evaluation::{
    compare_rollout, dataset_to_string, decomposition_errors, forward_nmse, generate_trajectory, generate_uniform,
    inverse_nmse, model_initial_state, prediction_nmse, read_dataset, sample_initial_states, stream_rng, Dataset,
    DecompositionErrors, GeneratorSpec, UniformRanges,
};
use physnet::integrators::{FnField, PlantField, RolloutOptions, VectorField};
use physnet::plants::{Plant, PlantKind};
use physnet::sysid::{self, LinearParamModel};
use physnet::training::{
    baseline_from_str, baseline_to_string, train, training_split, FeedForwardBaseline, History, INIT_STREAM,
};
use serde::{Deserialize, Serialize};

use crate::config::{ControlTask, ExperimentConfig, Variant};
use crate::error::CliError;
use crate::manifest::OutputDir;

pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const THETA_FILE: &str = "theta.toml";
pub const METRICS_FILE: &str = "metrics.toml";

fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))
}

fn num(x: f64) -> String {
    // shortest representation that reads back to the same bits
    format!("{x:?}")
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    if let Some(path) = &cfg.dataset.file {
        return Ok(read_dataset(path)?);
    }
    let plant = cfg.plant()?;
    let d = &cfg.dataset;
    Ok(match cfg.generator() {
        GeneratorSpec::Uniform(r) => generate_uniform(&plant, &cfg.friction, &r, d.n_samples, cfg.seed, d.noise_std)?,
        GeneratorSpec::Trajectory(spec) => generate_trajectory(&plant, &cfg.friction, &spec, cfg.seed, d.noise_std)?,
    })
}

pub fn gen_data(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = dataset(cfg)?;
    out.write(DATASET_FILE, &dataset_to_string(&ds)?)?;
    Ok(())
}

/// Loss columns only, so equal seeds give equal files.
fn history_csv(h: &History) -> String {
    let mut s = String::from("epoch,train_loss,test_loss\n");
    for r in &h.rows {
        let _ = writeln!(s, "{},{},{}", r.epoch, num(r.train_loss), r.test_loss.map(num).unwrap_or_default());
    }
    s
}

fn timing_csv(h: &History) -> String {
    let mut s = String::from("epoch,wall_time\n");
    for r in &h.rows {
        let _ = writeln!(s, "{},{:.3}", r.epoch, r.wall_time);
    }
    s
}

#[derive(Serialize)]
struct TrainMetrics {
    variant: Variant,
    parameters: usize,
    epochs: usize,
    final_train_loss: Option<f64>,
    final_test_loss: Option<f64>,
    test_inverse_nmse: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ds = dataset(cfg)?;
    let tc = cfg.train_config();
    let features = FeatureTransform::for_plant(cfg.plant.kind);
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    let (_, test) = training_split(&ds, &tc)?;
    let (history, text, parameters, test_nmse) = match (cfg.variant, cfg.variant.energy()) {
        (_, Some(v)) => {
            let mut m = EnergyModel::new(v, features, &tc.model, &mut rng)?;
            let h = train(&mut m, &ds, &tc)?;
            let n = physnet::energy_models::Parametric::param_count(&m);
            (h, model_to_string(&m), n, inverse_nmse(&m, &test.samples)?)
        }
        (Variant::Ffnn, None) => {
            let mut m = FeedForwardBaseline::new(features, &tc.model, &mut rng)?;
            let h = train(&mut m, &ds, &tc)?;
            let n = physnet::energy_models::Parametric::param_count(&m);
            let e = prediction_nmse(&test.samples, |s| m.inverse(&s.q, &s.qd, &s.qdd), |s| &s.tau)?;
            (h, baseline_to_string(&m), n, e)
        }
        (other, None) => {
            return Err(CliError::Config(format!("variant {other} has nothing to train; use the sysid command")))
        }
    };
    out.write(MODEL_FILE, &text)?;
    out.write("history.csv", &history_csv(&history))?;
    out.write("timing.csv", &timing_csv(&history))?;
    let metrics = TrainMetrics {
        variant: cfg.variant,
        parameters,
        epochs: history.rows.len(),
        final_train_loss: history.last_train_loss(),
        final_test_loss: history.last_test_loss(),
        test_inverse_nmse: test_nmse,
    };
    out.write(METRICS_FILE, &to_toml(&metrics)?)?;
    Ok(())
}

/// Identified parameters as stored by the sysid command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFile {
    pub kind: PlantKind,
    pub theta: Vec<f64>,
}

/// A dynamics model of any variant, ready for evaluation and control.
pub enum Model {
    Analytic(Plant),
    SysId(LinearParamModel),
    Energy(EnergyModel),
    Ffnn(FeedForwardBaseline),
}

fn read_model_text(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let path = cfg
        .model_file
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("variant {} needs model_file", cfg.variant)))?;
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn prior(cfg: &ExperimentConfig) -> Result<DVector<f64>, CliError> {
    let k = sysid::parameter_count(cfg.plant.kind);
    match &cfg.sysid.prior {
        Some(p) if p.len() != k => Err(CliError::Config(format!("sysid prior needs {k} entries, got {}", p.len()))),
        Some(p) => Ok(DVector::from_column_slice(p)),
        None => Ok(DVector::zeros(k)),
    }
}

impl Model {
    /// The configured model. Identified parameters are read from
    /// `model_file` when given and fitted on the training split otherwise.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        Ok(match cfg.variant {
            Variant::Analytic => Model::Analytic(cfg.plant()?),
            Variant::Sysid => {
                let theta = match &cfg.model_file {
                    Some(_) => {
                        let file: ThetaFile =
                            toml::from_str(&read_model_text(cfg)?).map_err(|e| CliError::Config(e.to_string()))?;
                        if file.kind != cfg.plant.kind {
                            return Err(CliError::Config(format!("parameters were identified on a {}", file.kind)));
                        }
                        DVector::from_vec(file.theta)
                    }
                    None => {
                        let (train_set, _) = training_split(&dataset(cfg)?, &cfg.train_config())?;
                        sysid::fit(cfg.plant.kind, &train_set.samples, &prior(cfg)?, cfg.sysid.lambda)?.theta
                    }
                };
                Model::SysId(LinearParamModel::new(cfg.plant.kind, theta)?)
            }
            Variant::Ffnn => Model::Ffnn(baseline_from_str(&read_model_text(cfg)?)?),
            v => {
                let m = model_from_str(&read_model_text(cfg)?)?;
                if Some(m.variant()) != v.energy() {
                    return Err(CliError::Config(format!("model file holds a {}, config asks for {v}", m.variant())));
                }
                Model::Energy(m)
            }
        })
    }

    fn control_model(&self) -> &dyn ControlModel {
        match self {
            Model::Analytic(p) => p,
            Model::SysId(m) => m,
            Model::Energy(m) => m,
            Model::Ffnn(m) => m,
        }
    }

    fn mass_potential(&self) -> Option<&dyn MassPotential> {
        match self {
            Model::Analytic(p) => Some(p),
            Model::SysId(m) => Some(m),
            Model::Energy(EnergyModel::StructuredLagrangian(m)) => Some(m),
            Model::Energy(_) | Model::Ffnn(_) => None,
        }
    }

}

#[derive(Serialize)]
struct EvalMetrics {
    variant: Variant,
    test_samples: usize,
    inverse_nmse: f64,
    forward_nmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<DecompositionErrors>,
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let model = Model::load(cfg)?;
    let plant = cfg.plant()?;
    let (_, test) = training_split(&dataset(cfg)?, &cfg.train_config())?;
    let s = &test.samples;
    let f = &cfg.friction;
    let (inv, fwd) = match &model {
        Model::Analytic(p) => (
            prediction_nmse(s, |x| Ok(p.inverse(&x.q, &x.qd, &x.qdd, f)), |x| &x.tau)?,
            prediction_nmse(s, |x| Ok(p.forward(&x.q, &x.qd, &x.tau, f)), |x| &x.qdd)?,
        ),
        Model::SysId(m) => (
            prediction_nmse(s, |x| m.inverse(&x.q, &x.qd, &x.qdd), |x| &x.tau)?,
            prediction_nmse(s, |x| delan_forward(m, &x.q, &x.qd, &x.tau), |x| &x.qdd)?,
        ),
        Model::Energy(m) => (inverse_nmse(m, s)?, forward_nmse(m, s)?),
        Model::Ffnn(m) => (
            prediction_nmse(s, |x| m.inverse(&x.q, &x.qd, &x.qdd), |x| &x.tau)?,
            prediction_nmse(s, |x| m.forward(&x.q, &x.qd, &x.tau), |x| &x.qdd)?,
        ),
    };
    let decomposition = model.mass_potential().map(|m| decomposition_errors(m, &plant, s)).transpose()?;
    let metrics =
        EvalMetrics { variant: cfg.variant, test_samples: s.len(), inverse_nmse: inv, forward_nmse: fwd, decomposition };
    out.write(METRICS_FILE, &to_toml(&metrics)?)?;
    Ok(())
}

#[derive(Serialize)]
struct RolloutMetrics {
    variant: Variant,
    mean_vpt: f64,
    vpt: Vec<f64>,
    /// Error kind per start, empty when the prediction ran to the horizon.
    failures: Vec<String>,
}

pub fn cmd_rollout(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let model = Model::load(cfg)?;
    let plant = cfg.plant()?;
    let n = plant.dof();
    let r = &cfg.rollout;
    let ranges = UniformRanges::symmetric(&r.q, &r.qd, &vec![0.0; n], r.dt);
    let opts = RolloutOptions::new(r.scheme, r.dt, r.steps);
    match &model {
        Model::Analytic(p) => {
            let field = PlantField::new(p.clone(), cfg.friction.clone());
            rollout_with(cfg, out, &field, false, &plant, &ranges, &opts)
        }
        Model::SysId(m) => {
            let field = FnField {
                dim: 2 * n,
                f: |x: &DVector<f64>, u: &DVector<f64>, _t: f64| {
                    let q = x.rows(0, n).into_owned();
                    let qd = x.rows(n, n).into_owned();
                    let qdd = delan_forward(m, &q, &qd, u)?;
                    Ok(stack((qd, qdd)))
                },
            };
            rollout_with(cfg, out, &field, false, &plant, &ranges, &opts)
        }
        Model::Energy(m) => rollout_with(cfg, out, m, m.variant().is_hamiltonian(), &plant, &ranges, &opts),
        Model::Ffnn(m) => rollout_with(cfg, out, m, false, &plant, &ranges, &opts),
    }
}

fn rollout_with<F: VectorField + ?Sized>(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    field: &F,
    hamiltonian: bool,
    plant: &Plant,
    ranges: &UniformRanges,
    opts: &RolloutOptions,
) -> Result<(), CliError> {
    let n = plant.dof();
    let mut csv = String::from("start,t");
    for prefix in ["q", "q_true"] {
        for i in 0..n {
            let _ = write!(csv, ",{prefix}{i}");
        }
    }
    csv.push('\n');
    let mut metrics = RolloutMetrics { variant: cfg.variant, mean_vpt: 0.0, vpt: Vec::new(), failures: Vec::new() };
    for (k, x0) in sample_initial_states(ranges, cfg.rollout.starts, cfg.seed).iter().enumerate() {
        let mx0 = model_initial_state(hamiltonian, plant, x0);
        let c = compare_rollout(field, &mx0, plant, x0, opts, cfg.rollout.threshold)?;
        for (j, truth) in c.truth.states.iter().enumerate() {
            let _ = write!(csv, "{k},{}", num(c.truth.time(j)));
            match c.predicted.states.get(j) {
                Some(x) => x.rows(0, n).iter().for_each(|v| {
                    let _ = write!(csv, ",{}", num(*v));
                }),
                None => csv.push_str(&",".repeat(n)),
            }
            truth.rows(0, n).iter().for_each(|v| {
                let _ = write!(csv, ",{}", num(*v));
            });
            csv.push('\n');
        }
        metrics.vpt.push(c.vpt);
        metrics.failures.push(c.failure.map(|e| e.kind().to_string()).unwrap_or_default());
    }
    metrics.mean_vpt = metrics.vpt.iter().sum::<f64>() / metrics.vpt.len().max(1) as f64;
    out.write("rollouts.csv", &csv)?;
    out.write(METRICS_FILE, &to_toml(&metrics)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ControlSummary {
    variant: Variant,
    task: ControlTask,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    swing_up_success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_target: Option<f64>,
    saturated_steps: usize,
}

pub fn cmd_control(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let model = Model::load(cfg)?;
    let plant = cfg.plant()?;
    let n = plant.dof();
    let c = &cfg.control;
    let task = cfg.control_task();
    let (traj, metrics) = match task {
        ControlTask::Tracking => {
            let chirp = c.chirp.clone().unwrap_or_else(|| ChirpSpec::default_for(n));
            let desired = DesiredTrajectory::sample(&chirp, c.dt, c.steps)?;
            let gains = c.gains.clone().unwrap_or_else(|| Gains::default_for(PlantKind::TwoLinkPendulum));
            let controller = inverse_dynamics_controller(model.control_model(), gains, &desired)?;
            let mut opts = ClosedLoopOptions::new(c.dt, c.steps);
            opts.sensor_noise = c.sensor_noise;
            opts.seed = cfg.seed;
            let x0 = stack((desired.q[0].clone(), desired.qd[0].clone()));
            closed_loop_simulate(&PlantField::new(plant.clone(), cfg.friction.clone()), &controller, &opts, &x0)?
        }
        ControlTask::SwingUp => {
            let su = match &c.swing_up {
                Some(s) => s.clone(),
                None => SwingUpConfig::default_for(plant.kind())?,
            };
            swing_up_episode(&plant, &cfg.friction, model.control_model(), &su, c.sensor_noise, cfg.seed)?
        }
    };
    out.write("episode.csv", &episode_to_csv(&traj, &metrics, n))?;
    let summary = ControlSummary {
        variant: cfg.variant,
        task,
        tracking_mse: metrics.tracking_mse,
        swing_up_success: metrics.swing_up_success,
        energy_target: metrics.energy_target,
        saturated_steps: metrics.saturated_steps,
    };
    out.write(METRICS_FILE, &to_toml(&summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SysIdMetrics {
    theta: Vec<f64>,
    /// Base parameters of the configured plant, for reference.
    plant_theta: Vec<f64>,
    max_residual: f64,
    rms_residual: f64,
    condition_number: f64,
    positivity_violations: Vec<usize>,
}

pub fn cmd_sysid(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let kind = cfg.plant.kind;
    let ds = dataset(cfg)?;
    let trim = cfg.sysid.trim;
    if 2 * trim >= ds.len() {
        return Err(CliError::Config(format!("trimming {trim} samples per end leaves nothing of {}", ds.len())));
    }
    let samples = &ds.samples[trim..ds.len() - trim];
    let fit = sysid::fit(kind, samples, &prior(cfg)?, cfg.sysid.lambda)?;
    let model = LinearParamModel::new(kind, fit.theta.clone())?;
    let mut csv = String::from("sample,r0,r1\n");
    for (i, s) in samples.iter().enumerate() {
        let r = &s.tau - model.inverse(&s.q, &s.qd, &s.qdd)?;
        let _ = writeln!(csv, "{},{},{}", trim + i, num(r[0]), num(r[1]));
    }
    let theta = fit.theta.iter().copied().collect::<Vec<_>>();
    out.write(THETA_FILE, &to_toml(&ThetaFile { kind, theta: theta.clone() })?)?;
    out.write("residuals.csv", &csv)?;
    let metrics = SysIdMetrics {
        theta,
        plant_theta: cfg.plant()?.base_parameters(),
        max_residual: fit.max_residual,
        rms_residual: fit.rms_residual,
        condition_number: fit.condition_number,
        positivity_violations: fit.positivity_violations,
    };
    out.write(METRICS_FILE, &to_toml(&metrics)?)?;
    Ok(())
}
