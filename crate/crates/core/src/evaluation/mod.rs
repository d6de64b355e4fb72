//! Dataset generation, observation processing and prediction metrics.

mod compare;
mod filter;
mod io;
mod metrics;

pub use compare::{
    compare_rollout, decomposition_errors, forward_nmse, inverse_nmse, model_initial_state, model_torque, prediction_nmse,
    sample_initial_states, DecompositionErrors, RolloutComparison,
};
pub use filter::{central_difference, differentiate_and_filter, filtfilt, Biquad, DEFAULT_CUTOFF, MIN_FILTER_LEN};
pub use io::{dataset_from_str, dataset_to_string, read_dataset, write_dataset, DATASET_HEADER};
pub use metrics::{mse_per_dim, nmse, variance, vpt, vpt_partial, DEFAULT_VPT_THRESHOLD, VARIANCE_FLOOR};

pub use crate::integrators::Trajectory;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{ChirpSpec, DesiredTrajectory};
use crate::error::{Error, Result};
use crate::integrators::{rk4_step, PlantField};
use crate::plants::{FrictionModel, Plant, PlantParams};

/// Generator for seeded random streams: one root seed, independent
/// counter-indexed streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// State one step `dt` after a sample, under the same held control.
#[derive(Debug, Clone, PartialEq)]
pub struct NextState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub p: DVector<f64>,
}

/// One observation in both Lagrangian `(q, q̇, q̈, τ)` and Hamiltonian
/// `(q, p, q̇, ṗ, τ)` form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    pub p: DVector<f64>,
    pub pd: DVector<f64>,
    pub next: Option<NextState>,
}

/// Per-coordinate sampling intervals for uniform datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformRanges {
    pub q: Vec<[f64; 2]>,
    pub qd: Vec<[f64; 2]>,
    pub tau: Vec<[f64; 2]>,
    /// Step used for the next-state columns.
    pub next_dt: f64,
}

impl UniformRanges {
    pub fn symmetric(q: &[f64], qd: &[f64], tau: &[f64], next_dt: f64) -> Self {
        let sym = |v: &[f64]| v.iter().map(|&a| [-a, a]).collect();
        Self { q: sym(q), qd: sym(qd), tau: sym(tau), next_dt }
    }

    fn validate(&self, n: usize) -> Result<()> {
        for (name, r) in [("q", &self.q), ("qd", &self.qd), ("tau", &self.tau)] {
            if r.len() != n {
                return Err(Error::InvalidArgument(format!("{name} needs {n} ranges, got {}", r.len())));
            }
            if r.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("empty or non-finite {name} range")));
            }
        }
        if !(self.next_dt > 0.0) {
            return Err(Error::InvalidArgument("next-state step must be positive".into()));
        }
        Ok(())
    }
}

/// Reference trajectory sampled at `dt` for `duration` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub chirp: ChirpSpec,
    pub duration: f64,
    pub dt: f64,
    /// Low-pass cutoff (fraction of Nyquist) used when positions are noisy.
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Uniform(UniformRanges),
    Trajectory(TrajectorySpec),
}

/// Everything needed to regenerate a dataset bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub plant: PlantParams,
    pub friction: FrictionModel,
    /// Standard deviation of additive Gaussian position noise.
    pub noise_std: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub generator: GeneratorSpec,
}

impl DatasetMeta {
    pub fn dof(&self) -> usize {
        2
    }

    pub fn next_dt(&self) -> f64 {
        match &self.generator {
            GeneratorSpec::Uniform(r) => r.next_dt,
            GeneratorSpec::Trajectory(t) => t.dt,
        }
    }

    /// Runs the recorded generator.
    pub fn regenerate(&self) -> Result<Dataset> {
        let plant = Plant::new(self.plant.clone())?;
        match &self.generator {
            GeneratorSpec::Uniform(r) => {
                generate_uniform(&plant, &self.friction, r, self.n_samples, self.seed, self.noise_std)
            }
            GeneratorSpec::Trajectory(spec) => {
                generate_trajectory(&plant, &self.friction, spec, self.seed, self.noise_std)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.meta.dof()
    }

    pub fn has_next_state(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.next.is_some())
    }

    pub fn column<F: Fn(&Sample) -> &DVector<f64>>(&self, f: F) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| f(s).clone()).collect()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { meta: self.meta.clone(), samples: idx.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    /// Seeded shuffle, then the first `train_fraction` of samples for
    /// training and the rest for testing.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream_rng(seed, 0));
        let cut = (train_fraction * self.len() as f64).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }
}

fn uniform(rng: &mut ChaCha8Rng, ranges: &[[f64; 2]]) -> DVector<f64> {
    DVector::from_iterator(
        ranges.len(),
        ranges.iter().map(|&[lo, hi]| if lo == hi { lo } else { rng.random_range(lo..=hi) }),
    )
}

fn position_noise(std: f64) -> Result<Option<Normal<f64>>> {
    if std == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, std)
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("invalid noise level {std}")))
}

/// Accurate reference for one held-control step: RK4 with ten sub-steps.
fn next_state(field: &PlantField, q: &DVector<f64>, qd: &DVector<f64>, tau: &DVector<f64>, dt: f64) -> Result<NextState> {
    let n = q.len();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(q);
    x.rows_mut(n, n).copy_from(qd);
    let sub = 10;
    let h = dt / sub as f64;
    for k in 0..sub {
        x = rk4_step(field, &x, tau, k as f64 * h, h)?;
    }
    let q1 = x.rows(0, n).into_owned();
    let qd1 = x.rows(n, n).into_owned();
    let p1 = field.plant.mass_matrix(&q1) * &qd1;
    Ok(NextState { q: q1, qd: qd1, p: p1 })
}

/// I.i.d. uniform `(q, q̇, τ)` with accelerations and momenta from the
/// analytic plant. Position noise, if any, is added after the dynamics are
/// evaluated.
pub fn generate_uniform(
    plant: &Plant,
    friction: &FrictionModel,
    ranges: &UniformRanges,
    n_samples: usize,
    seed: u64,
    noise_std: f64,
) -> Result<Dataset> {
    let n = plant.dof();
    ranges.validate(n)?;
    friction.validate(n)?;
    let noise = position_noise(noise_std)?;
    let mut rng = stream_rng(seed, 1);
    let mut noise_rng = stream_rng(seed, 2);
    let field = PlantField::new(plant.clone(), friction.clone());
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let q = uniform(&mut rng, &ranges.q);
        let qd = uniform(&mut rng, &ranges.qd);
        let tau = uniform(&mut rng, &ranges.tau);
        let qdd = plant.forward(&q, &qd, &tau, friction);
        let (p, pd) = plant.to_hamiltonian_observation(&q, &qd, &tau, friction);
        let next = next_state(&field, &q, &qd, &tau, ranges.next_dt)?;
        let q = match &noise {
            Some(d) => q.map(|v| v + d.sample(&mut noise_rng)),
            None => q,
        };
        samples.push(Sample { t: 0.0, q, qd, qdd, tau, p, pd, next: Some(next) });
    }
    let meta = DatasetMeta {
        plant: plant.params.clone(),
        friction: friction.clone(),
        noise_std,
        seed,
        n_samples,
        generator: GeneratorSpec::Uniform(ranges.clone()),
    };
    Ok(Dataset { meta, samples })
}

/// Samples along a cosine-chirp reference with torques from the analytic
/// inverse dynamics. With position noise, velocities and accelerations are
/// re-estimated from the noisy positions by differentiation and zero-phase
/// filtering. Each sample's next state is the following grid point, so the
/// final grid point is not a sample.
pub fn generate_trajectory(
    plant: &Plant,
    friction: &FrictionModel,
    spec: &TrajectorySpec,
    seed: u64,
    noise_std: f64,
) -> Result<Dataset> {
    if !(spec.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {}", spec.dt)));
    }
    let n = plant.dof();
    if spec.chirp.dof() != n {
        return Err(Error::InputShape { expected: n, got: spec.chirp.dof() });
    }
    friction.validate(n)?;
    let steps = (spec.duration / spec.dt).round() as usize;
    let desired = DesiredTrajectory::sample(&spec.chirp, spec.dt, steps)?;
    let taus: Vec<DVector<f64>> = (0..desired.len())
        .map(|k| plant.inverse(&desired.q[k], &desired.qd[k], &desired.qdd[k], friction))
        .collect();

    let (q, qd, qdd) = match position_noise(noise_std)? {
        None => (desired.q.clone(), desired.qd.clone(), desired.qdd.clone()),
        Some(d) => {
            let mut rng = stream_rng(seed, 2);
            let noisy: Vec<DVector<f64>> = desired.q.iter().map(|q| q.map(|v| v + d.sample(&mut rng))).collect();
            let mut qd = vec![DVector::zeros(n); noisy.len()];
            let mut qdd = vec![DVector::zeros(n); noisy.len()];
            for j in 0..n {
                let channel: Vec<f64> = noisy.iter().map(|q| q[j]).collect();
                let (v, a) = differentiate_and_filter(&channel, spec.dt, spec.cutoff)?;
                for k in 0..noisy.len() {
                    qd[k][j] = v[k];
                    qdd[k][j] = a[k];
                }
            }
            (noisy, qd, qdd)
        }
    };

    let momentum = |k: usize| -> (DVector<f64>, DVector<f64>) {
        let h = plant.mass_matrix(&q[k]);
        let p = &h * &qd[k];
        let pd = plant.mass_matrix_rate(&q[k], &qd[k]) * &qd[k] + h * &qdd[k];
        (p, pd)
    };
    let mut samples = Vec::with_capacity(steps);
    for k in 0..steps {
        let (p, pd) = momentum(k);
        let (p1, _) = momentum(k + 1);
        samples.push(Sample {
            t: k as f64 * spec.dt,
            q: q[k].clone(),
            qd: qd[k].clone(),
            qdd: qdd[k].clone(),
            tau: taus[k].clone(),
            p,
            pd,
            next: Some(NextState { q: q[k + 1].clone(), qd: qd[k + 1].clone(), p: p1 }),
        });
    }
    let meta = DatasetMeta {
        plant: plant.params.clone(),
        friction: friction.clone(),
        noise_std,
        seed,
        n_samples: samples.len(),
        generator: GeneratorSpec::Trajectory(spec.clone()),
    };
    Ok(Dataset { meta, samples })
}
