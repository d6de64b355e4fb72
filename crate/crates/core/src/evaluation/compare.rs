use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{nmse, stream_rng, vpt_partial, Sample, Trajectory, UniformRanges};
use crate::dynamics::{delan_decompose, stack};
use crate::energy_models::{EnergyModel, MassPotential};
use crate::error::{Error, Result};
use crate::integrators::{rollout, rollout_until_failure, PlantField, RolloutOptions, VectorField};
use crate::plants::Plant;

const INITIAL_STATE_STREAM: u64 = 6;

/// Held-out nMSE of the inverse torque and of each physical component
/// against the frictionless analytic plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionErrors {
    pub torque: f64,
    pub inertial: f64,
    pub coriolis: f64,
    pub gravitational: f64,
}

/// Component-wise comparison of a mass/potential model with the plant.
/// The torque entry compares against the observed torques.
pub fn decomposition_errors<M: MassPotential + ?Sized>(
    model: &M,
    plant: &Plant,
    samples: &[Sample],
) -> Result<DecompositionErrors> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pred = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut truth = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        let m = delan_decompose(model, &s.q, &s.qd, &s.qdd)?;
        let t = delan_decompose(plant, &s.q, &s.qd, &s.qdd)?;
        pred[0].push(m.total());
        truth[0].push(s.tau.clone());
        for (k, (a, b)) in [(m.inertial, t.inertial), (m.coriolis, t.coriolis), (m.gravitational, t.gravitational)]
            .into_iter()
            .enumerate()
        {
            pred[k + 1].push(a);
            truth[k + 1].push(b);
        }
    }
    Ok(DecompositionErrors {
        torque: nmse(&pred[0], &truth[0])?,
        inertial: nmse(&pred[1], &truth[1])?,
        coriolis: nmse(&pred[2], &truth[2])?,
        gravitational: nmse(&pred[3], &truth[3])?,
    })
}

/// nMSE of `predict(sample)` against `target(sample)` over `samples`.
pub fn prediction_nmse<P, T>(samples: &[Sample], predict: P, target: T) -> Result<f64>
where
    P: Fn(&Sample) -> Result<DVector<f64>>,
    T: Fn(&Sample) -> &DVector<f64>,
{
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = samples.iter().map(&predict).collect::<Result<Vec<_>>>()?;
    let truth: Vec<DVector<f64>> = samples.iter().map(|s| target(s).clone()).collect();
    nmse(&pred, &truth)
}

/// Inverse-model torque in the model's own coordinates.
pub fn model_torque(model: &EnergyModel, s: &Sample) -> Result<DVector<f64>> {
    if model.variant().is_hamiltonian() {
        model.inverse(&s.q, &s.p, &s.pd)
    } else {
        model.inverse(&s.q, &s.qd, &s.qdd)
    }
}

/// Held-out inverse nMSE of an energy model on torques.
pub fn inverse_nmse(model: &EnergyModel, samples: &[Sample]) -> Result<f64> {
    prediction_nmse(samples, |s| model_torque(model, s), |s| &s.tau)
}

/// Held-out forward nMSE: `q̈` for Lagrangian variants, `(q̇, ṗ)` for
/// Hamiltonian ones.
pub fn forward_nmse(model: &EnergyModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hamiltonian = model.variant().is_hamiltonian();
    let mut pred = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for s in samples {
        if hamiltonian {
            pred.push(model.forward(&s.q, &s.p, &s.tau)?);
            truth.push(stack((s.qd.clone(), s.pd.clone())));
        } else {
            pred.push(model.forward(&s.q, &s.qd, &s.tau)?);
            truth.push(s.qdd.clone());
        }
    }
    nmse(&pred, &truth)
}

/// Uniform draws of `(q, q̇)` from the position and velocity ranges.
pub fn sample_initial_states(ranges: &UniformRanges, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream_rng(seed, INITIAL_STATE_STREAM);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, r: &[[f64; 2]]| -> Vec<f64> {
        r.iter().map(|&[lo, hi]| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect()
    };
    (0..count)
        .map(|_| {
            let mut x = draw(&mut rng, &ranges.q);
            x.extend(draw(&mut rng, &ranges.qd));
            DVector::from_vec(x)
        })
        .collect()
}

/// `(q, q̇)` mapped to the model's state: `(q, H q̇)` with the plant's
/// mass matrix for Hamiltonian variants.
pub fn model_initial_state(hamiltonian: bool, plant: &Plant, x0: &DVector<f64>) -> DVector<f64> {
    if !hamiltonian {
        return x0.clone();
    }
    let n = plant.dof();
    let q = x0.rows(0, n).into_owned();
    let p = plant.mass_matrix(&q) * x0.rows(n, n);
    stack((q, p))
}

/// One uncontrolled prediction compared with the analytic plant.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutComparison {
    pub vpt: f64,
    /// Error that stopped the prediction early, if any.
    pub failure: Option<Error>,
    pub predicted: Trajectory,
    pub truth: Trajectory,
}

/// Rolls out the frictionless plant and `model` from the same state with
/// zero input. Positions are compared; a failed prediction counts as
/// diverged from its first missing step.
pub fn compare_rollout<F: VectorField + ?Sized>(
    model: &F,
    model_x0: &DVector<f64>,
    plant: &Plant,
    x0: &DVector<f64>,
    opts: &RolloutOptions,
    threshold: f64,
) -> Result<RolloutComparison> {
    let n = plant.dof();
    let zero = DVector::zeros(n);
    let field = PlantField::frictionless(plant.clone());
    let truth = rollout(&field, x0, |_, _, _| Ok(zero.clone()), opts, None)?;
    let (predicted, failure) = rollout_until_failure(model, model_x0, |_, _, _| Ok(zero.clone()), opts, None);
    let vpt = vpt_partial(&predicted.positions(n), &truth.positions(n), opts.dt, threshold)?;
    Ok(RolloutComparison { vpt, failure, predicted, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::generate_uniform;
    use crate::integrators::Scheme;
    use crate::plants::{FrictionModel, PlantKind};

    #[test]
    fn plant_against_itself() {
        let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
        let ranges = UniformRanges::symmetric(&[3.0, 3.0], &[2.0, 2.0], &[5.0, 5.0], 0.01);
        let ds = generate_uniform(&plant, &FrictionModel::none(), &ranges, 50, 1, 0.0).unwrap();
        let e = decomposition_errors(&plant, &plant, &ds.samples).unwrap();
        assert!(e.torque < 1e-20 && e.inertial == 0.0 && e.coriolis == 0.0 && e.gravitational == 0.0);

        let x0 = &sample_initial_states(&ranges, 1, 3)[0];
        let field = PlantField::frictionless(plant.clone());
        let opts = RolloutOptions::new(Scheme::Rk4, 0.01, 300);
        let c = compare_rollout(&field, x0, &plant, x0, &opts, 1e-2).unwrap();
        assert_eq!(c.vpt, 3.0);
        assert!(c.failure.is_none());
    }

    #[test]
    fn initial_states_within_ranges() {
        let ranges = UniformRanges::symmetric(&[1.0, 2.0], &[0.5, 0.1], &[0.0, 0.0], 0.01);
        for x in sample_initial_states(&ranges, 100, 8) {
            assert!(x[0].abs() <= 1.0 && x[1].abs() <= 2.0 && x[2].abs() <= 0.5 && x[3].abs() <= 0.1);
        }
    }
}
