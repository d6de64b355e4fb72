//! Analytic plants against a finite-difference Euler-Lagrange oracle built
//! only from their kinetic and potential energies.

use nalgebra::DVector;
use physnet::dynamics::delan_energy_rate;
use physnet::integrators::{rollout, PlantField, RolloutOptions, Scheme};
use physnet::plants::{FrictionModel, Plant, PlantKind};
use proptest::prelude::*;

fn lagrangian(plant: &Plant, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    plant.kinetic_energy(q, qd) - plant.potential(q)
}

fn unit(i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(2);
    e[i] = 1.0;
    e
}

/// `∂L/∂q̇` by central differences. Exact up to rounding since `L` is
/// quadratic in `q̇`.
fn momentum(plant: &Plant, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
    let h = 1e-3;
    DVector::from_fn(2, |i, _| {
        (lagrangian(plant, q, &(qd + h * unit(i))) - lagrangian(plant, q, &(qd - h * unit(i)))) / (2.0 * h)
    })
}

/// `d/dt ∂L/∂q̇ − ∂L/∂q` along `(q̇, q̈)`.
fn euler_lagrange_torque(plant: &Plant, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DVector<f64> {
    let h = 1e-5;
    let ddt = (momentum(plant, &(q + h * qd), &(qd + h * qdd)) - momentum(plant, &(q - h * qd), &(qd - h * qdd)))
        / (2.0 * h);
    let dq = DVector::from_fn(2, |i, _| {
        (lagrangian(plant, &(q + h * unit(i)), qd) - lagrangian(plant, &(q - h * unit(i)), qd)) / (2.0 * h)
    });
    ddt - dq
}

fn kind_strategy() -> impl Strategy<Value = PlantKind> {
    prop_oneof![Just(PlantKind::TwoLinkPendulum), Just(PlantKind::Cartpole), Just(PlantKind::Furuta)]
}

fn vec2(r: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-r..r, 2).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn inverse_dynamics_match_euler_lagrange(kind in kind_strategy(), q in vec2(3.0), qd in vec2(2.0), qdd in vec2(5.0)) {
        let plant = Plant::default_for(kind);
        let analytic = plant.inverse(&q, &qd, &qdd, &FrictionModel::none());
        let oracle = euler_lagrange_torque(&plant, &q, &qd, &qdd);
        let scale = analytic.amax().max(plant.mass_matrix(&q).amax() * qdd.amax()).max(1e-3);
        prop_assert!((&analytic - &oracle).amax() / scale < 1e-6, "{analytic} vs {oracle}");
    }

    #[test]
    fn power_balance_with_viscous_friction(kind in kind_strategy(), q in vec2(3.0), qd in vec2(2.0), tau in vec2(1.0)) {
        let plant = Plant::default_for(kind);
        let friction = FrictionModel::viscous(vec![0.05, 0.02]);
        let qdd = plant.forward(&q, &qd, &tau, &friction);
        let rate = delan_energy_rate(&plant, &q, &qd, &qdd).unwrap();
        let expected = qd.dot(&(&tau + friction.torque(&qd)));
        prop_assert!((rate - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }
}

#[test]
fn viscous_friction_only_dissipates() {
    for kind in [PlantKind::TwoLinkPendulum, PlantKind::Cartpole, PlantKind::Furuta] {
        let plant = Plant::default_for(kind);
        let field = PlantField::new(plant.clone(), FrictionModel::viscous(vec![0.1, 0.01]));
        let x0 = DVector::from_vec(vec![0.4, 2.5, 0.5, -1.0]);
        let energy = |x: &DVector<f64>| Ok(plant.energy(&x.rows(0, 2).into_owned(), &x.rows(2, 2).into_owned()));
        let zero = DVector::zeros(2);
        let traj =
            rollout(&field, &x0, |_, _, _| Ok(zero.clone()), &RolloutOptions::new(Scheme::Rk4, 1e-3, 3000), Some(&energy))
                .unwrap();
        let e = &traj.energies;
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{kind}");
        assert!(e.last().unwrap() < &(e[0] - 1e-4), "{kind}");
    }
}

#[test]
fn hamiltonian_observation_is_consistent() {
    let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
    let q = DVector::from_vec(vec![0.3, -1.2]);
    let qd = DVector::from_vec(vec![0.7, 0.2]);
    let tau = DVector::from_vec(vec![1.0, -2.0]);
    let none = FrictionModel::none();
    let (p, pd) = plant.to_hamiltonian_observation(&q, &qd, &tau, &none);
    assert!((&p - plant.mass_matrix(&q) * &qd).amax() < 1e-14);
    // ṗ = d/dt (H q̇) along the motion, by central differences
    let h = 1e-5;
    let qdd = plant.forward(&q, &qd, &tau, &none);
    let p_at = |s: f64| plant.mass_matrix(&(&q + s * &qd + 0.5 * s * s * &qdd)) * (&qd + s * &qdd);
    let fd = (p_at(h) - p_at(-h)) / (2.0 * h);
    assert!((&pd - &fd).amax() < 1e-8, "{pd} vs {fd}");
}

#[test]
fn stiction_is_flagged_as_irreversible() {
    assert!(FrictionModel::stiction(vec![0.1, 0.1], vec![0.01, 0.01]).breaks_time_reversibility());
    assert!(!FrictionModel::viscous(vec![0.1, 0.1]).breaks_time_reversibility());
}
