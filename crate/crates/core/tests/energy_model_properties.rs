use nalgebra::DVector;
use physnet::energy_models::{
    model_from_str, model_to_string, EnergyModel, FeatureTransform, MassPotential, ModelConfig, ModelVariant,
    StructuredLagrangianModel,
};
use physnet::evaluation::stream_rng;
use physnet::plants::PlantKind;
use proptest::prelude::*;

fn small_config() -> ModelConfig {
    ModelConfig { hidden: vec![12, 12], ..ModelConfig::default() }
}

fn structured(seed: u64) -> StructuredLagrangianModel {
    let ft = FeatureTransform::for_plant(PlantKind::Cartpole);
    StructuredLagrangianModel::new(ft, &small_config(), &mut stream_rng(seed, 5)).unwrap()
}

fn vec2(r: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-r..r, 2).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The energy is the Legendre transform `pᵀq̇ − L` of the Lagrangian.
    #[test]
    fn energy_is_legendre_transform(seed in 0u64..20, q in vec2(3.0), qd in vec2(3.0)) {
        let m = structured(seed);
        let p = m.generalized_momentum(&q, &qd);
        let legendre = p.dot(&qd) - m.lagrangian_value(&q, &qd);
        let e = m.energy_value(&q, &qd);
        prop_assert!((legendre - e).abs() <= 1e-12 * (1.0 + e.abs()));
    }

    /// A constant added to the potential changes energies by that constant
    /// and leaves the dynamics bit-identical.
    #[test]
    fn potential_gauge_leaves_dynamics_unchanged(seed in 0u64..20, c in -50.0..50.0f64, q in vec2(3.0), qd in vec2(3.0), tau in vec2(5.0)) {
        let m = structured(seed);
        let mut shifted = m.clone();
        shifted.shift_potential(c);
        let (a, b) = (EnergyModel::StructuredLagrangian(m.clone()), EnergyModel::StructuredLagrangian(shifted.clone()));
        prop_assert_eq!(a.forward(&q, &qd, &tau).unwrap(), b.forward(&q, &qd, &tau).unwrap());
        let de = shifted.energy_value(&q, &qd) - m.energy_value(&q, &qd);
        prop_assert!((de - c).abs() <= 1e-12 * (1.0 + c.abs() + m.energy_value(&q, &qd).abs()));
    }

    #[test]
    fn mass_matrix_is_symmetric(seed in 0u64..20, q in vec2(6.0)) {
        let (h, dh) = structured(seed).mass_matrix(&q);
        prop_assert_eq!(h.transpose(), h);
        for d in dh {
            prop_assert_eq!(d.transpose(), d);
        }
    }
}

#[test]
fn mass_derivative_matches_differences() {
    let m = structured(3);
    let q = DVector::from_vec(vec![0.4, -1.1]);
    let (_, dh) = m.mass_matrix(&q);
    let h = 1e-6;
    for k in 0..2 {
        let mut e = DVector::zeros(2);
        e[k] = h;
        let fd = (m.mass_matrix(&(&q + &e)).0 - m.mass_matrix(&(&q - &e)).0) / (2.0 * h);
        assert!((&fd - &dh[k]).amax() < 1e-7 * (1.0 + fd.amax()), "{fd} vs {}", dh[k]);
    }
}

#[test]
fn model_files_round_trip_for_every_variant() {
    let ft = FeatureTransform::for_plant(PlantKind::TwoLinkPendulum);
    let q = DVector::from_vec(vec![0.2, 0.9]);
    let v = DVector::from_vec(vec![-0.5, 0.3]);
    let tau = DVector::from_vec(vec![1.0, -1.0]);
    for (i, variant) in ModelVariant::ALL.into_iter().enumerate() {
        let m = EnergyModel::new(variant, ft.clone(), &small_config(), &mut stream_rng(i as u64, 5)).unwrap();
        let back = model_from_str(&model_to_string(&m)).unwrap();
        assert_eq!(back, m, "{variant}");
        assert_eq!(back.forward(&q, &v, &tau).unwrap(), m.forward(&q, &v, &tau).unwrap());
    }
}

#[test]
fn corrupted_model_file_is_rejected() {
    let ft = FeatureTransform::for_plant(PlantKind::TwoLinkPendulum);
    let m = EnergyModel::new(ModelVariant::StructuredHamiltonian, ft, &small_config(), &mut stream_rng(0, 5)).unwrap();
    let text = model_to_string(&m);
    assert!(model_from_str(&text.replacen("physnet-model", "other-model", 1)).is_err());
    let truncated: String = text.lines().take(text.lines().count() / 2).collect::<Vec<_>>().join("\n");
    assert!(model_from_str(&truncated).is_err());
}
