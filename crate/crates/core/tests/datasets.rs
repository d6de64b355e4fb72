use physnet::control::ChirpSpec;
use physnet::evaluation::{
    central_difference, generate_trajectory, generate_uniform, read_dataset, write_dataset, TrajectorySpec,
    UniformRanges,
};
use physnet::plants::{FrictionModel, Plant, PlantKind};

/// Kolmogorov-Smirnov distance of `xs` from the uniform law on `[lo, hi]`.
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn uniform_samples_pass_kolmogorov_smirnov() {
    let plant = Plant::default_for(PlantKind::Cartpole);
    let ranges = UniformRanges::symmetric(&[1.0, 3.0], &[2.0, 8.0], &[5.0, 0.5], 0.01);
    let ds = generate_uniform(&plant, &FrictionModel::none(), &ranges, 2000, 7, 0.0).unwrap();
    // 1% critical value
    let critical = 1.63 / (ds.len() as f64).sqrt();
    for (name, col, r) in [
        ("q", ds.column(|s| &s.q), &ranges.q),
        ("qd", ds.column(|s| &s.qd), &ranges.qd),
        ("tau", ds.column(|s| &s.tau), &ranges.tau),
    ] {
        for j in 0..2 {
            let d = ks_uniform(col.iter().map(|v| v[j]).collect(), r[j][0], r[j][1]);
            assert!(d < critical, "{name}[{j}]: D = {d}");
        }
    }
}

#[test]
fn file_round_trip_and_regeneration_are_exact() {
    let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
    let ranges = UniformRanges::symmetric(&[3.0, 3.0], &[2.0, 2.0], &[5.0, 5.0], 0.01);
    let ds = generate_uniform(&plant, &FrictionModel::viscous(vec![0.1, 0.1]), &ranges, 50, 3, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_dataset(&path, &ds).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);
    assert_eq!(ds.meta.regenerate().unwrap(), ds);
}

#[test]
fn seeds_control_sampling_and_splits() {
    let plant = Plant::default_for(PlantKind::Furuta);
    let ranges = UniformRanges::symmetric(&[3.0, 3.0], &[2.0, 6.0], &[0.1, 0.1], 0.01);
    let a = generate_uniform(&plant, &FrictionModel::none(), &ranges, 100, 1, 0.0).unwrap();
    let b = generate_uniform(&plant, &FrictionModel::none(), &ranges, 100, 2, 0.0).unwrap();
    assert_ne!(a.samples, b.samples);

    let (train, test) = a.split(0.8, 5).unwrap();
    assert_eq!((train.len(), test.len()), (80, 20));
    assert_eq!(a.split(0.8, 5).unwrap().0, train);
    assert_ne!(a.split(0.8, 6).unwrap().0, train);
    let mut pooled: Vec<f64> = train.samples.iter().chain(&test.samples).map(|s| s.q[0]).collect();
    let mut all: Vec<f64> = a.samples.iter().map(|s| s.q[0]).collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(pooled, all);
}

#[test]
fn filtering_beats_raw_differences_on_noisy_trajectories() {
    let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
    let spec = TrajectorySpec { chirp: ChirpSpec::default_for(2), duration: 10.0, dt: 0.01, cutoff: 0.1 };
    let clean = generate_trajectory(&plant, &FrictionModel::none(), &spec, 4, 0.0).unwrap();
    let noisy = generate_trajectory(&plant, &FrictionModel::none(), &spec, 4, 1e-3).unwrap();
    let raw = central_difference(&noisy.samples.iter().map(|s| s.q[0]).collect::<Vec<_>>(), spec.dt);
    // skip the edges where the zero-phase filter is transient
    let inner = 50..clean.len() - 50;
    let err = |est: &dyn Fn(usize) -> f64| -> f64 {
        inner.clone().map(|k| (est(k) - clean.samples[k].qd[0]).powi(2)).sum::<f64>() / inner.len() as f64
    };
    let filtered = err(&|k| noisy.samples[k].qd[0]);
    let unfiltered = err(&|k| raw[k]);
    assert!(filtered < 0.25 * unfiltered, "filtered {filtered} vs raw {unfiltered}");
}

#[test]
fn trajectory_samples_follow_the_plant() {
    let plant = Plant::default_for(PlantKind::TwoLinkPendulum);
    let spec = TrajectorySpec { chirp: ChirpSpec::default_for(2), duration: 2.0, dt: 0.01, cutoff: 0.1 };
    let ds = generate_trajectory(&plant, &FrictionModel::none(), &spec, 0, 0.0).unwrap();
    assert_eq!(ds.len(), 200);
    for s in &ds.samples {
        let qdd = plant.forward(&s.q, &s.qd, &s.tau, &FrictionModel::none());
        assert!((qdd - &s.qdd).amax() < 1e-9);
        assert!((plant.mass_matrix(&s.q) * &s.qd - &s.p).amax() < 1e-12);
    }
    let first = &ds.samples[0];
    let next = first.next.as_ref().unwrap();
    assert_eq!(next.q, ds.samples[1].q);
}
