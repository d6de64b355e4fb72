use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn physnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("PHYSNET_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn table(path: &Path) -> toml::Table {
    std::fs::read_to_string(path).unwrap().parse().unwrap()
}

fn float(t: &toml::Table, key: &str) -> f64 {
    t[key].as_float().unwrap_or_else(|| panic!("{key} missing in {t}"))
}

const SMALL_TRAINING: &str = r#"
seed = 3
variant = "delan-structured"

[plant]
kind = "two_link_pendulum"

[dataset]
n_samples = 200

[train]
epochs = 3
batch_size = 32
lr = 3e-3
loss = "inverse"

[train.model]
hidden = [8, 8]
"#;

#[test]
fn ground_truth_model_evaluates_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["two_link_pendulum", "cartpole", "furuta"] {
        let cfg = write_config(dir.path(), "eval.toml", &format!("variant = \"analytic\"\n[plant]\nkind = \"{kind}\"\n"));
        ok(physnet(&["eval", "--config", cfg.to_str().unwrap(), "--out", kind], dir.path()));
        let m = table(&dir.path().join(kind).join("metrics.toml"));
        assert!(float(&m, "inverse_nmse") < 1e-9 && float(&m, "forward_nmse") < 1e-9, "{kind}: {m}");
        let d = m["decomposition"].as_table().unwrap();
        for part in ["torque", "inertial", "coriolis", "gravitational"] {
            assert!(float(d, part) < 1e-9, "{kind} {part}");
        }
    }
}

#[test]
fn training_is_reproducible_and_fully_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.toml", SMALL_TRAINING);
    let cfg = cfg.to_str().unwrap();
    ok(physnet(&["train", "--config", cfg, "--out", "a"], dir.path()));
    ok(physnet(&["train", "--config", cfg, "--out", "b"], dir.path()));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for f in ["history.csv", "model.txt", "metrics.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let manifest = table(&a.join("manifest.toml"));
    assert_eq!(manifest["seed"].as_integer(), Some(3));
    assert_eq!(manifest["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    let listed: Vec<&toml::Value> = manifest["outputs"].as_array().unwrap().iter().collect();
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.toml")
        .collect();
    names.sort();
    let mut listed_names: Vec<String> = listed.iter().map(|o| o["path"].as_str().unwrap().to_string()).collect();
    listed_names.sort();
    assert_eq!(names, listed_names);
    for o in &listed {
        let bytes = std::fs::read(a.join(o["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(o["sha256"].as_str(), Some(digest.as_str()));
    }
    let config_digest: String =
        Sha256::digest(std::fs::read(a.join("config.toml")).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(manifest["config_hash"].as_str(), Some(config_digest.as_str()));

    // the stored config alone reproduces the run
    let stored = a.join("config.toml");
    ok(physnet(&["train", "--config", stored.to_str().unwrap(), "--out", "c"], dir.path()));
    let c = dir.path().join("c");
    assert_eq!(std::fs::read(a.join("metrics.toml")).unwrap(), std::fs::read(c.join("metrics.toml")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.toml", SMALL_TRAINING);
    let cfg = cfg.to_str().unwrap();
    ok(physnet(&["gen-data", "--config", cfg, "--out", "a"], dir.path()));
    ok(physnet(&["gen-data", "--config", cfg, "--out", "b", "--seed", "4"], dir.path()));
    let a = std::fs::read(dir.path().join("a/dataset.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/dataset.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(table(&dir.path().join("b/manifest.toml"))["seed"].as_integer(), Some(4));

    let out = physnet(&["gen-data", "--config", cfg, "--out", "c", "--seed", "9223372036854775808"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn saved_model_feeds_eval_rollout_and_control() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.toml", SMALL_TRAINING);
    ok(physnet(&["train", "--config", cfg.to_str().unwrap(), "--out", "train"], dir.path()));
    let downstream = format!(
        "model_file = \"train/model.txt\"\n{SMALL_TRAINING}\n[rollout]\nstarts = 2\nsteps = 50\n\n[control]\nsteps = 200\n"
    );
    let cfg = write_config(dir.path(), "use.toml", &downstream);
    let cfg = cfg.to_str().unwrap();
    for cmd in ["eval", "rollout", "control"] {
        ok(physnet(&[cmd, "--config", cfg, "--out", cmd], dir.path()));
    }
    let eval = table(&dir.path().join("eval/metrics.toml"));
    let trained = table(&dir.path().join("train/metrics.toml"));
    assert_eq!(float(&eval, "inverse_nmse"), float(&trained, "test_inverse_nmse"));

    let rollout = table(&dir.path().join("rollout/metrics.toml"));
    assert_eq!(rollout["vpt"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("rollout/rollouts.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 51);

    let control = table(&dir.path().join("control/metrics.toml"));
    assert_eq!(control["task"].as_str(), Some("tracking"));
    assert!(float(&control, "tracking_mse").is_finite());

    // a model of another variant is refused
    let out = physnet(&["eval", "--config", cfg, "--out", "wrong", "--variant", "hnn-structured"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn identified_parameters_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = "variant = \"sysid\"\nmodel_file = \"fit/theta.toml\"\n[plant]\nkind = \"cartpole\"\n[dataset]\nn_samples = 100\n";
    let cfg = write_config(dir.path(), "sysid.toml", text);
    let cfg = cfg.to_str().unwrap();
    ok(physnet(&["sysid", "--config", cfg, "--out", "fit"], dir.path()));
    let m = table(&dir.path().join("fit/metrics.toml"));
    let theta: Vec<f64> = m["theta"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();
    let truth: Vec<f64> = m["plant_theta"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();
    for (a, b) in theta.iter().zip(&truth) {
        assert!((a - b).abs() <= 1e-8 * b.abs(), "{theta:?} vs {truth:?}");
    }
    ok(physnet(&["eval", "--config", cfg, "--out", "eval"], dir.path()));
    assert!(float(&table(&dir.path().join("eval/metrics.toml")), "inverse_nmse") < 1e-9);
}

#[test]
fn module_errors_exit_nonzero_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
variant = "sysid"
[plant]
kind = "two_link_pendulum"
[dataset]
n_samples = 20
[dataset.generator]
kind = "uniform"
q = [[0.0, 0.0], [0.0, 0.0]]
qd = [[0.0, 0.0], [0.0, 0.0]]
tau = [[0.0, 0.0], [0.0, 0.0]]
next_dt = 0.01
"#;
    let cfg = write_config(dir.path(), "bad.toml", text);
    let out = physnet(&["sysid", "--config", cfg.to_str().unwrap(), "--out", "bad"], dir.path());
    assert!(!out.status.success());
    let record: toml::Table = String::from_utf8(out.stderr).unwrap().parse().unwrap();
    assert_eq!(record["kind"].as_str(), Some("RankDeficient"));
    assert_eq!(record["command"].as_str(), Some("sysid"));
    assert_eq!(table(&dir.path().join("bad/error.toml")), record);
    assert!(!dir.path().join("bad/manifest.toml").exists());

    let missing = physnet(&["eval", "--config", "absent.toml", "--out", "x"], dir.path());
    assert!(!missing.status.success());
    let record: toml::Table = String::from_utf8(missing.stderr).unwrap().parse().unwrap();
    assert_eq!(record["kind"].as_str(), Some("Io"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.toml", "[plant]\nkind = \"furuta\"\n[dataset]\nn_samples = 10\n");
    let status = Command::new(env!("CARGO_BIN_EXE_physnet"))
        .args(["gen-data", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("PHYSNET_OUT", dir.path().join("env_out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("env_out/dataset.csv").exists());

    let out = physnet(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
}
