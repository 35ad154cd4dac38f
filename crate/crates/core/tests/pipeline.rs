use spikedisc::models::Checkpoint;
use spikedisc::train::{
    evaluate, generate_avtoy, nearest_centroid_accuracy, parse_metrics_csv, train, AvDataset, AvToySpec, ExperimentConfig,
    Modality,
};
use std::path::Path;
use std::process::Command;
use tempfile::TempDir;

fn small_spec() -> AvToySpec {
    AvToySpec { per_class: 10, ..AvToySpec::default() }
}

fn small_config(data: &Path, out: &Path, modality: Modality, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        modality,
        seed: 3,
        steps: 3,
        batch_size: 8,
        epochs,
        data_dir: data.to_path_buf(),
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.optimizer.lr = 5e-3;
    cfg
}

#[test]
fn generator_is_deterministic_and_sized() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let spec = AvToySpec::default();
    let m = generate_avtoy(&spec, 12, a.path()).unwrap();
    generate_avtoy(&spec, 12, b.path()).unwrap();
    assert_eq!(m.samples.len(), 400);
    assert_eq!(m.train_count + m.test_count, 400);
    for f in ["manifest.json", "images.sdt", "audio/00000.f32", "audio/00399.f32"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = TempDir::new().unwrap();
    generate_avtoy(&spec, 13, c.path()).unwrap();
    assert_ne!(std::fs::read(a.path().join("images.sdt")).unwrap(), std::fs::read(c.path().join("images.sdt")).unwrap());
}

#[test]
fn both_modalities_carry_class_signal() {
    let dir = TempDir::new().unwrap();
    generate_avtoy(&AvToySpec::default(), 1, dir.path()).unwrap();
    let data = AvDataset::load(dir.path(), &ExperimentConfig::default().frontend).unwrap();
    assert_eq!(data.audio.shape(), &[400, 1, 64, 28]);
    assert!(data.audio.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(data.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let chance = 1.0 / data.classes() as f64;
    for x in [&data.images, &data.audio] {
        let acc = nearest_centroid_accuracy(x, &data.labels, &data.train, &data.test, data.classes());
        assert!(acc > chance + 0.2, "nearest-centroid accuracy {acc}");
    }
}

#[test]
fn zero_epochs_writes_an_untrained_checkpoint() {
    let (data, out) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    generate_avtoy(&small_spec(), 0, data.path()).unwrap();
    let summary = train(&small_config(data.path(), out.path(), Modality::Visual, 0)).unwrap();
    assert!(summary.metrics.is_empty());
    let ckpt = Checkpoint::load(&summary.last).unwrap();
    assert_eq!(ckpt.epoch, 0);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let data = TempDir::new().unwrap();
    generate_avtoy(&small_spec(), 0, data.path()).unwrap();
    let (straight, split) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let full = train(&small_config(data.path(), straight.path(), Modality::Audio, 2)).unwrap();

    train(&small_config(data.path(), split.path(), Modality::Audio, 1)).unwrap();
    let mut cfg = small_config(data.path(), split.path(), Modality::Audio, 2);
    cfg.resume = true;
    let resumed = train(&cfg).unwrap();

    let rows = |p: &Path| parse_metrics_csv(&std::fs::read_to_string(p).unwrap()).unwrap();
    assert_eq!(rows(&full.metrics_path), rows(&resumed.metrics_path));
    let (a, b) = (Checkpoint::load(&full.last).unwrap(), Checkpoint::load(&resumed.last).unwrap());
    for (p, q) in a.model.params.iter().zip(b.model.params.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn resume_refuses_a_different_config() {
    let data = TempDir::new().unwrap();
    generate_avtoy(&small_spec(), 0, data.path()).unwrap();
    let out = TempDir::new().unwrap();
    train(&small_config(data.path(), out.path(), Modality::Visual, 1)).unwrap();
    let mut cfg = small_config(data.path(), out.path(), Modality::Visual, 2);
    cfg.resume = true;
    cfg.seed += 1;
    assert!(train(&cfg).is_err());
}

#[test]
fn evaluation_matches_the_logged_accuracy() {
    let (data, out, eval) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    generate_avtoy(&small_spec(), 0, data.path()).unwrap();
    let summary = train(&small_config(data.path(), out.path(), Modality::Visual, 2)).unwrap();
    let logged = summary.metrics.last().unwrap().test_acc;
    let reports = evaluate(&summary.last, data.path(), eval.path(), Some(&eval.path().join("bank.sdt"))).unwrap();
    let test = reports.iter().find(|r| r.split == "test").unwrap();
    assert_eq!(test.accuracy, logged);
    assert!(eval.path().join("bank-test.sdt").exists());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikedisc"))
}

#[test]
fn cli_reports_config_errors_with_exit_code_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "modality = \"visual\"\nsteps = 0\n").unwrap();
    let out = cli().args(["describe", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&bad, "no_such_field = 1\n").unwrap();
    let out = cli().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_generates_data_and_describes_models() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "per_class = 5\n").unwrap();
    let data = dir.path().join("data");
    let out = cli().args(["gen-data", "--seed", "4", "--spec"]).arg(&spec).arg("--out").arg(&data).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/audio.toml");
    let out = cli().args(["describe", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("parameters:"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["visual.toml", "audio.toml", "fusion.toml"] {
        let cfg = ExperimentConfig::load(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        if cfg.modality != Modality::Fusion {
            cfg.build_model().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
    let spec: AvToySpec = toml::from_str(&std::fs::read_to_string(dir.join("avtoy.toml")).unwrap()).unwrap();
    assert_eq!(spec, AvToySpec::default());
}
