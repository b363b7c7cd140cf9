use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use eventnet_cli::infer::{run_infer, InferRow};
use eventnet_cli::train::{load_lut, load_model, RunConfig};
use eventnet_cli::InferMode;
use eventnet_core::oracle::batch_global_output;
use eventnet_core::synth::{SceneConfig, ShapeConfig};
use eventnet_core::{AblationMode, EventWindow, ModelConfig, SensorGeometry, TrainConfig};
use tempfile::TempDir;

fn eventnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eventnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

fn geometry() -> SensorGeometry {
    SensorGeometry::new(32, 32).unwrap()
}

fn small_scene() -> SceneConfig {
    let mut scene = SceneConfig::desk(4);
    scene.geometry = geometry();
    scene.duration_s = 1.5;
    scene.shapes = vec![
        ShapeConfig {
            vertices: vec![[4.0, 12.0], [12.0, 12.0], [8.0, 5.0]],
            velocity: [60.0, 40.0],
            class: 1,
        },
        ShapeConfig {
            vertices: vec![[20.0, 18.0], [26.0, 18.0], [26.0, 24.0], [20.0, 24.0]],
            velocity: [-45.0, 55.0],
            class: 0,
        },
    ];
    scene
}

fn small_run(mode: AblationMode) -> RunConfig {
    let model = ModelConfig {
        mode,
        mlp1: vec![16, 16],
        mlp2: vec![16, 32, 16],
        mlp3: Some(vec![32, 2]),
        mlp4: Some(vec![32, 2]),
        ..ModelConfig::desk(geometry(), 16)
    };
    let train = TrainConfig {
        epochs: 2,
        windows_per_epoch: 32,
        batch_size: 8,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    RunConfig { model, train }
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn write_toml<T: serde::Serialize>(path: &Path, value: &T) {
    fs::write(path, toml::to_string(value).unwrap()).unwrap();
}

/// A small scene plus weights and a table trained on it for `mode`.
fn trained(mode: AblationMode) -> Fixture {
    let f = Fixture {
        dir: tempfile::tempdir().unwrap(),
    };
    write_toml(&f.path("scene.toml"), &small_scene());
    write_toml(&f.path("run.toml"), &small_run(mode));
    let out = eventnet(&["synth", "--config", &f.s("scene.toml"), "--out", &f.s("scene")]);
    assert!(out.status.success(), "{out:?}");
    let out = eventnet(&[
        "train",
        "--data",
        &f.s("scene"),
        "--config",
        &f.s("run.toml"),
        "--out",
        &f.s("model.evnw"),
    ]);
    assert!(out.status.success(), "{out:?}");
    if mode.is_recursive() {
        let out = eventnet(&["lut", "--weights", &f.s("model.evnw"), "--out", &f.s("model.lut")]);
        assert!(out.status.success(), "{out:?}");
    }
    f
}

#[test]
fn synth_writes_three_identical_files_for_a_fixed_seed() {
    let f = Fixture {
        dir: tempfile::tempdir().unwrap(),
    };
    write_toml(&f.path("scene.toml"), &small_scene());
    for run in ["a", "b"] {
        let out = eventnet(&[
            "synth",
            "--config",
            &f.s("scene.toml"),
            "--seed",
            "9",
            "--out",
            &f.s(run),
        ]);
        assert!(out.status.success(), "{out:?}");
    }
    for file in ["events.csv", "labels.csv", "motion.csv"] {
        let a = fs::read(f.path("a").join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(f.path("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "geometry = [").unwrap();
    let out = eventnet(&[
        "synth",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = eventnet(&["train", "--data", ".", "--mode", "sideways", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_files_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing.evnw");
    let out = eventnet(&["lut", "--weights", missing.to_str().unwrap(), "--out", "x.lut"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_twice_with_one_seed_gives_identical_weights() {
    let f = trained(AblationMode::Full);
    let out = eventnet(&[
        "train",
        "--data",
        &f.s("scene"),
        "--config",
        &f.s("run.toml"),
        "--out",
        &f.s("again.evnw"),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(
        fs::read(f.path("model.evnw")).unwrap(),
        fs::read(f.path("again.evnw")).unwrap()
    );
    let log = fs::read_to_string(f.path("model.loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
}

#[test]
fn concurrent_inference_matches_the_batch_reference() {
    let f = trained(AblationMode::Full);
    let model = load_model(&f.path("model.evnw")).unwrap();
    let lut = Arc::new(load_lut(&f.path("model.lut")).unwrap());
    let events = eventnet_cli::data::read_events(&f.path("scene"), geometry()).unwrap();
    let hz = 200.0;
    let out = run_infer(&model, Some(lut), &events, InferMode::Global, hz).unwrap();
    assert!(out.recursive);

    let span = (events.last().unwrap().t - events[0].t) as f64 / 1e6;
    let expected = (hz * span).floor() as usize;
    assert!(
        out.rows.len().abs_diff(expected) <= 1,
        "{} rows for {expected}",
        out.rows.len()
    );

    let tau = model.config.tau_us;
    let mut checked = 0;
    for row in out.rows.iter().step_by(7) {
        let InferRow::Global { t, outputs } = row else {
            panic!("global rows expected")
        };
        let window = EventWindow::from_events(&events, tau, *t).unwrap();
        let reference = batch_global_output(&window, &model).unwrap();
        for (a, b) in outputs.iter().zip(&reference) {
            assert!((*a as f64 - b).abs() < 1e-4, "t={t}: {a} vs {b}");
        }
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn eventwise_inference_labels_every_event_once() {
    let f = trained(AblationMode::Full);
    let out = eventnet(&[
        "infer",
        "--weights",
        &f.s("model.evnw"),
        "--lut",
        &f.s("model.lut"),
        "--events",
        &f.s("scene"),
        "--mode",
        "eventwise",
        "--out",
        &f.s("seg.csv"),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(value(&text, "rows"), value(&text, "events"));

    let out = eventnet(&[
        "eval",
        "--predictions",
        &f.s("seg.csv"),
        "--truth",
        &f.path("scene").join("labels.csv").to_string_lossy(),
        "--task",
        "seg",
    ]);
    assert!(out.status.success(), "{out:?}");
    let ga: f64 = value(&stdout(&out), "ga").parse().unwrap();
    assert!((0.0..=100.0).contains(&ga));
}

#[test]
fn a_zero_query_rate_consumes_the_stream_without_output() {
    let f = trained(AblationMode::Full);
    let out = eventnet(&[
        "infer",
        "--weights",
        &f.s("model.evnw"),
        "--lut",
        &f.s("model.lut"),
        "--events",
        &f.s("scene"),
        "--query-hz",
        "0",
        "--out",
        &f.s("none.csv"),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(value(&text, "rows"), "0");
    assert_ne!(value(&text, "events"), "0");
}

#[test]
fn a_table_from_other_weights_is_refused() {
    let a = trained(AblationMode::Full);
    let mut run = small_run(AblationMode::Full);
    run.train.seed = 99;
    write_toml(&a.path("other.toml"), &run);
    let out = eventnet(&[
        "train",
        "--data",
        &a.s("scene"),
        "--config",
        &a.s("other.toml"),
        "--out",
        &a.s("other.evnw"),
    ]);
    assert!(out.status.success(), "{out:?}");
    let out = eventnet(&[
        "infer",
        "--weights",
        &a.s("other.evnw"),
        "--lut",
        &a.s("model.lut"),
        "--events",
        &a.s("scene"),
        "--out",
        &a.s("out.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn modes_without_decay_run_on_the_batch_path() {
    let f = trained(AblationMode::NoAll);
    let out = eventnet(&["lut", "--weights", &f.s("model.evnw"), "--out", &f.s("model.lut")]);
    assert!(out.status.success(), "{out:?}");
    let out = eventnet(&[
        "infer",
        "--weights",
        &f.s("model.evnw"),
        "--lut",
        &f.s("model.lut"),
        "--events",
        &f.s("scene"),
        "--query-hz",
        "50",
        "--out",
        &f.s("out.csv"),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(value(&stdout(&out), "path"), "batch");
}

fn write_lines(path: &Path, lines: &[String]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn eval_reproduces_the_reference_scores() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    let truth = [0, 1, 1, 0];
    let mut rows = vec!["index,class".to_string()];
    rows.extend(truth.iter().enumerate().map(|(i, l)| format!("{i},{l}")));
    write_lines(&labels, &rows);

    let score = |classes: &[usize]| {
        let pred = dir.path().join("pred.csv");
        let mut rows = vec!["index,t_us,class".to_string()];
        rows.extend(classes.iter().enumerate().map(|(i, c)| format!("{i},{i},{c}")));
        write_lines(&pred, &rows);
        let out = eventnet(&[
            "eval",
            "--predictions",
            pred.to_str().unwrap(),
            "--truth",
            labels.to_str().unwrap(),
            "--task",
            "seg",
        ]);
        assert!(out.status.success(), "{out:?}");
        stdout(&out)
    };
    let perfect = score(&truth);
    assert_eq!(value(&perfect, "ga"), "100.0000");
    assert_eq!(value(&perfect, "miou"), "100.0000");
    assert_eq!(value(&score(&[1, 1, 1, 1]), "miou"), "25.0000");

    let short = dir.path().join("short.csv");
    write_lines(&short, &["index,t_us,class".into(), "0,0,0".into()]);
    let out = eventnet(&[
        "eval",
        "--predictions",
        short.to_str().unwrap(),
        "--truth",
        labels.to_str().unwrap(),
        "--task",
        "seg",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn a_constant_motion_offset_scores_its_length() {
    let dir = tempfile::tempdir().unwrap();
    let motion = dir.path().join("motion.csv");
    write_lines(&motion, &["t_us,u,v".into(), "0,100,-50".into()]);
    let pred = dir.path().join("pred.csv");
    // 100 and -50 px/s over a 20 ms window are 2 and -1 px per window.
    write_lines(&pred, &["t_us,y0,y1".into(), "1000,3,-1".into(), "9000,3,-1".into()]);
    let out = eventnet(&[
        "eval",
        "--predictions",
        pred.to_str().unwrap(),
        "--truth",
        motion.to_str().unwrap(),
        "--task",
        "motion",
        "--tau-us",
        "20000",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(value(&stdout(&out), "l2_px_per_window"), "1.000000");
}

#[test]
fn a_zero_duration_benchmark_reports_nothing_and_succeeds() {
    let out = eventnet(&["bench", "--k", "16", "--duration-s", "0"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(value(&stdout(&out), "events"), "0");
}
