use std::fs;
use std::path::Path;
use std::process::Command;

use hyperlearn_cli::config::{self, Sources};
use hyperlearn_cli::output::{self, EPOCHS_CSV, LOG_JSON, MANIFEST_JSON, STEPS_CSV};
use hyperlearn_cli::svg::{self, BATCH_SVG, LOSS_SVG};
use hyperlearn_cli::{ExperimentConfig, execute, replay};
use hyperlearn_core::schedule::{EpochRecord, RunLog, StepRecord};

const BIN: &str = env!("CARGO_BIN_EXE_hyperlearn");

fn smoke(overrides: &[&str]) -> ExperimentConfig {
    config::resolve(&Sources {
        preset: Some("smoke".into()),
        file: None,
        overrides: overrides.iter().map(|o| config::parse_override(o).unwrap()).collect(),
    })
    .unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn synthetic_log(epochs: usize, steps_per_epoch: usize, batch: impl Fn(usize) -> usize) -> RunLog {
    let mut log = RunLog::default();
    for e in 1..=epochs {
        for t in 0..steps_per_epoch {
            log.steps.push(StepRecord {
                epoch: e,
                t,
                train_loss: 1.0 / (e + t) as f64,
                meta_loss: (t % 2 == 0).then_some(0.5),
                batch_size: batch(e),
                mixed_sample: None,
                candidate_batch_size: Some(batch(e)),
                lr: 0.1,
            });
        }
        log.epochs.push(EpochRecord {
            epoch: e,
            batch_size: batch(e),
            train_loss: 1.0 / e as f64,
            meta_loss: Some(0.4),
            val_loss: 1.2 / e as f64,
            val_acc: 0.5,
            next_batch_size: batch(e + 1),
            alpha_reset: None,
        });
    }
    log
}

#[test]
fn empty_run_writes_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    let c = smoke(&["epochs=0"]);
    let outcome = execute(&c, dir.path()).unwrap();
    assert!(outcome.log.is_empty());
    assert_eq!(
        read(&dir.path().join(STEPS_CSV)),
        "epoch,t,train_loss,meta_loss_F,batch_size_B,mixed_sample_s,candidate_B,lr_eta\n"
    );
    assert_eq!(read(&dir.path().join(EPOCHS_CSV)), "epoch,val_loss,val_acc,next_B\n");
}

#[test]
fn table_cardinality_and_empty_cells() {
    let dir = tempfile::tempdir().unwrap();
    output::emit_csv(&synthetic_log(2, 4, |_| 32), dir.path()).unwrap();
    let steps = read(&dir.path().join(STEPS_CSV));
    assert_eq!(steps.lines().count(), 1 + 8);
    assert_eq!(steps.lines().nth(1).unwrap(), "1,0,1,0.5,32,,32,0.1");
    assert_eq!(steps.lines().nth(2).unwrap(), "1,1,0.5,,32,,32,0.1");
    assert_eq!(read(&dir.path().join(EPOCHS_CSV)).lines().count(), 1 + 2);
}

#[test]
fn run_writes_manifest_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = smoke(&["emit_svg=true"]);
    execute(&c, dir.path()).unwrap();
    let manifest = output::load_manifest(&dir.path().join(MANIFEST_JSON)).unwrap();
    assert_eq!(manifest.config, c);
    assert_eq!(manifest.seed, c.meta.seed);

    let again = tempfile::tempdir().unwrap();
    execute(&manifest.config, again.path()).unwrap();
    for f in [STEPS_CSV, EPOCHS_CSV, LOG_JSON, LOSS_SVG, BATCH_SVG] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }

    let re = tempfile::tempdir().unwrap();
    replay(&dir.path().join(LOG_JSON), Some(re.path()), true).unwrap();
    for f in [STEPS_CSV, EPOCHS_CSV, LOSS_SVG, BATCH_SVG] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(re.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn charts_are_well_formed_xml() {
    let dir = tempfile::tempdir().unwrap();
    let files = svg::emit_svg(&synthetic_log(5, 2, |e| 16 * e), dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        let text = read(&f);
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));
        assert!(doc.descendants().any(|n| n.text() == Some("epoch")));
    }
}

#[test]
fn empty_log_writes_no_charts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(svg::emit_svg(&RunLog::default(), dir.path()).unwrap().is_empty());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

fn polyline_points(chart: &svg::Chart) -> Vec<(f64, f64)> {
    chart.series[0].points.clone()
}

#[test]
fn constant_schedule_is_one_horizontal_segment() {
    let chart = svg::batch_size_chart(&synthetic_log(4, 1, |_| 64));
    let pts = polyline_points(&chart);
    assert!(pts.iter().all(|p| p.1 == 64.0));
    assert_eq!(pts.first().unwrap().0, 1.0);
    assert_eq!(pts.last().unwrap().0, 5.0);
}

#[test]
fn milestone_schedule_jumps_exactly_at_milestones() {
    let b = |e: usize| match e {
        ..25 => 64,
        25..50 => 128,
        50..100 => 256,
        _ => 512,
    };
    let pts = polyline_points(&svg::batch_size_chart(&synthetic_log(120, 1, b)));
    let jumps: Vec<f64> = pts.windows(2).filter(|w| w[0].1 != w[1].1).map(|w| w[1].0).collect();
    assert_eq!(jumps, vec![25.0, 50.0, 100.0]);
    assert!(pts.windows(2).filter(|w| w[0].1 != w[1].1).all(|w| w[0].0 == w[1].0));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| {
        Command::new(BIN)
            .args(args)
            .env("HYPERLEARN_OUT", dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(status(&["run", "--preset", "smoke", "--set", "epochs=1"]), Some(0));
    assert!(dir.path().join("smoke/seed-0").join(STEPS_CSV).is_file());
    assert_eq!(status(&["run", "--preset", "smoke", "--set", "scheduler=bogus"]), Some(1));
    assert_eq!(status(&["run", "--preset", "smoke", "--set", "lr=1e300"]), Some(2));
    assert_eq!(status(&["replay", "--log", "/nonexistent/log.json"]), Some(3));
    assert_eq!(status(&["grad-check"]), Some(0));
    assert_eq!(status(&["grad-check", "--inject-fault", "sigmoid"]), Some(2));
}

#[test]
fn grad_check_report_is_repeatable() {
    let run = || Command::new(BIN).arg("grad-check").output().unwrap().stdout;
    let first = run();
    assert!(String::from_utf8_lossy(&first).contains("PASS"));
    assert_eq!(first, run());
}

#[test]
fn out_flag_beats_environment_beats_config() {
    let c = smoke(&["out=\"/from/config\""]);
    assert_eq!(config::output_root(Some(Path::new("/flag")), &c), Path::new("/flag"));
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "--preset", "smoke", "--set", "epochs=1", "--set", "out=/nonexistent/never"])
        .env("HYPERLEARN_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("smoke/seed-0/manifest.json").is_file());
}

#[test]
fn repeated_seeds_get_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "--preset", "smoke", "--set", "epochs=1", "--seed", "3", "--seed", "4"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = read(&dir.path().join("smoke/seed-3").join(STEPS_CSV));
    let b = read(&dir.path().join("smoke/seed-4").join(STEPS_CSV));
    assert_ne!(a, b);
}

#[test]
fn config_file_with_unknown_key_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "preset = \"smoke\"\nepochs = 1\nlearning_rate = 0.1\n").unwrap();
    let out = Command::new(BIN).arg("run").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`learning_rate`"));
}
