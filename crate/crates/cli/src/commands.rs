use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use tacseg_core::pipeline::{
    checkpoint_modalities, checkpoint_target, derive_seed, detect_intervals, evaluate_demos, filter_recording,
    load_demo, predict_demo, train_skill_model, train_trigger_model, trigger_model_config, LoadedDemo, Target,
    DETECTION_PAD,
};
use tacseg_core::recdata::{save_recording, synchronize, Rate, MANIFEST_FILE};
use tacseg_core::segmenter::{f1_table_csv, save_labels_csv, save_probs, timeline_svg};
use tacseg_core::seqmodels::{load_checkpoint, save_checkpoint, LrSchedule, ModelConfig};
use tacseg_core::synthgen::{generate_dataset, Splits, SynthConfig, GROUND_TRUTH_FILE, SKILL_VOCABULARY, SPLITS_FILE};
use tacseg_core::trainer::TrainConfig;
use tacseg_core::windower::{WindowParams, DEFAULT_MAX_IDLE_RATIO};
use tacseg_core::wrenchproc::{IntervalSet, TRIGGER_VOCABULARY};

use crate::manifest::{write_atomic, RunManifest};
use crate::{EvalArgs, FtFilterArgs, GridArgs, InferArgs, SynthArgs, TrainArgs, UsageError};

pub const CHECKPOINT_FILE: &str = "model.tsck";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const REPORT_FILE: &str = "train_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const F1_TABLE_FILE: &str = "f1_table.csv";
pub const INTERVALS_FILE: &str = "intervals.csv";

fn usage<T>(r: tacseg_core::Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

impl GridArgs {
    fn resolve(&self) -> Result<(Rate, WindowParams)> {
        Ok((usage(Rate::from_hz(self.rate_hz))?, usage(WindowParams::new(self.window, self.stride))?))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Demos under `path`: the named split (or every split) of a dataset
/// directory, or the single recording stored there.
fn dataset_demos(path: &Path, split: Option<&str>) -> Result<(Vec<LoadedDemo>, Option<Splits>)> {
    if path.join(SPLITS_FILE).is_file() {
        let splits = Splits::load(path)?;
        let names: Vec<String> = match split {
            Some(s) => usage(splits.get(s))?.to_vec(),
            None => splits.train.iter().chain(&splits.val).chain(&splits.test).cloned().collect(),
        };
        let demos = names
            .iter()
            .map(|n| load_demo(&path.join(n)))
            .collect::<tacseg_core::Result<Vec<_>>>()?;
        Ok((demos, Some(splits)))
    } else if path.join(MANIFEST_FILE).is_file() {
        Ok((vec![load_demo(path)?], None))
    } else {
        bail!("{} holds neither {SPLITS_FILE} nor {MANIFEST_FILE}", path.display())
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    for (flag, f) in [("--train-frac", a.train_frac), ("--val-frac", a.val_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(UsageError(format!("{flag} must lie in [0, 1], got {f}")).into());
        }
    }
    if a.train_frac + a.val_frac > 1.0 + 1e-9 {
        return Err(UsageError(format!(
            "--train-frac {} and --val-frac {} exceed 1",
            a.train_frac, a.val_frac
        ))
        .into());
    }
    if a.demos == 0 {
        return Err(UsageError("--demos must be at least 1".into()).into());
    }
    let test_frac = (1.0 - a.train_frac - a.val_frac).max(0.0);
    let mut cfg = SynthConfig {
        seed: a.seed,
        clips_per_demo: a.clips,
        frame_rate_hz: a.rate_hz,
        ..SynthConfig::default()
    };
    cfg.trigger.enabled = !a.no_triggers;
    usage(cfg.validate())?;

    let ds = generate_dataset(&cfg, a.demos, [a.train_frac, a.val_frac, test_frac])?;
    create_dir(&a.out)?;
    ds.save(&a.out)?;
    log::info!(
        "wrote {} demos ({} frames) to {}",
        a.demos,
        ds.total_frames(),
        a.out.display()
    );
    let mut m = RunManifest::new("synth", &cfg, Some(a.seed))?;
    m.output(&a.out.join(SPLITS_FILE));
    m.finish(&a.out, started)
}

pub fn ft_filter(a: FtFilterArgs) -> Result<()> {
    let started = Instant::now();
    let (rate, window) = a.grid.resolve()?;
    let detector = match &a.checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let pad = a.pad.unwrap_or(if detector.is_some() { DETECTION_PAD } else { 0 });
    let (demos, splits) = dataset_demos(&a.data, None)?;
    if a.intervals.is_some() && demos.len() != 1 {
        return Err(UsageError("--intervals needs a single recording as --data".into()).into());
    }
    create_dir(&a.out)?;
    let mut m = RunManifest::new("ft-filter", &a, Some(a.seed))?;
    m.input("data", &a.data);

    let mut replaced = 0usize;
    for demo in &demos {
        let name = &demo.recording.name;
        let sync = synchronize(&demo.recording, rate)?;
        let frames = sync.frame_count().unwrap_or(0);
        let intervals = if let Some(ck) = &detector {
            detect_intervals(&sync, ck, &window, pad)?
        } else if let Some(path) = &a.intervals {
            IntervalSet::load(path, frames)?.padded(pad, frames)
        } else {
            let truth = demo
                .truth
                .as_ref()
                .with_context(|| format!("`{name}` has no {GROUND_TRUTH_FILE} for oracle filtering"))?;
            truth.artifacts.padded(pad, frames)
        };
        let cleaned = filter_recording(&sync, &intervals, derive_seed(a.seed, name))?;
        let dir = a.out.join(name);
        save_recording(&cleaned, &dir)?;
        intervals.save(&dir.join(INTERVALS_FILE))?;
        if let Some(gt) = &demo.truth {
            gt.save(&dir.join(GROUND_TRUTH_FILE))?;
        }
        replaced += intervals.intervals().iter().map(|iv| iv.len()).sum::<usize>();
        m.output(&dir);
    }
    if let Some(s) = splits {
        s.save(&a.out)?;
    }
    log::info!("filtered {} recordings, {replaced} frames replaced", demos.len());
    m.finish(&a.out, started)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let (rate, window) = a.grid.resolve()?;
    let max_idle_ratio = a.max_idle_ratio.unwrap_or(match a.target {
        Target::Skill => DEFAULT_MAX_IDLE_RATIO,
        Target::Trigger => 1.0,
    });
    let cfg = TrainConfig {
        epochs_max: a.epochs,
        patience: a.patience,
        schedule: LrSchedule {
            lr0: a.lr,
            ..LrSchedule::default()
        },
        batch_size: a.batch,
        dropout_rate: a.dropout,
        seed: a.seed,
        window,
        max_idle_ratio,
        idle_class: 0,
    };
    usage(cfg.validate())?;
    let model = match a.target {
        Target::Skill => ModelConfig::new(a.arch, SKILL_VOCABULARY.len()),
        Target::Trigger => {
            let mut mc = trigger_model_config();
            if mc.arch != a.arch {
                mc = ModelConfig::new(a.arch, TRIGGER_VOCABULARY.len());
                mc.input_dim = trigger_model_config().input_dim;
            }
            mc
        }
    };
    usage(model.validate())?;

    let (train_demos, _) = dataset_demos(&a.data, Some("train"))?;
    let (val_demos, _) = dataset_demos(&a.data, Some("val"))?;
    let (ck, report) = match a.target {
        Target::Skill => {
            let tr: Vec<_> = train_demos.iter().map(|d| &d.recording).collect();
            let va: Vec<_> = val_demos.iter().map(|d| &d.recording).collect();
            train_skill_model(&cfg, model, &tr, &va, a.modalities, rate)?
        }
        Target::Trigger => {
            let tr: Vec<_> = train_demos.iter().collect();
            let va: Vec<_> = val_demos.iter().collect();
            train_trigger_model(&cfg, model, &tr, &va, rate)?
        }
    };
    log::info!(
        "best epoch {} of {}, validation accuracy {:.4}",
        report.best_epoch,
        report.epochs.len(),
        report.best_val_accuracy
    );

    create_dir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ck, &ck_path)?;
    write_atomic(&a.out.join(EPOCHS_FILE), report.to_jsonl()?.as_bytes())?;
    write_atomic(&a.out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut m = RunManifest::new("train", serde_json::json!({ "args": &a, "train": &cfg, "model": ck.model.config() }), Some(a.seed))?;
    m.input("data", &a.data);
    for f in [CHECKPOINT_FILE, EPOCHS_FILE, REPORT_FILE] {
        m.output(&a.out.join(f));
    }
    m.finish(&a.out, started)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let (rate, window) = a.grid.resolve()?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let (demos, _) = dataset_demos(&a.data, Some(&a.split))?;
    let refs: Vec<_> = demos.iter().collect();
    let metrics = evaluate_demos(&ck, &refs, &window, rate)?;
    let name = match &a.name {
        Some(n) => n.clone(),
        None => match checkpoint_target(&ck)? {
            Target::Skill => format!("{} {}", ck.model.config().arch, checkpoint_modalities(&ck)?),
            Target::Trigger => format!("{} trigger", ck.model.config().arch),
        },
    };
    create_dir(&a.out)?;
    write_atomic(&a.out.join(METRICS_FILE), metrics.to_json(&ck.vocabulary)?.as_bytes())?;
    let table = f1_table_csv(&ck.vocabulary, &[(name, metrics.clone())])?;
    write_atomic(&a.out.join(F1_TABLE_FILE), table.as_bytes())?;
    println!("accuracy {:.4}", metrics.accuracy);

    let mut m = RunManifest::new("eval", &a, None)?;
    m.input("data", &a.data);
    m.input("checkpoint", &a.checkpoint);
    m.output(&a.out.join(METRICS_FILE));
    m.output(&a.out.join(F1_TABLE_FILE));
    m.finish(&a.out, started)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let started = Instant::now();
    let (rate, window) = a.grid.resolve()?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let (demos, _) = dataset_demos(&a.data, Some(&a.split))?;
    if demos.is_empty() {
        bail!("split `{}` of {} is empty", a.split, a.data.display());
    }
    create_dir(&a.out)?;
    let mut m = RunManifest::new("infer", &a, None)?;
    m.input("data", &a.data);
    m.input("checkpoint", &a.checkpoint);
    for demo in &demos {
        let name = &demo.recording.name;
        let (pred, truth) = predict_demo(&ck, demo, &window, rate)?;
        let out = |ext: &str| -> PathBuf { a.out.join(format!("{name}.{ext}")) };
        save_probs(&pred, &out("probs.tsm"))?;
        save_labels_csv(&pred.labels, &ck.vocabulary, &out("labels.csv"))?;
        let mut tracks: Vec<(&str, &[usize])> = vec![("predicted", &pred.labels)];
        if let Some(t) = &truth {
            tracks.push(("truth", t));
        }
        write_atomic(&out("timeline.svg"), timeline_svg(&tracks, &ck.vocabulary).as_bytes())?;
        for ext in ["probs.tsm", "labels.csv", "timeline.svg"] {
            m.output(&out(ext));
        }
    }
    log::info!("labeled {} recordings", demos.len());
    m.finish(&a.out, started)
}
