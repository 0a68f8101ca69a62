use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use timing_core::datamodel::{
    an_to_smartsense, reconstruct_streams, split, window_streams, Dataset, Schema, Session, Vocabulary, SWEEP_BIN_COUNTS,
};
use timing_core::diffcore::Checkpoint;
use timing_core::embed::{DAY_OF_WEEK_PERIOD, DAY_OF_YEAR_PERIOD};
use timing_core::experiment::{
    compare_heads, default_report_bins, evaluate_at, run_ablations, sweep_bins, sweep_context, train_with, MetricReport,
    SweepConfig, TimeDistance, CONTEXT_LAYERS, CONTEXT_WINDOWS,
};
use timing_core::nets::{Model, ModelConfig};
use timing_core::syngen::{analyze_device_frequency, analyze_time_diffs, generate_dataset, RoutineBank, DEFAULT_DIFF_EDGES};
use timing_core::table::Table;

use crate::config::{RunConfig, SplitSettings};
use crate::manifest::{unix_now, RunManifest};
use crate::{Budget, EvalArgs, GenerateArgs, SweepKind, SweepOpts, TrainArgs};

pub const DATASET_FILE: &str = "sessions.tsv";
pub const SMARTSENSE_FILE: &str = "sessions_smartsense.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";

/// Stored in the checkpoint so evaluation can rebuild the model and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub split: SplitSettings,
    pub window: Option<usize>,
    pub dataset_hash: String,
}

/// Output directory of one command, created on demand.
struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn new(root: &Path, explicit: Option<PathBuf>, name: &str) -> Result<Self> {
        let dir = explicit.unwrap_or_else(|| root.join(name));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, artifacts: Vec::new() })
    }

    fn path(&mut self, file: &str) -> PathBuf {
        self.artifacts.push(file.to_string());
        self.dir.join(file)
    }

    fn write(&mut self, file: &str, text: &str) -> Result<()> {
        let path = self.path(file);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn finish(self, subcommand: &str, config_path: Option<PathBuf>, seed: u64, dataset_hash: String, config: &impl Serialize, started: u64) -> Result<()> {
        let manifest = RunManifest {
            subcommand: subcommand.into(),
            config_path,
            seed,
            dataset_hash,
            output_dir: self.dir.clone(),
            config: serde_json::to_value(config)?,
            artifacts: self.artifacts,
            started_unix: started,
            finished_unix: unix_now(),
        };
        manifest.write(&self.dir)
    }
}

fn load_bank(choice: &str, cfg: &timing_core::syngen::GeneratorConfig) -> Result<RoutineBank> {
    Ok(match choice {
        "default" => RoutineBank::default_bank(),
        "none" => RoutineBank { users: Vec::new() },
        "synth" => RoutineBank::synthesize(cfg, cfg.seed),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading routine bank {path}"))?;
            RoutineBank::from_json(&text)?
        }
    })
}

pub fn generate(root: &Path, a: GenerateArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
        cfg.generator.seed = seed;
    }
    if let Some(users) = a.users {
        cfg.generator.num_users = users;
    }
    if let Some(n) = a.sessions {
        cfg.generator.target_instances = n;
    }
    if let Some(r) = a.routines {
        cfg.routines = Some(r);
    }
    let gen = &cfg.generator;
    let bank = load_bank(cfg.routines.as_deref().unwrap_or("default"), gen)?;
    let ds = generate_dataset(gen, &bank)?;

    let mut out = Output::new(root, a.common.out, "generate")?;
    let data_path = out.path(DATASET_FILE);
    ds.save(&data_path)?;
    let vocab_path = Vocabulary::sidecar_path(&data_path);
    gen.vocabulary().save(&vocab_path)?;
    out.artifacts.push(format!("{DATASET_FILE}.vocab.json"));
    out.write("routines.json", &bank.to_json())?;
    let hist = analyze_time_diffs(&ds.sessions, &DEFAULT_DIFF_EDGES);
    out.write("diff_histogram.tsv", &hist.to_table().to_tsv())?;
    let freq = analyze_device_frequency(&ds.sessions, gen.num_devices as usize);
    out.write("device_frequency.tsv", &freq.to_table().to_tsv())?;
    if a.smartsense {
        let ss = an_to_smartsense(&ds)?;
        ss.save(&out.path(SMARTSENSE_FILE))?;
        Vocabulary::save(&gen.vocabulary(), &Vocabulary::sidecar_path(&out.dir.join(SMARTSENSE_FILE)))?;
        out.artifacts.push(format!("{SMARTSENSE_FILE}.vocab.json"));
    }

    let s = ds.summary();
    println!("sessions\t{}", s.sessions);
    println!("devices\t{}", s.devices_observed);
    println!("controls\t{}", s.controls_observed);
    println!("users\t{}", s.users_observed);
    println!("max_diff_share\t{:.4}", hist.max_share());
    println!("top2_device_share\t{:.4}", freq.top2_share());
    println!("written\t{}", data_path.display());
    let seed = cfg.seed;
    out.finish("generate", a.common.config, seed, ds.content_hash(), &cfg, started)
}

fn day_period(schema: Schema) -> f64 {
    match schema {
        Schema::An => DAY_OF_YEAR_PERIOD,
        Schema::SmartSense => DAY_OF_WEEK_PERIOD,
    }
}

/// Sessions of the dataset, optionally rebuilt with `window` input actions.
fn sessions_for(ds: &Dataset, window: Option<usize>) -> Result<Vec<Session>> {
    match window {
        None => Ok(ds.sessions.clone()),
        Some(w) => Ok(window_streams(&reconstruct_streams(&ds.sessions), w + 1, ds.header.schema)?),
    }
}

/// Fits the model's vocabulary, date period and sequence length to the data.
fn fit_to_data(model: &mut ModelConfig, ds: &Dataset, seq_len: usize) {
    model.num_devices = ds.header.num_devices as usize;
    model.num_controls = ds.header.num_controls as usize;
    model.day_period = day_period(ds.header.schema);
    model.seq_len = seq_len;
}

fn apply_budget(cfg: &mut RunConfig, b: &Budget) {
    if let Some(e) = b.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = b.patience {
        cfg.train.patience = p;
    }
    if let Some(t) = b.time_limit {
        cfg.train.time_limit_secs = Some(t);
    }
    cfg.train.seed = cfg.seed;
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn report_table(r: &MetricReport) -> Table {
    let mut t = Table::new(["metric", "value"]);
    t.push(vec!["model".into(), r.model.clone()]);
    t.push(vec!["examples".into(), r.num_examples.to_string()]);
    for (k, p) in &r.precision {
        t.push(vec![format!("precision_{k:02}"), format!("{p:.6}")]);
    }
    t.push(vec!["rmse".into(), format!("{:.3}", r.rmse)]);
    t
}

fn write_report(out: &mut Output, report: &MetricReport) -> Result<()> {
    out.write(REPORT_FILE, &(serde_json::to_string_pretty(report)? + "\n"))?;
    let table = report_table(report).to_tsv();
    out.write("report.tsv", &table)?;
    print!("{table}");
    Ok(())
}

pub fn train(root: &Path, a: TrainArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    apply_budget(&mut cfg, &a.budget);
    let m = &mut cfg.model;
    if let Some(k) = a.model.model {
        m.kind = k;
    }
    if let Some(v) = a.model.ablation {
        m.ablation = v;
    }
    if let Some(h) = a.model.head {
        m.head = h;
    }
    if let Some(k) = a.bins {
        m.num_bins = k;
    }
    if let Some(l) = a.layers {
        m.layers = l;
    }

    let ds = load_dataset(&a.data)?;
    let hash = ds.content_hash();
    let sessions = sessions_for(&ds, a.window)?;
    let seq_len = sessions.first().map_or(0, |s| s.actions.len().saturating_sub(1));
    fit_to_data(&mut cfg.model, &ds, seq_len);
    let parts = split(&sessions, cfg.split.ratios(), cfg.split.seed)?;
    let model = Model::new(cfg.model.clone(), cfg.seed)?;
    eprintln!("training {} ({} parameters)", cfg.model.kind, model.num_parameters());
    let outcome = train_with(model, &parts, &cfg.train, &hash, |r| {
        eprintln!("epoch {:>3}  loss {:.4}  val {:.4}", r.epoch, r.train_loss, r.val_precision);
    })?;
    eprintln!("best epoch {} (val {:.4}), stopped by {:?}", outcome.best_epoch, outcome.best_val_precision, outcome.stop);

    let mut out = Output::new(root, a.common.out, "train")?;
    let meta = CheckpointMeta { model: cfg.model.clone(), split: cfg.split.clone(), window: a.window, dataset_hash: hash.clone() };
    Checkpoint::from_store(&outcome.model.params, &serde_json::to_string(&meta)?).save(&out.path(CHECKPOINT_FILE))?;
    let mut history = Table::new(["epoch", "train_loss", "val_precision"]);
    for r in &outcome.history {
        history.push(vec![r.epoch.to_string(), format!("{:.6}", r.train_loss), format!("{:.6}", r.val_precision)]);
    }
    out.write("history.tsv", &history.to_tsv())?;
    write_report(&mut out, &outcome.test)?;
    let seed = cfg.seed;
    out.finish("train", a.common.config, seed, hash, &cfg, started)
}

pub fn eval(root: &Path, a: EvalArgs) -> Result<()> {
    let started = unix_now();
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.meta).context("checkpoint metadata")?;
    let mut model = Model::new(meta.model.clone(), 0)?;
    ckpt.restore_into(&mut model.params)?;
    let ds = load_dataset(&a.data)?;
    let hash = ds.content_hash();
    if ds.header.num_devices as usize != meta.model.num_devices || ds.header.num_controls as usize != meta.model.num_controls {
        bail!(
            "checkpoint expects {} devices and {} controls, dataset has {} and {}",
            meta.model.num_devices,
            meta.model.num_controls,
            ds.header.num_devices,
            ds.header.num_controls
        );
    }
    let sessions = sessions_for(&ds, meta.window)?;
    let bins = if a.bins.is_empty() { default_report_bins(&meta.model, ds.header.schema) } else { a.bins.clone() };
    let distance = if a.circular { TimeDistance::Circular } else { TimeDistance::Linear };
    let report = if a.all {
        evaluate_at(&model, &sessions, &bins, &hash, distance)?
    } else {
        let parts = split(&sessions, meta.split.ratios(), meta.split.seed)?;
        evaluate_at(&model, parts.test(), &bins, &hash, distance)?
    };
    let mut out = Output::new(root, a.out, "eval")?;
    write_report(&mut out, &report)?;
    let config = serde_json::json!({ "checkpoint": a.checkpoint, "data": a.data, "bins": bins, "all": a.all, "circular": a.circular });
    out.finish("eval", None, 0, hash, &config, started)
}

pub fn sweep(root: &Path, kind: SweepKind, a: SweepOpts) -> Result<()> {
    let started = unix_now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    apply_budget(&mut cfg, &a.budget);
    if let Some(k) = a.model {
        cfg.model.kind = k;
    }
    let ds = load_dataset(&a.data)?;
    let hash = ds.content_hash();
    let seq_len = ds.header.session_len.saturating_sub(1);
    fit_to_data(&mut cfg.model, &ds, seq_len);
    let sweep = SweepConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        split: cfg.split.ratios(),
        split_seed: cfg.split.seed,
        model_seed: cfg.seed,
    };
    let or = |given: &[usize], default: &[usize]| if given.is_empty() { default.to_vec() } else { given.to_vec() };
    let (name, result) = match kind {
        SweepKind::Context => ("context", sweep_context(&ds, &sweep, &or(&a.window, &CONTEXT_WINDOWS), &or(&a.layers, &CONTEXT_LAYERS))?),
        SweepKind::Bins => ("bins", sweep_bins(&ds, &sweep, &or(&a.bins, &SWEEP_BIN_COUNTS))?),
        SweepKind::Regcls => ("regcls", compare_heads(&ds, &sweep)?),
        SweepKind::Ablation => ("ablation", run_ablations(&ds, &sweep)?),
    };
    let mut out = Output::new(root, a.common.out, &format!("sweep-{name}"))?;
    let tsv = result.table.to_tsv();
    out.write(&format!("sweep_{name}.tsv"), &tsv)?;
    out.write("reports.json", &(serde_json::to_string_pretty(&result.reports)? + "\n"))?;
    print!("{tsv}");
    let seed = cfg.seed;
    out.finish(&format!("sweep {name}"), a.common.config, seed, hash, &cfg, started)
}
