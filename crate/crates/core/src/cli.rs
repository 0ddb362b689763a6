//! Command-line interface: `generate`, `train`, `evaluate`, `ablate`.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
//! runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::ablate::{run_ablation, AblationResult, COMPONENT_CONFIGS};
use crate::config::{Mode, TrainConfig};
use crate::error::{Result, XplError};
use crate::kv::KvMap;
use crate::model::{read_checkpoint, write_checkpoint, Model};
use crate::pl::write_bank;
use crate::plot::{line_chart, Series};
use crate::report::{eval_csv, training_csv, EvalRow};
use crate::synth::{generate_dataset, read_dataset, write_dataset, Dataset, GenConfig, Split};
use crate::trainer::{MetricsHistory, Trainer};

#[derive(Debug, Parser)]
#[command(name = "xpl", version, about = "Cross pseudo-labeling for audio-visual source localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// ~1.7% labeled
    Default,
    /// 50 labeled / 1000 unlabeled / 200 test
    Benchmark,
}

impl Preset {
    fn gen_config(self, seed: u64) -> GenConfig {
        match self {
            Preset::Default => GenConfig { seed, ..GenConfig::default() },
            Preset::Benchmark => GenConfig::benchmark(seed),
        }
    }

    fn train_config(self) -> TrainConfig {
        match self {
            Preset::Default => TrainConfig::default(),
            Preset::Benchmark => TrainConfig::benchmark(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "benchmark")]
        preset: Preset,
        /// key=value file of dataset settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset setting override, KEY=VALUE (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train models A and B on a dataset.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, value_enum, default_value = "benchmark")]
        preset: Preset,
        /// key=value file of training settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training setting override, KEY=VALUE (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on the test and open-set splits.
    Evaluate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the component ablations and the beta sweep over several seeds.
    Ablate {
        /// First seed; runs use seed, seed+1, ...
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Fixed dataset for every seed; otherwise one dataset is generated per seed
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "benchmark")]
        preset: Preset,
        #[arg(long)]
        gen_config: Option<PathBuf>,
        #[arg(long = "gen-set", value_name = "KEY=VALUE")]
        gen_sets: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                XplError::InvalidConfig(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| XplError::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        XplError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Config file (if any) overlaid with `--set` pairs.
fn layered_kv(file: Option<&Path>, sets: &[String]) -> Result<KvMap> {
    let mut kv = match file {
        Some(p) => KvMap::from_text(&read_text(p)?).map_err(|e| XplError::InvalidConfig(e.to_string()))?,
        None => KvMap::new(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| XplError::InvalidConfig(format!("expected KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn as_usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        XplError::InvalidConfig(_) => e,
        other => XplError::InvalidConfig(other.to_string()),
    })
}

fn gen_config(preset: Preset, seed: u64, file: Option<&Path>, sets: &[String]) -> Result<GenConfig> {
    let kv = layered_kv(file, sets)?;
    let mut cfg = preset.gen_config(seed);
    as_usage(cfg.apply_kv(&kv))?;
    // the command-line seed always wins
    cfg.seed = seed;
    as_usage(cfg.validate())?;
    Ok(cfg)
}

fn train_config(preset: Preset, seed: u64, mode: Option<&str>, file: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let kv = layered_kv(file, sets)?;
    let mut cfg = preset.train_config();
    as_usage(cfg.apply_kv(&kv))?;
    if let Some(m) = mode {
        cfg.mode = m.parse()?;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&read_text(path)?)
}

struct Manifest {
    kv: KvMap,
    started: Instant,
}

impl Manifest {
    fn new(command: &str) -> Self {
        let mut kv = KvMap::new();
        kv.set("tool", concat!("xpl ", env!("CARGO_PKG_VERSION")));
        kv.set("command", command);
        Self { kv, started: Instant::now() }
    }

    fn echo(&mut self, prefix: &str, cfg: &KvMap) {
        for (k, v) in cfg.iter() {
            self.kv.set(&format!("{prefix}.{k}"), v);
        }
    }

    fn artifact(&mut self, name: &str, path: &Path) {
        self.kv.set(&format!("artifact.{name}"), path.display());
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.kv.set("wall_clock_seconds", format!("{:.3}", self.started.elapsed().as_secs_f64()));
        write_atomic(path, &self.kv.to_text())
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { seed, out, preset, config, sets } => {
            let cfg = gen_config(preset, seed, config.as_deref(), &sets)?;
            let mut manifest = Manifest::new("generate");
            manifest.echo("data", &cfg.to_kv());
            let ds = generate_dataset(&cfg)?;
            write_atomic(&out, &write_dataset(&ds))?;
            manifest.artifact("dataset", &out);
            manifest.write(&sibling(&out, "manifest"))
        }
        Command::Train { seed, data, out_dir, mode, preset, config, sets } => {
            let cfg = train_config(preset, seed, mode.as_deref(), config.as_deref(), &sets)?;
            let ds = load_dataset(&data)?;
            let mut manifest = Manifest::new("train");
            manifest.echo("train", &cfg.to_kv());
            manifest.echo("data", &ds.config.to_kv());
            manifest.artifact("dataset", &data);
            cmd_train(&cfg, &ds, &out_dir, &mut manifest)?;
            manifest.write(&out_dir.join("manifest.txt"))
        }
        Command::Evaluate { seed, data, checkpoint, out } => {
            let ds = load_dataset(&data)?;
            let models = read_checkpoint(&read_text(&checkpoint)?)?;
            let mut manifest = Manifest::new("evaluate");
            manifest.kv.set("seed", seed);
            manifest.echo("data", &ds.config.to_kv());
            manifest.artifact("dataset", &data);
            manifest.artifact("checkpoint", &checkpoint);
            let rows = evaluate_models(&models, &ds)?;
            write_atomic(&out, &eval_csv(&rows))?;
            manifest.artifact("eval_csv", &out);
            manifest.write(&sibling(&out, "manifest"))
        }
        Command::Ablate {
            seed,
            seeds,
            out_dir,
            data,
            preset,
            gen_config: gen_file,
            gen_sets,
            config,
            sets,
        } => {
            if seeds == 0 {
                return Err(XplError::InvalidConfig("--seeds must be >= 1".into()));
            }
            let base = train_config(preset, seed, None, config.as_deref(), &sets)?;
            let mut manifest = Manifest::new("ablate");
            manifest.echo("train", &base.to_kv());
            manifest.kv.set("seeds", seeds);
            let seed_list: Vec<u64> = (seed..seed + seeds).collect();
            let datasets: Vec<Dataset> = match &data {
                Some(path) => {
                    manifest.artifact("dataset", path);
                    vec![load_dataset(path)?]
                }
                None => {
                    let mut out = Vec::new();
                    for &s in &seed_list {
                        let g = gen_config(preset, s, gen_file.as_deref(), &gen_sets)?;
                        if s == seed {
                            manifest.echo("data", &g.to_kv());
                        }
                        out.push(generate_dataset(&g)?);
                    }
                    out
                }
            };
            let pairs: Vec<(u64, &Dataset)> = seed_list
                .iter()
                .enumerate()
                .map(|(i, &s)| (s, &datasets[i.min(datasets.len() - 1)]))
                .collect();
            let result = run_ablation(&base, &pairs, |name, s| eprintln!("ablate: {name} seed {s}"))?;
            let csv_path = out_dir.join("ablate.csv");
            write_atomic(&csv_path, &result.to_csv())?;
            manifest.artifact("ablate_csv", &csv_path);
            let svg_path = out_dir.join("ablate_ciou.svg");
            write_atomic(&svg_path, &ablation_chart(&result))?;
            manifest.artifact("ablate_svg", &svg_path);
            manifest.write(&out_dir.join("manifest.txt"))
        }
    }
}

/// `dir/name.ext` → `dir/name.ext.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(cfg: &TrainConfig, ds: &Dataset, out_dir: &Path, manifest: &mut Manifest) -> Result<()> {
    let mut trainer = Trainer::new(cfg.clone(), ds)?;
    let mut history = MetricsHistory::default();
    for epoch in 0..cfg.total_epochs {
        let rec = trainer.run_epoch(epoch)?;
        eprintln!(
            "epoch {epoch}: ciou_A {:.1} ciou_B {:.1} loss {:.4} |D_all| {}",
            rec.ciou[0], rec.ciou[1], rec.losses.total, rec.n_selected
        );
        history.records.push(rec);
    }
    let out = trainer.into_output(history);
    let files = [
        ("metrics_csv", "metrics.csv", training_csv(&out.history)),
        ("checkpoint", "checkpoint.txt", write_checkpoint(&[&out.models[0], &out.models[1]])),
        ("bank", "bank.txt", write_bank(&out.bank)),
        ("ciou_svg", "ciou.svg", training_chart(cfg.mode, &out.history)),
    ];
    for (name, file, contents) in files {
        let path = out_dir.join(file);
        write_atomic(&path, &contents)?;
        manifest.artifact(name, &path);
    }
    Ok(())
}

fn training_chart(mode: Mode, h: &MetricsHistory) -> String {
    let series = |label: &str, f: fn(&crate::trainer::EpochRecord) -> f64| Series {
        label: label.to_string(),
        points: h.records.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    };
    line_chart(
        &format!("Test CIoU ({mode})"),
        "epoch",
        "CIoU",
        (0.0, 100.0),
        &[series("model A", |r| r.ciou[0]), series("model B", |r| r.ciou[1])],
    )
}

/// Median model-A CIoU per epoch for each component configuration.
fn ablation_chart(result: &AblationResult) -> String {
    let series: Vec<Series> = COMPONENT_CONFIGS
        .iter()
        .filter_map(|&name| {
            let runs: Vec<&MetricsHistory> = result.runs_of(name).map(|r| &r.history).collect();
            let epochs = runs.first()?.records.len();
            let points = (0..epochs)
                .map(|e| {
                    let vals: Vec<f64> = runs.iter().map(|h| h.records[e].ciou[0]).collect();
                    (e as f64, crate::ablate::median(&vals))
                })
                .collect();
            Some(Series { label: name.to_string(), points })
        })
        .collect();
    line_chart("Median test CIoU (model A)", "epoch", "CIoU", (0.0, 100.0), &series)
}

/// One row per model per masked evaluation split present in `ds`.
pub fn evaluate_models(models: &[Model], ds: &Dataset) -> Result<Vec<EvalRow>> {
    for m in models {
        if m.params.visual_in() != ds.visual_channels() || m.params.audio_in() != ds.audio_channels() {
            return Err(XplError::InvalidConfig(format!(
                "checkpoint model {} expects {}/{} channels, dataset has {}/{}",
                m.tag,
                m.params.visual_in(),
                m.params.audio_in(),
                ds.visual_channels(),
                ds.audio_channels()
            )));
        }
    }
    let mut rows = Vec::new();
    for split in [Split::Test, Split::OpensetTest] {
        let pairs = ds.split(split);
        if pairs.is_empty() {
            continue;
        }
        let gts: Vec<&crate::synth::Mask> = pairs
            .iter()
            .map(|p| p.gt_mask.as_ref().ok_or_else(|| XplError::domain("evaluate", "missing mask")))
            .collect::<Result<_>>()?;
        for m in models {
            let maps = pairs.iter().map(|p| m.prediction_map(p)).collect::<Result<Vec<_>>>()?;
            rows.push(EvalRow {
                split,
                model: m.tag,
                report: crate::metrics::evaluate(&maps, &gts)?,
            });
        }
    }
    Ok(rows)
}
