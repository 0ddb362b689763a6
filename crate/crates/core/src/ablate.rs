//! Ablation sweep: the component matrix plus the β grid, over several seeds.

use crate::config::{Ablations, Mode, TrainConfig};
use crate::error::Result;
use crate::report::fmt_num;
use crate::synth::Dataset;
use crate::trainer::{run_experiment, MetricsHistory};

pub const BETA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub const ABLATE_HEADER: &str =
    "kind,config,seed,ciou_A,auc_A,ciou_B,auc_B,ciou_avg,openset_ciou_A,openset_auc_A,tail_std";

/// Names of the component configurations, full XPL first.
pub const COMPONENT_CONFIGS: [&str; 7] = [
    "xpl",
    "no_plema",
    "no_sharpen",
    "no_cross_refine",
    "no_data_selection",
    "vanilla_hard_pl",
    "sup_only",
];

pub fn beta_name(beta: f64) -> String {
    format!("beta_{beta}")
}

/// The 7 component configurations followed by the 5 β-sweep configurations,
/// all derived from `base` (whose mode and ablation flags are overridden).
pub fn ablation_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let xpl = TrainConfig {
        mode: Mode::Xpl,
        ablations: Ablations::default(),
        ..base.clone()
    };
    let with = |f: fn(&mut Ablations)| {
        let mut c = xpl.clone();
        f(&mut c.ablations);
        c
    };
    let mut out = vec![
        ("xpl".to_string(), xpl.clone()),
        ("no_plema".into(), with(|a| a.no_plema = true)),
        ("no_sharpen".into(), with(|a| a.no_sharpen = true)),
        ("no_cross_refine".into(), with(|a| a.no_cross_refine = true)),
        ("no_data_selection".into(), with(|a| a.no_data_selection = true)),
        ("vanilla_hard_pl".into(), TrainConfig { mode: Mode::VanillaHardPl, ..xpl.clone() }),
        ("sup_only".into(), TrainConfig { mode: Mode::SupOnly, ..xpl.clone() }),
    ];
    for beta in BETA_GRID {
        out.push((beta_name(beta), TrainConfig { beta, ..xpl.clone() }));
    }
    out
}

/// Final metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ciou: [f64; 2],
    pub auc: [f64; 2],
    pub ciou_avg: f64,
    pub openset_ciou: f64,
    pub openset_auc: f64,
    pub tail_std: f64,
}

impl RunSummary {
    pub fn from_history(h: &MetricsHistory) -> Self {
        let last = h.last().expect("at least one epoch");
        let (oc, oa) = last.openset.map(|o| o[0]).unwrap_or((f64::NAN, f64::NAN));
        Self {
            ciou: last.ciou,
            auc: last.auc,
            ciou_avg: last.ciou_avg,
            openset_ciou: oc,
            openset_auc: oa,
            tail_std: h.tail_ciou_std(),
        }
    }

    fn fields(&self) -> [f64; 8] {
        [
            self.ciou[0],
            self.auc[0],
            self.ciou[1],
            self.auc[1],
            self.ciou_avg,
            self.openset_ciou,
            self.openset_auc,
            self.tail_std,
        ]
    }

    fn from_fields(f: [f64; 8]) -> Self {
        Self {
            ciou: [f[0], f[2]],
            auc: [f[1], f[3]],
            ciou_avg: f[4],
            openset_ciou: f[5],
            openset_auc: f[6],
            tail_std: f[7],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub config: String,
    pub seed: u64,
    pub summary: RunSummary,
    pub history: MetricsHistory,
}

#[derive(Debug, Clone, Default)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
}

/// Median of the finite values; NaN when there are none. Even counts average
/// the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationResult {
    pub fn config_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.runs {
            if !names.contains(&r.config) {
                names.push(r.config.clone());
            }
        }
        names
    }

    pub fn runs_of<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a AblationRun> + 'a {
        self.runs.iter().filter(move |r| r.config == config)
    }

    /// Per-field medians over seeds.
    pub fn median_summary(&self, config: &str) -> Option<RunSummary> {
        let rows: Vec<[f64; 8]> = self.runs_of(config).map(|r| r.summary.fields()).collect();
        if rows.is_empty() {
            return None;
        }
        let mut f = [0.0; 8];
        for (k, slot) in f.iter_mut().enumerate() {
            *slot = median(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        }
        Some(RunSummary::from_fields(f))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATE_HEADER);
        out.push('\n');
        let row = |kind: &str, config: &str, seed: &str, s: &RunSummary| {
            let nums: Vec<String> = s.fields().iter().map(|&x| fmt_num(x)).collect();
            format!("{kind},{config},{seed},{}\n", nums.join(","))
        };
        for r in &self.runs {
            out.push_str(&row("run", &r.config, &r.seed.to_string(), &r.summary));
        }
        for name in self.config_names() {
            if let Some(m) = self.median_summary(&name) {
                out.push_str(&row("median", &name, "all", &m));
            }
        }
        out
    }
}

/// Runs every configuration on every `(seed, dataset)` pair. Configurations
/// identical to one already run for the same seed reuse its result.
pub fn run_ablation<F>(base: &TrainConfig, seeds: &[(u64, &Dataset)], mut progress: F) -> Result<AblationResult>
where
    F: FnMut(&str, u64),
{
    let configs = ablation_configs(base);
    let mut result = AblationResult::default();
    for &(seed, data) in seeds {
        let mut done: Vec<(TrainConfig, usize)> = Vec::new();
        for (name, cfg) in &configs {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let history = match done.iter().find(|(c, _)| *c == cfg) {
                Some(&(_, idx)) => result.runs[idx].history.clone(),
                None => {
                    progress(name, seed);
                    run_experiment(&cfg, data)?.history
                }
            };
            done.push((cfg, result.runs.len()));
            result.runs.push(AblationRun {
                config: name.clone(),
                seed,
                summary: RunSummary::from_history(&history),
                history,
            });
        }
    }
    Ok(result)
}
