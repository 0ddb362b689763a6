//! Training configuration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, XplError};
use crate::kv::KvMap;
use crate::losses::{DEFAULT_LAMBDA_U, DEFAULT_TAU};
use crate::model::BackboneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Xpl,
    SupOnly,
    VanillaHardPl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Xpl => "xpl",
            Mode::SupOnly => "sup_only",
            Mode::VanillaHardPl => "vanilla_hard_pl",
        }
    }

    pub fn uses_pseudo_labels(self) -> bool {
        self != Mode::SupOnly
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = XplError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xpl" => Ok(Mode::Xpl),
            "sup_only" => Ok(Mode::SupOnly),
            "vanilla_hard_pl" => Ok(Mode::VanillaHardPl),
            _ => Err(XplError::InvalidConfig(format!(
                "unknown mode {s:?} (expected xpl, sup_only or vanilla_hard_pl)"
            ))),
        }
    }
}

/// Component switches for the XPL ablations. Ignored outside `Mode::Xpl`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablations {
    pub no_plema: bool,
    pub no_sharpen: bool,
    pub no_cross_refine: bool,
    pub no_data_selection: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub ablations: Ablations,
    /// PL-EMA rate.
    pub beta: f64,
    /// Weight of the contrastive term.
    pub lambda_u: f64,
    /// Sharpening slope.
    pub sharpen_a: f64,
    /// Consensus threshold (never below the 0.8 floor).
    pub delta: f64,
    pub tau: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub backbone_a: BackboneSpec,
    pub backbone_b: BackboneSpec,
    /// Augmentation stream ids for models A and B.
    pub pipeline_seeds: [u64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        let total_epochs = 30;
        Self {
            mode: Mode::Xpl,
            ablations: Ablations::default(),
            beta: 0.7,
            lambda_u: DEFAULT_LAMBDA_U,
            sharpen_a: 10.0,
            delta: 0.8,
            tau: DEFAULT_TAU,
            warmup_epochs: default_warmup(total_epochs),
            total_epochs,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            backbone_a: BackboneSpec {
                hidden_widths: vec![16],
                embed_dim: 8,
                init_seed: 11,
            },
            backbone_b: BackboneSpec {
                hidden_widths: vec![12, 12],
                embed_dim: 8,
                init_seed: 23,
            },
            pipeline_seeds: [1, 2],
        }
    }
}

/// 20% of training, at least one epoch.
pub fn default_warmup(total_epochs: usize) -> usize {
    ((total_epochs as f64 * 0.2).round() as usize).max(1)
}

impl TrainConfig {
    /// Settings used with the benchmark dataset: small batches and a longer
    /// warmup, since only 50 labeled samples drive the first epochs.
    pub fn benchmark() -> Self {
        Self {
            total_epochs: 50,
            warmup_epochs: 20,
            batch_size: 4,
            learning_rate: 0.1,
            ..Self::default()
        }
    }

    /// Ablation flags as they actually apply under the current mode.
    pub fn effective_ablations(&self) -> Ablations {
        match self.mode {
            Mode::Xpl => self.ablations,
            // hard-PL baseline: no EMA, no sharpening, no selection, self-training
            Mode::VanillaHardPl => Ablations {
                no_plema: true,
                no_sharpen: true,
                no_cross_refine: true,
                no_data_selection: true,
            },
            Mode::SupOnly => Ablations::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(XplError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must be in [0, 1), got {}", self.beta));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.sharpen_a > 0.0) {
            return bad(format!("sharpen_a must be > 0, got {}", self.sharpen_a));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must be in (0, 1], got {}", self.delta));
        }
        if !(self.lambda_u >= 0.0) {
            return bad(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if self.total_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return bad(format!(
                "need warmup_epochs < total_epochs, got {} / {}",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.mode.uses_pseudo_labels() && self.warmup_epochs == 0 {
            return bad(format!("mode {} needs warmup_epochs >= 1", self.mode));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be > 0 and momentum in [0, 1)".into());
        }
        self.backbone_a.validate()?;
        self.backbone_b.validate()?;
        if !self.backbone_a.is_distinct_from(&self.backbone_b) {
            return bad("models A and B need different hidden widths and init seeds".into());
        }
        if self.pipeline_seeds[0] == self.pipeline_seeds[1] {
            return bad("models A and B need distinct augmentation pipelines".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("mode", self.mode);
        kv.set("no_plema", self.ablations.no_plema);
        kv.set("no_sharpen", self.ablations.no_sharpen);
        kv.set("no_cross_refine", self.ablations.no_cross_refine);
        kv.set("no_data_selection", self.ablations.no_data_selection);
        kv.set("beta", self.beta);
        kv.set("lambda_u", self.lambda_u);
        kv.set("sharpen_a", self.sharpen_a);
        kv.set("delta", self.delta);
        kv.set("tau", self.tau);
        kv.set("warmup_epochs", self.warmup_epochs);
        kv.set("total_epochs", self.total_epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        kv.set("momentum", self.momentum);
        kv.set("seed", self.seed);
        kv.set("a_hidden", self.backbone_a.widths_string());
        kv.set("a_embed", self.backbone_a.embed_dim);
        kv.set("a_init_seed", self.backbone_a.init_seed);
        kv.set("b_hidden", self.backbone_b.widths_string());
        kv.set("b_embed", self.backbone_b.embed_dim);
        kv.set("b_init_seed", self.backbone_b.init_seed);
        kv.set("a_pipeline_seed", self.pipeline_seeds[0]);
        kv.set("b_pipeline_seed", self.pipeline_seeds[1]);
        kv
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        let mut warmup_set = false;
        let mut total_set = false;
        for (key, value) in kv.iter() {
            let p = |v| KvMap::parse(key, v);
            match key {
                "mode" => self.mode = value.parse()?,
                "no_plema" => self.ablations.no_plema = KvMap::parse(key, value)?,
                "no_sharpen" => self.ablations.no_sharpen = KvMap::parse(key, value)?,
                "no_cross_refine" => self.ablations.no_cross_refine = KvMap::parse(key, value)?,
                "no_data_selection" => self.ablations.no_data_selection = KvMap::parse(key, value)?,
                "beta" => self.beta = p(value)?,
                "lambda_u" => self.lambda_u = p(value)?,
                "sharpen_a" => self.sharpen_a = p(value)?,
                "delta" => self.delta = p(value)?,
                "tau" => self.tau = p(value)?,
                "warmup_epochs" => {
                    self.warmup_epochs = KvMap::parse(key, value)?;
                    warmup_set = true;
                }
                "total_epochs" => {
                    self.total_epochs = KvMap::parse(key, value)?;
                    total_set = true;
                }
                "batch_size" => self.batch_size = KvMap::parse(key, value)?,
                "learning_rate" => self.learning_rate = p(value)?,
                "momentum" => self.momentum = p(value)?,
                "seed" => self.seed = KvMap::parse(key, value)?,
                "a_hidden" => self.backbone_a.hidden_widths = BackboneSpec::parse_widths(value)?,
                "a_embed" => self.backbone_a.embed_dim = KvMap::parse(key, value)?,
                "a_init_seed" => self.backbone_a.init_seed = KvMap::parse(key, value)?,
                "b_hidden" => self.backbone_b.hidden_widths = BackboneSpec::parse_widths(value)?,
                "b_embed" => self.backbone_b.embed_dim = KvMap::parse(key, value)?,
                "b_init_seed" => self.backbone_b.init_seed = KvMap::parse(key, value)?,
                "a_pipeline_seed" => self.pipeline_seeds[0] = KvMap::parse(key, value)?,
                "b_pipeline_seed" => self.pipeline_seeds[1] = KvMap::parse(key, value)?,
                other => return Err(XplError::InvalidConfig(format!("unknown training key {other:?}"))),
            }
        }
        if total_set && !warmup_set {
            self.warmup_epochs = default_warmup(self.total_epochs);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.beta, 0.7);
        assert_eq!(cfg.lambda_u, 0.5);
        assert_eq!(cfg.warmup_epochs, 6);
    }

    #[test]
    fn rejects_invalid() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { beta: 1.0, ..base.clone() },
            TrainConfig { tau: 0.0, ..base.clone() },
            TrainConfig { warmup_epochs: 30, ..base.clone() },
            TrainConfig { warmup_epochs: 0, ..base.clone() },
            TrainConfig { backbone_b: base.backbone_a.clone(), ..base.clone() },
            TrainConfig { pipeline_seeds: [3, 3], ..base.clone() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        // sup_only may skip warmup
        TrainConfig { mode: Mode::SupOnly, warmup_epochs: 0, ..base }.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig {
            mode: Mode::VanillaHardPl,
            beta: 0.3,
            ..TrainConfig::default()
        };
        cfg.ablations.no_sharpen = true;
        let mut back = TrainConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);

        let mut t = TrainConfig::default();
        t.apply_kv(&KvMap::from_text("total_epochs=10").unwrap()).unwrap();
        assert_eq!(t.warmup_epochs, 2);
        assert!(t.apply_kv(&KvMap::from_text("bogus=1").unwrap()).is_err());
    }

    #[test]
    fn mode_rules() {
        let cfg = TrainConfig {
            mode: Mode::SupOnly,
            ablations: Ablations { no_plema: true, ..Ablations::default() },
            ..TrainConfig::default()
        };
        assert_eq!(cfg.effective_ablations(), Ablations::default());
        let v = TrainConfig { mode: Mode::VanillaHardPl, ..TrainConfig::default() };
        assert!(v.effective_ablations().no_cross_refine);
        assert!("bad".parse::<Mode>().is_err());
    }
}
