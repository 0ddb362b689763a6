//! Soft pseudo-label machinery: map normalization, logistic sharpening,
//! the per-model EMA memory bank, Pearson consensus and curriculum selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Result, XplError};
use crate::model::{ModelTag, PredictionMap};

/// Clamp margin keeping normalized maps strictly inside (0, 1).
pub const NORM_EPS: f64 = 1e-6;

/// Samples whose consensus is at or below this are never selected.
pub const HARD_FLOOR: f64 = 0.8;

/// Cosine value in `[-1, 1]` to a probability in `[ε, 1-ε]`.
pub fn normalize_value(x: f64) -> f64 {
    ((x + 1.0) / 2.0).clamp(NORM_EPS, 1.0 - NORM_EPS)
}

pub fn normalize_map(m: &PredictionMap) -> Vec<f64> {
    m.values.iter().map(|&x| normalize_value(x)).collect()
}

/// Logistic centred on 0.5 with slope `a`.
pub fn sharpen_value(x: f64, a: f64) -> f64 {
    let z = a * (x - 0.5);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sharpen(p: &[f64], a: f64) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(XplError::domain("sharpen", format!("smoothness must be > 0, got {a}")));
    }
    Ok(p.iter().map(|&x| sharpen_value(x, a)).collect())
}

/// Instantaneous soft pseudo-label: `sharpen(normalize(m), a)`.
pub fn make_instant_pl(m: &PredictionMap, a: f64) -> Result<Vec<f64>> {
    sharpen(&normalize_map(m), a)
}

/// Hard 0/1 label: 1 where the normalized value is at least 0.5.
pub fn make_hard_pl(m: &PredictionMap) -> Vec<f64> {
    normalize_map(m)
        .into_iter()
        .map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub last_update_step: u64,
}

/// Historical pseudo-labels, one slot per `(model, sample)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelBank {
    entries: BTreeMap<(ModelTag, usize), PseudoLabel>,
}

impl PseudoLabelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tag: ModelTag, sample_id: usize) -> Option<&PseudoLabel> {
        self.entries.get(&(tag, sample_id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ModelTag, usize), &PseudoLabel)> {
        self.entries.iter()
    }

    /// `PLᵗ = β·PLᵗ⁻¹ + (1-β)·instant`; the first update stores `instant`.
    #[allow(clippy::too_many_arguments)]
    pub fn ema_update(
        &mut self,
        tag: ModelTag,
        sample_id: usize,
        height: usize,
        width: usize,
        instant: &[f64],
        beta: f64,
        step: u64,
    ) -> Result<&PseudoLabel> {
        if !(0.0..1.0).contains(&beta) {
            return Err(XplError::domain("ema_update", format!("beta must be in [0, 1), got {beta}")));
        }
        if instant.len() != height * width {
            return Err(XplError::ShapeMismatch {
                op: "ema_update",
                left: vec![height, width],
                right: vec![instant.len()],
            });
        }
        if let Some(v) = instant.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(XplError::domain("ema_update", format!("instant value {v} outside [0, 1]")));
        }
        let slot = self.entries.entry((tag, sample_id));
        let pl = match slot {
            std::collections::btree_map::Entry::Vacant(v) => v.insert(PseudoLabel {
                height,
                width,
                values: instant.to_vec(),
                last_update_step: step,
            }),
            std::collections::btree_map::Entry::Occupied(o) => {
                let pl = o.into_mut();
                if pl.values.len() != instant.len() {
                    return Err(XplError::ShapeMismatch {
                        op: "ema_update",
                        left: vec![pl.height, pl.width],
                        right: vec![height, width],
                    });
                }
                if step <= pl.last_update_step {
                    return Err(XplError::domain(
                        "ema_update",
                        format!("step {step} does not advance past {}", pl.last_update_step),
                    ));
                }
                for (p, &x) in pl.values.iter_mut().zip(instant) {
                    *p = (beta * *p + (1.0 - beta) * x).clamp(0.0, 1.0);
                }
                pl.last_update_step = step;
                pl
            }
        };
        Ok(pl)
    }

    /// Overwrites without smoothing (EMA disabled, or hard labels).
    pub fn store(&mut self, tag: ModelTag, sample_id: usize, height: usize, width: usize, values: Vec<f64>, step: u64) {
        self.entries.insert(
            (tag, sample_id),
            PseudoLabel {
                height,
                width,
                values,
                last_update_step: step,
            },
        );
    }
}

// Bank snapshot:
//   xpl-bank v1
//   entry <tag> <sample_id> <t> <H> <W> <H·W values>
const BANK_MAGIC: &str = "xpl-bank v1";

pub fn write_bank(bank: &PseudoLabelBank) -> String {
    let mut out = String::from(BANK_MAGIC);
    out.push('\n');
    for ((tag, id), pl) in bank.iter() {
        write!(out, "entry {tag} {id} {} {} {}", pl.last_update_step, pl.height, pl.width).expect("write to String");
        for v in &pl.values {
            write!(out, " {v}").expect("write to String");
        }
        out.push('\n');
    }
    out
}

pub fn read_bank(text: &str) -> Result<PseudoLabelBank> {
    let mut lines = text.lines();
    if lines.next() != Some(BANK_MAGIC) {
        return Err(XplError::parse(1, "missing bank header"));
    }
    let mut bank = PseudoLabelBank::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let rest = line
            .strip_prefix("entry ")
            .ok_or_else(|| XplError::parse(n, "expected entry"))?;
        let tok: Vec<&str> = rest.split(' ').collect();
        if tok.len() < 5 {
            return Err(XplError::parse(n, "short entry"));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| XplError::parse(n, e.to_string()));
        let tag: ModelTag = tok[0].parse()?;
        let (id, t, h, w) = (int(tok[1])? as usize, int(tok[2])?, int(tok[3])? as usize, int(tok[4])? as usize);
        let values = tok[5..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| XplError::parse(n, e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != h * w || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(XplError::parse(n, "entry values malformed"));
        }
        bank.store(tag, id, h, w, values, t);
    }
    Ok(bank)
}

/// Pearson correlation over the flattened spatial values of two maps.
pub fn pearson(a: &PredictionMap, b: &PredictionMap) -> Result<f64> {
    pearson_values(&a.values, &b.values)
}

pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(XplError::ShapeMismatch {
            op: "pearson",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(XplError::ConstantMap);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Reliability threshold plus linear ramp-up of the admitted fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSchedule {
    pub delta: f64,
    pub warmup_epochs: usize,
    /// First epoch at which the full eligible set is admitted.
    pub ramp_end_epoch: usize,
    /// Fraction admitted at the first post-warmup epoch.
    pub start_fraction: f64,
}

impl SelectionSchedule {
    /// Ramp from 10% right after warmup to 100% at 60% of training.
    pub fn linear(delta: f64, warmup_epochs: usize, total_epochs: usize) -> Self {
        let ramp_end = ((0.6 * total_epochs as f64).ceil() as usize).clamp(warmup_epochs, total_epochs.saturating_sub(1));
        Self {
            delta,
            warmup_epochs,
            ramp_end_epoch: ramp_end,
            start_fraction: 0.1,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.delta.max(HARD_FLOOR)
    }

    pub fn ramp_fraction(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        if self.ramp_end_epoch <= self.warmup_epochs || epoch >= self.ramp_end_epoch {
            return 1.0;
        }
        let progress = (epoch - self.warmup_epochs) as f64 / (self.ramp_end_epoch - self.warmup_epochs) as f64;
        self.start_fraction + (1.0 - self.start_fraction) * progress
    }
}

/// Unlabeled samples admitted this epoch, most reliable first.
pub fn select_unlabeled(rhos: &BTreeMap<usize, f64>, fraction: f64, threshold: f64) -> Vec<usize> {
    let mut eligible: Vec<(usize, f64)> = rhos
        .iter()
        .filter(|(_, &r)| r > threshold)
        .map(|(&id, &r)| (id, r))
        .collect();
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = ((fraction.clamp(0.0, 1.0) * eligible.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    eligible.truncate(k);
    eligible.into_iter().map(|(id, _)| id).collect()
}

/// `D_all = D_l ∪ top-k reliable unlabeled samples`.
pub fn curriculum_select(
    rhos: &BTreeMap<usize, f64>,
    labeled: &BTreeSet<usize>,
    epoch: usize,
    schedule: &SelectionSchedule,
) -> BTreeSet<usize> {
    let mut all = labeled.clone();
    all.extend(select_unlabeled(rhos, schedule.ramp_fraction(epoch), schedule.threshold()));
    all
}
