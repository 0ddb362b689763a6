//! The XPL training loop and its baselines.
//!
//! Per epoch: score the unlabeled pool with both models, rank by Pearson
//! consensus and admit a growing top slice, refresh each model's pseudo-label
//! bank (sharpen, then EMA), and take minibatch SGD steps where each model is
//! supervised by the other's bank. Ablation flags switch individual pieces
//! off; `vanilla_hard_pl` and `sup_only` are the two baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use crate::autodiff::Graph;
use crate::config::{Mode, TrainConfig};
use crate::error::{Result, XplError};
use crate::losses::{model_objective, total_loss, BatchItem, CrossTarget, LossBreakdown, ModelLossParts};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{forward_pair, BackboneSpec, Model, ModelTag, PredictionMap};
use crate::pl::{
    make_hard_pl, make_instant_pl, normalize_map, pearson, select_unlabeled, PseudoLabelBank,
    SelectionSchedule,
};
use crate::rng::{derive_seed, stream};
use crate::synth::{augment, Dataset, Mask, Split};
use crate::tensor::Tensor;

const TAGS: [ModelTag; 2] = [ModelTag::A, ModelTag::B];

/// `v ← momentum·v + g; θ ← θ − lr·v`, in place.
pub fn sgd_step(params: &mut [Tensor], velocity: &mut [Tensor], grads: &[Tensor], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(XplError::domain("sgd_step", "parameter/gradient count mismatch"));
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        p.same_shape(g, "sgd_step")?;
        p.same_shape(v, "sgd_step")?;
        let new_v = v.zip_with(g, "sgd_step", |vi, gi| momentum * vi + gi)?;
        *p = p.zip_with(&new_v, "sgd_step", |pi, vi| pi - lr * vi)?;
        *v = new_v;
    }
    Ok(())
}

/// SGD with momentum, holding one velocity buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(model: &Model, lr: f64, momentum: f64) -> Self {
        let velocity = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { lr, momentum, velocity }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Tensor]) -> Result<()> {
        let mut params: Vec<Tensor> = model.params.tensors().into_iter().cloned().collect();
        sgd_step(&mut params, &mut self.velocity, grads, self.lr, self.momentum)?;
        model.params.set_tensors(params)
    }
}

/// The backbone actually instantiated for a run: the configured init seed is
/// mixed with the run seed so that different runs start from different weights.
pub fn run_backbone(spec: &BackboneSpec, run_seed: u64) -> BackboneSpec {
    BackboneSpec {
        init_seed: derive_seed(&[spec.init_seed, run_seed]),
        ..spec.clone()
    }
}

/// Metrics for one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Test-split CIoU / AUC per model, indexed by [`ModelTag::index`].
    pub ciou: [f64; 2],
    pub auc: [f64; 2],
    /// Test metrics of the A/B-averaged map.
    pub ciou_avg: f64,
    pub auc_avg: f64,
    /// Open-set split metrics per model; `None` without an open-set split.
    pub openset: Option<[(f64, f64); 2]>,
    pub losses: LossBreakdown,
    /// `|D_all|` for the epoch.
    pub n_selected: usize,
    /// Mean consensus of the admitted unlabeled samples.
    pub mean_rho: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsHistory {
    pub records: Vec<EpochRecord>,
}

impl MetricsHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Headline metric: model A's test CIoU after the last epoch.
    pub fn final_ciou(&self) -> f64 {
        self.last().map(|r| r.ciou[0]).unwrap_or(f64::NAN)
    }

    pub fn final_auc(&self) -> f64 {
        self.last().map(|r| r.auc[0]).unwrap_or(f64::NAN)
    }

    /// Standard deviation of model A's test CIoU over the final 20% of epochs
    /// (at least two epochs).
    pub fn tail_ciou_std(&self) -> f64 {
        let n = self.records.len();
        let k = ((n as f64 * 0.2).ceil() as usize).max(2).min(n);
        let tail: Vec<f64> = self.records[n - k..].iter().map(|r| r.ciou[0]).collect();
        std_dev(&tail)
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// What one epoch trains on: the admitted set and each model's targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub epoch: usize,
    /// Consensus per unlabeled sample (absent when either map is constant).
    pub rhos: BTreeMap<usize, f64>,
    /// `D_all`, labeled ids included.
    pub selected: BTreeSet<usize>,
    /// Unlabeled ids admitted, most reliable first.
    pub selected_unlabeled: Vec<usize>,
    /// Whether pseudo-label targets apply this epoch.
    pub with_targets: bool,
}

impl EpochPlan {
    pub fn mean_rho(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .selected_unlabeled
            .iter()
            .filter_map(|id| self.rhos.get(id).copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub history: MetricsHistory,
    pub models: [Model; 2],
    pub bank: PseudoLabelBank,
}

pub struct Trainer<'d> {
    pub cfg: TrainConfig,
    data: &'d Dataset,
    pub models: [Model; 2],
    optim: [Sgd; 2],
    pub bank: PseudoLabelBank,
    pub schedule: SelectionSchedule,
    labeled: BTreeSet<usize>,
    unlabeled: Vec<usize>,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: TrainConfig, data: &'d Dataset) -> Result<Self> {
        cfg.validate()?;
        let labeled: BTreeSet<usize> = data.split(Split::Labeled).iter().map(|p| p.sample_id).collect();
        if labeled.is_empty() {
            return Err(XplError::InvalidConfig("dataset has no labeled samples".into()));
        }
        if data.count(Split::Test) == 0 {
            return Err(XplError::InvalidConfig("dataset has no test samples".into()));
        }
        let unlabeled = data.split(Split::Unlabeled).iter().map(|p| p.sample_id).collect();
        let (cv, ca) = (data.visual_channels(), data.audio_channels());
        let models = [
            Model::new(ModelTag::A, run_backbone(&cfg.backbone_a, cfg.seed), cv, ca)?,
            Model::new(ModelTag::B, run_backbone(&cfg.backbone_b, cfg.seed), cv, ca)?,
        ];
        let optim = [
            Sgd::new(&models[0], cfg.learning_rate, cfg.momentum),
            Sgd::new(&models[1], cfg.learning_rate, cfg.momentum),
        ];
        let schedule = SelectionSchedule::linear(cfg.delta, cfg.warmup_epochs, cfg.total_epochs);
        Ok(Self {
            cfg,
            data,
            models,
            optim,
            bank: PseudoLabelBank::new(),
            schedule,
            labeled,
            unlabeled,
        })
    }

    fn pair(&self, id: usize) -> Result<&'d crate::synth::AVPair> {
        self.data
            .get(id)
            .ok_or_else(|| XplError::domain("trainer", format!("unknown sample {id}")))
    }

    pub fn is_warmup(&self, epoch: usize) -> bool {
        epoch < self.cfg.warmup_epochs
    }

    /// Source model of the pseudo-label that supervises `tag`.
    pub fn target_source(&self, tag: ModelTag) -> ModelTag {
        if self.cfg.effective_ablations().no_cross_refine {
            tag
        } else {
            tag.other()
        }
    }

    /// Both models' maps for each id.
    pub fn predict(&self, ids: &[usize]) -> Result<Vec<[PredictionMap; 2]>> {
        ids.iter()
            .map(|&id| {
                let pair = self.pair(id)?;
                Ok([self.models[0].prediction_map(pair)?, self.models[1].prediction_map(pair)?])
            })
            .collect()
    }

    /// Steps (1)-(4): consensus, selection, and the bank refresh.
    pub fn plan_epoch(&mut self, epoch: usize) -> Result<EpochPlan> {
        let mode = self.cfg.mode;
        if self.is_warmup(epoch) || mode == Mode::SupOnly {
            return Ok(EpochPlan {
                epoch,
                rhos: BTreeMap::new(),
                selected: self.labeled.clone(),
                selected_unlabeled: Vec::new(),
                with_targets: false,
            });
        }
        let abl = self.cfg.effective_ablations();

        let unlabeled_maps = self.predict(&self.unlabeled)?;
        let mut rhos = BTreeMap::new();
        for (&id, maps) in self.unlabeled.iter().zip(&unlabeled_maps) {
            // constant maps carry no consensus signal; leave them unranked
            if let Ok(r) = pearson(&maps[0], &maps[1]) {
                rhos.insert(id, r);
            }
        }
        let selected_unlabeled = if abl.no_data_selection {
            self.unlabeled.clone()
        } else {
            select_unlabeled(&rhos, self.schedule.ramp_fraction(epoch), self.schedule.threshold())
        };

        let labeled_ids: Vec<usize> = self.labeled.iter().copied().collect();
        let labeled_maps = self.predict(&labeled_ids)?;
        let map_of: BTreeMap<usize, &[PredictionMap; 2]> = self
            .unlabeled
            .iter()
            .copied()
            .zip(unlabeled_maps.iter())
            .chain(labeled_ids.iter().copied().zip(labeled_maps.iter()))
            .collect();

        let mut selected = self.labeled.clone();
        selected.extend(selected_unlabeled.iter().copied());
        let step = epoch as u64;
        for &id in &selected {
            let maps = map_of[&id];
            for (k, map) in maps.iter().enumerate() {
                let instant = if mode == Mode::VanillaHardPl {
                    make_hard_pl(map)
                } else if abl.no_sharpen {
                    normalize_map(map)
                } else {
                    make_instant_pl(map, self.cfg.sharpen_a)?
                };
                let (h, w) = (map.height, map.width);
                if abl.no_plema {
                    self.bank.store(TAGS[k], id, h, w, instant, step);
                } else {
                    self.bank.ema_update(TAGS[k], id, h, w, &instant, self.cfg.beta, step)?;
                }
            }
        }
        Ok(EpochPlan {
            epoch,
            rhos,
            selected,
            selected_unlabeled,
            with_targets: true,
        })
    }

    /// Objective value and parameter gradients of one model on a minibatch.
    pub fn model_loss(&self, tag: ModelTag, plan: &EpochPlan, ids: &[usize]) -> Result<(ModelLossParts, Vec<Tensor>)> {
        let model = &self.models[tag.index()];
        let pipeline = self.cfg.pipeline_seeds[tag.index()];
        let source = self.target_source(tag);

        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, true);
        let mut gts: Vec<Option<Vec<f64>>> = Vec::with_capacity(ids.len());
        let mut forwards = Vec::with_capacity(ids.len());
        for &id in ids {
            let pair = self.pair(id)?;
            let view = augment(pair, pipeline, plan.epoch as u64)?;
            forwards.push(forward_pair(&mut g, &bound, &view)?);
            gts.push(if pair.split == Split::Labeled {
                pair.gt_mask.as_ref().map(Mask::as_f64)
            } else {
                None
            });
        }
        let mut items = Vec::with_capacity(ids.len());
        for ((&id, fwd), gt) in ids.iter().zip(forwards).zip(&gts) {
            let target = if plan.with_targets {
                let pl = self.bank.get(source, id).ok_or_else(|| {
                    XplError::TagMismatch(format!("no pseudo-label from model {source} for sample {id}"))
                })?;
                Some(CrossTarget {
                    source,
                    values: pl.values.as_slice(),
                })
            } else {
                None
            };
            items.push(BatchItem {
                forward: fwd,
                gt: gt.as_deref(),
                target,
            });
        }
        let obj = model_objective(&mut g, tag, &items, self.cfg.lambda_u, self.cfg.tau)?;
        let grads = g.backward(obj.total)?;
        let parts = ModelLossParts::from_objective(&g, &obj);
        Ok((parts, bound.collect_grads(&grads, &model.params)))
    }

    /// Step (5): one pass of minibatch updates over `D_all`. Returns the mean
    /// loss breakdown over batches.
    pub fn train_pass(&mut self, plan: &EpochPlan) -> Result<LossBreakdown> {
        let mut order: Vec<usize> = plan.selected.iter().copied().collect();
        order.shuffle(&mut stream(&[self.cfg.seed, 0x0D3, plan.epoch as u64]));
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut parts = [ModelLossParts::default(); 2];
            for tag in TAGS {
                let (p, grads) = self.model_loss(tag, plan, chunk)?;
                let k = tag.index();
                self.optim[k].step(&mut self.models[k], &grads)?;
                parts[k] = p;
            }
            let b = total_loss(parts, self.cfg.lambda_u);
            sum.cross += b.cross;
            sum.sup += b.sup;
            sum.unsup += b.unsup;
            sum.total += b.total;
            sum.per_model[0] += b.per_model[0];
            sum.per_model[1] += b.per_model[1];
            batches += 1;
        }
        let n = batches.max(1) as f64;
        Ok(LossBreakdown {
            cross: sum.cross / n,
            sup: sum.sup / n,
            unsup: sum.unsup / n,
            total: sum.total / n,
            per_model: [sum.per_model[0] / n, sum.per_model[1] / n],
        })
    }

    /// Per-model and A/B-averaged reports on a masked split.
    pub fn evaluate_split(&self, split: Split) -> Result<Option<SplitEval>> {
        let pairs = self.data.split(split);
        if pairs.is_empty() {
            return Ok(None);
        }
        let gts: Vec<&Mask> = pairs
            .iter()
            .map(|p| p.gt_mask.as_ref().ok_or_else(|| XplError::domain("evaluate", "split has no masks")))
            .collect::<Result<_>>()?;
        let ids: Vec<usize> = pairs.iter().map(|p| p.sample_id).collect();
        let maps = self.predict(&ids)?;
        let (a, b): (Vec<PredictionMap>, Vec<PredictionMap>) = maps.iter().map(|m| (m[0].clone(), m[1].clone())).unzip();
        let avg: Vec<PredictionMap> = maps
            .iter()
            .map(|m| PredictionMap {
                values: m[0].values.iter().zip(&m[1].values).map(|(x, y)| 0.5 * (x + y)).collect(),
                ..m[0].clone()
            })
            .collect();
        Ok(Some(SplitEval {
            per_model: [evaluate(&a, &gts)?, evaluate(&b, &gts)?],
            averaged: evaluate(&avg, &gts)?,
        }))
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let plan = self.plan_epoch(epoch)?;
        let losses = self.train_pass(&plan)?;
        let test = self
            .evaluate_split(Split::Test)?
            .ok_or_else(|| XplError::InvalidConfig("dataset has no test samples".into()))?;
        let openset = self.evaluate_split(Split::OpensetTest)?.map(|e| {
            [
                (e.per_model[0].ciou, e.per_model[0].auc),
                (e.per_model[1].ciou, e.per_model[1].auc),
            ]
        });
        Ok(EpochRecord {
            epoch,
            ciou: [test.per_model[0].ciou, test.per_model[1].ciou],
            auc: [test.per_model[0].auc, test.per_model[1].auc],
            ciou_avg: test.averaged.ciou,
            auc_avg: test.averaged.auc,
            openset,
            losses,
            n_selected: plan.selected.len(),
            mean_rho: plan.mean_rho(),
        })
    }

    pub fn into_output(self, history: MetricsHistory) -> RunOutput {
        RunOutput {
            history,
            models: self.models,
            bank: self.bank,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitEval {
    pub per_model: [EvalReport; 2],
    pub averaged: EvalReport,
}

/// Warmup then cross pseudo-labeling until `total_epochs`. Deterministic in
/// `(cfg, data)`.
pub fn run_experiment(cfg: &TrainConfig, data: &Dataset) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut history = MetricsHistory::default();
    for epoch in 0..cfg.total_epochs {
        history.records.push(trainer.run_epoch(epoch)?);
    }
    Ok(trainer.into_output(history))
}
