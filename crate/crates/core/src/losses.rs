//! Training objectives, built on the autodiff graph.
//!
//! Cosine maps enter every cross-entropy through [`normalized`], the
//! differentiable form of [`crate::pl::normalize_value`]. Targets
//! (ground truth and pseudo-labels) are always graph constants.

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Result, XplError};
use crate::model::{Forward, ModelTag};
use crate::pl::NORM_EPS;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA_U: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.07;

/// `clamp((x + 1) / 2, ε, 1 - ε)` on the graph.
pub fn normalized(g: &mut Graph, map: Var) -> Var {
    let half = g.scalar_mul(map, 0.5);
    let shifted = g.add_scalar(half, 0.5);
    g.clamp(shifted, NORM_EPS, 1.0 - NORM_EPS)
}

/// Mean over pixels of `-[p·ln q + (1-p)·ln(1-q)]`; `target` is a constant.
pub fn bce_pixelwise(g: &mut Graph, target: &[f64], pred: Var) -> Result<Var> {
    let q = g.value(pred);
    if target.len() != q.numel() {
        return Err(XplError::ShapeMismatch {
            op: "bce_pixelwise",
            left: vec![target.len()],
            right: q.shape().to_vec(),
        });
    }
    if let Some(v) = q.values().iter().find(|&&v| v <= 0.0 || v >= 1.0) {
        return Err(XplError::domain("bce_pixelwise", format!("prediction {v} not strictly inside (0, 1)")));
    }
    if let Some(v) = target.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(XplError::domain("bce_pixelwise", format!("target {v} outside [0, 1]")));
    }
    let shape = q.shape().to_vec();
    let p = g.constant(Tensor::new(shape.clone(), target.to_vec())?);
    let not_p = g.constant(Tensor::new(shape, target.iter().map(|v| 1.0 - v).collect())?);
    let log_q = g.log(pred)?;
    let neg_q = g.scalar_mul(pred, -1.0);
    let one_minus_q = g.add_scalar(neg_q, 1.0);
    let log_not_q = g.log(one_minus_q)?;
    let pos = g.mul(p, log_q)?;
    let neg = g.mul(not_p, log_not_q)?;
    let ll = g.add(pos, neg)?;
    let mean = g.mean(ll);
    Ok(g.scalar_mul(mean, -1.0))
}

/// A pseudo-label used as supervision, with the model that produced it.
#[derive(Debug, Clone, Copy)]
pub struct CrossTarget<'a> {
    pub source: ModelTag,
    pub values: &'a [f64],
}

/// Cross pseudo-labeling loss for one sample: the PL must come from the other
/// model. Use [`self_training_loss`] for the deliberate self-supervised case.
pub fn cross_loss(g: &mut Graph, target: CrossTarget<'_>, self_tag: ModelTag, map: Var) -> Result<Var> {
    if target.source == self_tag {
        return Err(XplError::TagMismatch(format!(
            "cross loss for model {self_tag} given its own pseudo-label"
        )));
    }
    let q = normalized(g, map);
    bce_pixelwise(g, target.values, q)
}

/// Same kernel as [`cross_loss`] with the tag guard inverted: the PL must be the
/// model's own (cross-refine disabled, or the vanilla hard-PL baseline).
pub fn self_training_loss(g: &mut Graph, target: CrossTarget<'_>, self_tag: ModelTag, map: Var) -> Result<Var> {
    if target.source != self_tag {
        return Err(XplError::TagMismatch(format!(
            "self-training loss for model {self_tag} given model {}'s label",
            target.source
        )));
    }
    let q = normalized(g, map);
    bce_pixelwise(g, target.values, q)
}

/// Supervised loss against a binary ground-truth mask.
pub fn sup_loss(g: &mut Graph, gt: &[f64], map: Var) -> Result<Var> {
    if let Some(v) = gt.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(XplError::domain("sup_loss", format!("ground truth must be binary, got {v}")));
    }
    let q = normalized(g, map);
    bce_pixelwise(g, gt, q)
}

/// Global max pooling of `(H·W) × d` cell embeddings to a length-d vector.
pub fn global_max_pool(g: &mut Graph, cells: Var) -> Result<Var> {
    g.reduce_max(cells, Axis::Dim(0))
}

/// Symmetric InfoNCE over in-batch pairs:
/// `mean_i -[log softmax_j(s(Aᵢ,Vⱼ)/τ)ᵢ + log softmax_j(s(Vᵢ,Aⱼ)/τ)ᵢ]`.
pub fn infonce_loss(g: &mut Graph, audio: &[Var], visual: &[Var], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(XplError::domain("infonce_loss", format!("temperature must be > 0, got {tau}")));
    }
    if audio.is_empty() || audio.len() != visual.len() {
        return Err(XplError::domain(
            "infonce_loss",
            format!("need n >= 1 matched pairs, got {} audio / {} visual", audio.len(), visual.len()),
        ));
    }
    let a = g.stack_rows(audio)?;
    let v = g.stack_rows(visual)?;
    let an = g.normalize_rows(a)?;
    let vn = g.normalize_rows(v)?;
    let vt = g.transpose(vn)?;
    // sim[i][j] = s(A_i, V_j)
    let sim = g.matmul(an, vt)?;
    let logits = g.scalar_mul(sim, 1.0 / tau);
    let pos = g.diag(logits)?;
    let lse_audio = g.log_sum_exp(logits, Axis::Dim(1))?;
    let lse_visual = g.log_sum_exp(logits, Axis::Dim(0))?;
    let t1 = g.sub(lse_audio, pos)?;
    let t2 = g.sub(lse_visual, pos)?;
    let both = g.add(t1, t2)?;
    Ok(g.mean(both))
}

/// Mean of scalar nodes.
pub fn mean_of(g: &mut Graph, scalars: &[Var]) -> Result<Var> {
    let stacked = g.stack_rows(scalars)?;
    Ok(g.mean(stacked))
}

/// One sample's contribution to a model's minibatch objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub forward: Forward,
    /// Ground truth, for labeled samples.
    pub gt: Option<&'a [f64]>,
    /// Pseudo-label target, when the sample is in the selected pool.
    pub target: Option<CrossTarget<'a>>,
}

/// Graph handles of a model's minibatch objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub cross: Var,
    pub sup: Var,
    pub unsup: Var,
    pub total: Var,
}

/// `cross + sup + λ_u·unsup` for one model over one minibatch. Each term is
/// averaged over the items it applies to and is 0 when none do.
pub fn model_objective(
    g: &mut Graph,
    tag: ModelTag,
    items: &[BatchItem<'_>],
    lambda_u: f64,
    tau: f64,
) -> Result<Objective> {
    let mut cross_terms = Vec::new();
    let mut sup_terms = Vec::new();
    for item in items {
        if let Some(t) = item.target {
            let l = if t.source == tag {
                self_training_loss(g, t, tag, item.forward.map)?
            } else {
                cross_loss(g, t, tag, item.forward.map)?
            };
            cross_terms.push(l);
        }
        if let Some(gt) = item.gt {
            sup_terms.push(sup_loss(g, gt, item.forward.map)?);
        }
    }
    let zero = |g: &mut Graph| g.constant(Tensor::from_parts(vec![1], vec![0.0]));
    let cross = if cross_terms.is_empty() { zero(g) } else { mean_of(g, &cross_terms)? };
    let sup = if sup_terms.is_empty() { zero(g) } else { mean_of(g, &sup_terms)? };
    let unsup = if items.is_empty() {
        zero(g)
    } else {
        let audio: Vec<Var> = items.iter().map(|i| i.forward.audio).collect();
        let visual = items
            .iter()
            .map(|i| global_max_pool(g, i.forward.cells))
            .collect::<Result<Vec<Var>>>()?;
        infonce_loss(g, &audio, &visual, tau)?
    };
    let weighted = g.scalar_mul(unsup, lambda_u);
    let partial = g.add(cross, sup)?;
    let total = g.add(partial, weighted)?;
    Ok(Objective { cross, sup, unsup, total })
}

/// Scalar loss values of one model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModelLossParts {
    pub cross: f64,
    pub sup: f64,
    pub unsup: f64,
}

impl ModelLossParts {
    pub fn from_objective(g: &Graph, o: &Objective) -> Self {
        Self {
            cross: g.value(o.cross).item(),
            sup: g.value(o.sup).item(),
            unsup: g.value(o.unsup).item(),
        }
    }

    pub fn subtotal(&self, lambda_u: f64) -> f64 {
        self.cross + self.sup + lambda_u * self.unsup
    }
}

/// Loss values summed over both models.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub cross: f64,
    pub sup: f64,
    pub unsup: f64,
    pub total: f64,
    /// Indexed by [`ModelTag::index`].
    pub per_model: [f64; 2],
}

/// `Σ_{A,B} (cross + sup + λ_u·unsup)`.
pub fn total_loss(parts: [ModelLossParts; 2], lambda_u: f64) -> LossBreakdown {
    let per_model = [parts[0].subtotal(lambda_u), parts[1].subtotal(lambda_u)];
    LossBreakdown {
        cross: parts[0].cross + parts[1].cross,
        sup: parts[0].sup + parts[1].sup,
        unsup: parts[0].unsup + parts[1].unsup,
        total: per_model[0] + per_model[1],
        per_model,
    }
}
