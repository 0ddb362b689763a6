//! CSV output. Numbers use '.' decimals and six significant digits.

use crate::metrics::EvalReport;
use crate::model::ModelTag;
use crate::synth::Split;
use crate::trainer::MetricsHistory;

pub const TRAINING_HEADER: &str =
    "epoch,ciou_A,auc_A,ciou_B,auc_B,loss_cross,loss_sup,loss_unsup,loss_total,n_selected,mean_rho";
pub const EVAL_HEADER: &str = "split,model,ciou,auc,n_samples,degenerate_samples";

/// Six significant digits, `%g` style: fixed notation for moderate
/// exponents, scientific otherwise, trailing zeros dropped.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" { "0".into() } else { t.to_string() }
}

pub fn training_csv(history: &MetricsHistory) -> String {
    let mut out = String::from(TRAINING_HEADER);
    out.push('\n');
    for r in &history.records {
        let row = [
            r.epoch.to_string(),
            fmt_num(r.ciou[0]),
            fmt_num(r.auc[0]),
            fmt_num(r.ciou[1]),
            fmt_num(r.auc[1]),
            fmt_num(r.losses.cross),
            fmt_num(r.losses.sup),
            fmt_num(r.losses.unsup),
            fmt_num(r.losses.total),
            r.n_selected.to_string(),
            fmt_num(r.mean_rho.unwrap_or(f64::NAN)),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One evaluation row: a model's report on one split.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub split: Split,
    pub model: ModelTag,
    pub report: EvalReport,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.split.as_str(),
            r.model,
            fmt_num(r.report.ciou),
            fmt_num(r.report.auc),
            r.report.n_samples,
            r.report.degenerate_samples
        ));
    }
    out
}

/// Parses a CSV produced by this module into header and rows. No quoting.
pub fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let split = |l: &str| l.split(',').map(str::to_string).collect::<Vec<_>>();
    let header = lines.next().map(split).unwrap_or_default();
    (header, lines.filter(|l| !l.is_empty()).map(split).collect())
}
