mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use xpl::losses::{bce_pixelwise, infonce_loss};
use xpl::metrics::evaluate;
use xpl::model::{prediction_map, ModelTag, PredictionMap};
use xpl::pl::{curriculum_select, pearson, sharpen_value, PseudoLabelBank, SelectionSchedule};
use xpl::synth::Mask;
use xpl::{Graph, Tensor};

fn map(v: Vec<f64>) -> PredictionMap {
    let n = v.len();
    PredictionMap::new(1, n, v, ModelTag::A, 0).unwrap()
}

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|&x| (x - v[0]).abs() > 1e-3)
}

proptest! {
    #[test]
    fn sharpen_symmetry_and_fixed_point(x in 0.0f64..=1.0, a in 0.1f64..50.0) {
        prop_assert!((sharpen_value(0.5, a) - 0.5).abs() <= 1e-12);
        prop_assert!((sharpen_value(x, a) + sharpen_value(1.0 - x, a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sharpen_is_increasing(x in 0.0f64..0.99, dx in 0.001f64..0.01, a in 0.5f64..50.0) {
        prop_assert!(sharpen_value(x + dx, a) > sharpen_value(x, a));
    }

    #[test]
    fn ema_converges_geometrically(
        start in prop::collection::vec(0.0f64..=1.0, 4),
        c in 0.0f64..=1.0,
        beta in 0.0f64..0.99,
        steps in 1usize..12,
    ) {
        let mut bank = PseudoLabelBank::new();
        bank.ema_update(ModelTag::A, 0, 2, 2, &start, beta, 0).unwrap();
        for t in 1..=steps {
            bank.ema_update(ModelTag::A, 0, 2, 2, &[c; 4], beta, t as u64).unwrap();
        }
        let pl = bank.get(ModelTag::A, 0).unwrap();
        for (v, s) in pl.values.iter().zip(&start) {
            let expected = beta.powi(steps as i32) * (s - c).abs();
            prop_assert!(((v - c).abs() - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn pearson_self_and_affine(
        a in prop::collection::vec(-1.0f64..=1.0, 6),
        b in prop::collection::vec(-1.0f64..=1.0, 6),
        alpha in 0.05f64..1.0,
        gamma in -0.5f64..0.5,
    ) {
        prop_assume!(non_constant(&a) && non_constant(&b));
        prop_assert!((pearson(&map(a.clone()), &map(a.clone())).unwrap() - 1.0).abs() <= 1e-10);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert!((pearson(&map(a.clone()), &map(neg)).unwrap() + 1.0).abs() <= 1e-10);
        // keep the transformed map inside the cosine range
        let scaled: Vec<f64> = a.iter().map(|x| (alpha * x + gamma) / (1.0 + gamma.abs())).collect();
        let r0 = pearson(&map(a), &map(b.clone())).unwrap();
        let r1 = pearson(&map(scaled), &map(b)).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-10);
    }

    #[test]
    fn curriculum_rejects_low_consensus_and_grows(
        rhos in prop::collection::vec(-1.0f64..=1.0, 1..30),
        e1 in 0usize..20,
        e2 in 0usize..20,
    ) {
        let rhos: BTreeMap<usize, f64> = rhos.into_iter().enumerate().map(|(i, r)| (10 + i, r)).collect();
        let labeled: BTreeSet<usize> = [0, 1].into_iter().collect();
        let sched = SelectionSchedule::linear(0.5, 3, 20);
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let s_lo = curriculum_select(&rhos, &labeled, lo, &sched);
        let s_hi = curriculum_select(&rhos, &labeled, hi, &sched);
        prop_assert!(s_lo.is_subset(&s_hi));
        prop_assert!(labeled.is_subset(&s_lo));
        for id in &s_hi {
            if let Some(&r) = rhos.get(id) {
                prop_assert!(r > 0.8);
            }
        }
    }

    #[test]
    fn bce_bounded_below_by_entropy(p in 0.001f64..0.999) {
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let mut best = f64::INFINITY;
        for k in 1..1000 {
            let q = k as f64 / 1000.0;
            let mut g = Graph::new();
            let qv = g.constant(Tensor::vector(vec![q]).unwrap());
            let l = bce_pixelwise(&mut g, &[p], qv).unwrap();
            let v = g.value(l).item();
            prop_assert!(v >= entropy - 1e-9);
            best = best.min(v);
        }
        let mut g = Graph::new();
        let qv = g.constant(Tensor::vector(vec![p]).unwrap());
        let at_p = bce_pixelwise(&mut g, &[p], qv).unwrap();
        prop_assert!((g.value(at_p).item() - entropy).abs() <= 1e-9);
        prop_assert!(best >= entropy - 1e-9);
    }

    #[test]
    fn infonce_scale_invariant(seed in 0u64..1000, k in 0usize..3, s in 0.1f64..10.0) {
        let mut r = rng(seed);
        let a: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[4])).collect();
        let v: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[4])).collect();
        let eval = |a: &[Tensor]| {
            let mut g = Graph::new();
            let av: Vec<_> = a.iter().map(|t| g.constant(t.clone())).collect();
            let vv: Vec<_> = v.iter().map(|t| g.constant(t.clone())).collect();
            let l = infonce_loss(&mut g, &av, &vv, 0.07).unwrap();
            g.value(l).item()
        };
        let mut scaled = a.clone();
        scaled[k] = scaled[k].map(|x| x * s);
        prop_assert!((eval(&a) - eval(&scaled)).abs() <= 1e-9);
    }

    #[test]
    fn prediction_map_bounded(seed in 0u64..1000) {
        let mut r = rng(seed);
        let p = params(vec![6], 4, seed, 3, 3);
        let pair = random_pair(&mut r, 0, 3, 3, 3, 3);
        let m = prediction_map(&p, ModelTag::A, &pair).unwrap();
        prop_assert!(m.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn metrics_monotone_under_perfect_replacement(
        vals in prop::collection::vec(-1.0f64..=1.0, 8),
        k in 0usize..2,
        bits in prop::collection::vec(any::<bool>(), 8),
    ) {
        prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
        let gt = Mask::new(2, 4, bits.clone()).unwrap();
        let gts = [&gt, &gt];
        let m0 = PredictionMap::new(2, 4, vals.clone(), ModelTag::A, 0).unwrap();
        let m1 = PredictionMap::new(2, 4, vals.iter().map(|v| -v).collect(), ModelTag::A, 1).unwrap();
        let before = evaluate(&[m0.clone(), m1.clone()], &gts).unwrap();
        let perfect = PredictionMap::new(2, 4, bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(), ModelTag::A, 0).unwrap();
        let mut maps = vec![m0, m1];
        maps[k] = perfect;
        let after = evaluate(&maps, &gts).unwrap();
        prop_assert!(after.ciou >= before.ciou);
        prop_assert!(after.auc >= before.auc);
        prop_assert!(before.auc <= 100.0 && before.auc >= 0.0);
    }
}

#[test]
fn prediction_map_invariant_to_cell_rescaling() {
    // rescaling the final-layer weights rescales every embedding by the same
    // positive factor, which cosine ignores
    let mut r = rng(4);
    let p = params(vec![5], 3, 4, 3, 3);
    let pair = random_pair(&mut r, 0, 3, 3, 3, 3);
    let base = prediction_map(&p, ModelTag::A, &pair).unwrap();
    let mut q = p.clone();
    let last = q.visual.len() - 1;
    q.visual[last].weight = q.visual[last].weight.map(|x| 2.5 * x);
    q.visual[last].bias = q.visual[last].bias.map(|x| 2.5 * x);
    let la = q.audio.len() - 1;
    q.audio[la].weight = q.audio[la].weight.map(|x| 0.3 * x);
    q.audio[la].bias = q.audio[la].bias.map(|x| 0.3 * x);
    let scaled = prediction_map(&q, ModelTag::A, &pair).unwrap();
    for (a, b) in base.values.iter().zip(&scaled.values) {
        assert!((a - b).abs() < 1e-12);
    }
}
