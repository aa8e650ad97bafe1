use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use radgraph_core::chestkg::ChestGraph;
use radgraph_core::mirqi::{score_pair, F1Mode, MirqiConfig, MirqiWeights, UncertainAs};
use radgraph_core::reportnlp::CategorySummary;
use radgraph_core::{EntityGraph, Polarity};

const ATTRS: [&str; 5] = ["left", "small", "patchy", "mild", "basilar"];

type State = Option<(Polarity, BTreeSet<String>)>;

fn state() -> impl Strategy<Value = State> {
    let polarity = prop_oneof![
        Just(Polarity::Positive),
        Just(Polarity::Negative),
        Just(Polarity::Uncertain)
    ];
    let attrs = proptest::collection::btree_set(proptest::sample::select(&ATTRS[..]), 0..4)
        .prop_map(|s| s.into_iter().map(str::to_string).collect::<BTreeSet<_>>());
    proptest::option::weighted(0.4, (polarity, attrs))
}

fn states() -> impl Strategy<Value = Vec<State>> {
    proptest::collection::vec(state(), 20)
}

fn build(states: &[State]) -> EntityGraph {
    let g = ChestGraph::default_graph();
    let summary: BTreeMap<String, CategorySummary> = states
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.as_ref().map(|(polarity, attributes)| {
                (
                    g.categories()[i].name.clone(),
                    CategorySummary {
                        polarity: *polarity,
                        attributes: attributes.clone(),
                    },
                )
            })
        })
        .collect();
    EntityGraph::from_summary(summary)
}

/// Set-based restatement of the scoring rule, uncertain counted positive.
fn oracle(gt: &[State], gen: &[State], w_pos: f64, w_attr: f64) -> (f64, f64) {
    let positive = |s: &State| matches!(s, Some((p, _)) if *p != Polarity::Negative);
    let negative = |s: &State| matches!(s, Some((Polarity::Negative, _)));
    let p_gt: BTreeSet<usize> = (0..20).filter(|&i| positive(&gt[i])).collect();
    let p_gen: BTreeSet<usize> = (0..20).filter(|&i| positive(&gen[i])).collect();
    let n_gt: BTreeSet<usize> = (0..20).filter(|&i| negative(&gt[i])).collect();
    let n_gen: BTreeSet<usize> = (0..20).filter(|&i| negative(&gen[i])).collect();
    let both: Vec<usize> = p_gt.intersection(&p_gen).copied().collect();
    let fn_ = p_gt.difference(&p_gen).count() as f64;
    let fp = p_gen.difference(&p_gt).count() as f64;
    let tn = n_gt.intersection(&n_gen).count() as f64;
    let attr_credit: f64 = both
        .iter()
        .map(|&i| {
            let a = &gt[i].as_ref().unwrap().1;
            let b = &gen[i].as_ref().unwrap().1;
            if a.is_empty() {
                1.0
            } else {
                a.intersection(b).count() as f64 / a.len() as f64
            }
        })
        .sum();
    let tp = (1.0 - w_attr) * both.len() as f64 + w_attr * attr_credit;
    let div = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
    let recall = w_pos * div(tp, tp + fn_) + (1.0 - w_pos) * div(tn, tn + fp);
    let precision = w_pos * div(tp, tp + fp) + (1.0 - w_pos) * div(tn, tn + fn_);
    (recall, precision)
}

fn config() -> MirqiConfig {
    MirqiConfig::default()
}

#[test]
fn negation_contrast_pair() {
    // GT: airspace disease negated; GEN: airspace disease present
    let mut gt = vec![None; 20];
    let mut gen = vec![None; 20];
    let airspace = ChestGraph::default_graph().category_index("airspace disease").unwrap();
    gt[airspace] = Some((Polarity::Negative, BTreeSet::new()));
    gen[airspace] = Some((Polarity::Positive, BTreeSet::new()));
    let s = score_pair(&build(&gt), &build(&gen), &ChestGraph::default_graph(), &config()).unwrap();
    assert!((s.recall - 0.8).abs() < 1e-12);
    assert!((s.precision - 0.2).abs() < 1e-12);
    assert!((s.f1 - 0.32).abs() < 1e-12);
}

proptest! {
    #[test]
    fn agrees_with_set_oracle(gt in states(), gen in states(), w_pos in 0.0f64..=1.0, w_attr in 0.0f64..=1.0) {
        let cfg = MirqiConfig { weights: MirqiWeights::new(w_pos, w_attr).unwrap(), ..config() };
        let s = score_pair(&build(&gt), &build(&gen), &ChestGraph::default_graph(), &cfg).unwrap();
        let (r, p) = oracle(&gt, &gen, w_pos, w_attr);
        prop_assert!((s.recall - r).abs() < 1e-12, "recall {} vs {}", s.recall, r);
        prop_assert!((s.precision - p).abs() < 1e-12, "precision {} vs {}", s.precision, p);
    }

    #[test]
    fn scores_bounded(gt in states(), gen in states()) {
        let s = score_pair(&build(&gt), &build(&gen), &ChestGraph::default_graph(), &config()).unwrap();
        for v in [s.recall, s.precision, s.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn self_match_is_perfect(gt in states()) {
        let g = build(&gt);
        let s = score_pair(&g, &g, &ChestGraph::default_graph(), &config()).unwrap();
        prop_assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn literal_f1_is_half(gt in states(), gen in states()) {
        let h = score_pair(&build(&gt), &build(&gen), &ChestGraph::default_graph(), &config()).unwrap();
        let cfg = MirqiConfig { f1_mode: F1Mode::Literal, ..config() };
        let l = score_pair(&build(&gt), &build(&gen), &ChestGraph::default_graph(), &cfg).unwrap();
        prop_assert!((l.f1 - h.f1 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn generated_negatives_on_unmentioned_are_free(gt in states(), gen in states(), extra in 0usize..20) {
        prop_assume!(gt[extra].is_none() && gen[extra].is_none());
        let mut gen2 = gen.clone();
        gen2[extra] = Some((Polarity::Negative, BTreeSet::new()));
        let graph = ChestGraph::default_graph();
        let a = score_pair(&build(&gt), &build(&gen), &graph, &config()).unwrap();
        let b = score_pair(&build(&gt), &build(&gen2), &graph, &config()).unwrap();
        prop_assert_eq!(a.recall, b.recall);
        prop_assert_eq!(a.precision, b.precision);
    }

    #[test]
    fn adding_reference_attributes_never_hurts(gt in states(), gen in states(), pick in 0usize..20) {
        let graph = ChestGraph::default_graph();
        let Some((_, gt_attrs)) = gt[pick].clone() else { return Ok(()); };
        let mut gen2 = gen.clone();
        if let Some((_, attrs)) = gen2[pick].as_mut() {
            attrs.extend(gt_attrs);
        }
        let a = score_pair(&build(&gt), &build(&gen), &graph, &config()).unwrap();
        let b = score_pair(&build(&gt), &build(&gen2), &graph, &config()).unwrap();
        prop_assert!(b.recall >= a.recall - 1e-15);
        prop_assert!(b.precision >= a.precision - 1e-15);
    }

    #[test]
    fn swapping_roles_swaps_recall_and_precision(gt in states(), gen in states()) {
        // without attributes the rule is symmetric up to role exchange
        let strip = |v: &[State]| -> Vec<State> {
            v.iter().map(|s| s.as_ref().map(|(p, _)| (*p, BTreeSet::new()))).collect()
        };
        let (gt, gen) = (strip(&gt), strip(&gen));
        let graph = ChestGraph::default_graph();
        let a = score_pair(&build(&gt), &build(&gen), &graph, &config()).unwrap();
        let b = score_pair(&build(&gen), &build(&gt), &graph, &config()).unwrap();
        prop_assert!((a.recall - b.precision).abs() < 1e-15);
        prop_assert!((a.precision - b.recall).abs() < 1e-15);
    }

    #[test]
    fn uncertain_as_negative_matches_relabeling(gt in states(), gen in states()) {
        let relabel = |v: &[State]| -> Vec<State> {
            v.iter()
                .map(|s| s.as_ref().map(|(p, a)| {
                    let p = if *p == Polarity::Uncertain { Polarity::Negative } else { *p };
                    (p, a.clone())
                }))
                .collect()
        };
        let graph = ChestGraph::default_graph();
        let cfg = MirqiConfig { uncertain_as: UncertainAs::Negative, ..config() };
        let a = score_pair(&build(&gt), &build(&gen), &graph, &cfg).unwrap();
        let b = score_pair(&build(&relabel(&gt)), &build(&relabel(&gen)), &graph, &config()).unwrap();
        prop_assert_eq!(a.recall, b.recall);
        prop_assert_eq!(a.precision, b.precision);
    }
}
