//! Filtered link-prediction ranking and MR / MRR / Hits@k aggregation.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{Category, KnowledgeGraph, RelationCategory, Side, Split, Triple};
use crate::model::KgeModel;

/// How candidates with exactly the true entity's score are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Ties count against the true entity.
    #[default]
    Pessimistic,
    /// Only strictly better candidates count.
    Strict,
}

impl std::str::FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pessimistic" => Ok(TieBreak::Pessimistic),
            "strict" => Ok(TieBreak::Strict),
            other => Err(Error::config(
                "tie-break",
                format!("expected pessimistic or strict, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Exclude other known-true triples from the candidate set.
    pub filtered: bool,
    pub tie_break: TieBreak,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            filtered: true,
            tie_break: TieBreak::Pessimistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub triple: Triple,
    /// Rank of the true head among head corruptions.
    pub rank_s: usize,
    /// Rank of the true tail among tail corruptions.
    pub rank_o: usize,
}

/// `1 + #{c not filtered, c != true : score(c) beats score(true)}` where
/// "beats" is `<` under [`TieBreak::Strict`] and `<=` otherwise.
pub fn rank_triple(
    scores: &[f64],
    true_entity: usize,
    filter: Option<&HashSet<usize>>,
    tie_break: TieBreak,
) -> usize {
    let target = scores[true_entity];
    let mut rank = 1;
    for (c, &s) in scores.iter().enumerate() {
        if c == true_entity || filter.is_some_and(|f| f.contains(&c)) {
            continue;
        }
        let beats = match tie_break {
            TieBreak::Pessimistic => s <= target,
            TieBreak::Strict => s < target,
        };
        if beats {
            rank += 1;
        }
    }
    rank
}

fn side_ranks<M: KgeModel + ?Sized>(
    model: &M,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    side: Side,
    options: EvalOptions,
) -> Vec<usize> {
    let scorer = model.candidate_scorer(side);
    let ne = model.num_entities();
    triples
        .par_iter()
        .map_init(
            || vec![0.0; ne],
            |row, t| {
                scorer.score_all(t, row);
                let filter = if options.filtered {
                    kg.filter.known(t, side)
                } else {
                    None
                };
                rank_triple(row, t.entity(side), filter, options.tie_break)
            },
        )
        .collect()
}

/// Ranks both corruption sides of every triple in `triples`.
pub fn evaluate_triples<M: KgeModel + ?Sized>(
    model: &M,
    kg: &KnowledgeGraph,
    triples: &[Triple],
    options: EvalOptions,
) -> Vec<RankResult> {
    let tails = side_ranks(model, kg, triples, Side::Tail, options);
    let heads = side_ranks(model, kg, triples, Side::Head, options);
    triples
        .iter()
        .zip(heads.into_iter().zip(tails))
        .map(|(&triple, (rank_s, rank_o))| RankResult { triple, rank_s, rank_o })
        .collect()
}

pub fn evaluate<M: KgeModel + ?Sized>(
    model: &M,
    kg: &KnowledgeGraph,
    split: Split,
    options: EvalOptions,
) -> Result<Vec<RankResult>> {
    let triples = kg.split(split);
    if triples.is_empty() {
        return Err(Error::Data(format!("{split:?} split is empty")));
    }
    if model.num_entities() != kg.num_entities() || model.num_relations() != kg.num_relations() {
        return Err(Error::DimMismatch(format!(
            "model has {}/{} entities/relations, dataset has {}/{}",
            model.num_entities(),
            model.num_relations(),
            kg.num_entities(),
            kg.num_relations()
        )));
    }
    Ok(evaluate_triples(model, kg, triples, options))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Number of test triples (each contributes two ranks).
    pub count: usize,
}

impl MetricBundle {
    pub fn hits(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits1),
            3 => Some(self.hits3),
            10 => Some(self.hits10),
            _ => None,
        }
    }
}

pub fn aggregate_metrics(results: &[RankResult]) -> Result<MetricBundle> {
    if results.is_empty() {
        return Err(Error::Data("no rank results to aggregate".into()));
    }
    let denom = 2.0 * results.len() as f64;
    let (mut rank_sum, mut rr_sum) = (0.0, 0.0);
    let mut hits = [0usize; 3];
    for r in results {
        for rank in [r.rank_o, r.rank_s] {
            rank_sum += rank as f64;
            rr_sum += 1.0 / rank as f64;
            for (slot, k) in hits.iter_mut().zip([1, 3, 10]) {
                if rank <= k {
                    *slot += 1;
                }
            }
        }
    }
    Ok(MetricBundle {
        mr: rank_sum / denom,
        mrr: rr_sum / denom,
        hits1: hits[0] as f64 / denom,
        hits3: hits[1] as f64 / denom,
        hits10: hits[2] as f64 / denom,
        count: results.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: MetricBundle,
    /// Keyed by relation name.
    pub per_relation: BTreeMap<String, MetricBundle>,
    /// Keyed by category label (`1-to-1`, ...).
    pub per_category: BTreeMap<String, MetricBundle>,
}

type Breakdown = (BTreeMap<String, MetricBundle>, BTreeMap<String, MetricBundle>);

/// Aggregates per relation and per relation category. Relations are named
/// through `relation_names` when given, otherwise by id.
pub fn per_relation_metrics(
    results: &[RankResult],
    categories: &BTreeMap<usize, RelationCategory>,
    relation_names: Option<&[String]>,
) -> Result<Breakdown> {
    let mut by_rel: BTreeMap<usize, Vec<RankResult>> = BTreeMap::new();
    let mut by_cat: BTreeMap<Category, Vec<RankResult>> = BTreeMap::new();
    for r in results {
        let rel = r.triple.rel;
        let cat = categories.get(&rel).ok_or_else(|| {
            let name = relation_names
                .and_then(|n| n.get(rel).cloned())
                .unwrap_or_else(|| rel.to_string());
            Error::Data(format!("relation {name} has no category"))
        })?;
        by_rel.entry(rel).or_default().push(*r);
        by_cat.entry(cat.category).or_default().push(*r);
    }
    let name = |rel: usize| {
        relation_names
            .and_then(|n| n.get(rel).cloned())
            .unwrap_or_else(|| rel.to_string())
    };
    let per_relation = by_rel
        .iter()
        .map(|(&rel, rs)| Ok((name(rel), aggregate_metrics(rs)?)))
        .collect::<Result<_>>()?;
    let per_category = by_cat
        .iter()
        .map(|(cat, rs)| Ok((cat.label().to_owned(), aggregate_metrics(rs)?)))
        .collect::<Result<_>>()?;
    Ok((per_relation, per_category))
}

/// Overall metrics plus the per-relation and per-category breakdowns.
/// Relations missing from `categories` (never seen in training) are left out
/// of the breakdowns but still count toward the overall numbers.
pub fn metrics_report(
    results: &[RankResult],
    categories: &BTreeMap<usize, RelationCategory>,
    relation_names: Option<&[String]>,
) -> Result<MetricsReport> {
    let overall = aggregate_metrics(results)?;
    let covered: Vec<RankResult> = results
        .iter()
        .filter(|r| categories.contains_key(&r.triple.rel))
        .copied()
        .collect();
    let (per_relation, per_category) = if covered.is_empty() {
        Default::default()
    } else {
        per_relation_metrics(&covered, categories, relation_names)?
    };
    Ok(MetricsReport {
        overall,
        per_relation,
        per_category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rr(rank_s: usize, rank_o: usize) -> RankResult {
        RankResult {
            triple: Triple::new(0, 0, 0),
            rank_s,
            rank_o,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_triple(&[0.1, 0.5, 0.9], 0, None, TieBreak::Pessimistic), 1);
        assert_eq!(rank_triple(&[0.5, 0.1, 0.9], 0, None, TieBreak::Pessimistic), 2);
        let filter: HashSet<usize> = [1].into_iter().collect();
        assert_eq!(rank_triple(&[0.5, 0.1, 0.9], 0, Some(&filter), TieBreak::Pessimistic), 1);
    }

    #[test]
    fn ties_depend_on_mode() {
        let constant = [1.0; 5];
        assert_eq!(rank_triple(&constant, 2, None, TieBreak::Pessimistic), 5);
        assert_eq!(rank_triple(&constant, 2, None, TieBreak::Strict), 1);
    }

    #[test]
    fn true_entity_in_filter_is_still_ranked() {
        let filter: HashSet<usize> = [0, 1].into_iter().collect();
        assert_eq!(rank_triple(&[0.3, 0.1, 0.2], 0, Some(&filter), TieBreak::Pessimistic), 2);
    }

    #[test]
    fn aggregate_single_triple() {
        let m = aggregate_metrics(&[rr(1, 2)]).unwrap();
        assert_eq!(m.mr, 1.5);
        assert_eq!(m.mrr, 0.75);
        assert_eq!(m.hits1, 0.5);
        assert_eq!(m.hits3, 1.0);
        assert_eq!(m.count, 1);
    }

    #[test]
    fn aggregate_all_first() {
        let m = aggregate_metrics(&[rr(1, 1), rr(1, 1)]).unwrap();
        assert_eq!((m.mr, m.mrr, m.hits1, m.hits3, m.hits10), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(aggregate_metrics(&[]).is_err());
    }

    #[test]
    fn per_relation_breakdowns() {
        let cat = |c| RelationCategory { category: c, hco: 1.0, tcs: 1.0 };
        let one: BTreeMap<usize, RelationCategory> = [(0, cat(Category::OneToOne))].into();
        let results = vec![rr(1, 2), rr(3, 1)];
        let (per_rel, per_cat) = per_relation_metrics(&results, &one, None).unwrap();
        assert_eq!(per_rel["0"], aggregate_metrics(&results).unwrap());
        assert_eq!(per_cat["1-to-1"], aggregate_metrics(&results).unwrap());

        let two: BTreeMap<usize, RelationCategory> =
            [(0, cat(Category::OneToOne)), (1, cat(Category::NToN))].into();
        let mut mixed = vec![rr(1, 1), rr(2, 4), rr(5, 1)];
        mixed[2].triple.rel = 1;
        let names = vec!["a".to_string(), "b".to_string()];
        let (per_rel, _) = per_relation_metrics(&mixed, &two, Some(&names)).unwrap();
        let global = aggregate_metrics(&mixed).unwrap();
        let weighted = (per_rel["a"].mrr * 2.0 + per_rel["b"].mrr) / 3.0;
        assert!((global.mrr - weighted).abs() < 1e-15);

        let err = per_relation_metrics(&mixed, &one, Some(&names)).unwrap_err();
        assert!(err.to_string().contains('b'));
    }

    proptest! {
        #[test]
        fn metric_invariants(ranks in proptest::collection::vec((1usize..60, 1usize..60), 1..40)) {
            let results: Vec<_> = ranks.iter().map(|&(s, o)| rr(s, o)).collect();
            let m = aggregate_metrics(&results).unwrap();
            prop_assert!(m.mr >= 1.0);
            prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
            prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
            prop_assert!(m.mrr <= m.hits1 + (1.0 - m.hits1) / 2.0 + 1e-12);
        }
    }
}
