//! Ranking evaluation, relation frequency bands and dataset statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{apply_rules, ApplyOptions};
use crate::error::{Error, Result};
use crate::hybrid::{order, score_query, HybridRanking, Models, Provenance, StrategySpec};
use crate::kg::{DatasetBundle, EntityId, KnowledgeGraph, Query, QueryDirection, RelationId, Triple};
use crate::rankers::derive_seed;
use crate::rules::RuleSet;

/// Midpoint rank: `1 + better + round_half_up(tied / 2)`, where `tied`
/// counts other candidates with the gold answer's score.
pub fn midpoint_rank(better: usize, tied: usize) -> usize {
    1 + better + tied.div_ceil(2)
}

/// Midpoint rank of `gold` among `others`, higher scores first.
pub fn rank_of(gold: f64, others: &[f64]) -> usize {
    let better = others.iter().filter(|&&s| s > gold).count();
    let tied = others.iter().filter(|&&s| s == gold).count();
    midpoint_rank(better, tied)
}

/// Midpoint rank of `gold` in a ranking, using its tie flags.
pub fn rank_in(ranking: &HybridRanking, gold: EntityId) -> Result<usize> {
    let pos = ranking
        .position(gold)
        .ok_or_else(|| Error::Eval(format!("gold entity {gold} is not in the ranking")))?;
    let e = &ranking.entries;
    let mut start = pos;
    while start > 0 && e[start].tied_with_previous {
        start -= 1;
    }
    let mut end = pos + 1;
    while end < e.len() && e[end].tied_with_previous {
        end += 1;
    }
    Ok(midpoint_rank(start, end - start - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Setting {
    /// Every test-graph entity is a candidate.
    Full,
    /// The gold answer plus this many uniformly drawn entities.
    Reduced(usize),
}

impl Setting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Setting::Full),
            "reduced50" | "reduced-50" => Ok(Setting::Reduced(50)),
            other => Err(Error::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Setting::Full => "full".into(),
            Setting::Reduced(n) => format!("reduced{n}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub setting: Setting,
    /// Remove other known answers from the full universe. The reduced
    /// setting never filters its sampled negatives.
    pub filtered: bool,
    pub runs: usize,
    pub seed: u64,
    pub apply: ApplyOptions,
    /// Evaluate only the first `n` test triples (both directions each).
    pub max_triples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            setting: Setting::Full,
            filtered: true,
            runs: 5,
            seed: 0,
            apply: ApplyOptions::default(),
            max_triples: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Band {
    Frequent,
    Common,
    Rare,
}

impl Band {
    pub fn name(&self) -> &'static str {
        match self {
            Band::Frequent => "frequent",
            Band::Common => "common",
            Band::Rare => "rare",
        }
    }
}

/// Band of every relation of `kg`: the top 10% by triple count (rounded up)
/// are frequent, the next ones up to 50% (rounded up) common, the rest rare.
/// Equal counts are ordered by relation id.
pub fn frequency_bands(kg: &KnowledgeGraph) -> Vec<Band> {
    let counts = kg.relation_counts();
    let n = counts.len();
    let mut order: Vec<RelationId> = (0..n as RelationId).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let frequent = n.div_ceil(10);
    let common_end = n.div_ceil(2).max(frequent);
    let mut bands = vec![Band::Rare; n];
    for (i, &r) in order.iter().enumerate() {
        bands[r as usize] = if i < frequent {
            Band::Frequent
        } else if i < common_end {
            Band::Common
        } else {
            Band::Rare
        };
    }
    bands
}

/// Rank of one query's gold answer in every run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRanks {
    pub query: Query,
    pub gold: EntityId,
    pub gold_in_a: bool,
    pub a_size: usize,
    pub universe: usize,
    pub ranks: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Metrics {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricSummary {
    pub queries: usize,
    pub mrr: Stat,
    pub hits1: Stat,
    pub hits3: Stat,
    pub hits10: Stat,
}

impl MetricSummary {
    fn over_runs(ranks: &[&QueryRanks], runs: usize) -> MetricSummary {
        let per_run: Vec<Metrics> = (0..runs)
            .map(|run| Metrics::from_ranks(&ranks.iter().map(|q| q.ranks[run]).collect::<Vec<_>>()))
            .collect();
        let pick = |f: fn(&Metrics) -> f64| Stat::of(&per_run.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            queries: ranks.len(),
            mrr: pick(|m| m.mrr),
            hits1: pick(|m| m.hits1),
            hits3: pick(|m| m.hits3),
            hits10: pick(|m| m.hits10),
        }
    }

    fn rows(&self) -> [(&'static str, Stat); 4] {
        [
            ("mrr", self.mrr),
            ("hits@1", self.hits1),
            ("hits@3", self.hits3),
            ("hits@10", self.hits10),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub strategy: String,
    pub setting: String,
    /// Remove other known answers from the full universe. The reduced
    /// setting never filters its sampled negatives.
    pub filtered: bool,
    pub runs: usize,
    pub overall: MetricSummary,
    pub bands: BTreeMap<String, MetricSummary>,
    /// Queries whose gold answer was in `a_q`.
    pub gold_in_a: usize,
}

impl MetricsReport {
    pub fn from_ranks(
        dataset: &str,
        strategy: &StrategySpec,
        config: &EvalConfig,
        ranks: &[QueryRanks],
        bands: &[Band],
    ) -> MetricsReport {
        let all: Vec<&QueryRanks> = ranks.iter().collect();
        let mut by_band = BTreeMap::new();
        for band in [Band::Frequent, Band::Common, Band::Rare] {
            let subset: Vec<&QueryRanks> = ranks
                .iter()
                .filter(|q| bands.get(q.query.relation as usize) == Some(&band))
                .collect();
            by_band.insert(band.name().to_owned(), MetricSummary::over_runs(&subset, config.runs));
        }
        MetricsReport {
            dataset: dataset.to_owned(),
            strategy: strategy.to_string(),
            setting: config.setting.name(),
            filtered: config.filtered,
            runs: config.runs,
            overall: MetricSummary::over_runs(&all, config.runs),
            bands: by_band,
            gold_in_a: ranks.iter().filter(|q| q.gold_in_a).count(),
        }
    }

    pub const CSV_HEADER: &'static str = "dataset,strategy,setting,filtered,band,metric,mean,std,queries";

    /// One CSV row per band and metric, without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let mut emit = |band: &str, s: &MetricSummary| {
            for (metric, stat) in s.rows() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{:.6},{:.6},{}",
                    self.dataset,
                    self.strategy,
                    self.setting,
                    self.filtered,
                    band,
                    metric,
                    stat.mean,
                    stat.std,
                    s.queries
                );
            }
        };
        emit("all", &self.overall);
        for (band, s) in &self.bands {
            emit(band, s);
        }
        out
    }
}

/// Both queries of every triple in `triples`, in order.
pub fn queries_of(triples: &[Triple]) -> Vec<(Query, EntityId)> {
    triples
        .iter()
        .flat_map(|&t| {
            [
                Query::from_triple(t, QueryDirection::Tail),
                Query::from_triple(t, QueryDirection::Head),
            ]
        })
        .collect()
}

/// Candidate universe of one query in one run, before filtering.
fn universe(setting: Setting, num_entities: usize, gold: EntityId, seed: u64) -> Vec<EntityId> {
    match setting {
        Setting::Full => (0..num_entities as EntityId).collect(),
        Setting::Reduced(k) => {
            let others = num_entities.saturating_sub(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out: Vec<EntityId> = sample(&mut rng, others, k.min(others))
                .into_iter()
                .map(|i| {
                    if (i as EntityId) < gold {
                        i as EntityId
                    } else {
                        i as EntityId + 1
                    }
                })
                .collect();
            out.push(gold);
            out.sort_unstable();
            out
        }
    }
}

/// Gold ranks of every test query under `strategy`. The fact graph is the
/// training split of the test graph.
pub fn evaluate_ranks(
    bundle: &DatasetBundle,
    rules: &RuleSet,
    strategy: &StrategySpec,
    models: &Models,
    config: &EvalConfig,
) -> Result<Vec<QueryRanks>> {
    models.check(strategy)?;
    if config.runs == 0 {
        return Err(Error::Eval("at least one run is required".into()));
    }
    let kg = &bundle.test_graph.train;
    let mut triples = bundle.test_graph.test.triples().to_vec();
    if let Some(k) = config.max_triples {
        triples.truncate(k);
    }
    let queries = queries_of(&triples);
    let n = kg.num_entities();
    let results: Vec<Result<QueryRanks>> = queries
        .par_iter()
        .enumerate()
        .map(|(qi, &(q, gold))| {
            let partition = apply_rules(kg, rules, &q, &config.apply)?;
            let scores = score_query(&partition, strategy, models)?;
            // Sampled negatives are uniform draws and are not filtered.
            let filter = if config.filtered && config.setting == Setting::Full {
                bundle.filter_set(&q, gold)?
            } else {
                Vec::new()
            };
            let mut ranks = Vec::with_capacity(config.runs);
            let mut size = 0;
            for run in 0..config.runs {
                let run_seed = derive_seed(config.seed, &[run as u64]);
                let mut cands = universe(config.setting, n, gold, derive_seed(run_seed, &[qi as u64]));
                cands.retain(|e| filter.binary_search(e).is_err());
                let restricted = partition.restricted(&cands);
                let ranking = order(&restricted, strategy, &scores, run_seed)?;
                if ranking.len() != cands.len() {
                    return Err(Error::Eval(format!(
                        "ranking has {} entries for {} candidates",
                        ranking.len(),
                        cands.len()
                    )));
                }
                ranks.push(rank_in(&ranking, gold)?);
                size = cands.len();
            }
            Ok(QueryRanks {
                query: q,
                gold,
                gold_in_a: partition.evidence(gold).is_some(),
                a_size: partition.a_q.len(),
                universe: size,
                ranks,
            })
        })
        .collect();
    results.into_iter().collect()
}

pub fn evaluate(
    bundle: &DatasetBundle,
    rules: &RuleSet,
    strategy: &StrategySpec,
    models: &Models,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let ranks = evaluate_ranks(bundle, rules, strategy, models, config)?;
    let bands = frequency_bands(&bundle.train_graph.train);
    Ok(MetricsReport::from_ranks(
        &bundle.name,
        strategy,
        config,
        &ranks,
        &bands,
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GraphStats {
    pub relations: usize,
    pub entities: usize,
    pub triples: usize,
}

impl GraphStats {
    /// Counts over the union of the three splits of one graph.
    fn of(splits: &crate::kg::GraphSplits) -> GraphStats {
        let all = splits.all_triples();
        let mut rels: Vec<RelationId> = all.iter().map(|t| t.relation).collect();
        rels.sort_unstable();
        rels.dedup();
        let mut ents: Vec<EntityId> = all.iter().flat_map(|t| [t.head, t.tail]).collect();
        ents.sort_unstable();
        ents.dedup();
        GraphStats {
            relations: rels.len(),
            entities: ents.len(),
            triples: all.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub dataset: String,
    pub train_graph: GraphStats,
    pub test_graph: GraphStats,
    pub rules: usize,
    pub queries: usize,
    /// Percentages of test queries.
    pub a_empty: f64,
    pub a_single: f64,
    pub a_over_10: f64,
    /// Mean number of ground rules predicting the gold answer; queries whose
    /// gold answer has no evidence count as zero.
    pub rule_instantiations: f64,
}

/// Statistics over both queries of every test triple of the test graph.
pub fn dataset_stats(bundle: &DatasetBundle, rules: &RuleSet, apply: &ApplyOptions) -> Result<StatsReport> {
    let kg = &bundle.test_graph.train;
    let queries = queries_of(bundle.test_graph.test.triples());
    let per: Vec<Result<(usize, usize)>> = queries
        .par_iter()
        .map(|(q, gold)| {
            let p = apply_rules(kg, rules, q, apply)?;
            let inst = p.evidence(*gold).map_or(0, |e| e.matches.len());
            Ok((p.a_q.len(), inst))
        })
        .collect();
    let per: Vec<(usize, usize)> = per.into_iter().collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let pct = |f: &dyn Fn(usize) -> bool| 100.0 * per.iter().filter(|(a, _)| f(*a)).count() as f64 / n;
    Ok(StatsReport {
        dataset: bundle.name.clone(),
        train_graph: GraphStats::of(&bundle.train_graph),
        test_graph: GraphStats::of(&bundle.test_graph),
        rules: rules.len(),
        queries: per.len(),
        a_empty: pct(&|a| a == 0),
        a_single: pct(&|a| a == 1),
        a_over_10: pct(&|a| a > 10),
        rule_instantiations: per.iter().map(|&(_, i)| i as f64).sum::<f64>() / n,
    })
}

/// Length of the ranking prefix ordered by the primary scorer.
pub fn a_prefix_len(ranking: &HybridRanking) -> usize {
    ranking
        .entries
        .iter()
        .take_while(|e| e.provenance == Provenance::A)
        .count()
}
