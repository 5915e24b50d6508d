//! Hybrid rankings: rule-predicted candidates ordered by a primary scorer,
//! followed by the remaining candidates ordered by a fallback.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::engine::{rank_by_score, rank_max_tiebreak, rank_noisy_or, CandidatePartition, RankedEntity};
use crate::error::{Error, Result};
use crate::kg::{EntityId, QueryDirection, Vocab};
use crate::rankers::{derive_seed, Aggregator, MessageGraph, NbfRanker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Primary {
    AnyburlMax,
    NoisyOr,
    Rgcn,
    CompGcn,
    Nbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Fallback {
    Shuffle,
    Nbf,
}

/// A strategy written `primary+fallback`, e.g. `anyburl-max+nbfnet`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct StrategySpec {
    pub primary: Primary,
    pub fallback: Fallback,
}

impl StrategySpec {
    pub fn new(primary: Primary, fallback: Fallback) -> Self {
        StrategySpec { primary, fallback }
    }

    pub fn needs_nbf(&self) -> bool {
        self.primary == Primary::Nbf || self.fallback == Fallback::Nbf
    }

    /// Every primary/fallback pair.
    pub fn all() -> Vec<StrategySpec> {
        let mut out = Vec::new();
        for p in [
            Primary::AnyburlMax,
            Primary::NoisyOr,
            Primary::Rgcn,
            Primary::CompGcn,
            Primary::Nbf,
        ] {
            for f in [Fallback::Shuffle, Fallback::Nbf] {
                out.push(StrategySpec::new(p, f));
            }
        }
        out
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.primary {
            Primary::AnyburlMax => "anyburl-max",
            Primary::NoisyOr => "noisy-or",
            Primary::Rgcn => "rgcn",
            Primary::CompGcn => "compgcn",
            Primary::Nbf => "nbfnet",
        };
        let b = match self.fallback {
            Fallback::Shuffle => "shuffle",
            Fallback::Nbf => "nbfnet",
        };
        write!(f, "{p}+{b}")
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (p, b) = s.split_once('+').unwrap_or((s, "shuffle"));
        let primary = match p.trim() {
            "anyburl-max" | "anyburl" | "max" => Primary::AnyburlMax,
            "noisy-or" => Primary::NoisyOr,
            "rgcn" => Primary::Rgcn,
            "compgcn" => Primary::CompGcn,
            "nbfnet" | "nbf" => Primary::Nbf,
            other => return Err(Error::InvalidArgument(format!("unknown primary ranker {other:?}"))),
        };
        let fallback = match b.trim() {
            "shuffle" => Fallback::Shuffle,
            "nbfnet" | "nbf" => Fallback::Nbf,
            other => return Err(Error::InvalidArgument(format!("unknown fallback ranker {other:?}"))),
        };
        Ok(StrategySpec { primary, fallback })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    /// Ranked by the primary scorer.
    A,
    /// Ranked by the fallback.
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HybridEntry {
    pub entity: EntityId,
    pub score: f64,
    pub tied_with_previous: bool,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HybridRanking {
    pub entries: Vec<HybridEntry>,
}

impl HybridRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.entries.iter().map(|e| e.entity).collect()
    }

    pub fn position(&self, entity: EntityId) -> Option<usize> {
        self.entries.iter().position(|e| e.entity == entity)
    }

    /// Per-query dump with entity names resolved.
    pub fn to_json(&self, query: &crate::kg::Query, entities: &Vocab, relations: &Vocab) -> serde_json::Value {
        let name = |e: EntityId| entities.name(e).unwrap_or("?").to_owned();
        serde_json::json!({
            "query": {
                "anchor": name(query.anchor),
                "relation": relations.name(query.relation).unwrap_or("?"),
                "direction": match query.direction {
                    QueryDirection::Tail => "tail",
                    QueryDirection::Head => "head",
                },
            },
            "ranking": self.entries.iter().map(|e| serde_json::json!({
                "entity": name(e.entity),
                "score": e.score,
                "tied_with_previous": e.tied_with_previous,
                "provenance": e.provenance,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Concatenates the two orders, tagging provenance. The first B entry is
/// never tied with the last A entry.
pub fn compose(a: Vec<RankedEntity>, b: Vec<RankedEntity>) -> Result<HybridRanking> {
    let mut seen: HashMap<EntityId, Provenance> = HashMap::with_capacity(a.len() + b.len());
    let mut entries = Vec::with_capacity(a.len() + b.len());
    for (list, tag) in [(a, Provenance::A), (b, Provenance::B)] {
        for (i, r) in list.into_iter().enumerate() {
            if seen.insert(r.entity, tag).is_some() {
                return Err(Error::Ranking(format!("entity {} appears twice", r.entity)));
            }
            entries.push(HybridEntry {
                entity: r.entity,
                score: r.score,
                tied_with_previous: i > 0 && r.tied_with_previous,
                provenance: tag,
            });
        }
    }
    Ok(HybridRanking { entries })
}

/// Trained models a strategy may need. The message graph must be the fact
/// graph the queries are answered against.
#[derive(Default)]
pub struct Models {
    pub rgcn: Option<Aggregator>,
    pub compgcn: Option<Aggregator>,
    pub nbf: Option<NbfRanker>,
    pub message_graph: Option<MessageGraph>,
}

impl Models {
    fn aggregator(&self, primary: Primary) -> Result<Option<&Aggregator>> {
        match primary {
            Primary::Rgcn => self
                .rgcn
                .as_ref()
                .map(Some)
                .ok_or(Error::MissingModel("rgcn aggregator")),
            Primary::CompGcn => self
                .compgcn
                .as_ref()
                .map(Some)
                .ok_or(Error::MissingModel("compgcn aggregator")),
            _ => Ok(None),
        }
    }

    fn nbf(&self) -> Result<(&NbfRanker, &MessageGraph)> {
        let m = self.nbf.as_ref().ok_or(Error::MissingModel("nbf ranker"))?;
        let g = self
            .message_graph
            .as_ref()
            .ok_or(Error::MissingModel("message graph"))?;
        Ok((m, g))
    }

    /// Checks that every model `spec` needs is loaded.
    pub fn check(&self, spec: &StrategySpec) -> Result<()> {
        self.aggregator(spec.primary)?;
        if spec.needs_nbf() {
            self.nbf()?;
        }
        Ok(())
    }
}

/// Model scores for one query, computed once and reused across restricted
/// candidate universes.
#[derive(Clone, Debug, Default)]
pub struct QueryScores {
    /// Aggregator confidence per `a_q` candidate.
    pub aggregator: Option<HashMap<EntityId, f64>>,
    /// Path-ranker logit per entity id.
    pub nbf: Option<Vec<f64>>,
}

pub fn score_query(partition: &CandidatePartition, spec: &StrategySpec, models: &Models) -> Result<QueryScores> {
    let mut scores = QueryScores::default();
    if let Some(agg) = models.aggregator(spec.primary)? {
        scores.aggregator = Some(agg.score_partition(partition)?.into_iter().collect());
    }
    if spec.needs_nbf() {
        let (m, g) = models.nbf()?;
        scores.nbf = Some(m.score_all(g, &partition.query, None)?);
    }
    Ok(scores)
}

fn lookup_nbf(scores: &QueryScores, entities: impl Iterator<Item = EntityId>) -> Result<Vec<(EntityId, f64)>> {
    let table = scores.nbf.as_ref().ok_or(Error::MissingModel("nbf scores"))?;
    entities
        .map(|e| {
            table
                .get(e as usize)
                .map(|&s| (e, s))
                .ok_or_else(|| Error::Ranking(format!("no score for entity {e}")))
        })
        .collect()
}

/// Seed of the shuffle fallback for one query.
pub fn shuffle_seed(seed: u64, query: &crate::kg::Query) -> u64 {
    let dir = match query.direction {
        QueryDirection::Tail => 0,
        QueryDirection::Head => 1,
    };
    derive_seed(seed, &[query.anchor as u64, query.relation as u64, dir])
}

/// Orders a partition with precomputed scores.
pub fn order(
    partition: &CandidatePartition,
    spec: &StrategySpec,
    scores: &QueryScores,
    seed: u64,
) -> Result<HybridRanking> {
    let a = match spec.primary {
        Primary::AnyburlMax => rank_max_tiebreak(partition),
        Primary::NoisyOr => rank_noisy_or(partition),
        Primary::Rgcn | Primary::CompGcn => {
            let table = scores
                .aggregator
                .as_ref()
                .ok_or(Error::MissingModel("aggregator scores"))?;
            let scored = partition
                .a_q
                .iter()
                .map(|ev| {
                    table
                        .get(&ev.candidate)
                        .map(|&s| (ev.candidate, s))
                        .ok_or_else(|| Error::Ranking(format!("no score for candidate {}", ev.candidate)))
                })
                .collect::<Result<Vec<_>>>()?;
            rank_by_score(scored)
        }
        Primary::Nbf => rank_by_score(lookup_nbf(scores, partition.a_q.iter().map(|e| e.candidate))?),
    };
    let b = match spec.fallback {
        Fallback::Shuffle => {
            // A seeded key per entity rather than a shuffle of `b_q`, so that
            // removing candidates keeps the relative order of the rest.
            let query_seed = shuffle_seed(seed, &partition.query);
            let mut order = partition.b_q.clone();
            order.sort_by_cached_key(|&e| (derive_seed(query_seed, &[e as u64]), e));
            order
                .into_iter()
                .map(|entity| RankedEntity {
                    entity,
                    score: 0.0,
                    tied_with_previous: false,
                })
                .collect()
        }
        Fallback::Nbf => rank_by_score(lookup_nbf(scores, partition.b_q.iter().copied())?),
    };
    compose(a, b)
}

/// Scores and orders one query's candidates.
pub fn run_strategy(
    partition: &CandidatePartition,
    spec: &StrategySpec,
    models: &Models,
    seed: u64,
) -> Result<HybridRanking> {
    let scores = score_query(partition, spec, models)?;
    order(partition, spec, &scores, seed)
}
