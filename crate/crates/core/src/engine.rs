//! Rule application: per-candidate ground-rule evidence and the two rule
//! based rankers (max confidence with tie-breaking, and noisy-or).

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
pub use crate::kg::Query;
use crate::kg::{Direction, EntityId, KnowledgeGraph, QueryDirection, Triple, Vocab};
use crate::rules::{BodyAtom, RuleId, RuleSet};

/// One ground rule predicting a candidate. `path` and `body` are in rule
/// order, from `X0` to `Xn`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundRuleMatch {
    pub rule: RuleId,
    pub confidence: f64,
    pub path: Vec<EntityId>,
    pub body: Vec<Triple>,
}

/// All rule evidence for one candidate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub candidate: EntityId,
    /// Sorted by confidence descending, then rule order, then traversal order.
    pub matches: Vec<GroundRuleMatch>,
    /// Distinct rules firing for this candidate, in rule order.
    pub rules: Vec<RuleId>,
    /// Confidences of `rules`, non-increasing.
    pub rule_confidences: Vec<f64>,
}

impl Evidence {
    pub fn max_confidence(&self) -> f64 {
        self.rule_confidences.first().copied().unwrap_or(0.0)
    }

    /// `1 - prod(1 - c)` over distinct rules.
    pub fn noisy_or(&self) -> f64 {
        noisy_or(&self.rule_confidences)
    }
}

/// Clamped below by the largest confidence, which `1 - (1 - c)` can miss
/// by an ulp.
pub fn noisy_or(confidences: &[f64]) -> f64 {
    let p = 1.0 - confidences.iter().map(|c| 1.0 - c).product::<f64>();
    confidences.iter().copied().fold(p, f64::max)
}

/// Split of the candidate universe into rule-predicted (`a_q`) and
/// unpredicted (`b_q`) entities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidatePartition {
    pub query: Query,
    /// Sorted by candidate id.
    pub a_q: Vec<Evidence>,
    /// Sorted ascending.
    pub b_q: Vec<EntityId>,
}

impl CandidatePartition {
    pub fn evidence(&self, candidate: EntityId) -> Option<&Evidence> {
        self.a_q
            .binary_search_by_key(&candidate, |e| e.candidate)
            .ok()
            .map(|i| &self.a_q[i])
    }

    /// Restricts both sides to `universe` (sorted or not).
    pub fn restricted(&self, universe: &[EntityId]) -> CandidatePartition {
        let mut keep = universe.to_vec();
        keep.sort_unstable();
        let contains = |e: EntityId| keep.binary_search(&e).is_ok();
        let a_q: Vec<Evidence> = self.a_q.iter().filter(|ev| contains(ev.candidate)).cloned().collect();
        let b_q = keep.iter().copied().filter(|&e| self.evidence(e).is_none()).collect();
        CandidatePartition {
            query: self.query,
            a_q,
            b_q,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApplyOptions {
    pub max_matches_per_candidate: usize,
    /// Edge expansions per rule and query before the join is cut short.
    pub max_expansions_per_rule: usize,
    /// A triple that may not be used in any grounding (the training target).
    pub exclude: Option<Triple>,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        ApplyOptions {
            max_matches_per_candidate: 100,
            max_expansions_per_rule: 100_000,
            exclude: None,
        }
    }
}

fn step_triple(from: EntityId, atom: BodyAtom, to: EntityId) -> Triple {
    match atom.direction {
        Direction::Forward => Triple::new(from, atom.relation, to),
        Direction::Inverse => Triple::new(to, atom.relation, from),
    }
}

struct Join<'a> {
    kg: &'a KnowledgeGraph,
    atoms: &'a [BodyAtom],
    exclude: Option<Triple>,
    limit: usize,
    visits: usize,
    stack: Vec<EntityId>,
    triples: Vec<Triple>,
}

impl Join<'_> {
    fn run(&mut self, emit: &mut dyn FnMut(&[EntityId], &[Triple])) -> bool {
        let depth = self.triples.len();
        if depth == self.atoms.len() {
            emit(&self.stack, &self.triples);
            return true;
        }
        let atom = self.atoms[depth];
        let current = *self.stack.last().expect("non-empty");
        for e in self.kg.edges_with(current, atom.relation, atom.direction) {
            self.visits += 1;
            if self.visits > self.limit {
                return false;
            }
            if self.stack.contains(&e.neighbor) {
                continue;
            }
            let t = step_triple(current, atom, e.neighbor);
            if Some(t) == self.exclude {
                continue;
            }
            self.stack.push(e.neighbor);
            self.triples.push(t);
            let ok = self.run(emit);
            self.stack.pop();
            self.triples.pop();
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Applies every rule whose head is the query relation and collects the
/// resulting ground rules per candidate.
pub fn apply_rules(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    query: &Query,
    options: &ApplyOptions,
) -> Result<CandidatePartition> {
    if query.anchor as usize >= kg.num_entities() {
        return Err(Error::IdOutOfRange {
            kind: "entity",
            id: query.anchor as u64,
            size: kg.num_entities(),
        });
    }
    let mut found: HashMap<EntityId, Evidence> = HashMap::new();
    for &rule_id in rules.rules_for_head(query.relation) {
        let entry = rules.get(rule_id);
        let confidence = entry.stats.confidence;
        let atoms = match query.direction {
            QueryDirection::Tail => entry.rule.body.clone(),
            QueryDirection::Head => entry.rule.reversed_body(),
        };
        let mut join = Join {
            kg,
            atoms: &atoms,
            exclude: options.exclude,
            limit: options.max_expansions_per_rule,
            visits: 0,
            stack: vec![query.anchor],
            triples: Vec::with_capacity(atoms.len()),
        };
        let direction = query.direction;
        let max_matches = options.max_matches_per_candidate;
        let complete = join.run(&mut |stack, triples| {
            let candidate = *stack.last().expect("non-empty");
            let ev = found.entry(candidate).or_insert_with(|| Evidence {
                candidate,
                matches: Vec::new(),
                rules: Vec::new(),
                rule_confidences: Vec::new(),
            });
            if ev.rules.last() != Some(&rule_id) {
                ev.rules.push(rule_id);
                ev.rule_confidences.push(confidence);
            }
            if ev.matches.len() < max_matches {
                let (mut path, mut body) = (stack.to_vec(), triples.to_vec());
                if direction == QueryDirection::Head {
                    path.reverse();
                    body.reverse();
                }
                ev.matches.push(GroundRuleMatch {
                    rule: rule_id,
                    confidence,
                    path,
                    body,
                });
            }
        });
        if !complete {
            log::debug!("rule {rule_id} cut short after {} expansions", join.visits);
        }
    }
    let mut a_q: Vec<Evidence> = found.into_values().collect();
    a_q.sort_unstable_by_key(|e| e.candidate);
    let mut b_q = Vec::with_capacity(kg.num_entities().saturating_sub(a_q.len()));
    let mut next = a_q.iter().map(|e| e.candidate).peekable();
    for e in 0..kg.num_entities() as EntityId {
        if next.peek() == Some(&e) {
            next.next();
        } else {
            b_q.push(e);
        }
    }
    Ok(CandidatePartition {
        query: *query,
        a_q,
        b_q,
    })
}

/// A candidate in a ranked list. `tied_with_previous` marks entries that are
/// indistinguishable from their predecessor under the ranker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankedEntity {
    pub entity: EntityId,
    pub score: f64,
    pub tied_with_previous: bool,
}

fn trimmed(list: &[f64]) -> &[f64] {
    let end = list.iter().rposition(|&c| c > 0.0).map_or(0, |i| i + 1);
    &list[..end]
}

/// Compares two descending confidence lists lexicographically. A proper
/// prefix ranks after its extensions. `Ordering::Less` means `a` ranks first.
pub fn compare_confidence_lists(a: &[f64], b: &[f64]) -> Ordering {
    let (a, b) = (trimmed(a), trimmed(b));
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    b.len().cmp(&a.len())
}

/// Orders `a_q` by max confidence, breaking ties with the next most confident
/// rules, then by ascending entity id.
pub fn rank_max_tiebreak(partition: &CandidatePartition) -> Vec<RankedEntity> {
    let mut order: Vec<&Evidence> = partition.a_q.iter().collect();
    order.sort_by(|x, y| {
        compare_confidence_lists(&x.rule_confidences, &y.rule_confidences).then(x.candidate.cmp(&y.candidate))
    });
    let mut out: Vec<RankedEntity> = Vec::with_capacity(order.len());
    for (i, ev) in order.iter().enumerate() {
        let tied =
            i > 0 && compare_confidence_lists(&order[i - 1].rule_confidences, &ev.rule_confidences) == Ordering::Equal;
        out.push(RankedEntity {
            entity: ev.candidate,
            score: ev.max_confidence(),
            tied_with_previous: tied,
        });
    }
    out
}

/// Orders `a_q` by noisy-or over distinct rules, then ascending entity id.
pub fn rank_noisy_or(partition: &CandidatePartition) -> Vec<RankedEntity> {
    rank_by_score(partition.a_q.iter().map(|e| (e.candidate, e.noisy_or())).collect())
}

/// Sorts `(entity, score)` by score descending, then entity ascending, and
/// marks equal scores as ties.
pub fn rank_by_score(mut scored: Vec<(EntityId, f64)>) -> Vec<RankedEntity> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<RankedEntity> = Vec::with_capacity(scored.len());
    for (i, &(entity, score)) in scored.iter().enumerate() {
        out.push(RankedEntity {
            entity,
            score,
            tied_with_previous: i > 0 && scored[i - 1].1 == score,
        });
    }
    out
}

/// Debug dump of the evidence for a query, with names resolved.
pub fn evidence_json(
    partition: &CandidatePartition,
    rules: &RuleSet,
    entities: &Vocab,
    relations: &Vocab,
) -> serde_json::Value {
    let name = |e: EntityId| entities.name(e).unwrap_or("?").to_owned();
    let candidates: Vec<serde_json::Value> = partition
        .a_q
        .iter()
        .map(|ev| {
            let matches: Vec<serde_json::Value> = ev
                .matches
                .iter()
                .map(|m| {
                    serde_json::json!({
                        "rule": rules.get(m.rule).rule.display(relations),
                        "confidence": m.confidence,
                        "path": m.body.iter().map(|t| {
                            serde_json::json!([name(t.head), relations.name(t.relation).unwrap_or("?"), name(t.tail)])
                        }).collect::<Vec<_>>(),
                    })
                })
                .collect();
            serde_json::json!({
                "candidate": name(ev.candidate),
                "max_confidence": ev.max_confidence(),
                "noisy_or": ev.noisy_or(),
                "matches": matches,
            })
        })
        .collect();
    serde_json::json!({
        "query": {
            "anchor": name(partition.query.anchor),
            "relation": relations.name(partition.query.relation).unwrap_or("?"),
            "direction": partition.query.direction,
        },
        "a_q": candidates,
        "b_q_size": partition.b_q.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{ClosedPathRule, RuleStats};

    // a=0 b=1 c=2 d=3; h=0 r=1 s=2
    fn setup() -> (KnowledgeGraph, RuleSet) {
        let kg = KnowledgeGraph::from_ids(4, 3, vec![Triple::new(0, 1, 1), Triple::new(1, 2, 2)]).unwrap();
        let mut rules = RuleSet::new();
        rules.insert(
            ClosedPathRule::new(0, vec![BodyAtom::fwd(1), BodyAtom::fwd(2)]),
            RuleStats {
                support: 1,
                body_groundings: 2,
                confidence: 0.5,
                estimated: false,
            },
        );
        (kg, rules)
    }

    #[test]
    fn tail_query_finds_composition() {
        let (kg, rules) = setup();
        let p = apply_rules(&kg, &rules, &Query::tail(0, 0), &ApplyOptions::default()).unwrap();
        assert_eq!(p.a_q.len(), 1);
        assert_eq!(p.a_q[0].candidate, 2);
        assert_eq!(
            p.a_q[0].matches[0].body,
            vec![Triple::new(0, 1, 1), Triple::new(1, 2, 2)]
        );
        assert_eq!(p.b_q, vec![0, 1, 3]);
    }

    #[test]
    fn head_query_traverses_reversed() {
        let (kg, rules) = setup();
        let p = apply_rules(&kg, &rules, &Query::head(0, 2), &ApplyOptions::default()).unwrap();
        assert_eq!(p.a_q.len(), 1);
        assert_eq!(p.a_q[0].candidate, 0);
        let m = &p.a_q[0].matches[0];
        assert_eq!(m.path, vec![0, 1, 2]);
        assert_eq!(m.body, vec![Triple::new(0, 1, 1), Triple::new(1, 2, 2)]);
    }

    #[test]
    fn no_rules_means_everything_in_b() {
        let (kg, rules) = setup();
        let p = apply_rules(&kg, &rules, &Query::tail(0, 1), &ApplyOptions::default()).unwrap();
        assert!(p.a_q.is_empty());
        assert_eq!(p.b_q, vec![0, 1, 2, 3]);
        assert!(apply_rules(&kg, &rules, &Query::tail(17, 0), &ApplyOptions::default()).is_err());
    }

    #[test]
    fn excluded_triple_is_not_used() {
        let (kg, rules) = setup();
        let opts = ApplyOptions {
            exclude: Some(Triple::new(1, 2, 2)),
            ..ApplyOptions::default()
        };
        let p = apply_rules(&kg, &rules, &Query::tail(0, 0), &opts).unwrap();
        assert!(p.a_q.is_empty());
    }

    fn ev(candidate: EntityId, confs: &[f64]) -> Evidence {
        Evidence {
            candidate,
            matches: vec![],
            rules: (0..confs.len() as u32).collect(),
            rule_confidences: confs.to_vec(),
        }
    }

    fn partition(a_q: Vec<Evidence>) -> CandidatePartition {
        CandidatePartition {
            query: Query::tail(0, 0),
            a_q,
            b_q: vec![],
        }
    }

    fn order(r: &[RankedEntity]) -> Vec<EntityId> {
        r.iter().map(|x| x.entity).collect()
    }

    #[test]
    fn max_tiebreak_examples() {
        let p = partition(vec![ev(1, &[0.9]), ev(2, &[0.8])]);
        assert_eq!(order(&rank_max_tiebreak(&p)), vec![1, 2]);
        let p = partition(vec![ev(1, &[0.9, 0.3]), ev(2, &[0.9, 0.7])]);
        assert_eq!(order(&rank_max_tiebreak(&p)), vec![2, 1]);
        let p = partition(vec![ev(1, &[0.9]), ev(2, &[0.9, 0.1])]);
        assert_eq!(order(&rank_max_tiebreak(&p)), vec![2, 1]);
        let p = partition(vec![ev(5, &[0.9, 0.2]), ev(3, &[0.9, 0.2])]);
        let r = rank_max_tiebreak(&p);
        assert_eq!(order(&r), vec![3, 5]);
        assert!(r[1].tied_with_previous);
    }

    #[test]
    fn noisy_or_examples() {
        assert!((noisy_or(&[0.5, 0.5]) - 0.75).abs() < 1e-12);
        assert!((noisy_or(&[0.3]) - 0.3).abs() < 1e-12);
        assert_eq!(noisy_or(&[1.0, 0.42]), 1.0);
        let p = partition(vec![ev(1, &[0.6]), ev(2, &[0.5, 0.5])]);
        assert_eq!(order(&rank_noisy_or(&p)), vec![2, 1]);
    }

    #[test]
    fn restricted_keeps_universe_only() {
        let (kg, rules) = setup();
        let p = apply_rules(&kg, &rules, &Query::tail(0, 0), &ApplyOptions::default()).unwrap();
        let r = p.restricted(&[3, 2]);
        assert_eq!(r.a_q.len(), 1);
        assert_eq!(r.b_q, vec![3]);
        let r = p.restricted(&[3]);
        assert!(r.a_q.is_empty());
    }
}
