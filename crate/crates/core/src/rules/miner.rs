//! Bottom-up, anytime mining of closed path rules.
//!
//! Each iteration picks a training triple `(x, h, y)`, samples a ground path
//! from `x` to `y` that visits every entity at most once, generalizes it into
//! a rule by forgetting the entities, and scores the rule if it has not been
//! seen before.
//!
//! Groundings follow object identity: all variables `X0..Xn` of a path bind to
//! pairwise distinct entities. Body groundings are counted as distinct
//! `(X0, Xn)` pairs.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyAtom, ClosedPathRule, RuleSet, RuleStats};
use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, Triple};

/// How long the anytime loop runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    /// Wall-clock seconds. Results depend on machine speed.
    Seconds(f64),
    /// A fixed number of path samples; deterministic given the seed.
    Iterations(u64),
    /// Enumerate every ground path of every triple instead of sampling.
    Exhaustive,
}

#[derive(Clone, Debug)]
pub struct MinerConfig {
    pub max_len: usize,
    /// Pessimism constant added to the confidence denominator.
    pub pc: f64,
    pub min_support: u64,
    pub min_confidence: f64,
    /// Partial groundings visited before scoring falls back to sampling.
    pub grounding_cap: usize,
    pub budget: Budget,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            max_len: 4,
            pc: 5.0,
            min_support: 2,
            min_confidence: 0.0001,
            grounding_cap: 100_000,
            budget: Budget::Seconds(10.0),
            seed: 0,
        }
    }
}

/// A path `entities[0] -atoms[0]-> entities[1] ... -> entities[n]` explaining
/// `head`, which connects `entities[0]` to `entities[n]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundPath {
    pub head: Triple,
    pub entities: Vec<EntityId>,
    pub atoms: Vec<BodyAtom>,
}

const WALK_RETRIES: usize = 10;
const STEP_RETRIES: usize = 8;

/// Samples a head triple uniformly and a path for it of uniform random length
/// in `1..=max_len`. `None` means no path was found within the retry cap.
pub fn sample_ground_path<R: Rng + ?Sized>(kg: &KnowledgeGraph, max_len: usize, rng: &mut R) -> Option<GroundPath> {
    if kg.is_empty() || max_len == 0 {
        return None;
    }
    let head = kg.triples()[rng.gen_range(0..kg.len())];
    let len = rng.gen_range(1..=max_len);
    sample_path_for(kg, head, len, rng)
}

/// Samples a path of exactly `len` atoms from `head.head` to `head.tail` by a
/// random walk whose last step is forced to land on the tail.
pub fn sample_path_for<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    head: Triple,
    len: usize,
    rng: &mut R,
) -> Option<GroundPath> {
    if len == 0 {
        return None;
    }
    let (x, y) = (head.head, head.tail);
    if x == y {
        return None;
    }
    'walk: for _ in 0..WALK_RETRIES {
        let mut entities = vec![x];
        let mut atoms = Vec::with_capacity(len);
        for _ in 0..len - 1 {
            let current = *entities.last().expect("non-empty");
            let fwd = kg.edges(current, Direction::Forward);
            let inv = kg.edges(current, Direction::Inverse);
            let degree = fwd.len() + inv.len();
            if degree == 0 {
                continue 'walk;
            }
            let mut stepped = false;
            for _ in 0..STEP_RETRIES {
                let k = rng.gen_range(0..degree);
                let (edge, direction) = if k < fwd.len() {
                    (fwd[k], Direction::Forward)
                } else {
                    (inv[k - fwd.len()], Direction::Inverse)
                };
                if edge.neighbor == y || entities.contains(&edge.neighbor) {
                    continue;
                }
                entities.push(edge.neighbor);
                atoms.push(BodyAtom {
                    relation: edge.relation,
                    direction,
                });
                stepped = true;
                break;
            }
            if !stepped {
                continue 'walk;
            }
        }
        let current = *entities.last().expect("non-empty");
        let mut closing: Vec<BodyAtom> = Vec::new();
        for (direction, edges) in [
            (Direction::Forward, kg.edges(current, Direction::Forward)),
            (Direction::Inverse, kg.edges(current, Direction::Inverse)),
        ] {
            for e in edges.iter().filter(|e| e.neighbor == y) {
                let atom = BodyAtom {
                    relation: e.relation,
                    direction,
                };
                if current == x && atom == BodyAtom::fwd(head.relation) {
                    continue;
                }
                closing.push(atom);
            }
        }
        if let Some(&atom) = closing.choose(rng) {
            entities.push(y);
            atoms.push(atom);
            return Some(GroundPath { head, entities, atoms });
        }
    }
    None
}

/// Every object-identity path of length `1..=max_len` from `head.head` to `head.tail`.
pub fn ground_paths(kg: &KnowledgeGraph, head: Triple, max_len: usize) -> Vec<GroundPath> {
    fn dfs(
        kg: &KnowledgeGraph,
        head: Triple,
        max_len: usize,
        entities: &mut Vec<EntityId>,
        atoms: &mut Vec<BodyAtom>,
        out: &mut Vec<GroundPath>,
    ) {
        let current = *entities.last().expect("non-empty");
        for direction in [Direction::Forward, Direction::Inverse] {
            for e in kg.edges(current, direction) {
                let atom = BodyAtom {
                    relation: e.relation,
                    direction,
                };
                if e.neighbor == head.tail {
                    entities.push(e.neighbor);
                    atoms.push(atom);
                    out.push(GroundPath {
                        head,
                        entities: entities.clone(),
                        atoms: atoms.clone(),
                    });
                    entities.pop();
                    atoms.pop();
                } else if atoms.len() + 1 < max_len && !entities.contains(&e.neighbor) {
                    entities.push(e.neighbor);
                    atoms.push(atom);
                    dfs(kg, head, max_len, entities, atoms, out);
                    entities.pop();
                    atoms.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    if head.head != head.tail && max_len > 0 {
        dfs(kg, head, max_len, &mut vec![head.head], &mut Vec::new(), &mut out);
    }
    out
}

/// Replaces entities by positional variables. Rejects the identity rule and
/// paths longer than `max_len`.
pub fn generalize(path: &GroundPath, max_len: usize) -> Option<ClosedPathRule> {
    if path.atoms.is_empty() || path.atoms.len() > max_len {
        return None;
    }
    let rule = ClosedPathRule::new(path.head.relation, path.atoms.clone());
    if rule.is_identity() {
        None
    } else {
        Some(rule)
    }
}

struct CapExceeded;

/// Distinct endpoints `Xn` of body groundings starting at `start`, or
/// `CapExceeded` once `visits` passes `limit`.
fn endpoints_from(
    kg: &KnowledgeGraph,
    start: EntityId,
    body: &[BodyAtom],
    visits: &mut usize,
    limit: usize,
) -> std::result::Result<Vec<EntityId>, CapExceeded> {
    fn walk(
        kg: &KnowledgeGraph,
        body: &[BodyAtom],
        stack: &mut Vec<EntityId>,
        out: &mut Vec<EntityId>,
        visits: &mut usize,
        limit: usize,
    ) -> std::result::Result<(), CapExceeded> {
        let depth = stack.len() - 1;
        if depth == body.len() {
            out.push(*stack.last().expect("non-empty"));
            return Ok(());
        }
        let atom = body[depth];
        let current = *stack.last().expect("non-empty");
        for e in kg.edges_with(current, atom.relation, atom.direction) {
            *visits += 1;
            if *visits > limit {
                return Err(CapExceeded);
            }
            if stack.contains(&e.neighbor) {
                continue;
            }
            stack.push(e.neighbor);
            walk(kg, body, stack, out, visits, limit)?;
            stack.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(kg, body, &mut vec![start], &mut out, visits, limit)?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn start_entities(kg: &KnowledgeGraph, atom: BodyAtom) -> Vec<EntityId> {
    let mut starts: Vec<EntityId> = kg
        .triples()
        .iter()
        .filter(|t| t.relation == atom.relation)
        .map(|t| match atom.direction {
            Direction::Forward => t.head,
            Direction::Inverse => t.tail,
        })
        .collect();
    starts.sort_unstable();
    starts.dedup();
    starts
}

fn count_start(kg: &KnowledgeGraph, rule: &ClosedPathRule, start: EntityId, ends: &[EntityId]) -> u64 {
    ends.iter()
        .filter(|&&end| kg.contains(&Triple::new(start, rule.head, end)))
        .count() as u64
}

/// Counts body groundings and support of `rule` by a depth-first join
/// anchored at every possible start entity. When more than `cap` partial
/// groundings are visited, the counts are instead extrapolated from a
/// uniform sample of start entities and flagged as estimates.
pub fn score_rule(kg: &KnowledgeGraph, rule: &ClosedPathRule, pc: f64, cap: usize) -> RuleStats {
    if rule.body.is_empty() {
        return RuleStats::new(0, 0, pc);
    }
    let starts = start_entities(kg, rule.body[0]);
    let mut visits = 0usize;
    let mut support = 0u64;
    let mut groundings = 0u64;
    let mut exceeded = false;
    for &s in &starts {
        match endpoints_from(kg, s, &rule.body, &mut visits, cap) {
            Ok(ends) => {
                groundings += ends.len() as u64;
                support += count_start(kg, rule, s, &ends);
            }
            Err(CapExceeded) => {
                exceeded = true;
                break;
            }
        }
    }
    if !exceeded {
        return RuleStats::new(support, groundings, pc);
    }

    let mut hasher = DefaultHasher::new();
    rule.hash(&mut hasher);
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
    let mut visits = 0usize;
    let mut sampled = 0u64;
    let (mut sup_sum, mut body_sum) = (0u64, 0u64);
    while visits < cap && (sampled as usize) < starts.len() {
        let s = starts[rng.gen_range(0..starts.len())];
        let mut local = 0usize;
        // A single start that explodes is dropped from the estimate.
        let ends = endpoints_from(kg, s, &rule.body, &mut local, cap).unwrap_or_default();
        visits += local;
        sampled += 1;
        body_sum += ends.len() as u64;
        sup_sum += count_start(kg, rule, s, &ends);
    }
    let scale = starts.len() as f64 / sampled.max(1) as f64;
    let mut stats = RuleStats::new(
        (sup_sum as f64 * scale).round() as u64,
        (body_sum as f64 * scale).round() as u64,
        pc,
    );
    stats.estimated = true;
    stats
}

/// Mines closed path rules from `kg` under the configured budget.
pub fn mine(kg: &KnowledgeGraph, config: &MinerConfig) -> Result<RuleSet> {
    if kg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if !(1..=8).contains(&config.max_len) {
        return Err(Error::InvalidArgument(format!(
            "max_len must be in 1..=8, got {}",
            config.max_len
        )));
    }
    if let Budget::Seconds(s) = config.budget {
        if s.is_nan() || s <= 0.0 {
            return Err(Error::InvalidArgument(format!("budget must be positive, got {s}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen: HashSet<ClosedPathRule> = HashSet::new();
    let mut rules = RuleSet::new();
    let mut consider = |rule: ClosedPathRule, rules: &mut RuleSet| {
        if seen.contains(&rule) {
            return;
        }
        let stats = score_rule(kg, &rule, config.pc, config.grounding_cap);
        seen.insert(rule.clone());
        if stats.support >= config.min_support && stats.confidence > config.min_confidence {
            rules.insert(rule, stats);
        }
    };

    let mut samples = 0u64;
    match config.budget {
        Budget::Exhaustive => {
            for &t in kg.triples() {
                for path in ground_paths(kg, t, config.max_len) {
                    if let Some(rule) = generalize(&path, config.max_len) {
                        consider(rule, &mut rules);
                    }
                }
            }
        }
        Budget::Iterations(n) => {
            for _ in 0..n {
                samples += 1;
                if let Some(path) = sample_ground_path(kg, config.max_len, &mut rng) {
                    if let Some(rule) = generalize(&path, config.max_len) {
                        consider(rule, &mut rules);
                    }
                }
            }
        }
        Budget::Seconds(s) => {
            let deadline = Instant::now() + Duration::from_secs_f64(s);
            while Instant::now() < deadline {
                samples += 1;
                if let Some(path) = sample_ground_path(kg, config.max_len, &mut rng) {
                    if let Some(rule) = generalize(&path, config.max_len) {
                        consider(rule, &mut rules);
                    }
                }
            }
        }
    }
    log::info!(
        "mined {} rules ({} distinct candidates scored, {} samples)",
        rules.len(),
        seen.len(),
        samples
    );
    Ok(rules)
}
