//! Closed path rules, their statistics, and the rule file format.
//!
//! A rule `h(X0,Xn) <= b1(X0,X1), ..., bn(Xn-1,Xn)` is stored as a head
//! relation and a sequence of [`BodyAtom`]s. Variables are positional. An
//! atom traversed backwards, `b(Xi+1,Xi)`, has [`Direction::Inverse`].

mod miner;

pub use miner::{
    generalize, ground_paths, mine, sample_ground_path, sample_path_for, score_rule, Budget, GroundPath, MinerConfig,
};

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, RelationId, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BodyAtom {
    pub relation: RelationId,
    pub direction: Direction,
}

impl BodyAtom {
    pub const fn fwd(relation: RelationId) -> Self {
        BodyAtom {
            relation,
            direction: Direction::Forward,
        }
    }

    pub const fn inv(relation: RelationId) -> Self {
        BodyAtom {
            relation,
            direction: Direction::Inverse,
        }
    }

    pub fn flipped(self) -> Self {
        BodyAtom {
            relation: self.relation,
            direction: self.direction.flip(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClosedPathRule {
    pub head: RelationId,
    pub body: Vec<BodyAtom>,
}

impl ClosedPathRule {
    pub fn new(head: RelationId, body: Vec<BodyAtom>) -> Self {
        ClosedPathRule { head, body }
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    /// `h(X,Y) <= h(X,Y)`: vacuously perfect and never kept.
    pub fn is_identity(&self) -> bool {
        self.body.len() == 1 && self.body[0] == BodyAtom::fwd(self.head)
    }

    /// The same rule read from `Xn` back to `X0`.
    pub fn reversed_body(&self) -> Vec<BodyAtom> {
        self.body.iter().rev().map(|a| a.flipped()).collect()
    }

    /// Human-readable form using vocabulary names, e.g. `h(X0,X2) <= r(X0,X1), s(X2,X1)`.
    pub fn display(&self, relations: &Vocab) -> String {
        let name = |r: RelationId| relations.name(r).map(str::to_owned).unwrap_or_else(|| format!("#{r}"));
        let mut s = format!("{}(X0,X{}) <= ", name(self.head), self.body.len());
        for (i, atom) in self.body.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let (a, b) = match atom.direction {
                Direction::Forward => (i, i + 1),
                Direction::Inverse => (i + 1, i),
            };
            let _ = write!(s, "{}(X{a},X{b})", name(atom.relation));
        }
        s
    }
}

/// Grounding statistics of a rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    /// Body groundings whose head atom also holds.
    pub support: u64,
    /// Body groundings, counted as distinct `(X0, Xn)` pairs.
    pub body_groundings: u64,
    /// `support / (body_groundings + pc)`.
    pub confidence: f64,
    /// Set when the counts were extrapolated from sampled start entities.
    #[serde(default)]
    pub estimated: bool,
}

impl RuleStats {
    pub fn new(support: u64, body_groundings: u64, pc: f64) -> Self {
        let denom = body_groundings as f64 + pc;
        let confidence = if denom > 0.0 { support as f64 / denom } else { 0.0 };
        RuleStats {
            support,
            body_groundings,
            confidence,
            estimated: false,
        }
    }
}

pub type RuleId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct RuleEntry {
    pub rule: ClosedPathRule,
    pub stats: RuleStats,
}

/// Total order used by the head index: confidence desc, support desc, body
/// length asc, then body atoms lexicographically.
pub fn rule_order(a: &RuleEntry, b: &RuleEntry) -> Ordering {
    b.stats
        .confidence
        .total_cmp(&a.stats.confidence)
        .then(b.stats.support.cmp(&a.stats.support))
        .then(a.rule.body.len().cmp(&b.rule.body.len()))
        .then_with(|| a.rule.body.cmp(&b.rule.body))
        .then(a.rule.head.cmp(&b.rule.head))
}

/// A deduplicated rule collection with a per-head index.
#[derive(Clone, Debug, Default)]
pub struct RuleSet {
    entries: Vec<RuleEntry>,
    lookup: HashMap<ClosedPathRule, RuleId>,
    by_head: HashMap<RelationId, Vec<RuleId>>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: RuleId) -> &RuleEntry {
        &self.entries[id as usize]
    }

    pub fn id_of(&self, rule: &ClosedPathRule) -> Option<RuleId> {
        self.lookup.get(rule).copied()
    }

    pub fn stats(&self, rule: &ClosedPathRule) -> Option<&RuleStats> {
        self.id_of(rule).map(|id| &self.get(id).stats)
    }

    pub fn iter(&self) -> impl Iterator<Item = (RuleId, &RuleEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (i as RuleId, e))
    }

    /// Rules predicting `head`, in [`rule_order`].
    pub fn rules_for_head(&self, head: RelationId) -> &[RuleId] {
        self.by_head.get(&head).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Inserts a rule, or keeps the larger statistics if it is already present.
    pub fn insert(&mut self, rule: ClosedPathRule, stats: RuleStats) -> RuleId {
        if let Some(&id) = self.lookup.get(&rule) {
            let current = &mut self.entries[id as usize].stats;
            if (stats.confidence, stats.support) > (current.confidence, current.support) {
                *current = stats;
                self.reindex_head(rule.head);
            }
            return id;
        }
        let id = self.entries.len() as RuleId;
        let head = rule.head;
        self.lookup.insert(rule.clone(), id);
        self.entries.push(RuleEntry { rule, stats });
        let entries = &self.entries;
        let list = self.by_head.entry(head).or_default();
        let pos = list
            .partition_point(|&other| rule_order(&entries[other as usize], &entries[id as usize]) == Ordering::Less);
        list.insert(pos, id);
        id
    }

    fn reindex_head(&mut self, head: RelationId) {
        let entries = &self.entries;
        if let Some(list) = self.by_head.get_mut(&head) {
            list.sort_by(|&a, &b| rule_order(&entries[a as usize], &entries[b as usize]));
        }
    }

    /// Merges `other` into `self`, keeping the larger statistics per rule.
    pub fn merge(&mut self, other: &RuleSet) {
        for (_, e) in other.iter() {
            self.insert(e.rule.clone(), e.stats);
        }
    }

    /// Keeps only the rules accepted by `keep`. Rule ids are reassigned.
    pub fn filtered(&self, mut keep: impl FnMut(&RuleEntry) -> bool) -> RuleSet {
        let mut out = RuleSet::new();
        for (_, e) in self.iter() {
            if keep(e) {
                out.insert(e.rule.clone(), e.stats);
            }
        }
        out
    }

    /// Serializes in the tab-separated rule format, ordered by head relation
    /// then [`rule_order`].
    pub fn to_text(&self, relations: &Vocab) -> String {
        let mut heads: Vec<_> = self.by_head.keys().copied().collect();
        heads.sort_unstable();
        let mut out = String::new();
        for h in heads {
            for &id in self.rules_for_head(h) {
                let e = self.get(id);
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    e.stats.support,
                    e.stats.body_groundings,
                    e.stats.confidence,
                    e.rule.display(relations)
                );
            }
        }
        out
    }

    pub fn write(&self, path: &Path, relations: &Vocab) -> Result<()> {
        fs::write(path, self.to_text(relations)).map_err(|e| Error::io(path, e))
    }

    pub fn from_text(text: &str, relations: &Vocab) -> Result<RuleSet> {
        let mut set = RuleSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (rule, stats) =
                parse_rule_line(line, relations).map_err(|message| Error::RuleParse { line: i + 1, message })?;
            set.insert(rule, stats);
        }
        Ok(set)
    }

    pub fn read(path: &Path, relations: &Vocab) -> Result<RuleSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleSet::from_text(&text, relations)
    }
}

fn parse_rule_line(line: &str, relations: &Vocab) -> std::result::Result<(ClosedPathRule, RuleStats), String> {
    let mut fields = line.splitn(4, '\t');
    let mut next = |what: &str| fields.next().ok_or_else(|| format!("missing {what}"));
    let support: u64 = next("support")?.parse().map_err(|e| format!("support: {e}"))?;
    let body_groundings: u64 = next("body groundings")?
        .parse()
        .map_err(|e| format!("body groundings: {e}"))?;
    let confidence: f64 = next("confidence")?.parse().map_err(|e| format!("confidence: {e}"))?;
    let text = next("rule")?;
    let (head_text, body_text) = text.split_once(" <= ").ok_or("missing ' <= '")?;
    let (head_rel, hx, hy) = parse_atom(head_text, relations)?;
    let atoms: Vec<&str> = body_text.split(", ").collect();
    let n = atoms.len();
    if (hx, hy) != (0, n) {
        return Err(format!("head must be over (X0,X{n})"));
    }
    let mut body = Vec::with_capacity(n);
    for (i, atom) in atoms.iter().enumerate() {
        let (rel, a, b) = parse_atom(atom, relations)?;
        let direction = if (a, b) == (i, i + 1) {
            Direction::Forward
        } else if (a, b) == (i + 1, i) {
            Direction::Inverse
        } else {
            return Err(format!("atom {atom:?} does not continue the path at X{i}"));
        };
        body.push(BodyAtom {
            relation: rel,
            direction,
        });
    }
    Ok((
        ClosedPathRule::new(head_rel, body),
        RuleStats {
            support,
            body_groundings,
            confidence,
            estimated: false,
        },
    ))
}

fn parse_atom(atom: &str, relations: &Vocab) -> std::result::Result<(RelationId, usize, usize), String> {
    let atom = atom.trim();
    let open = atom.rfind('(').ok_or_else(|| format!("bad atom {atom:?}"))?;
    let name = &atom[..open];
    let args = atom[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| format!("bad atom {atom:?}"))?;
    let (a, b) = args.split_once(',').ok_or_else(|| format!("bad atom {atom:?}"))?;
    let var = |v: &str| -> std::result::Result<usize, String> {
        v.strip_prefix('X')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("bad variable {v:?}"))
    };
    let rel = relations.id(name).ok_or_else(|| format!("unknown relation {name:?}"))?;
    Ok((rel, var(a)?, var(b)?))
}
