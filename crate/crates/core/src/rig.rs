//! Rule instantiation graphs: the union of body triples of the most
//! confident ground rules predicting one candidate.
//!
//! The head node is the query anchor and the tail node the candidate, for
//! both query directions. Node features are one-hot distances to both,
//! measured inside the RIG.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::engine::{Evidence, GroundRuleMatch};
use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, RelationId, Triple, Vocab};
use crate::rules::RuleId;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_DISTANCE_CAP: u32 = 5;

/// The `k` most confident ground rules, extended with every further rule
/// tied with the `k`-th confidence.
pub fn top_ground_rules(evidence: &Evidence, k: usize) -> Vec<GroundRuleMatch> {
    let k = k.max(1);
    let mut sorted = evidence.matches.clone();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    if sorted.len() <= k {
        return sorted;
    }
    let threshold = sorted[k - 1].confidence;
    let end = k + sorted[k..].iter().take_while(|m| m.confidence == threshold).count();
    sorted.truncate(end);
    sorted
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct RigEdge {
    pub src: u32,
    /// Materialized relation id: `r`, or `r + |R|` for inverse edges.
    pub relation: u32,
    pub dst: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleInstantiationGraph {
    pub nodes: Vec<EntityId>,
    pub edges: Vec<RigEdge>,
    pub head: u32,
    pub tail: u32,
    pub num_relations: usize,
    pub contributing_rules: Vec<(RuleId, f64)>,
}

impl RuleInstantiationGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// The distinct forward triples of the graph.
    pub fn triples(&self) -> Vec<Triple> {
        let r = self.num_relations as u32;
        let mut out: Vec<Triple> = self
            .edges
            .iter()
            .filter(|e| e.relation < r)
            .map(|e| Triple::new(self.nodes[e.src as usize], e.relation, self.nodes[e.dst as usize]))
            .collect();
        out.sort_unstable();
        out
    }

    /// Hop distances from `from` over the undirected RIG; `u32::MAX` when unreachable.
    pub fn distances(&self, from: u32) -> Vec<u32> {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.src as usize].push(e.dst);
        }
        let mut dist = vec![u32::MAX; self.nodes.len()];
        dist[from as usize] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u as usize] {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = dist[u as usize] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Builds the RIG for `(head, tail)` from ground rules connecting them.
/// Each match path may run in either orientation.
pub fn build_rig(
    matches: &[GroundRuleMatch],
    head: EntityId,
    tail: EntityId,
    num_relations: usize,
) -> Result<RuleInstantiationGraph> {
    if matches.is_empty() {
        return Err(Error::Rig("no ground rules".into()));
    }
    let mut index: HashMap<EntityId, u32> = HashMap::new();
    let mut nodes = Vec::new();
    let mut local = |e: EntityId, nodes: &mut Vec<EntityId>| -> u32 {
        *index.entry(e).or_insert_with(|| {
            nodes.push(e);
            (nodes.len() - 1) as u32
        })
    };
    let head_idx = local(head, &mut nodes);
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut edges = Vec::new();
    let mut contributing: Vec<(RuleId, f64)> = Vec::new();
    for m in matches {
        let (first, last) = match (m.path.first(), m.path.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::Rig("empty ground path".into())),
        };
        let anchored_first = if (first, last) == (head, tail) {
            true
        } else if (first, last) == (tail, head) {
            false
        } else {
            return Err(Error::Rig(format!(
                "match path ({first} .. {last}) does not connect {head} and {tail}"
            )));
        };
        let ordered: Vec<EntityId> = if anchored_first {
            m.path.clone()
        } else {
            m.path.iter().rev().copied().collect()
        };
        for &e in &ordered {
            local(e, &mut nodes);
        }
        let triples: Box<dyn Iterator<Item = &Triple>> = if anchored_first {
            Box::new(m.body.iter())
        } else {
            Box::new(m.body.iter().rev())
        };
        for t in triples {
            if seen.insert(*t) {
                let (s, d) = (local(t.head, &mut nodes), local(t.tail, &mut nodes));
                edges.push(RigEdge {
                    src: s,
                    relation: Direction::Forward.materialize(t.relation, num_relations),
                    dst: d,
                });
                edges.push(RigEdge {
                    src: d,
                    relation: Direction::Inverse.materialize(t.relation, num_relations),
                    dst: s,
                });
            }
        }
        if !contributing.iter().any(|&(r, _)| r == m.rule) {
            contributing.push((m.rule, m.confidence));
        }
    }
    let tail_idx = *index.get(&tail).ok_or_else(|| Error::Rig("tail not reached".into()))?;
    Ok(RuleInstantiationGraph {
        nodes,
        edges,
        head: head_idx,
        tail: tail_idx,
        num_relations,
        contributing_rules: contributing,
    })
}

/// Per-node distance pair with a shared cap; rows are
/// `onehot(d_head, cap+2) ++ onehot(d_tail, cap+2)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeFeatures {
    pub cap: u32,
    pub head_distance: Vec<u32>,
    pub tail_distance: Vec<u32>,
}

impl NodeFeatures {
    pub fn width(&self) -> usize {
        2 * (self.cap as usize + 2)
    }

    fn bucket(&self, d: u32) -> usize {
        d.min(self.cap + 1) as usize
    }

    /// Column indices of the two ones in row `node`.
    pub fn hot_positions(&self, node: usize) -> (usize, usize) {
        let block = self.cap as usize + 2;
        (
            self.bucket(self.head_distance[node]),
            block + self.bucket(self.tail_distance[node]),
        )
    }

    /// Dense row-major feature matrix.
    pub fn dense(&self) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; self.head_distance.len() * w];
        for node in 0..self.head_distance.len() {
            let (a, b) = self.hot_positions(node);
            out[node * w + a] = 1.0;
            out[node * w + b] = 1.0;
        }
        out
    }
}

/// One-hot distance features computed inside the RIG.
pub fn featurize(rig: &RuleInstantiationGraph, cap: u32) -> NodeFeatures {
    NodeFeatures {
        cap,
        head_distance: rig.distances(rig.head),
        tail_distance: rig.distances(rig.tail),
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: nodes labeled with entity names and their
/// `(d_head, d_tail)` pair, forward edges labeled with relation names.
pub fn to_dot(rig: &RuleInstantiationGraph, entities: &Vocab, relations: &Vocab, cap: u32) -> String {
    let feats = featurize(rig, cap);
    let fmt_d = |d: u32| if d == u32::MAX { "inf".to_owned() } else { d.to_string() };
    let mut out = String::from("digraph rig {\n  rankdir=LR;\n  node [shape=ellipse, fontname=\"Helvetica\"];\n");
    for (i, &e) in rig.nodes.iter().enumerate() {
        let name = entities.name(e).map(str::to_owned).unwrap_or_else(|| format!("#{e}"));
        let label = format!(
            "{}\\n({},{})",
            escape(&name),
            fmt_d(feats.head_distance[i]),
            fmt_d(feats.tail_distance[i])
        );
        let style = if i as u32 == rig.head {
            ", shape=box, style=filled, fillcolor=\"lightblue\""
        } else if i as u32 == rig.tail {
            ", shape=box, style=filled, fillcolor=\"salmon\""
        } else {
            ""
        };
        let _ = writeln!(out, "  n{i} [label=\"{label}\"{style}];");
    }
    for e in rig.edges.iter().filter(|e| (e.relation as usize) < rig.num_relations) {
        let name = relations
            .name(e.relation as RelationId)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{}", e.relation));
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, escape(&name));
    }
    out.push_str("}\n");
    out
}
