//! Triple storage, vocabularies and the inductive benchmark loader.
//!
//! A [`KnowledgeGraph`] is an immutable, deduplicated set of integer-id
//! triples with a compressed adjacency index in both directions. Inverse
//! relations are never materialized here: a traversal names a relation and a
//! [`Direction`]. Modules that need a single id space for relations and their
//! inverses use [`Direction::materialize`], which maps `(r, Inverse)` to
//! `r + |R|`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// Distance reported by [`bfs_distance`] for nodes that are unreachable or
/// farther than the cap.
pub const DISTANCE_OVERFLOW: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Traversal direction of an edge: `Forward` follows `(h, r, t)` from `h` to
/// `t`, `Inverse` from `t` to `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }

    /// Materialized relation id: `r` for forward edges, `r + num_relations`
    /// for inverse edges.
    pub fn materialize(self, relation: RelationId, num_relations: usize) -> u32 {
        match self {
            Direction::Forward => relation,
            Direction::Inverse => relation + num_relations as u32,
        }
    }
}

/// Bijection between names and dense ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for name in names {
            vocab.get_or_insert(&name.into());
        }
        vocab
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// One adjacency entry: the relation followed and the entity reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub relation: RelationId,
    pub neighbor: EntityId,
}

/// Compressed adjacency for one direction. Edges of each entity are sorted by
/// `(relation, neighbor)`.
#[derive(Clone, Debug, Default)]
struct Csr {
    offsets: Vec<usize>,
    edges: Vec<Edge>,
}

impl Csr {
    fn build(num_entities: usize, pairs: impl Iterator<Item = (EntityId, Edge)>) -> Self {
        let mut buckets: Vec<Vec<Edge>> = vec![Vec::new(); num_entities];
        for (source, edge) in pairs {
            buckets[source as usize].push(edge);
        }
        let mut offsets = Vec::with_capacity(num_entities + 1);
        let mut edges = Vec::new();
        offsets.push(0);
        for mut bucket in buckets {
            bucket.sort_unstable();
            edges.extend(bucket);
            offsets.push(edges.len());
        }
        Csr { offsets, edges }
    }

    #[inline]
    fn all(&self, entity: EntityId) -> &[Edge] {
        let e = entity as usize;
        &self.edges[self.offsets[e]..self.offsets[e + 1]]
    }

    #[inline]
    fn with_relation(&self, entity: EntityId, relation: RelationId) -> &[Edge] {
        let all = self.all(entity);
        let start = all.partition_point(|e| e.relation < relation);
        let end = start + all[start..].partition_point(|e| e.relation == relation);
        &all[start..end]
    }
}

/// An immutable knowledge graph over shared vocabularies.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Arc<Vocab>,
    relations: Arc<Vocab>,
    triples: Vec<Triple>,
    forward: Csr,
    inverse: Csr,
}

impl KnowledgeGraph {
    /// Builds a graph from triples. Duplicates are removed; ids are checked
    /// against the vocabularies.
    pub fn new(entities: Arc<Vocab>, relations: Arc<Vocab>, mut triples: Vec<Triple>) -> Result<Self> {
        for t in &triples {
            check_id("entity", t.head, entities.len())?;
            check_id("entity", t.tail, entities.len())?;
            check_id("relation", t.relation, relations.len())?;
        }
        triples.sort_unstable();
        triples.dedup();
        let n = entities.len();
        let forward = Csr::build(
            n,
            triples.iter().map(|t| {
                (
                    t.head,
                    Edge {
                        relation: t.relation,
                        neighbor: t.tail,
                    },
                )
            }),
        );
        let inverse = Csr::build(
            n,
            triples.iter().map(|t| {
                (
                    t.tail,
                    Edge {
                        relation: t.relation,
                        neighbor: t.head,
                    },
                )
            }),
        );
        Ok(KnowledgeGraph {
            entities,
            relations,
            triples,
            forward,
            inverse,
        })
    }

    /// Convenience constructor with anonymous vocabularies `e0..`, `r0..`.
    pub fn from_ids(num_entities: usize, num_relations: usize, triples: Vec<Triple>) -> Result<Self> {
        let entities = Vocab::from_names((0..num_entities).map(|i| format!("e{i}")));
        let relations = Vocab::from_names((0..num_relations).map(|i| format!("r{i}")));
        KnowledgeGraph::new(Arc::new(entities), Arc::new(relations), triples)
    }

    pub fn entities(&self) -> &Arc<Vocab> {
        &self.entities
    }

    pub fn relations(&self) -> &Arc<Vocab> {
        &self.relations
    }

    /// Sorted, deduplicated triples.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        if triple.head as usize >= self.num_entities() {
            return false;
        }
        self.forward
            .with_relation(triple.head, triple.relation)
            .binary_search_by_key(&triple.tail, |e| e.neighbor)
            .is_ok()
    }

    /// Sorted neighbors of `entity` along `relation` in `direction`.
    pub fn neighbors(&self, entity: EntityId, relation: RelationId, direction: Direction) -> Result<Vec<EntityId>> {
        check_id("entity", entity, self.num_entities())?;
        check_id("relation", relation, self.num_relations())?;
        Ok(self
            .edges_with(entity, relation, direction)
            .iter()
            .map(|e| e.neighbor)
            .collect())
    }

    /// Unchecked adjacency slice for one relation, sorted by neighbor.
    #[inline]
    pub fn edges_with(&self, entity: EntityId, relation: RelationId, direction: Direction) -> &[Edge] {
        match direction {
            Direction::Forward => self.forward.with_relation(entity, relation),
            Direction::Inverse => self.inverse.with_relation(entity, relation),
        }
    }

    /// Unchecked adjacency slice over all relations, sorted by `(relation, neighbor)`.
    #[inline]
    pub fn edges(&self, entity: EntityId, direction: Direction) -> &[Edge] {
        match direction {
            Direction::Forward => self.forward.all(entity),
            Direction::Inverse => self.inverse.all(entity),
        }
    }

    pub fn degree(&self, entity: EntityId) -> usize {
        self.forward.all(entity).len() + self.inverse.all(entity).len()
    }

    /// Entities that occur in at least one triple.
    pub fn active_entities(&self) -> Vec<EntityId> {
        (0..self.num_entities() as EntityId)
            .filter(|&e| self.degree(e) > 0)
            .collect()
    }

    /// Relations that occur in at least one triple.
    pub fn active_relations(&self) -> Vec<RelationId> {
        let mut seen: Vec<RelationId> = self.triples.iter().map(|t| t.relation).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Triple count per relation id.
    pub fn relation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_relations()];
        for t in &self.triples {
            counts[t.relation as usize] += 1;
        }
        counts
    }

    /// Writes the graph as `head<TAB>relation<TAB>tail` lines using vocabulary names.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities.name(t.head).unwrap_or_default(),
                self.relations.name(t.relation).unwrap_or_default(),
                self.entities.name(t.tail).unwrap_or_default()
            )
            .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_id(kind: &'static str, id: u32, size: usize) -> Result<()> {
    if (id as usize) < size {
        Ok(())
    } else {
        Err(Error::IdOutOfRange {
            kind,
            id: id as u64,
            size,
        })
    }
}

/// Relation-agnostic undirected BFS from `source`. Nodes farther than `cap`
/// hops, or unreachable, get [`DISTANCE_OVERFLOW`].
pub fn bfs_distance(kg: &KnowledgeGraph, source: EntityId, cap: u32) -> Result<Vec<u32>> {
    check_id("entity", source, kg.num_entities())?;
    let mut dist = vec![DISTANCE_OVERFLOW; kg.num_entities()];
    dist[source as usize] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u as usize];
        if d >= cap {
            continue;
        }
        let next = kg
            .edges(u, Direction::Forward)
            .iter()
            .chain(kg.edges(u, Direction::Inverse));
        for e in next {
            let slot = &mut dist[e.neighbor as usize];
            if *slot == DISTANCE_OVERFLOW {
                *slot = d + 1;
                queue.push_back(e.neighbor);
            }
        }
    }
    Ok(dist)
}

/// Which side of a triple a query asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryDirection {
    /// `(x, r, ?)`
    Tail,
    /// `(?, r, y)`
    Head,
}

/// A link prediction query anchored at a known entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub anchor: EntityId,
    pub relation: RelationId,
    pub direction: QueryDirection,
}

impl Query {
    pub fn tail(anchor: EntityId, relation: RelationId) -> Self {
        Query {
            anchor,
            relation,
            direction: QueryDirection::Tail,
        }
    }

    pub fn head(relation: RelationId, anchor: EntityId) -> Self {
        Query {
            anchor,
            relation,
            direction: QueryDirection::Head,
        }
    }

    /// The query and gold answer obtained by hiding one side of `triple`.
    pub fn from_triple(triple: Triple, direction: QueryDirection) -> (Query, EntityId) {
        match direction {
            QueryDirection::Tail => (Query::tail(triple.head, triple.relation), triple.tail),
            QueryDirection::Head => (Query::head(triple.relation, triple.tail), triple.head),
        }
    }

    /// The triple asserted by answering the query with `candidate`.
    pub fn complete(&self, candidate: EntityId) -> Triple {
        match self.direction {
            QueryDirection::Tail => Triple::new(self.anchor, self.relation, candidate),
            QueryDirection::Head => Triple::new(candidate, self.relation, self.anchor),
        }
    }

    /// Direction in which an answer edge is followed from the anchor.
    pub fn edge_direction(&self) -> Direction {
        match self.direction {
            QueryDirection::Tail => Direction::Forward,
            QueryDirection::Head => Direction::Inverse,
        }
    }

    /// Relation id in the materialized space where head queries use `r + |R|`.
    pub fn materialized_relation(&self, num_relations: usize) -> u32 {
        self.edge_direction().materialize(self.relation, num_relations)
    }
}

/// The train, valid and test splits of one graph over a shared entity vocabulary.
#[derive(Clone, Debug)]
pub struct GraphSplits {
    pub entities: Arc<Vocab>,
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl GraphSplits {
    pub fn splits(&self) -> [&KnowledgeGraph; 3] {
        [&self.train, &self.valid, &self.test]
    }

    /// All distinct triples over the three splits.
    pub fn all_triples(&self) -> Vec<Triple> {
        let mut all: Vec<Triple> = self.splits().iter().flat_map(|g| g.triples().iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// An inductive benchmark: a training graph and an entity-disjoint test graph
/// over one relation vocabulary.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub name: String,
    pub relations: Arc<Vocab>,
    pub train_graph: GraphSplits,
    pub test_graph: GraphSplits,
}

impl DatasetBundle {
    /// Builds a bundle from named triples, enforcing the inductive invariants.
    pub fn from_named(
        name: &str,
        train_graph: [Vec<(String, String, String)>; 3],
        test_graph: [Vec<(String, String, String)>; 3],
    ) -> Result<Self> {
        let mut relations = Vocab::new();
        for (_, r, _) in train_graph.iter().flatten() {
            relations.get_or_insert(r);
        }
        let relations = Arc::new(relations);
        let train = build_splits(&relations, train_graph, Path::new("<train-graph>"))?;
        let test = build_splits(&relations, test_graph, Path::new("<test-graph>"))?;
        let bundle = DatasetBundle {
            name: name.to_owned(),
            relations,
            train_graph: train,
            test_graph: test,
        };
        bundle.check_disjoint()?;
        Ok(bundle)
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    fn check_disjoint(&self) -> Result<()> {
        let train: HashSet<&str> = self.train_graph.entities.names().collect();
        match self.test_graph.entities.names().find(|n| train.contains(n)) {
            Some(shared) => Err(Error::VocabOverlap(shared.to_owned())),
            None => Ok(()),
        }
    }

    /// Other known answers of `query` in any test-graph split, excluding `gold`.
    pub fn filter_set(&self, query: &Query, gold: EntityId) -> Result<Vec<EntityId>> {
        let mut known = Vec::new();
        for g in self.test_graph.splits() {
            known.extend(g.neighbors(query.anchor, query.relation, query.edge_direction())?);
        }
        known.sort_unstable();
        known.dedup();
        known.retain(|&e| e != gold);
        Ok(known)
    }
}

fn build_splits(
    relations: &Arc<Vocab>,
    files: [Vec<(String, String, String)>; 3],
    origin: &Path,
) -> Result<GraphSplits> {
    let mut entities = Vocab::new();
    let mut id_splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for rows in &files {
        let mut triples = Vec::with_capacity(rows.len());
        for (h, r, t) in rows {
            let relation = relations.id(r).ok_or_else(|| Error::UnknownRelation {
                relation: r.clone(),
                path: origin.to_path_buf(),
            })?;
            let head = entities.get_or_insert(h);
            let tail = entities.get_or_insert(t);
            triples.push(Triple::new(head, relation, tail));
        }
        id_splits.push(triples);
    }
    let entities = Arc::new(entities);
    let mut graphs = id_splits
        .into_iter()
        .map(|t| KnowledgeGraph::new(entities.clone(), relations.clone(), t));
    Ok(GraphSplits {
        train: graphs.next().expect("three splits")?,
        valid: graphs.next().expect("three splits")?,
        test: graphs.next().expect("three splits")?,
        entities,
    })
}

/// Reads a `head<TAB>relation<TAB>tail` file. Blank lines are skipped.
pub fn read_triple_file(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                content: line.to_owned(),
            });
        }
        rows.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(rows)
}

/// Directory pair `{dataset}_{version}` and `{dataset}_{version}_ind` under `root`.
pub fn dataset_dirs(root: &Path, dataset: &str, version: &str) -> (PathBuf, PathBuf) {
    (
        root.join(format!("{dataset}_{version}")),
        root.join(format!("{dataset}_{version}_ind")),
    )
}

/// Loads an inductive benchmark from the standard directory layout.
pub fn load_dataset(root: &Path, dataset: &str, version: &str) -> Result<DatasetBundle> {
    let (train_dir, test_dir) = dataset_dirs(root, dataset, version);
    let read = |dir: &Path| -> Result<[Vec<(String, String, String)>; 3]> {
        Ok([
            read_triple_file(&dir.join("train.txt"))?,
            read_triple_file(&dir.join("valid.txt"))?,
            read_triple_file(&dir.join("test.txt"))?,
        ])
    };
    let train_rows = read(&train_dir)?;
    let test_rows = read(&test_dir)?;

    let mut relations = Vocab::new();
    for (_, r, _) in train_rows.iter().flatten() {
        relations.get_or_insert(r);
    }
    let relations = Arc::new(relations);
    let train_graph = build_splits(&relations, train_rows, &train_dir)?;
    let test_graph = build_splits(&relations, test_rows, &test_dir)?;
    let bundle = DatasetBundle {
        name: format!("{dataset}_{version}"),
        relations,
        train_graph,
        test_graph,
    };
    bundle.check_disjoint()?;
    log::info!(
        "loaded {}: {} relations, train graph {} entities / {} triples, test graph {} entities / {} triples",
        bundle.name,
        bundle.relations.len(),
        bundle.train_graph.entities.len(),
        bundle.train_graph.all_triples().len(),
        bundle.test_graph.entities.len(),
        bundle.test_graph.all_triples().len()
    );
    Ok(bundle)
}

/// Writes a bundle back out in the directory layout read by [`load_dataset`].
pub fn write_dataset(bundle: &DatasetBundle, root: &Path, dataset: &str, version: &str) -> Result<()> {
    let (train_dir, test_dir) = dataset_dirs(root, dataset, version);
    for (dir, splits) in [(&train_dir, &bundle.train_graph), (&test_dir, &bundle.test_graph)] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, g) in ["train.txt", "valid.txt", "test.txt"].iter().zip(splits.splits()) {
            g.write_tsv(&dir.join(file))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> KnowledgeGraph {
        // a=0 b=1 c=2, r=0
        KnowledgeGraph::from_ids(3, 1, vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap()
    }

    #[test]
    fn neighbors_by_direction() {
        let kg = abc();
        assert_eq!(kg.neighbors(0, 0, Direction::Forward).unwrap(), vec![1, 2]);
        assert!(kg.neighbors(1, 0, Direction::Forward).unwrap().is_empty());
        assert_eq!(kg.neighbors(1, 0, Direction::Inverse).unwrap(), vec![0]);
    }

    #[test]
    fn neighbors_rejects_bad_ids() {
        let kg = abc();
        assert!(matches!(
            kg.neighbors(9, 0, Direction::Forward),
            Err(Error::IdOutOfRange { kind: "entity", .. })
        ));
        assert!(kg.neighbors(0, 4, Direction::Forward).is_err());
    }

    #[test]
    fn duplicates_are_removed() {
        let kg = KnowledgeGraph::from_ids(2, 1, vec![Triple::new(0, 0, 1), Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(kg.len(), 1);
    }

    #[test]
    fn bfs_on_chain() {
        // a - b - c, d isolated
        let kg = KnowledgeGraph::from_ids(4, 1, vec![Triple::new(0, 0, 1), Triple::new(2, 0, 1)]).unwrap();
        let d = bfs_distance(&kg, 0, 5).unwrap();
        assert_eq!(d[0], 0);
        assert_eq!(d[1], 1);
        assert_eq!(d[2], 2);
        assert_eq!(d[3], DISTANCE_OVERFLOW);
        let capped = bfs_distance(&kg, 0, 1).unwrap();
        assert_eq!(capped[2], DISTANCE_OVERFLOW);
    }

    #[test]
    fn materialized_relations() {
        assert_eq!(Direction::Forward.materialize(3, 10), 3);
        assert_eq!(Direction::Inverse.materialize(3, 10), 13);
        assert_eq!(Query::head(2, 0).materialized_relation(5), 7);
    }

    fn rows(v: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        v.iter()
            .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
            .collect()
    }

    #[test]
    fn bundle_rejects_shared_entities_and_new_relations() {
        let train = [rows(&[("a", "r", "b")]), vec![], vec![]];
        let shared = [rows(&[("a", "r", "c")]), vec![], vec![]];
        assert!(matches!(
            DatasetBundle::from_named("x", train.clone(), shared),
            Err(Error::VocabOverlap(_))
        ));
        let unseen = [rows(&[("c", "s", "d")]), vec![], vec![]];
        assert!(matches!(
            DatasetBundle::from_named("x", train, unseen),
            Err(Error::UnknownRelation { .. })
        ));
    }

    #[test]
    fn filter_set_excludes_gold() {
        let train = [rows(&[("a", "r", "b")]), vec![], vec![]];
        let test = [
            rows(&[("x", "r", "y1"), ("x", "r", "y2")]),
            vec![],
            rows(&[("z", "r", "y1")]),
        ];
        let bundle = DatasetBundle::from_named("t", train, test).unwrap();
        let ents = &bundle.test_graph.entities;
        let x = ents.id("x").unwrap();
        let y1 = ents.id("y1").unwrap();
        let y2 = ents.id("y2").unwrap();
        let z = ents.id("z").unwrap();
        assert_eq!(bundle.filter_set(&Query::tail(x, 0), y1).unwrap(), vec![y2]);
        assert!(bundle.filter_set(&Query::tail(z, 0), y1).unwrap().is_empty());
        let heads = bundle.filter_set(&Query::head(0, y1), x).unwrap();
        assert_eq!(heads, vec![z]);
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        fs::write(&p, "a\tr\tb\na r b\n").unwrap();
        match read_triple_file(&p) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
