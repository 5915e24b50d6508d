//! A simplified path-message ranker in the style of neural Bellman-Ford
//! networks: sum aggregation, elementwise-product messages, and a one-hidden
//! layer score head.
//!
//! States start from an indicator boundary condition: the anchor carries the
//! query relation embedding and every other entity starts at zero. Layers
//! have no bias, so entities the anchor cannot reach keep a zero state and
//! all receive the same score.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_layout, derive_seed, descriptor_field, parse_descriptor, EpochRecord, TrainingReport};
use crate::autodiff::{
    load_checkpoint, normal_init, save_checkpoint, xavier_uniform, Adam, ParamStore, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::eval::rank_of;
use crate::kg::{DatasetBundle, EntityId, KnowledgeGraph, Query, QueryDirection, Triple};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Sum,
    /// Sum divided by the in-degree; an option for graphs with hub entities.
    Mean,
}

impl Aggregate {
    fn name(self) -> &'static str {
        match self {
            Aggregate::Sum => "sum",
            Aggregate::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregate::Sum),
            "mean" => Ok(Aggregate::Mean),
            other => Err(Error::InvalidArgument(format!("unknown aggregate {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NbfConfig {
    pub layers: usize,
    pub dim: usize,
    pub aggregate: Aggregate,
    pub negatives: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub max_train_queries: Option<usize>,
    pub max_valid_queries: Option<usize>,
    pub seed: u64,
}

impl Default for NbfConfig {
    fn default() -> Self {
        NbfConfig {
            layers: 4,
            dim: 32,
            aggregate: Aggregate::Sum,
            negatives: 32,
            learning_rate: 0.001,
            max_epochs: 10,
            patience: 3,
            batch_size: 16,
            max_train_queries: None,
            max_valid_queries: Some(500),
            seed: 0,
        }
    }
}

/// A fact graph prepared for message passing: every triple yields a forward
/// edge `h -> t` under `r` and an inverse edge `t -> h` under `r + |R|`.
#[derive(Clone, Debug)]
pub struct MessageGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    rel: Arc<[usize]>,
}

/// Edge arrays of one forward pass.
struct Edges {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    rel: Arc<[usize]>,
}

impl MessageGraph {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let r = kg.num_relations();
        let triples = kg.triples().to_vec();
        let mut src = Vec::with_capacity(2 * triples.len());
        let mut dst = Vec::with_capacity(2 * triples.len());
        let mut rel = Vec::with_capacity(2 * triples.len());
        for t in &triples {
            src.extend([t.head as usize, t.tail as usize]);
            dst.extend([t.tail as usize, t.head as usize]);
            rel.extend([t.relation as usize, t.relation as usize + r]);
        }
        MessageGraph {
            num_entities: kg.num_entities(),
            num_relations: r,
            triples,
            src: src.into(),
            dst: dst.into(),
            rel: rel.into(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Edge arrays without both edges of `mask`.
    fn edges(&self, mask: Option<Triple>) -> Edges {
        let pos = mask.and_then(|m| self.triples.binary_search(&m).ok());
        match pos {
            None => Edges {
                src: self.src.clone(),
                dst: self.dst.clone(),
                rel: self.rel.clone(),
            },
            Some(i) => {
                let keep = |a: &Arc<[usize]>| -> Arc<[usize]> {
                    a.iter()
                        .enumerate()
                        .filter(|(k, _)| k / 2 != i)
                        .map(|(_, &v)| v)
                        .collect()
                };
                Edges {
                    src: keep(&self.src),
                    dst: keep(&self.dst),
                    rel: keep(&self.rel),
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct NbfRanker {
    config: NbfConfig,
    num_relations: usize,
    params: ParamStore,
}

impl NbfRanker {
    pub fn new(config: NbfConfig, num_relations: usize) -> Result<Self> {
        if config.dim == 0 || config.dim > 64 {
            return Err(Error::Config(format!("ranker dimension {} outside 1..=64", config.dim)));
        }
        if num_relations == 0 {
            return Err(Error::Config("no relations".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&config, num_relations, &mut rng);
        Ok(NbfRanker {
            config,
            num_relations,
            params,
        })
    }

    pub fn config(&self) -> &NbfConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn descriptor(&self) -> String {
        format!(
            "nbf layers={} dim={} aggregate={} num_relations={}",
            self.config.layers,
            self.config.dim,
            self.config.aggregate.name(),
            self.num_relations
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.descriptor(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let d = parse_descriptor(&ck.architecture, "nbf")?;
        let aggregate = Aggregate::parse(&d.get("aggregate").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let config = NbfConfig {
            layers: descriptor_field(&d, "layers")?,
            dim: descriptor_field(&d, "dim")?,
            aggregate,
            ..NbfConfig::default()
        };
        let num_relations: usize = descriptor_field(&d, "num_relations")?;
        let mut model = NbfRanker::new(config, num_relations).map_err(|e| Error::Checkpoint(e.to_string()))?;
        check_layout(&model.params, &ck.params)?;
        model.params = ck.params;
        Ok(model)
    }

    fn param(&self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        Ok(tape.param(store, id))
    }

    fn check_query(&self, graph: &MessageGraph, query: &Query) -> Result<()> {
        if graph.num_relations != self.num_relations {
            return Err(Error::Shape {
                op: "nbf",
                detail: format!(
                    "graph over {} relations, model over {}",
                    graph.num_relations, self.num_relations
                ),
            });
        }
        if query.anchor as usize >= graph.num_entities {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id: query.anchor as u64,
                size: graph.num_entities,
            });
        }
        if query.relation as usize >= self.num_relations {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: query.relation as u64,
                size: self.num_relations,
            });
        }
        Ok(())
    }

    /// Final entity states (`entities x dim`) and the query embedding (`1 x dim`).
    pub fn states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &MessageGraph,
        query: &Query,
        mask: Option<Triple>,
    ) -> Result<(Var, Var)> {
        self.check_query(graph, query)?;
        let n = graph.num_entities;
        let edges = graph.edges(mask);
        let qrel = query.materialized_relation(self.num_relations) as usize;
        let table = self.param(tape, store, "query")?;
        let q = tape.gather_rows(table, vec![qrel].into())?;
        let h0 = tape.segment_sum(q, vec![query.anchor as usize].into(), n)?;
        let inv_degree: Option<Arc<[f64]>> = match self.config.aggregate {
            Aggregate::Sum => None,
            Aggregate::Mean => {
                let mut deg = vec![0usize; n];
                for &d in edges.dst.iter() {
                    deg[d] += 1;
                }
                Some(deg.iter().map(|&d| 1.0 / d.max(1) as f64).collect())
            }
        };
        let mut h = h0;
        for t in 0..self.config.layers {
            let rel_table = self.param(tape, store, &format!("l{t}.rel"))?;
            let w = self.param(tape, store, &format!("l{t}.w"))?;
            let from = tape.gather_rows(h, edges.src.clone())?;
            let r = tape.gather_rows(rel_table, edges.rel.clone())?;
            let msg = tape.hadamard(from, r)?;
            let mut agg = tape.segment_sum(msg, edges.dst.clone(), n)?;
            if let Some(f) = &inv_degree {
                agg = tape.scale_rows(agg, f.clone())?;
            }
            let joined = tape.concat_cols(&[agg, h0])?;
            let pre = tape.matmul(joined, w)?;
            h = tape.relu(pre)?;
        }
        Ok((h, q))
    }

    /// Logits for the given entity rows.
    fn head(&self, tape: &mut Tape, store: &ParamStore, h: Var, q: Var, rows: Arc<[usize]>) -> Result<Var> {
        let k = rows.len();
        let hs = tape.gather_rows(h, rows)?;
        let qs = tape.gather_rows(q, vec![0; k].into())?;
        let x = tape.concat_cols(&[hs, qs])?;
        let w1 = self.param(tape, store, "mlp.w1")?;
        let b1 = self.param(tape, store, "mlp.b1")?;
        let w2 = self.param(tape, store, "mlp.w2")?;
        let b2 = self.param(tape, store, "mlp.b2")?;
        let hidden = tape.matmul(x, w1)?;
        let hidden = tape.add_row(hidden, b1)?;
        let hidden = tape.relu(hidden)?;
        let out = tape.matmul(hidden, w2)?;
        tape.add_row(out, b2)
    }

    /// Logits of `rows` for `query`, as a differentiable `rows x 1` variable.
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &MessageGraph,
        query: &Query,
        mask: Option<Triple>,
        rows: &[EntityId],
    ) -> Result<Var> {
        if let Some(&bad) = rows.iter().find(|&&e| e as usize >= graph.num_entities) {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id: bad as u64,
                size: graph.num_entities,
            });
        }
        let (h, q) = self.states(tape, store, graph, query, mask)?;
        let rows: Arc<[usize]> = rows.iter().map(|&e| e as usize).collect();
        self.head(tape, store, h, q, rows)
    }

    /// Logit of every entity of `graph`, indexed by entity id. Head queries
    /// are answered through the inverse relation.
    pub fn score_all(&self, graph: &MessageGraph, query: &Query, mask: Option<Triple>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (h, q) = self.states(&mut tape, &self.params, graph, query, mask)?;
        let rows: Arc<[usize]> = (0..graph.num_entities).collect();
        let z = self.head(&mut tape, &self.params, h, q, rows)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Filtered MRR over both directions of `triples`, ranking against every
    /// entity of `graph`. `is_known` marks other true answers to skip.
    pub fn mrr(
        &self,
        graph: &MessageGraph,
        triples: &[Triple],
        is_known: &(dyn Fn(&Triple) -> bool + Sync),
    ) -> Result<f64> {
        if triples.is_empty() {
            return Ok(0.0);
        }
        let queries: Vec<(Triple, QueryDirection)> = triples
            .iter()
            .flat_map(|&t| [(t, QueryDirection::Tail), (t, QueryDirection::Head)])
            .collect();
        let rr: Vec<Result<f64>> = queries
            .par_iter()
            .map(|&(t, dir)| {
                let (q, gold) = Query::from_triple(t, dir);
                let scores = self.score_all(graph, &q, None)?;
                let others: Vec<f64> = (0..scores.len() as EntityId)
                    .filter(|&e| e != gold && !is_known(&q.complete(e)))
                    .map(|e| scores[e as usize])
                    .collect();
                Ok(1.0 / rank_of(scores[gold as usize], &others) as f64)
            })
            .collect();
        let mut total = 0.0;
        for r in rr {
            total += r?;
        }
        Ok(total / queries.len() as f64)
    }

    fn query_loss(
        &self,
        store: &ParamStore,
        graph: &MessageGraph,
        triple: Triple,
        dir: QueryDirection,
        seed: u64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let (q, gold) = Query::from_triple(triple, dir);
        let n = graph.num_entities;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![gold];
        let mut attempts = 0;
        while rows.len() <= self.config.negatives && attempts < 10 * self.config.negatives.max(1) {
            attempts += 1;
            let e = rng.gen_range(0..n) as EntityId;
            if e != gold && graph.triples.binary_search(&q.complete(e)).is_err() {
                rows.push(e);
            }
        }
        let labels: Vec<f64> = (0..rows.len()).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, store, graph, &q, Some(triple), &rows)?;
        let loss = tape.bce_with_logits(z, &labels)?;
        let value = tape.value(loss).get(0, 0);
        Ok((value, tape.backward(loss)?.for_params(&tape, store)))
    }
}

fn init_params<R: Rng>(c: &NbfConfig, num_relations: usize, rng: &mut R) -> ParamStore {
    let r2 = 2 * num_relations;
    let d = c.dim;
    let mut s = ParamStore::new();
    s.add("query", normal_init(r2, d, 0.1, rng));
    for t in 0..c.layers {
        // Edge relation vectors start near one so initial messages neither
        // vanish nor explode with depth.
        let mut rel = normal_init(r2, d, 0.1, rng);
        rel.data_mut().iter_mut().for_each(|v| *v += 1.0);
        s.add(&format!("l{t}.rel"), rel);
        s.add(&format!("l{t}.w"), xavier_uniform(2 * d, d, rng));
    }
    s.add("mlp.w1", xavier_uniform(2 * d, d, rng));
    s.add("mlp.b1", Tensor::zeros(1, d));
    s.add("mlp.w2", xavier_uniform(d, 1, rng));
    s.add("mlp.b2", Tensor::zeros(1, 1));
    s
}

/// Trains on the training split of the training graph. Each positive triple
/// is hidden from the message graph of its own queries, and early stopping
/// tracks filtered MRR on the validation split.
pub fn train_nbf(bundle: &DatasetBundle, config: &NbfConfig) -> Result<(NbfRanker, TrainingReport)> {
    let splits = &bundle.train_graph;
    let kg = &splits.train;
    if kg.is_empty() {
        return Err(Error::NoTrainingData("empty training split".into()));
    }
    let graph = MessageGraph::new(kg);
    let mut model = NbfRanker::new(config.clone(), bundle.num_relations())?;
    let known = |t: &Triple| splits.splits().iter().any(|g| g.contains(t));

    let mut valid: Vec<Triple> = splits.valid.triples().to_vec();
    if let Some(cap) = config.max_valid_queries {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[7]));
        valid.shuffle(&mut rng);
        valid.truncate(cap.div_ceil(2));
    }
    let monitor = |m: &NbfRanker| m.mrr(&graph, &valid, &known);

    let queries: Vec<(Triple, QueryDirection)> = kg
        .triples()
        .iter()
        .flat_map(|&t| [(t, QueryDirection::Tail), (t, QueryDirection::Head)])
        .collect();
    let mut report = TrainingReport {
        train_examples: queries.len(),
        valid_examples: 2 * valid.len(),
        ..TrainingReport::default()
    };
    let initial = if valid.is_empty() { 0.0 } else { monitor(&model)? };
    report.initial_valid_metric = initial;
    report.best_valid_metric = initial;
    let mut best = model.params.clone();
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[8]));
    let mut stale = 0;
    let mut best_loss = f64::INFINITY;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut rng);
        if let Some(cap) = config.max_train_queries {
            order.truncate(cap);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let parts: Vec<Result<(f64, Vec<Tensor>)>> = chunk
                .par_iter()
                .map(|&i| {
                    let (t, dir) = queries[i];
                    let seed = derive_seed(config.seed, &[epoch as u64, b as u64, i as u64]);
                    model.query_loss(&model.params, &graph, t, dir, seed)
                })
                .collect();
            let mut sum: Option<Vec<Tensor>> = None;
            for p in parts {
                let (loss, grads) = p?;
                total += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = sum.expect("non-empty chunk");
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            opt.step(&mut model.params, &grads)?;
        }
        let train_loss = total / order.len().max(1) as f64;
        let metric = if valid.is_empty() {
            -train_loss
        } else {
            monitor(&model)?
        };
        log::info!("epoch {epoch}: loss {train_loss:.4} valid {metric:.4}");
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric: metric,
        });
        let improved = if valid.is_empty() {
            let better = train_loss < best_loss;
            best_loss = best_loss.min(train_loss);
            better
        } else {
            metric > report.best_valid_metric
        };
        if improved {
            report.best_valid_metric = metric;
            report.best_epoch = epoch;
            best = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.params = best;
    Ok((model, report))
}
