//! R-GCN and CompGCN aggregators over rule instantiation graphs.
//!
//! A batch of RIGs is packed into one disjoint union graph. Node inputs are
//! the one-hot distance features; the final state of each tail node is
//! concatenated with a query relation embedding and mapped to a logit.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_layout, derive_seed, descriptor_field, parse_descriptor, EpochRecord, TrainingReport};
use crate::autodiff::{
    load_checkpoint, normal_init, save_checkpoint, sigmoid, xavier_uniform, Adam, ParamStore, Tape, Tensor, Var,
};
use crate::engine::{apply_rules, ApplyOptions, CandidatePartition};
use crate::error::{Error, Result};
use crate::kg::{DatasetBundle, EntityId, KnowledgeGraph, Query, QueryDirection, Triple};
use crate::rig::{build_rig, featurize, top_ground_rules, RuleInstantiationGraph};
use crate::rules::RuleSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composition {
    Hadamard,
    Subtract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregatorArch {
    Rgcn,
    CompGcn(Composition),
}

impl AggregatorArch {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorArch::Rgcn => "rgcn",
            AggregatorArch::CompGcn(Composition::Hadamard) => "compgcn",
            AggregatorArch::CompGcn(Composition::Subtract) => "compgcn-sub",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgcn" => Ok(AggregatorArch::Rgcn),
            "compgcn" | "compgcn-mult" => Ok(AggregatorArch::CompGcn(Composition::Hadamard)),
            "compgcn-sub" => Ok(AggregatorArch::CompGcn(Composition::Subtract)),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregator architecture {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AggregatorConfig {
    pub arch: AggregatorArch,
    pub layers: usize,
    /// Number of shared basis matrices (R-GCN only).
    pub bases: usize,
    pub hidden: usize,
    pub rel_dim: usize,
    pub distance_cap: u32,
    /// Ground rules per RIG, extended by ties.
    pub top_k: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub negatives: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Training queries drawn per epoch; all when `None`.
    pub max_train_queries: Option<usize>,
    /// Validation queries used for early stopping; all when `None`.
    pub max_valid_queries: Option<usize>,
    pub apply: ApplyOptions,
    pub seed: u64,
}

impl AggregatorConfig {
    pub fn rgcn() -> Self {
        AggregatorConfig {
            arch: AggregatorArch::Rgcn,
            layers: 4,
            bases: 4,
            hidden: 32,
            rel_dim: 32,
            distance_cap: 5,
            top_k: 5,
            learning_rate: 0.004,
            patience: 3,
            negatives: 2,
            max_epochs: 20,
            batch_size: 64,
            max_train_queries: None,
            max_valid_queries: None,
            apply: ApplyOptions::default(),
            seed: 0,
        }
    }

    pub fn compgcn() -> Self {
        AggregatorConfig {
            arch: AggregatorArch::CompGcn(Composition::Hadamard),
            learning_rate: 0.001,
            ..AggregatorConfig::rgcn()
        }
    }

    pub fn for_arch(arch: AggregatorArch) -> Self {
        match arch {
            AggregatorArch::Rgcn => AggregatorConfig::rgcn(),
            AggregatorArch::CompGcn(c) => AggregatorConfig {
                arch: AggregatorArch::CompGcn(c),
                ..AggregatorConfig::compgcn()
            },
        }
    }

    fn input_width(&self) -> usize {
        2 * (self.distance_cap as usize + 2)
    }
}

/// One RIG scored for a query relation in the materialized space.
#[derive(Clone, Copy, Debug)]
pub struct AggregatorInput<'a> {
    pub rig: &'a RuleInstantiationGraph,
    pub query_relation: u32,
}

#[derive(Clone, Debug)]
pub struct AggregatorExample {
    pub rig: RuleInstantiationGraph,
    pub query_relation: u32,
    pub label: f64,
}

impl AggregatorExample {
    pub fn input(&self) -> AggregatorInput<'_> {
        AggregatorInput {
            rig: &self.rig,
            query_relation: self.query_relation,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Aggregator {
    config: AggregatorConfig,
    num_relations: usize,
    params: ParamStore,
}

/// A batch of RIGs as one disjoint graph.
struct Packed {
    features: Tensor,
    num_nodes: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    rel: Arc<[usize]>,
    /// `1 / c_{v,r}` per edge.
    norm: Arc<[f64]>,
    fwd: EdgeSubset,
    inv: EdgeSubset,
    tails: Arc<[usize]>,
    query_relations: Arc<[usize]>,
}

struct EdgeSubset {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    rel: Arc<[usize]>,
}

impl Aggregator {
    pub fn new(config: AggregatorConfig, num_relations: usize) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("aggregator needs at least one layer".into()));
        }
        if config.hidden == 0 || config.rel_dim == 0 {
            return Err(Error::Config("aggregator dimensions must be positive".into()));
        }
        if num_relations == 0 {
            return Err(Error::Config("no relations".into()));
        }
        if config.arch == AggregatorArch::Rgcn && (config.bases == 0 || config.bases > 2 * num_relations) {
            return Err(Error::Config(format!(
                "basis size {} must lie in 1..={}",
                config.bases,
                2 * num_relations
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&config, num_relations, &mut rng);
        Ok(Aggregator {
            config,
            num_relations,
            params,
        })
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    /// Changes the number of ground rules per RIG; parameters do not depend on it.
    pub fn set_top_k(&mut self, k: usize) {
        self.config.top_k = k.max(1);
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn descriptor(&self) -> String {
        let c = &self.config;
        format!(
            "aggregator arch={} layers={} bases={} hidden={} rel_dim={} distance_cap={} top_k={} num_relations={}",
            c.arch.name(),
            c.layers,
            c.bases,
            c.hidden,
            c.rel_dim,
            c.distance_cap,
            c.top_k,
            self.num_relations
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.descriptor(), &self.params)
    }

    /// Loads a checkpoint, validating the descriptor and tensor layout.
    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let d = parse_descriptor(&ck.architecture, "aggregator")?;
        let arch = AggregatorArch::parse(&d.get("arch").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let config = AggregatorConfig {
            layers: descriptor_field(&d, "layers")?,
            bases: descriptor_field(&d, "bases")?,
            hidden: descriptor_field(&d, "hidden")?,
            rel_dim: descriptor_field(&d, "rel_dim")?,
            distance_cap: descriptor_field(&d, "distance_cap")?,
            top_k: descriptor_field(&d, "top_k")?,
            ..AggregatorConfig::for_arch(arch)
        };
        let num_relations: usize = descriptor_field(&d, "num_relations")?;
        let mut model = Aggregator::new(config, num_relations).map_err(|e| Error::Checkpoint(e.to_string()))?;
        check_layout(&model.params, &ck.params)?;
        model.params = ck.params;
        Ok(model)
    }

    fn pack(&self, batch: &[AggregatorInput<'_>]) -> Result<Packed> {
        let cap = self.config.distance_cap;
        let width = self.config.input_width();
        let r2 = 2 * self.num_relations;
        let mut features = Vec::new();
        let (mut src, mut dst, mut rel) = (Vec::new(), Vec::new(), Vec::new());
        let (mut tails, mut qrels) = (Vec::new(), Vec::new());
        let mut offset = 0usize;
        for input in batch {
            let rig = input.rig;
            if rig.nodes.is_empty() || rig.edges.is_empty() {
                return Err(Error::Rig("empty rule instantiation graph".into()));
            }
            if rig.num_relations != self.num_relations {
                return Err(Error::Shape {
                    op: "aggregator",
                    detail: format!(
                        "RIG over {} relations, model over {}",
                        rig.num_relations, self.num_relations
                    ),
                });
            }
            if input.query_relation as usize >= r2 {
                return Err(Error::IdOutOfRange {
                    kind: "relation",
                    id: input.query_relation as u64,
                    size: r2,
                });
            }
            features.extend(featurize(rig, cap).dense());
            for e in &rig.edges {
                src.push(offset + e.src as usize);
                dst.push(offset + e.dst as usize);
                rel.push(e.relation as usize);
            }
            tails.push(offset + rig.tail as usize);
            qrels.push(input.query_relation as usize);
            offset += rig.num_nodes();
        }
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (d, r) in dst.iter().zip(&rel) {
            *counts.entry((*d, *r)).or_default() += 1;
        }
        let norm: Vec<f64> = dst
            .iter()
            .zip(&rel)
            .map(|(d, r)| 1.0 / counts[&(*d, *r)] as f64)
            .collect();
        let subset = |keep: &dyn Fn(usize) -> bool| {
            let idx: Vec<usize> = (0..rel.len()).filter(|&k| keep(rel[k])).collect();
            EdgeSubset {
                src: idx.iter().map(|&k| src[k]).collect(),
                dst: idx.iter().map(|&k| dst[k]).collect(),
                rel: idx.iter().map(|&k| rel[k]).collect(),
            }
        };
        let r = self.num_relations;
        let fwd = subset(&|x| x < r);
        let inv = subset(&|x| x >= r);
        Ok(Packed {
            features: Tensor::from_vec(offset, width, features)?,
            num_nodes: offset,
            src: src.into(),
            dst: dst.into(),
            rel: rel.into(),
            norm: norm.into(),
            fwd,
            inv,
            tails: tails.into(),
            query_relations: qrels.into(),
        })
    }

    fn param(&self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        Ok(tape.param(store, id))
    }

    /// Final node states of the packed batch (`nodes x hidden`).
    pub fn node_states(&self, tape: &mut Tape, store: &ParamStore, batch: &[AggregatorInput<'_>]) -> Result<Var> {
        let packed = self.pack(batch)?;
        self.states(tape, store, &packed)
    }

    fn states(&self, tape: &mut Tape, store: &ParamStore, p: &Packed) -> Result<Var> {
        let x = tape.constant(p.features.clone())?;
        match self.config.arch {
            AggregatorArch::Rgcn => self.rgcn_states(tape, store, p, x),
            AggregatorArch::CompGcn(op) => self.compgcn_states(tape, store, p, x, op),
        }
    }

    fn rgcn_states(&self, tape: &mut Tape, store: &ParamStore, p: &Packed, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.config.layers {
            let w0 = self.param(tape, store, &format!("l{l}.self"))?;
            let self_term = tape.matmul(h, w0)?;
            let coef = self.param(tape, store, &format!("l{l}.coef"))?;
            let coef_e = tape.gather_rows(coef, p.rel.clone())?;
            let mut msg: Option<Var> = None;
            for j in 0..self.config.bases {
                let b = self.param(tape, store, &format!("l{l}.basis{j}"))?;
                let projected = tape.matmul(h, b)?;
                let from_src = tape.gather_rows(projected, p.src.clone())?;
                let a_j = tape.column(coef_e, j)?;
                let weighted = tape.mul_col(from_src, a_j)?;
                msg = Some(match msg {
                    Some(m) => tape.add(m, weighted)?,
                    None => weighted,
                });
            }
            let msg = msg.expect("at least one basis");
            let msg = tape.scale_rows(msg, p.norm.clone())?;
            let agg = tape.segment_sum(msg, p.dst.clone(), p.num_nodes)?;
            let pre = tape.add(self_term, agg)?;
            h = tape.relu(pre)?;
        }
        Ok(h)
    }

    #[allow(clippy::too_many_arguments)]
    fn compgcn_messages(
        &self,
        tape: &mut Tape,
        h: Var,
        z: Var,
        w: Var,
        edges: &EdgeSubset,
        n: usize,
        op: Composition,
    ) -> Result<Var> {
        let hs = tape.gather_rows(h, edges.src.clone())?;
        let zs = tape.gather_rows(z, edges.rel.clone())?;
        let composed = match op {
            Composition::Hadamard => tape.hadamard(hs, zs)?,
            Composition::Subtract => tape.sub(hs, zs)?,
        };
        let msg = tape.matmul(composed, w)?;
        tape.segment_sum(msg, edges.dst.clone(), n)
    }

    fn compgcn_states(&self, tape: &mut Tape, store: &ParamStore, p: &Packed, x: Var, op: Composition) -> Result<Var> {
        let w_in = self.param(tape, store, "input")?;
        let mut h = tape.matmul(x, w_in)?;
        let mut z = self.param(tape, store, "rel0")?;
        for l in 0..self.config.layers {
            let w_out = self.param(tape, store, &format!("l{l}.out"))?;
            let w_inv = self.param(tape, store, &format!("l{l}.in"))?;
            let w_self = self.param(tape, store, &format!("l{l}.self"))?;
            let w_rel = self.param(tape, store, &format!("l{l}.rel"))?;
            let m_fwd = self.compgcn_messages(tape, h, z, w_out, &p.fwd, p.num_nodes, op)?;
            let m_inv = self.compgcn_messages(tape, h, z, w_inv, &p.inv, p.num_nodes, op)?;
            let self_term = tape.matmul(h, w_self)?;
            let sum = tape.add(m_fwd, m_inv)?;
            let pre = tape.add(sum, self_term)?;
            h = tape.relu(pre)?;
            z = tape.matmul(z, w_rel)?;
        }
        Ok(h)
    }

    /// Logits (`batch x 1`) of the candidates in `batch`, computed against
    /// `store`, which must have this model's layout.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, batch: &[AggregatorInput<'_>]) -> Result<Var> {
        let p = self.pack(batch)?;
        let h = self.states(tape, store, &p)?;
        let tails = tape.gather_rows(h, p.tails.clone())?;
        let rel_table = self.param(tape, store, "head.rel")?;
        let q = tape.gather_rows(rel_table, p.query_relations.clone())?;
        let joined = tape.concat_cols(&[tails, q])?;
        let a = self.param(tape, store, "head.a")?;
        let b = self.param(tape, store, "head.b")?;
        let z = tape.matmul(joined, a)?;
        tape.add_row(z, b)
    }

    /// Confidences in (0, 1) for each input.
    pub fn score(&self, batch: &[AggregatorInput<'_>]) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let parts: Vec<Result<Vec<f64>>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut tape = Tape::new();
                let z = self.logits(&mut tape, &self.params, chunk)?;
                Ok(tape.value(z).data().iter().map(|&v| sigmoid(v)).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Scores every candidate of `a_q` through its RIG.
    pub fn score_partition(&self, partition: &CandidatePartition) -> Result<Vec<(EntityId, f64)>> {
        let q = partition.query;
        let qrel = q.materialized_relation(self.num_relations);
        let rigs: Vec<RuleInstantiationGraph> = partition
            .a_q
            .iter()
            .map(|ev| {
                build_rig(
                    &top_ground_rules(ev, self.config.top_k),
                    q.anchor,
                    ev.candidate,
                    self.num_relations,
                )
            })
            .collect::<Result<_>>()?;
        let inputs: Vec<AggregatorInput<'_>> = rigs
            .iter()
            .map(|rig| AggregatorInput {
                rig,
                query_relation: qrel,
            })
            .collect();
        let scores = self.score(&inputs)?;
        Ok(partition.a_q.iter().map(|e| e.candidate).zip(scores).collect())
    }

    /// Fraction of examples whose confidence falls on the label's side of 0.5.
    pub fn accuracy(&self, examples: &[AggregatorExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let inputs: Vec<AggregatorInput<'_>> = examples.iter().map(AggregatorExample::input).collect();
        let scores = self.score(&inputs)?;
        let correct = scores
            .iter()
            .zip(examples)
            .filter(|(s, e)| (**s > 0.5) == (e.label > 0.5))
            .count();
        Ok(correct as f64 / examples.len() as f64)
    }

    fn batch_loss(&self, store: &ParamStore, batch: &[&AggregatorExample]) -> Result<(f64, Vec<Tensor>)> {
        let inputs: Vec<AggregatorInput<'_>> = batch.iter().map(|e| e.input()).collect();
        let labels: Vec<f64> = batch.iter().map(|e| e.label).collect();
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, store, &inputs)?;
        let loss = tape.bce_with_logits(z, &labels)?;
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?.for_params(&tape, store);
        Ok((value, grads))
    }
}

fn init_params<R: Rng>(c: &AggregatorConfig, num_relations: usize, rng: &mut R) -> ParamStore {
    let r2 = 2 * num_relations;
    let (w, h) = (c.input_width(), c.hidden);
    let mut s = ParamStore::new();
    match c.arch {
        AggregatorArch::Rgcn => {
            for l in 0..c.layers {
                let d_in = if l == 0 { w } else { h };
                for j in 0..c.bases {
                    s.add(&format!("l{l}.basis{j}"), xavier_uniform(d_in, h, rng));
                }
                s.add(&format!("l{l}.coef"), xavier_uniform(r2, c.bases, rng));
                s.add(&format!("l{l}.self"), xavier_uniform(d_in, h, rng));
            }
        }
        AggregatorArch::CompGcn(_) => {
            s.add("input", xavier_uniform(w, h, rng));
            s.add("rel0", normal_init(r2, h, 0.1, rng));
            for l in 0..c.layers {
                for name in ["out", "in", "self", "rel"] {
                    s.add(&format!("l{l}.{name}"), xavier_uniform(h, h, rng));
                }
            }
        }
    }
    s.add("head.rel", normal_init(r2, c.rel_dim, 0.1, rng));
    s.add("head.a", xavier_uniform(h + c.rel_dim, 1, rng));
    s.add("head.b", Tensor::zeros(1, 1));
    s
}

/// Labeled RIGs for both queries of every triple in `triples`: the gold RIG
/// with label 1 and up to `negatives` RIGs of other rule-predicted candidates
/// that are not known answers, with label 0. The triple itself is excluded
/// from groundings. Queries whose gold answer has no rule evidence are skipped.
pub fn aggregator_examples(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    triples: &[Triple],
    is_known: &(dyn Fn(&Triple) -> bool + Sync),
    config: &AggregatorConfig,
    seed: u64,
) -> Result<Vec<AggregatorExample>> {
    const RESAMPLE_ATTEMPTS: usize = 50;
    let r = kg.num_relations();
    let queries: Vec<(Triple, QueryDirection)> = triples
        .iter()
        .flat_map(|&t| [(t, QueryDirection::Tail), (t, QueryDirection::Head)])
        .collect();
    let per_query: Vec<Result<Vec<AggregatorExample>>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, &(t, dir))| {
            let (q, gold) = Query::from_triple(t, dir);
            let opts = ApplyOptions {
                exclude: Some(t),
                ..config.apply.clone()
            };
            let partition = apply_rules(kg, rules, &q, &opts)?;
            let Some(gold_ev) = partition.evidence(gold) else {
                return Ok(Vec::new());
            };
            let qrel = q.materialized_relation(r);
            let make = |ev: &crate::engine::Evidence, label: f64| -> Result<AggregatorExample> {
                Ok(AggregatorExample {
                    rig: build_rig(&top_ground_rules(ev, config.top_k), q.anchor, ev.candidate, r)?,
                    query_relation: qrel,
                    label,
                })
            };
            let mut out = vec![make(gold_ev, 1.0)?];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let mut chosen: HashSet<EntityId> = HashSet::new();
            for _ in 0..RESAMPLE_ATTEMPTS {
                if chosen.len() >= config.negatives {
                    break;
                }
                let Some(ev) = partition.a_q.choose(&mut rng) else {
                    break;
                };
                let c = ev.candidate;
                if c == gold || chosen.contains(&c) || is_known(&q.complete(c)) {
                    continue;
                }
                chosen.insert(c);
                out.push(make(ev, 0.0)?);
            }
            Ok(out)
        })
        .collect();
    let mut examples = Vec::new();
    for part in per_query {
        examples.extend(part?);
    }
    Ok(examples)
}

fn subsample<T: Clone>(items: &[T], cap: Option<usize>, seed: u64) -> Vec<T> {
    match cap {
        Some(k) if k < items.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = items.to_vec();
            v.shuffle(&mut rng);
            v.truncate(k);
            v
        }
        _ => items.to_vec(),
    }
}

/// Trains an aggregator on the training graph of `bundle` with rules mined on
/// its training split. Keeps the parameters with the best validation accuracy.
pub fn train_aggregator(
    bundle: &DatasetBundle,
    rules: &RuleSet,
    config: &AggregatorConfig,
) -> Result<(Aggregator, TrainingReport)> {
    let splits = &bundle.train_graph;
    let kg = &splits.train;
    let mut model = Aggregator::new(config.clone(), bundle.num_relations())?;

    let train_triples = subsample(
        kg.triples(),
        config.max_train_queries.map(|q| q.div_ceil(2)),
        config.seed,
    );
    let valid_triples = subsample(
        splits.valid.triples(),
        config.max_valid_queries.map(|q| q.div_ceil(2)),
        config.seed ^ 1,
    );
    let known = |t: &Triple| splits.splits().iter().any(|g| g.contains(t));
    let train = aggregator_examples(
        kg,
        rules,
        &train_triples,
        &known,
        config,
        derive_seed(config.seed, &[1]),
    )?;
    if train.is_empty() {
        return Err(Error::NoTrainingData(
            "no training query has a gold answer with rule evidence".into(),
        ));
    }
    let valid = aggregator_examples(
        kg,
        rules,
        &valid_triples,
        &known,
        config,
        derive_seed(config.seed, &[2]),
    )?;
    let monitor: &[AggregatorExample] = if valid.is_empty() { &train } else { &valid };
    log::info!(
        "aggregator {}: {} training and {} validation examples",
        config.arch.name(),
        train.len(),
        valid.len()
    );

    let mut report = TrainingReport {
        train_examples: train.len(),
        valid_examples: valid.len(),
        ..TrainingReport::default()
    };
    let initial = model.accuracy(monitor)?;
    report.initial_valid_metric = initial;
    report.best_valid_metric = initial;
    let mut best = model.params.clone();
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3]));
    let mut stale = 0;
    let batch_size = config.batch_size.max(1);
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<&AggregatorExample> = train.iter().collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let (loss, grads) = model.batch_loss(&model.params, chunk)?;
            total += loss * chunk.len() as f64;
            opt.step(&mut model.params, &grads)?;
        }
        let acc = model.accuracy(monitor)?;
        let train_loss = total / train.len() as f64;
        log::info!("epoch {epoch}: loss {train_loss:.4} valid acc {acc:.4}");
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric: acc,
        });
        if acc > report.best_valid_metric {
            report.best_valid_metric = acc;
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
