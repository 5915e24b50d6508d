use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgc::ablation::{run_ablation, AblationConfig, AblationRow, Sweep};
use kgc::config::Config;
use kgc::engine::evidence_json;
use kgc::eval::dataset_stats;
use kgc::kg::write_dataset;
use kgc::rankers::{
    train_aggregator, train_nbf, Aggregate, Aggregator, AggregatorArch, AggregatorConfig, MessageGraph, NbfConfig,
    NbfRanker,
};
use kgc::rig::{to_dot, top_ground_rules, DEFAULT_DISTANCE_CAP, DEFAULT_TOP_K};
use kgc::synthetic::{generate, SyntheticConfig};
use kgc::{
    apply_rules, build_rig, evaluate, load_dataset, mine, ApplyOptions, Budget, DatasetBundle, EvalConfig,
    MetricsReport, MinerConfig, Models, Query, RuleSet, Setting, StrategySpec,
};

#[derive(Parser)]
#[command(
    name = "kgc",
    version,
    about = "Rule mining, GNN rule aggregation and hybrid ranking for inductive link prediction"
)]
struct Cli {
    /// Flat `key = value` file. Keys are flag names with `_` for `-`;
    /// flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, printing split sizes.
    Ingest(DataArgs),
    /// Write a synthetic dataset with a planted rule.
    Synth(SynthArgs),
    /// Mine closed path rules on the training graph.
    Mine {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        miner: MineArgs,
        /// Rule file to write (default `<work>/<dataset>_<version>.rules`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a ranker on the training graph.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// rgcn, compgcn, compgcn-sub or nbf.
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        agg: AggArgs,
        #[command(flatten)]
        nbf: NbfArgs,
    },
    /// Evaluate strategies on the test graph.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// `primary+fallback`, comma separated, e.g. `anyburl-max+nbfnet,noisy-or`.
        #[arg(long)]
        strategy: Option<String>,
        /// full or reduced50.
        #[arg(long)]
        setting: Option<String>,
        /// Ground rules per RIG for aggregator primaries.
        #[arg(long)]
        topk: Option<usize>,
        /// Rank against every candidate instead of filtering known answers.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate only the first n test triples.
        #[arg(long)]
        max_triples: Option<usize>,
        /// Also write metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rule coverage statistics of the test queries.
    Stats(DataArgs),
    /// Print the rule instantiation graph of one candidate as DOT.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        /// `anchor,relation,?` or `?,relation,anchor`, using test-graph names.
        #[arg(long)]
        query: String,
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        topk: Option<usize>,
        /// Print the rule evidence of every candidate as JSON instead.
        #[arg(long)]
        evidence: bool,
    },
    /// Retrain and evaluate the CompGCN aggregator over a grid of mining
    /// budgets or RIG sizes.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// budget or topk.
        #[arg(long)]
        sweep: String,
        /// Comma separated values (default: 10,100,1000 s or 5,10,50,100,1000 rules).
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        miner: MineArgs,
        #[command(flatten)]
        agg: AggArgs,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        max_triples: Option<usize>,
        /// CSV file to write; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory containing `<dataset>_<version>` and `<dataset>_<version>_ind`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    version: Option<String>,
    /// Directory for rules and checkpoints.
    #[arg(long)]
    work: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct MineArgs {
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Sample a fixed number of paths instead of running for a time budget.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    pc: Option<f64>,
    #[arg(long)]
    min_support: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct AggArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Ground rules per RIG.
    #[arg(long = "train-topk")]
    train_topk: Option<usize>,
    #[arg(long)]
    max_train_queries: Option<usize>,
    #[arg(long)]
    max_valid_queries: Option<usize>,
    #[arg(long = "train-seed")]
    train_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct NbfArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// sum or mean.
    #[arg(long)]
    aggregate: Option<String>,
    #[arg(long)]
    negatives: Option<usize>,
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// Dataset root to write into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synth")]
    dataset: String,
    #[arg(long, default_value = "v1")]
    version: String,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flag values with the config file as fallback.
struct Settings {
    file: Config,
}

impl Settings {
    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => Ok(self.file.parsed(key)?),
        }
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.opt(None, key)?.unwrap_or(false))
    }
}

struct Data {
    bundle: DatasetBundle,
    work: PathBuf,
}

impl Data {
    fn rules_path(&self) -> PathBuf {
        self.work.join(format!("{}.rules", self.bundle.name))
    }

    fn model_path(&self, arch: &str) -> PathBuf {
        self.work.join(format!("{}.{arch}.ckpt", self.bundle.name))
    }

    fn rules(&self) -> Result<RuleSet> {
        let path = self.rules_path();
        RuleSet::read(&path, &self.bundle.relations)
            .with_context(|| format!("reading rules from {} (run `kgc mine` first)", path.display()))
    }
}

fn load(s: &Settings, a: &DataArgs) -> Result<Data> {
    let root: PathBuf = s
        .opt(a.data.clone(), "data")?
        .ok_or_else(|| anyhow!("no dataset root; pass --data or set `data` in the config"))?;
    let dataset: String = s
        .opt(a.dataset.clone(), "dataset")?
        .ok_or_else(|| anyhow!("no dataset name; pass --dataset"))?;
    let version = s.get(a.version.clone(), "version", "v1".to_owned())?;
    let work = s.get(a.work.clone(), "work", PathBuf::from("."))?;
    let start = Instant::now();
    let bundle = load_dataset(&root, &dataset, &version)?;
    log::info!("loaded {} in {:.1} s", bundle.name, start.elapsed().as_secs_f64());
    Ok(Data { bundle, work })
}

fn miner_config(s: &Settings, m: &MineArgs) -> Result<MinerConfig> {
    let d = MinerConfig::default();
    let budget = match s.opt(m.iterations, "iterations")? {
        Some(n) => Budget::Iterations(n),
        None => Budget::Seconds(s.get(m.budget_seconds, "budget_seconds", 10.0)?),
    };
    Ok(MinerConfig {
        max_len: s.get(m.max_len, "max_len", d.max_len)?,
        pc: s.get(m.pc, "pc", d.pc)?,
        min_support: s.get(m.min_support, "min_support", d.min_support)?,
        budget,
        seed: s.get(m.seed, "seed", d.seed)?,
        ..d
    })
}

fn aggregator_config(s: &Settings, arch: AggregatorArch, a: &AggArgs) -> Result<AggregatorConfig> {
    let d = AggregatorConfig::for_arch(arch);
    Ok(AggregatorConfig {
        layers: s.get(a.layers, "layers", d.layers)?,
        hidden: s.get(a.hidden, "hidden", d.hidden)?,
        rel_dim: s.get(a.hidden, "hidden", d.rel_dim)?,
        bases: s.get(a.bases, "bases", d.bases)?,
        max_epochs: s.get(a.epochs, "epochs", d.max_epochs)?,
        learning_rate: s.get(a.lr, "lr", d.learning_rate)?,
        patience: s.get(a.patience, "patience", d.patience)?,
        batch_size: s.get(a.batch_size, "batch_size", d.batch_size)?,
        top_k: s.get(a.train_topk, "train_topk", d.top_k)?,
        max_train_queries: s.opt(a.max_train_queries, "max_train_queries")?,
        max_valid_queries: s.opt(a.max_valid_queries, "max_valid_queries")?,
        seed: s.get(a.train_seed, "train_seed", d.seed)?,
        ..d
    })
}

fn nbf_config(s: &Settings, a: &AggArgs, n: &NbfArgs) -> Result<NbfConfig> {
    let d = NbfConfig::default();
    let aggregate = match s.opt(n.aggregate.clone(), "aggregate")? {
        Some(name) => Aggregate::parse(&name)?,
        None => d.aggregate,
    };
    Ok(NbfConfig {
        layers: s.get(a.layers, "layers", d.layers)?,
        dim: s.get(n.dim, "dim", d.dim)?,
        aggregate,
        negatives: s.get(n.negatives, "negatives", d.negatives)?,
        learning_rate: s.get(a.lr, "lr", d.learning_rate)?,
        max_epochs: s.get(a.epochs, "epochs", d.max_epochs)?,
        patience: s.get(a.patience, "patience", d.patience)?,
        batch_size: s.get(a.batch_size, "batch_size", d.batch_size)?,
        max_train_queries: s.opt(a.max_train_queries, "max_train_queries")?,
        max_valid_queries: s.opt(a.max_valid_queries, "max_valid_queries")?.or(d.max_valid_queries),
        seed: s.get(a.train_seed, "train_seed", d.seed)?,
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn split_list(text: &str) -> impl Iterator<Item = &str> {
    text.split(',').map(str::trim).filter(|v| !v.is_empty())
}

fn parse_query(text: &str, data: &Data) -> Result<Query> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [h, r, t] = parts[..] else {
        bail!("query must look like `anchor,relation,?` or `?,relation,anchor`, got {text:?}");
    };
    let relation = data
        .bundle
        .relations
        .id(r)
        .ok_or_else(|| anyhow!("unknown relation {r:?}"))?;
    let entity = |name: &str| {
        data.bundle
            .test_graph
            .entities
            .id(name)
            .ok_or_else(|| anyhow!("entity {name:?} is not in the test graph"))
    };
    match (h, t) {
        (anchor, "?") if anchor != "?" => Ok(Query::tail(entity(anchor)?, relation)),
        ("?", anchor) if anchor != "?" => Ok(Query::head(relation, entity(anchor)?)),
        _ => bail!("exactly one side of the query must be `?`"),
    }
}

/// Loads the checkpoints `specs` need from the work directory.
fn load_models(data: &Data, specs: &[StrategySpec], topk: Option<usize>) -> Result<Models> {
    use kgc::hybrid::Primary;
    let mut models = Models::default();
    let aggregator = |arch: &str| -> Result<Aggregator> {
        let path = data.model_path(arch);
        let mut m = Aggregator::load(&path)
            .with_context(|| format!("loading {} (run `kgc train --arch {arch}`)", path.display()))?;
        if let Some(k) = topk {
            m.set_top_k(k);
        }
        Ok(m)
    };
    if specs.iter().any(|s| s.primary == Primary::Rgcn) {
        models.rgcn = Some(aggregator("rgcn")?);
    }
    if specs.iter().any(|s| s.primary == Primary::CompGcn) {
        models.compgcn = Some(aggregator("compgcn")?);
    }
    if specs.iter().any(StrategySpec::needs_nbf) {
        let path = data.model_path("nbf");
        models.nbf = Some(
            NbfRanker::load(&path)
                .with_context(|| format!("loading {} (run `kgc train --arch nbf`)", path.display()))?,
        );
        models.message_graph = Some(MessageGraph::new(&data.bundle.test_graph.train));
    }
    Ok(models)
}

fn write_ablation(rows: &[AblationRow], out: Option<&Path>) -> Result<()> {
    let mut text = format!("{}\n", AblationRow::CSV_HEADER);
    for r in rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let s = Settings { file };
    match cli.command {
        Command::Ingest(a) => {
            let data = load(&s, &a)?;
            let b = &data.bundle;
            let sizes = |g: &kgc::kg::GraphSplits| {
                serde_json::json!({
                    "entities": g.entities.len(),
                    "train": g.train.len(),
                    "valid": g.valid.len(),
                    "test": g.test.len(),
                })
            };
            print_json(&serde_json::json!({
                "dataset": b.name,
                "relations": b.num_relations(),
                "train_graph": sizes(&b.train_graph),
                "test_graph": sizes(&b.test_graph),
            }))?;
        }
        Command::Synth(a) => {
            let d = SyntheticConfig::default();
            let bundle = generate(&SyntheticConfig {
                entities: a.entities.unwrap_or(d.entities),
                chains: a.chains.unwrap_or(d.chains),
                seed: a.seed,
                ..d
            })?;
            write_dataset(&bundle, &a.out, &a.dataset, &a.version)?;
            log::info!("wrote {}_{} under {}", a.dataset, a.version, a.out.display());
        }
        Command::Mine { data, miner, out } => {
            let data = load(&s, &data)?;
            let config = miner_config(&s, &miner)?;
            let start = Instant::now();
            let rules = mine(&data.bundle.train_graph.train, &config)?;
            let secs = start.elapsed().as_secs_f64();
            let path = out.unwrap_or_else(|| data.rules_path());
            fs::create_dir_all(&data.work).with_context(|| format!("creating {}", data.work.display()))?;
            rules.write(&path, &data.bundle.relations)?;
            print_json(&serde_json::json!({
                "dataset": data.bundle.name,
                "rules": rules.len(),
                "seconds": secs,
                "path": path,
            }))?;
        }
        Command::Train { data, arch, agg, nbf } => {
            let data = load(&s, &data)?;
            let arch: String = s
                .opt(arch, "arch")?
                .ok_or_else(|| anyhow!("pass --arch rgcn|compgcn|compgcn-sub|nbf"))?;
            fs::create_dir_all(&data.work).with_context(|| format!("creating {}", data.work.display()))?;
            let report = if arch == "nbf" {
                let (model, report) = train_nbf(&data.bundle, &nbf_config(&s, &agg, &nbf)?)?;
                model.save(&data.model_path("nbf"))?;
                report
            } else {
                let parsed = AggregatorArch::parse(&arch)?;
                let rules = data.rules()?;
                let (model, report) = train_aggregator(&data.bundle, &rules, &aggregator_config(&s, parsed, &agg)?)?;
                // Checkpoints are named by architecture family.
                model.save(&data.model_path(parsed.name().split('-').next().unwrap_or("compgcn")))?;
                report
            };
            print_json(&report)?;
        }
        Command::Eval {
            data,
            strategy,
            setting,
            topk,
            raw,
            runs,
            seed,
            max_triples,
            csv,
        } => {
            let data = load(&s, &data)?;
            let strategy = s.get(strategy, "strategy", "anyburl-max+shuffle".to_owned())?;
            let specs: Vec<StrategySpec> = split_list(&strategy).map(str::parse).collect::<kgc::Result<_>>()?;
            if specs.is_empty() {
                bail!("no strategy given");
            }
            let d = EvalConfig::default();
            let config = EvalConfig {
                setting: Setting::parse(&s.get(setting, "setting", "full".to_owned())?)?,
                filtered: !s.flag(raw, "raw")?,
                runs: s.get(runs, "runs", d.runs)?,
                seed: s.get(seed, "seed", d.seed)?,
                max_triples: s.opt(max_triples, "max_triples")?,
                ..d
            };
            let topk = s.opt(topk, "topk")?;
            let rules = data.rules()?;
            let models = load_models(&data, &specs, topk)?;
            let mut reports: Vec<MetricsReport> = Vec::new();
            for spec in &specs {
                let start = Instant::now();
                let report = evaluate(&data.bundle, &rules, spec, &models, &config)?;
                log::info!(
                    "{spec}: MRR {:.4} H@10 {:.4} in {:.1} s",
                    report.overall.mrr.mean,
                    report.overall.hits10.mean,
                    start.elapsed().as_secs_f64()
                );
                reports.push(report);
            }
            if let Some(path) = csv {
                let mut text = format!("{}\n", MetricsReport::CSV_HEADER);
                for r in &reports {
                    text.push_str(&r.csv_rows());
                }
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&reports)?;
        }
        Command::Stats(a) => {
            let data = load(&s, &a)?;
            let rules = data.rules()?;
            print_json(&dataset_stats(&data.bundle, &rules, &ApplyOptions::default())?)?;
        }
        Command::Explain {
            data,
            query,
            candidate,
            topk,
            evidence,
        } => {
            let data = load(&s, &data)?;
            let rules = data.rules()?;
            let q = parse_query(&query, &data)?;
            let kg = &data.bundle.test_graph.train;
            let partition = apply_rules(kg, &rules, &q, &ApplyOptions::default())?;
            let entities = &data.bundle.test_graph.entities;
            if evidence {
                print_json(&evidence_json(&partition, &rules, entities, &data.bundle.relations))?;
                return Ok(());
            }
            let cand = entities
                .id(&candidate)
                .ok_or_else(|| anyhow!("entity {candidate:?} is not in the test graph"))?;
            let ev = partition
                .evidence(cand)
                .ok_or_else(|| anyhow!("no rule predicts {candidate:?} for this query"))?;
            let k = s.get(topk, "topk", DEFAULT_TOP_K)?;
            let rig = build_rig(&top_ground_rules(ev, k), q.anchor, cand, data.bundle.num_relations())?;
            print!(
                "{}",
                to_dot(&rig, entities, &data.bundle.relations, DEFAULT_DISTANCE_CAP)
            );
        }
        Command::Ablate {
            data,
            sweep,
            values,
            miner,
            agg,
            runs,
            max_triples,
            out,
        } => {
            let sweep = Sweep::parse(&sweep)?;
            let data = load(&s, &data)?;
            let values: Vec<f64> = match s.opt(values, "values")? {
                Some(text) => split_list(&text)
                    .map(|v| v.parse().map_err(|_| anyhow!("bad sweep value {v:?}")))
                    .collect::<Result<_>>()?,
                None => sweep.default_values(),
            };
            let d = EvalConfig::default();
            let config = AblationConfig {
                miner: miner_config(&s, &miner)?,
                aggregator: aggregator_config(&s, AggregatorArch::parse("compgcn")?, &agg)?,
                eval: EvalConfig {
                    runs: s.get(runs, "runs", d.runs)?,
                    max_triples: s.opt(max_triples, "max_triples")?,
                    ..d
                },
            };
            let rows = run_ablation(&data.bundle, sweep, &values, &config)?;
            write_ablation(&rows, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
