//! Hyperparameter sweeps for the RIG aggregator: the rule mining budget and
//! the number of ground rules per RIG. Each grid row retrains the aggregator
//! and evaluates it in the full and 50-negative settings.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Setting};
use crate::hybrid::{Fallback, Models, Primary, StrategySpec};
use crate::kg::DatasetBundle;
use crate::rankers::{train_aggregator, AggregatorConfig};
use crate::rules::{mine, Budget, MinerConfig, RuleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Budget,
    TopK,
}

impl Sweep {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "budget" => Ok(Sweep::Budget),
            "topk" => Ok(Sweep::TopK),
            other => Err(Error::InvalidArgument(format!("unknown sweep {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Budget => "budget",
            Sweep::TopK => "topk",
        }
    }

    /// Values swept by default: seconds for the budget, rules for top-k.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Sweep::Budget => vec![10.0, 100.0, 1000.0],
            Sweep::TopK => vec![5.0, 10.0, 50.0, 100.0, 1000.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    /// Mining settings; the budget is replaced by the swept value in the
    /// budget sweep.
    pub miner: MinerConfig,
    pub aggregator: AggregatorConfig,
    /// Settings of the full-universe evaluation. The 50-negative column
    /// reuses them with the reduced setting.
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub dataset: String,
    pub sweep: Sweep,
    pub value: f64,
    pub rules: usize,
    pub valid_accuracy: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub hits10_reduced: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "dataset,sweep,value,rules,valid_acc,mrr,hits1,hits3,hits10,hits10_50";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.dataset,
            self.sweep.name(),
            self.value,
            self.rules,
            self.valid_accuracy,
            self.mrr,
            self.hits1,
            self.hits3,
            self.hits10,
            self.hits10_reduced
        )
    }
}

fn grid_row(
    bundle: &DatasetBundle,
    rules: &RuleSet,
    aggregator: &AggregatorConfig,
    eval: &EvalConfig,
    sweep: Sweep,
    value: f64,
) -> Result<AblationRow> {
    let (model, report) = train_aggregator(bundle, rules, aggregator)?;
    let spec = StrategySpec::new(Primary::CompGcn, Fallback::Shuffle);
    let models = Models {
        compgcn: Some(model),
        ..Models::default()
    };
    let full = evaluate(
        bundle,
        rules,
        &spec,
        &models,
        &EvalConfig {
            setting: Setting::Full,
            ..eval.clone()
        },
    )?;
    let reduced = evaluate(
        bundle,
        rules,
        &spec,
        &models,
        &EvalConfig {
            setting: Setting::Reduced(50),
            ..eval.clone()
        },
    )?;
    Ok(AblationRow {
        dataset: bundle.name.clone(),
        sweep,
        value,
        rules: rules.len(),
        valid_accuracy: report.best_valid_metric,
        mrr: full.overall.mrr.mean,
        hits1: full.overall.hits1.mean,
        hits3: full.overall.hits3.mean,
        hits10: full.overall.hits10.mean,
        hits10_reduced: reduced.overall.hits10.mean,
    })
}

/// Runs one sweep over `values` with a CompGCN aggregator. In the budget
/// sweep rules are mined once per value; in the top-k sweep they are mined
/// once with the configured budget and only the RIG size changes.
pub fn run_ablation(
    bundle: &DatasetBundle,
    sweep: Sweep,
    values: &[f64],
    config: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no sweep values".into()));
    }
    let kg = &bundle.train_graph.train;
    let mut rows = Vec::with_capacity(values.len());
    match sweep {
        Sweep::Budget => {
            for &seconds in values {
                log::info!("ablation: mining budget {seconds} s");
                let miner = MinerConfig {
                    budget: Budget::Seconds(seconds),
                    ..config.miner.clone()
                };
                let rules = mine(kg, &miner)?;
                rows.push(grid_row(
                    bundle,
                    &rules,
                    &config.aggregator,
                    &config.eval,
                    sweep,
                    seconds,
                )?);
            }
        }
        Sweep::TopK => {
            let rules = mine(kg, &config.miner)?;
            for &k in values {
                if !(k >= 1.0 && k.fract() == 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "top-k must be a positive integer, got {k}"
                    )));
                }
                log::info!("ablation: top-k {k}");
                let aggregator = AggregatorConfig {
                    top_k: k as usize,
                    ..config.aggregator.clone()
                };
                rows.push(grid_row(bundle, &rules, &aggregator, &config.eval, sweep, k)?);
            }
        }
    }
    Ok(rows)
}
