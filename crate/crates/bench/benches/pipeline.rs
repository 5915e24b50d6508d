use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kgc::engine::apply_rules;
use kgc::kg::{Query, QueryDirection};
use kgc::rankers::{Aggregator, AggregatorConfig, AggregatorInput, MessageGraph, NbfConfig, NbfRanker};
use kgc::rig::{build_rig, top_ground_rules};
use kgc::rules::score_rule;
use kgc::synthetic::{generate, SyntheticConfig};
use kgc::{mine, ApplyOptions, Budget, DatasetBundle, MinerConfig, RuleInstantiationGraph, RuleSet};

fn setup() -> (DatasetBundle, RuleSet) {
    let bundle = generate(&SyntheticConfig {
        entities: 400,
        chains: 300,
        decoy_chains: 200,
        noise_triples: 600,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let rules = mine(
        &bundle.train_graph.train,
        &MinerConfig {
            max_len: 3,
            budget: Budget::Iterations(5000),
            ..MinerConfig::default()
        },
    )
    .unwrap();
    (bundle, rules)
}

fn queries(bundle: &DatasetBundle) -> Vec<Query> {
    bundle
        .test_graph
        .test
        .triples()
        .iter()
        .map(|&t| Query::from_triple(t, QueryDirection::Tail).0)
        .collect()
}

fn rigs(bundle: &DatasetBundle, rules: &RuleSet) -> Vec<RuleInstantiationGraph> {
    let kg = &bundle.test_graph.train;
    let mut out = Vec::new();
    for q in queries(bundle) {
        let p = apply_rules(kg, rules, &q, &ApplyOptions::default()).unwrap();
        for ev in &p.a_q {
            out.push(build_rig(&top_ground_rules(ev, 5), q.anchor, ev.candidate, bundle.num_relations()).unwrap());
        }
    }
    out
}

fn benches(c: &mut Criterion) {
    let (bundle, rules) = setup();
    let kg = &bundle.test_graph.train;
    let qs = queries(&bundle);

    c.bench_function("score_rule", |b| {
        let train = &bundle.train_graph.train;
        let entries: Vec<_> = rules.iter().map(|(_, e)| e.rule.clone()).collect();
        b.iter(|| {
            for r in &entries {
                black_box(score_rule(train, r, 5.0, 100_000));
            }
        })
    });

    c.bench_function("apply_rules", |b| {
        b.iter(|| {
            for q in &qs {
                black_box(apply_rules(kg, &rules, q, &ApplyOptions::default()).unwrap());
            }
        })
    });

    let graphs = rigs(&bundle, &rules);
    for config in [AggregatorConfig::rgcn(), AggregatorConfig::compgcn()] {
        let name = format!("aggregator_forward/{}", config.arch.name());
        let model = Aggregator::new(config, bundle.num_relations()).unwrap();
        let inputs: Vec<AggregatorInput<'_>> = graphs
            .iter()
            .map(|rig| AggregatorInput { rig, query_relation: 0 })
            .collect();
        c.bench_function(&name, |b| b.iter(|| black_box(model.score(&inputs).unwrap())));
    }

    let nbf = NbfRanker::new(NbfConfig::default(), bundle.num_relations()).unwrap();
    let graph = MessageGraph::new(kg);
    c.bench_function("nbf_forward", |b| {
        b.iter(|| black_box(nbf.score_all(&graph, &qs[0], None).unwrap()))
    });
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(pipeline);
