use airhold_core::centrality::edge_features_indexed;
use airhold_core::features::{build_matrix, NetworkFeatures};
use airhold_core::gbdt::{train_traced, Task};
use airhold_core::ingest::{parse_records, stratified_split, synth_generate};
use airhold_core::{Execution, FeatureRegistry, FlightMultigraph, TrainConfig, WeightedDigraph};

// Both modes reduce in index order, so results must agree bit for bit.
#[test]
fn sequential_and_parallel_agree() {
    let data = synth_generate(5, 3000, 60, 15).unwrap();
    let g = FlightMultigraph::from_records(&data.records).unwrap().collapse();
    let seq = edge_features_indexed(&g, Execution::Sequential).unwrap();
    let par = edge_features_indexed(&g, Execution::Parallel).unwrap();
    assert_eq!(seq, par);

    let network = NetworkFeatures::from_training(&data.records).unwrap();
    let x = build_matrix(&network.attach(&data.records), &FeatureRegistry::standard()).unwrap();
    let cfg = TrainConfig { rounds: 15, ..TrainConfig::default() };
    let a = train_traced(&x, Task::Classification, &cfg, Execution::Sequential).unwrap();
    let b = train_traced(&x, Task::Classification, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a.model.to_json(), b.model.to_json());
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn csv_and_graph_round_trips() {
    let data = synth_generate(9, 800, 40, 10).unwrap();
    let back = parse_records(&data.to_csv()[..]).unwrap();
    assert_eq!(back.records, data.records);

    let (train, test) = stratified_split(&data, 0.25, 9).unwrap();
    assert_eq!(train.len() + test.len(), data.len());
    let pos = |d: &airhold_core::Dataset| d.records.iter().filter(|r| r.holding).count();
    assert_eq!(pos(&test), 10);

    let g = FlightMultigraph::from_records(&train.records).unwrap().collapse();
    let again = WeightedDigraph::from_json(&g.to_json()).unwrap();
    assert_eq!(again.weights(), g.weights());
    assert_eq!(again.total_weight(), train.len() as u64);
}
