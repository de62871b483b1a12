//! Train on the default toy world and print the before/after picture.
//!
//! `cargo run --release -p coda-core --example toy_pipeline -- [lambda] [lr]`

use coda_core::diagnostics::{report, LabeledPointSet, MetricSpace};
use coda_core::toy::{evaluate, synth, ToyWorld};
use coda_core::{train, KernelSpec, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map_or(1.0, |s| s.parse().expect("lambda"));
    let lr: f64 = args.next().map_or(1e-4, |s| s.parse().expect("lr"));

    let world = ToyWorld::new(0);
    let data = synth(&world, 512, 512, 0).expect("synth");
    let config = TrainConfig {
        lambda,
        lr,
        ..Default::default()
    };
    let (params, history) = train(&data.source, &data.target, &config).expect("train");
    for r in &history.records {
        println!("{},{},{},{}", r.epoch, r.reason, r.mmd2, r.total);
    }
    println!("# stop={} steps={}", history.stop.as_str(), history.steps);

    let alpha = 1.5;
    let (zero_shot, adapted) =
        evaluate(&world, &params, &data.target, &data.target_labels, alpha).expect("evaluate");
    println!("zero_shot_acc={zero_shot} adapted_acc={adapted}");

    let hs = data.source.raw().values();
    let ht = data.target.raw().values();
    let before = LabeledPointSet::from_domains(hs, ht).unwrap();
    let after = LabeledPointSet::from_domains(
        &params.steer(hs, alpha).unwrap(),
        &params.steer(ht, alpha).unwrap(),
    )
    .unwrap();
    let (b, a) = report(&before, &after, 10, &KernelSpec::median_heuristic(), MetricSpace::Raw).unwrap();
    println!("before silhouette={} mixing={} mmd2={}", b.silhouette, b.mixing_pct, b.mmd2);
    println!("after  silhouette={} mixing={} mmd2={}", a.silhouette, a.mixing_pct, a.mmd2);
}
