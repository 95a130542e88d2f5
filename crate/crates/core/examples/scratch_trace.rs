use std::time::Instant;

use bmvr::baseline::{BaselineClassifier, BaselineConfig};
use bmvr::synth::synthetic_traversal;

fn main() {
    let trav = synthetic_traversal(100, 2024);
    for lr in [0.01f64, 0.02, 0.03] {
        for neurons in [4usize, 8] {
            let mut worst = 0usize;
            let mut accs = Vec::new();
            let t0 = Instant::now();
            for seed in 0..6u64 {
                let cfg = BaselineConfig {
                    neurons,
                    places: 100,
                    dropout: 0.75,
                    epochs: 50,
                    learning_rate: lr,
                    seed,
                };
                let mut model = BaselineClassifier::init(cfg).unwrap();
                let hist = model.train(trav.frames()).unwrap();
                worst = worst.max(hist.epochs_run);
                accs.push(hist.train_accuracy);
            }
            eprintln!(
                "lr={lr} a={neurons}: accs={accs:?} worst_epochs={worst} total={:.1}s",
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
