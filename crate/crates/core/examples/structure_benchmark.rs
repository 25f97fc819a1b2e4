//! Trains on synthetic clustered-vs-dispersed graphs and reports test
//! accuracy per seed.
//!
//!     cargo run --release --example structure_benchmark -- [seeds] [per_class]

use std::time::Instant;

use histograph::synth::{generate_samples, SynthClass, SynthConfig};
use histograph::train::{evaluate_graphs, train_graphs, TrainConfig};

fn main() -> histograph::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let per_class: usize = args.next().map_or(100, |s| s.parse().expect("per-class count"));
    let names: Vec<String> = SynthClass::ALL.iter().map(|c| c.name().to_string()).collect();
    for seed in 0..seeds {
        let t = Instant::now();
        let (graphs, is_train) = generate_samples(&SynthConfig::default(), per_class, 0.75, seed)?;
        let (train, test): (Vec<_>, Vec<_>) = graphs.into_iter().zip(is_train).partition(|(_, t)| *t);
        let train: Vec<_> = train.into_iter().map(|(g, _)| g).collect();
        let test: Vec<_> = test.into_iter().map(|(g, _)| g).collect();
        let cfg = TrainConfig { seed, ..Default::default() };
        let out = train_graphs(&train, &names, &cfg)?;
        let last = out.log.last().expect("at least one epoch");
        let report = evaluate_graphs(&test, &out.checkpoint)?;
        println!(
            "seed {seed}: epochs {} train loss {:.4} acc {:.3} | test acc {:.3} loss {:.4} ({:.1?})",
            out.log.len(),
            last.loss,
            last.accuracy,
            report.accuracy,
            report.loss,
            t.elapsed()
        );
    }
    Ok(())
}
