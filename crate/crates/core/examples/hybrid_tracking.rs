//! Trains a small model set, tracks held-out scenes with the fused pipeline
//! and prints the ablation table. Pass a seed as the first argument.

use std::time::Instant;

use dashnet::bench::BenchConfig;
use dashnet::eval::ABLATION_COLUMNS;
use dashnet::optim::TrainConfig;
use dashnet::tracker::run;

fn main() -> dashnet::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let base = BenchConfig::default();
    // a reduced budget; BenchConfig::default() is the full-size run
    let bench = BenchConfig {
        train_scenes: 8,
        test_scenes: 3,
        ann_images: 600,
        snn_train: TrainConfig {
            epochs: 6,
            ..base.snn_train
        },
        ann_train: TrainConfig {
            epochs: 10,
            ..base.ann_train
        },
        ..base
    };
    let start = Instant::now();
    let (models, summary) = bench.train(&bench.train_scenes(seed)?, seed)?;
    println!("trained in {:.1?}: {summary:?}", start.elapsed());

    let test = bench.test_scenes(seed)?;
    let out = run(&test[0].bundle, &models.snn, &models.ann_at, &bench.pipeline)?;
    println!(
        "scene 0: {} frame outputs, {} spiking outputs, {} fused",
        out.ann.len(),
        out.snn.len(),
        out.fused.len()
    );
    for f in out.fused.iter().take(10) {
        let b = f.bbox;
        println!(
            "  t = {:>5.1} ms  [{:.3} {:.3} {:.3} {:.3}]",
            f.t_ns as f64 / 1e6,
            b.x,
            b.y,
            b.w,
            b.h
        );
    }

    let scores = bench.evaluate(&models, &test)?.scores(0.5, 0.1);
    println!("{:>26} {:>6} {:>6} {:>6} {:>6}", "", "mIOU", "AUC", "RB", "n");
    for (name, s) in ABLATION_COLUMNS.iter().zip(scores) {
        match s {
            Some(s) => println!("{name:>26} {:6.3} {:6.3} {:6.3} {:6}", s.miou, s.auc, s.rb, s.samples),
            None => println!("{name:>26} {:>6}", "n/a"),
        }
    }
    Ok(())
}
