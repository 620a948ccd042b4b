//! Trains the frame network with and without attention channels on random
//! scene snapshots and compares held-out IOU.

use dashnet::ann::{ann_train, AnnNetwork, AnnSample};
use dashnet::bench::BenchConfig;
use dashnet::dataset::{ann_attention_samples, ann_samples};
use dashnet::eval::iou;
use dashnet::optim::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean_iou(net: &AnnNetwork, samples: &[AnnSample]) -> dashnet::Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += iou(&net.predict(&s.input)?, &s.target);
    }
    Ok(total / samples.len() as f64)
}

fn main() -> dashnet::Result<()> {
    let bench = BenchConfig {
        ann_images: 600,
        ..BenchConfig::default()
    };
    let (frames, gt) = bench.ann_images(1)?;
    let (train_f, test_f) = frames.split_at(500);
    let att = &bench.pipeline.attention;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = TrainConfig {
        epochs: 8,
        seed: 1,
        ..bench.ann_train
    };

    for attention in [false, true] {
        let (train, test) = if attention {
            (
                ann_attention_samples(train_f, &gt, att, bench.cold_start_rate, &mut rng)?,
                ann_attention_samples(test_f, &gt, att, 0.0, &mut rng)?,
            )
        } else {
            (ann_samples(train_f, &gt)?, ann_samples(test_f, &gt)?)
        };
        let net = AnnNetwork::init(&bench.ann_spec(attention), 1)?;
        let (net, losses) = ann_train(net, &train, &cfg)?;
        println!(
            "attention {attention:5}: loss {:.4} -> {:.4}, held-out mIOU {:.3}",
            losses[0],
            losses[losses.len() - 1],
            mean_iou(&net, &test)?
        );
    }
    Ok(())
}
