//! Blends a fast, noisy estimate stream with sparse accurate anchors using
//! the temporal complementary filter.

use dashnet::fusion::{fuse, nearest_ann, tcf_weight, Source, TcfConfig, TrackEstimate};
use dashnet::BBox;

fn main() -> dashnet::Result<()> {
    for d in [0.0, 0.5, 3f64.ln(), 2.0, 5.0] {
        println!("D = {d:.3}: spiking weight {:.4}", tcf_weight(d));
    }

    let cfg = TcfConfig {
        kappa_ns: 20e6,
        causal: true,
    };
    let truth = |t: u64| BBox::new(0.2 + 0.5 * t as f64 / 1e9, 0.5, 0.2, 0.2);
    let anchors: Vec<TrackEstimate> = (0..=10)
        .map(|k| TrackEstimate::new(truth(k * 100_000_000), k * 100_000_000, Source::Ann))
        .collect();
    for t in (0..=200_000_000u64).step_by(25_000_000).skip(1) {
        // a biased spiking estimate
        let mut b = truth(t);
        b.x += 0.03;
        let snn = TrackEstimate::new(b, t, Source::Snn);
        let (anchor, d) = nearest_ann(t, &anchors, &cfg)?;
        let fused = fuse(&snn, anchor, d);
        println!(
            "t = {:>3} ms: anchor {:>3} ms, D = {d:6.2}, x error {:.4}",
            t / 1_000_000,
            anchor.t_ns / 1_000_000,
            fused.bbox.x - truth(t).x
        );
    }
    Ok(())
}
