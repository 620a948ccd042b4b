use dashnet::ann::{AnnNetwork, AnnSpec};
use dashnet::bench::BenchConfig;
use dashnet::fusion::TrackEstimate;
use dashnet::snn::{SnnNetwork, SnnSpec};
use dashnet::tracker::{run, PipelineConfig};

fn nets() -> (SnnNetwork, AnnNetwork) {
    let snn = SnnNetwork::init(&SnnSpec::desk_default(), 3).unwrap();
    let ann = AnnNetwork::init(&AnnSpec::desk_default(2), 4).unwrap();
    (snn, ann)
}

#[test]
fn outputs_do_not_depend_on_future_data() {
    let bench = BenchConfig::default();
    let scene = bench.scene(11).unwrap();
    let (snn, ann) = nets();
    let cfg = bench.pipeline;
    let full = run(&scene.bundle, &snn, &ann, &cfg).unwrap();
    let end = scene.bundle.aps.last().unwrap().t_ns;
    for cut in [end / 3, end / 2 + 7_000_000, end - 1] {
        let part = run(&scene.bundle.truncated(cut), &snn, &ann, &cfg).unwrap();
        // a tick after the cut may still see the truncated tail of events
        let upto = |t: &[TrackEstimate]| t.iter().filter(|e| e.t_ns <= cut).copied().collect::<Vec<_>>();
        assert!(!upto(&full.fused).is_empty());
        assert_eq!(upto(&part.fused), upto(&full.fused), "cut {cut}");
        assert_eq!(upto(&part.ann), upto(&full.ann));
        assert_eq!(upto(&part.snn), upto(&full.snn));
    }
}

#[test]
fn offline_fusion_keeps_frame_outputs() {
    let bench = BenchConfig::default();
    let scene = bench.scene(12).unwrap();
    let (snn, ann) = nets();
    let causal = run(&scene.bundle, &snn, &ann, &bench.pipeline).unwrap();
    let mut cfg: PipelineConfig = bench.pipeline;
    cfg.tcf.causal = false;
    let offline = run(&scene.bundle, &snn, &ann, &cfg).unwrap();
    assert_eq!(offline.ann, causal.ann);
    assert_eq!(offline.snn, causal.snn);
    assert_eq!(offline.fused.len(), offline.snn.len());
}

#[test]
fn repeated_runs_are_identical() {
    let bench = BenchConfig::default();
    let scene = bench.scene(13).unwrap();
    let (snn, ann) = nets();
    let a = run(&scene.bundle, &snn, &ann, &bench.pipeline).unwrap();
    let b = run(&scene.bundle, &snn, &ann, &bench.pipeline).unwrap();
    assert_eq!(a, b);
}
