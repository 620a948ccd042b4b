//! Renders a moving square, converts it to a DAVIS bundle and checks that
//! the events reconstruct the final frame.

use dashnet::event_sim::{reconstruct_at, simulate, SimConfig};
use dashnet::synth::SynthSpec;

fn main() -> dashnet::Result<()> {
    let sim = SimConfig::default();
    let spec = SynthSpec {
        frames: 4 * sim.m as usize + 1,
        frame_interval_ns: sim.sub_interval_ns(),
        ..SynthSpec::default()
    };
    let video = spec.render()?;
    let bundle = simulate(&video.frames, &sim)?;
    let on = bundle.dvs.iter().filter(|e| e.p > 0).count();
    println!(
        "{} frames -> {} APS frames, {} events ({} on, {} off)",
        video.frames.len(),
        bundle.aps.len(),
        bundle.dvs.len(),
        on,
        bundle.dvs.len() - on
    );

    let last = video.frames.last().expect("rendered frames");
    let rec = reconstruct_at(&video.frames[0], &bundle.dvs, sim.theta, u64::MAX);
    let worst = rec
        .data()
        .iter()
        .zip(last.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max reconstruction error {worst:.4} (theta {})", sim.theta);
    Ok(())
}
