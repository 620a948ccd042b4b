//! Halves a video's frame rate, restores it with kernel interpolation and
//! compares event-based reconstructions with and without it.

use dashnet::eval::rmse_psnr;
use dashnet::event_sim::{reconstruct_at, simulate, SimConfig};
use dashnet::interp::{default_kernel, interpolate_sequence, train_kernel_from, InterpKernel, Triplet};
use dashnet::synth::SynthSpec;
use dashnet::Frame;

fn reconstruct(reference: &[Frame], factor: usize, kernel: &InterpKernel) -> dashnet::Result<(f64, f64)> {
    let kept: Vec<Frame> = reference.iter().step_by(2).cloned().collect();
    let frames = interpolate_sequence(&kept, factor, kernel)?;
    let base = SimConfig::default();
    let sim = SimConfig {
        m: (base.dt_f_ns / (frames[1].t_ns - frames[0].t_ns)) as u32,
        ..base
    };
    let bundle = simulate(&frames, &sim)?;
    let rec: Vec<Frame> = reference
        .iter()
        .map(|r| reconstruct_at(&reference[0], &bundle.dvs, sim.theta, r.t_ns))
        .collect();
    rmse_psnr(&rec, reference)
}

fn main() -> dashnet::Result<()> {
    let spec = SynthSpec {
        frames: 33,
        velocity: [1.0, 0.5],
        ..SynthSpec::default()
    };
    let reference = spec.render()?.frames;

    // fit a kernel on (prev, middle, next) triplets of a different clip
    let train = SynthSpec {
        velocity: [-0.75, 0.75],
        ..spec.clone()
    }
    .render()?
    .frames;
    let triplets: Vec<Triplet> = train
        .windows(3)
        .map(|w| (w[0].clone(), w[1].clone(), w[2].clone()))
        .collect();
    // start from a uniform 3x3 box so the fit has something to learn
    let (kernel, losses) = train_kernel_from(&triplets, InterpKernel::uniform(1), 0.5, 200)?;
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let (_, blend) = train_kernel_from(&triplets, default_kernel(1), 0.05, 0)?;
    println!(
        "kernel fit: L1 per frame {:.3} -> {best:.3} (linear blend {:.3})",
        losses[0], blend[0]
    );

    for (name, factor, k) in [
        ("no interpolation", 0, default_kernel(1)),
        ("linear blend", 1, default_kernel(1)),
        ("fitted kernel", 1, kernel),
    ] {
        let (rmse, psnr) = reconstruct(&reference, factor, &k)?;
        println!("{name:>16}: RMSE {rmse:.4}, PSNR {psnr:.2} dB");
    }
    Ok(())
}
