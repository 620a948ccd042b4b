//! Trains the spiking box regressor on event windows from random scenes and
//! reports per-layer firing rates before and after calibration.

use dashnet::bench::BenchConfig;
use dashnet::dataset::snn_samples;
use dashnet::optim::TrainConfig;
use dashnet::snn::{calibration_inputs, snn_train, SnnNetwork, SpikeTensor, CALIBRATION_INPUTS};

fn rates(net: &SnnNetwork, inputs: &[&SpikeTensor]) -> dashnet::Result<Vec<f64>> {
    let mut spikes = Vec::new();
    let mut slots = Vec::new();
    for x in inputs {
        let (_, act) = net.forward_with_activity(x)?;
        let spiking = act.iter().filter(|a| a.spiking);
        spikes.resize(spiking.clone().count(), 0.0);
        slots.resize(spikes.len(), 0.0);
        for (i, a) in spiking.enumerate() {
            spikes[i] += a.output_spikes as f64;
            slots[i] += a.neuron_steps as f64;
        }
    }
    Ok(spikes.iter().zip(&slots).map(|(s, n)| s / n).collect())
}

fn main() -> dashnet::Result<()> {
    let bench = BenchConfig::default();
    let mut data = Vec::new();
    for scene in bench.train_scenes(1)?.iter().take(8) {
        let steps = bench.snn_spec().time_steps;
        data.extend(snn_samples(&scene.bundle, &scene.gt, &bench.pipeline, steps)?);
    }
    println!("{} training windows", data.len());

    let mut net = SnnNetwork::init(&bench.snn_spec(), 1)?;
    let probe = calibration_inputs(&data, CALIBRATION_INPUTS);
    println!("firing rates at init: {:.3?}", rates(&net, &probe)?);
    let after = net.calibrate(&probe, &bench.snn_rates)?;
    println!("after calibration:    {after:.3?}");
    assert_eq!(after, rates(&net, &probe)?);

    let cfg = TrainConfig {
        epochs: 4,
        seed: 1,
        ..bench.snn_train
    };
    let (_, losses) = snn_train(net, &data, &cfg)?;
    for (e, l) in losses.iter().enumerate() {
        println!("epoch {}: loss {l:.4}", e + 1);
    }
    Ok(())
}
