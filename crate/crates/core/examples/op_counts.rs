//! Counts additions and multiplications for the frame network and for the
//! spiking network at several input event densities.

use dashnet::ann::{AnnNetwork, AnnSpec};
use dashnet::eval::{ann_op_count, snn_op_count, OpReport};
use dashnet::snn::{SnnNetwork, SnnSpec, SpikeTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn print(name: &str, r: &OpReport) {
    println!("{name}");
    for l in &r.layers {
        let t = l.total();
        println!(
            "  {:<16} add {:>12.0}  mul {:>12.0}",
            l.label, t.additions, t.multiplications
        );
    }
    let t = r.total();
    println!(
        "  {:<16} add {:>12.0}  mul {:>12.0}",
        "total", t.additions, t.multiplications
    );
}

fn main() -> dashnet::Result<()> {
    let ann = AnnNetwork::init(&AnnSpec::desk_default(2), 0)?;
    print("frame network", &ann_op_count(&ann));

    let spec = SnnSpec::desk_default();
    let snn = SnnNetwork::init(&spec, 0)?;
    let shape = snn.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for density in [0.01, 0.05, 0.2] {
        let mut x = SpikeTensor::zeros(spec.time_steps, shape);
        for t in 0..spec.time_steps {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for xx in 0..shape.w {
                        if rng.random::<f64>() < density {
                            x.set(t, c, y, xx);
                        }
                    }
                }
            }
        }
        let r = snn_op_count(&snn, &[x])?;
        print(&format!("spiking network, input density {density}"), &r);
        let s = r.spiking_synaptic();
        println!(
            "  spiking synapses: {:.0} additions, {:.0} multiplications",
            s.additions, s.multiplications
        );
    }
    Ok(())
}
