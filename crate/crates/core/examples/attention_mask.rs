//! Builds the Gaussian attention mask around a prior box and prints it as
//! ASCII shades; writes it as a PGM when given a path.

use dashnet::attention::{build_mask, AttentionConfig};
use dashnet::io::{encode_pgm_values, write_bytes};
use dashnet::BBox;

fn main() -> dashnet::Result<()> {
    let (w, h) = (32, 24);
    let prior = BBox::new(0.4, 0.5, 0.25, 0.3);
    let mask = build_mask(&prior, w, h, &AttentionConfig::default());
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| shades[((mask.get(x, y) * 9.0).round() as usize).min(9)])
            .collect();
        println!("|{row}|");
    }
    if let Some(path) = std::env::args().nth(1) {
        write_bytes(path.as_ref(), &encode_pgm_values(w, h, &mask.data))?;
        println!("wrote {path}");
    }
    Ok(())
}
