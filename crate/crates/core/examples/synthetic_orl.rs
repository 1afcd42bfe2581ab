//! Write a synthetic dataset in the ORL layout (`s<N>/<M>.pgm`, 92×112).
//!
//! ```text
//! cargo run --release --example synthetic_orl -- <out_dir> [seed]
//! ```

use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: synthetic_orl <out_dir> [seed]")?);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    scn::data::synth_dataset_sized(40, 10, 112, 92, seed).write_orl(&out)?;
    println!("wrote 40 subjects × 10 images to {}", out.display());
    Ok(())
}
