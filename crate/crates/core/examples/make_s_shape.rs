//! Writes synthetic S-shape demonstrations as `train.csv` (4 demos) and
//! `test.csv` (3 demos).
//!
//! ```text
//! cargo run --example make_s_shape -- OUT_DIR [SEED]
//! ```

use std::path::PathBuf;

use cvf::dataset::write_demonstrations;
use cvf::synthetic::{s_shape_demos, SShapeParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    std::fs::create_dir_all(&dir)?;
    let demos = s_shape_demos(7, seed, &SShapeParams::default())?;
    write_demonstrations(&dir.join("train.csv"), &demos[..4])?;
    write_demonstrations(&dir.join("test.csv"), &demos[4..])?;
    println!("wrote {}", dir.display());
    Ok(())
}
