//! Draw a phantom and print its label map as ASCII, plus PGM previews.
//!
//! cargo run --example phantom -- [seed] [out_dir]

use std::collections::BTreeSet;
use std::path::PathBuf;

use pat_recon::field::GridSpec;
use pat_recon::metrics::export_pgm;
use pat_recon::phantom::{generate_phantom, region_values};

fn main() -> pat_recon::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let grid = GridSpec::square(64, 1e-4)?;
    let sample = generate_phantom(grid, seed, &BTreeSet::new())?;
    let glyphs = b".123456";
    for row in sample.labels.chunks(grid.nx()).step_by(2) {
        let line: String = row.iter().map(|&l| glyphs[l as usize] as char).collect();
        println!("{line}");
    }
    for region in 1..=6u8 {
        let (p, c) = region_values(region)?;
        let n = sample.labels.iter().filter(|&&l| l == region).count();
        println!("region {region}: p0 = {p:.1}, c = {c:>6.0} m/s, {n:>4} pixels");
    }
    export_pgm(&sample.p0, 0.0, 1.0, &out.join("phantom_p0.pgm"))?;
    export_pgm(&sample.c, 1480.0, 3198.0, &out.join("phantom_c.pgm"))?;
    println!("previews in {}", out.display());
    Ok(())
}
