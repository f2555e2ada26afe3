//! Round-trip a field through the PATF container and render it with two
//! display windows.

use pat_recon::field::{GridSpec, ScalarField2D};
use pat_recon::metrics::window_bytes;
use pat_recon::patf;

fn main() -> pat_recon::Result<()> {
    let grid = GridSpec::new(6, 4, 1e-4)?;
    let c = ScalarField2D::from_fn(grid, |j, i| 1480.0 + 100.0 * (i + 6 * j) as f64)?;
    let bytes = patf::encode_field(&c)?;
    println!("{} bytes, header {:?}", bytes.len(), &bytes[..4]);
    let back = patf::decode_field(&bytes, grid.dx())?;
    println!("bit-exact round trip: {}", back == c);
    for (lo, hi) in [(1480.0, 3198.0), (1480.0, 1550.0)] {
        println!("window [{lo}, {hi}]:");
        for row in window_bytes(c.values(), lo, hi)?.chunks(grid.nx()) {
            println!("  {row:>4?}");
        }
    }
    Ok(())
}
