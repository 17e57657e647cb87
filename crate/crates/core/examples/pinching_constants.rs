//! Pinching constants for a few exponents.
//!
//! ```text
//! cargo run --release --example pinching_constants
//! ```

use hmflow::constants::{compute_c_p, SamplingConfig};
use hmflow::FlowParams;

fn main() -> hmflow::Result<()> {
    let sampling = SamplingConfig::default();
    for (n, m, beta) in [(2, 1, 2.0), (2, 2, 1.0), (3, 2, 1.5), (3, 3, 0.5)] {
        let p = FlowParams::new(n, m, beta)?;
        let report = compute_c_p(&p, &sampling)?;
        println!("# n = {n}, m = {m}, beta = {beta}");
        println!("{report}");
        println!("upper bound 1/n^n = {}\n", 1.0 / (n as f64).powi(n as i32));
    }
    Ok(())
}
