//! Check the evolution equation of the speed on an evolving ellipsoid and
//! watch the residual shrink at second order under grid refinement.
//!
//! ```text
//! cargo run --release --example speed_evolution_check
//! ```

use hmflow::flow::{reaction_trace, select_dt, step, verify_speed_evolution, FlowState, StepOptions};
use hmflow::geometry::RadialProfile;
use hmflow::FlowParams;

fn main() -> hmflow::Result<()> {
    let p = FlowParams::new(2, 1, 2.0)?;
    let opts = StepOptions::default();
    let t_probe = 0.01;
    let mut previous: Option<f64> = None;
    println!("{:>6} {:>12} {:>12} {:>8}", "N", "dt", "max resid", "ratio");
    for cells in [64, 128, 256, 512] {
        let mut s = FlowState::new(RadialProfile::ellipsoid(2, cells, 1.1, 1.0)?, p, 0.0)?;
        while s.t() < t_probe {
            let dt = select_dt(&s, 0.2).min(t_probe - s.t());
            s = step(&s, dt, &opts)?;
        }
        let dt = select_dt(&s, 0.2);
        let next = step(&s, dt, &opts)?;
        let res = verify_speed_evolution(&s, &next, true)?;
        let ratio = previous.map_or(String::from("-"), |prev| format!("{:.3}", prev / res.max_abs));
        println!("{cells:>6} {dt:>12.3e} {:>12.3e} {ratio:>8}", res.max_abs);
        previous = Some(res.max_abs);
        if cells == 512 {
            let reaction = reaction_trace(&s);
            println!("reaction trace at the equator {:.6}", reaction[cells / 2]);
        }
    }
    Ok(())
}
