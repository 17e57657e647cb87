//! Without the averaging term a sphere shrinks by `R' = -R^{-m beta}`. Compare
//! the full discrete flow on a sphere, the scalar ODE and the closed form.
//!
//! ```text
//! cargo run --release --example contracting_sphere
//! ```

use hmflow::flow::{contracting_sphere_radius, sphere_extinction_time, sphere_ode, step, FlowState, StepOptions};
use hmflow::geometry::RadialProfile;
use hmflow::FlowParams;

fn main() -> hmflow::Result<()> {
    let p = FlowParams::new(2, 1, 2.0)?;
    println!("extinction time {:.6}", sphere_extinction_time(&p, 1.0));

    let dt = 1e-5;
    let rows = sphere_ode(&p, 1.0, 0.3, dt, 5_000)?;
    let opts = StepOptions { volume_preserving: false, project_to_volume: None };
    let mut state = FlowState::new(RadialProfile::sphere(2, 32, 1.0)?, p, 0.0)?;

    println!("{:>6} {:>14} {:>14} {:>14} {:>10}", "t", "surface", "ode", "exact", "rel gap");
    for row in &rows {
        while state.t() < row.t - 0.5 * dt {
            state = step(&state, dt, &opts)?;
        }
        let surface = state.profile().radii()[16];
        println!(
            "{:>6.3} {surface:>14.10} {:>14.10} {:>14.10} {:>10.2e}",
            row.t, row.numeric, row.exact, row.relative_gap()
        );
    }
    let exact = contracting_sphere_radius(&p, 1.0, 0.2);
    println!("closed form at t = 0.2: {exact:.6} = 0.4^(1/3)");
    Ok(())
}
