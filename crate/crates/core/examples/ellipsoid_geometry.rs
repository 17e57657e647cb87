//! Discrete geometry of an ellipsoid of revolution: curvatures, area, volume,
//! radii and the Alexandrov-Fenchel excess, with grid refinement.
//!
//! ```text
//! cargo run --release --example ellipsoid_geometry -- 1.5 1.0
//! ```

use hmflow::geometry::{
    alexandrov_fenchel_residual, area, curvatures, pinching_ratio_check, radii, volume,
    unit_ball_volume, RadialProfile,
};
use hmflow::FlowParams;

fn main() -> hmflow::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (a, b) = (args.first().copied().unwrap_or(1.5), args.get(1).copied().unwrap_or(1.0));
    let p = FlowParams::new(2, 1, 2.0)?;
    // exact volume of the solid ellipsoid with semi-axes a, b, b
    let exact_volume = unit_ball_volume(3) * a * b * b;

    println!("ellipsoid a = {a}, b = {b}, exact volume {exact_volume:.12}");
    println!("{:>6} {:>14} {:>12} {:>10} {:>10} {:>10} {:>12}", "N", "area", "vol err", "q_min", "rho", "D", "AF excess");
    for cells in [32, 64, 128, 256, 512] {
        let prof = RadialProfile::ellipsoid(2, cells, a, b)?;
        let field = curvatures(&prof, &p)?;
        let q_min = field.q.iter().copied().fold(f64::INFINITY, f64::min);
        let r = radii(&prof);
        println!(
            "{cells:>6} {:>14.10} {:>12.3e} {q_min:>10.6} {:>10.6} {:>10.6} {:>12.6}",
            area(&prof),
            volume(&prof) - exact_volume,
            r.inradius,
            r.outer_radius,
            alexandrov_fenchel_residual(&prof)
        );
    }
    let field = curvatures(&RadialProfile::ellipsoid(2, 256, a, b)?, &p)?;
    let ratio = pinching_ratio_check(&field, f64::INFINITY);
    println!("largest principal curvature ratio {:.6} (a^2/b^2 = {:.6})", ratio.max_ratio, (a * a / (b * b)).max(b * b / (a * a)));
    Ok(())
}
