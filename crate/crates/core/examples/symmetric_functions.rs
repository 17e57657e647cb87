//! Speed function, its gradient and the classical inequalities at one
//! principal curvature vector.
//!
//! ```text
//! cargo run --example symmetric_functions -- 0.5 1.0 2.0
//! ```

use hmflow::symfun::{
    check_maclaurin, check_trace_bound, elem_sym_normalized, sigma, sigma_grad,
    sigma_hessian_operator_norm, CurvatureVector, FlowParams,
};

fn main() -> hmflow::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("curvatures must be numbers"))
        .collect();
    let kappa = CurvatureVector::new(if args.is_empty() { vec![0.5, 1.0, 2.0] } else { args })?;
    let n = kappa.dim();
    println!("kappa = {:?}", kappa.as_slice());
    println!("K / H^n = {:.6} (umbilic value {:.6})", kappa.pinching_quotient(), 1.0 / (n as f64).powi(n as i32));

    for m in 1..=n {
        let hm = elem_sym_normalized(&kappa, m)?;
        let mac = check_maclaurin(&kappa, m)?;
        println!("H_{m} = {hm:.6}   Maclaurin slack {:.3e}", mac.slack);
    }

    for (m, beta) in [(1, 2.0), (n, 1.0), (n.min(2), 1.5)] {
        let p = FlowParams::new(n, m, beta)?;
        let s = sigma(&kappa, &p)?;
        let g = sigma_grad(&kappa, &p)?;
        let trace = check_trace_bound(&kappa, &p)?;
        let hess = sigma_hessian_operator_norm(&kappa, &p)?;
        println!(
            "m={m} beta={beta}: sigma {s:.6}, grad {g:.4?}, trace slack {:.3e}, |D^2 sigma| {hess:.4}",
            trace.slack
        );
    }
    Ok(())
}
