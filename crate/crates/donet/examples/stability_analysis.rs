//! Linearize a dynamical system at its equilibrium and watch how the
//! damping term moves its spectrum: every eigenvalue `nu` of the Jacobian
//! becomes `rho(lambda) nu - lambda`, so with weight 1 the whole spectrum
//! shifts left by exactly `lambda`, and any system can be stabilized by
//! damping hard enough.
//!
//! ```text
//! cargo run --example stability_analysis
//! ```

use donet::stability::{analyze, rho_stability_frontier, DynamicsHandle, Mat};
use donet::ode::RhoKind;
use num_complex::Complex64;

fn fmt_spectrum(s: &[(f64, f64)]) -> String {
    s.iter().map(|(re, im)| format!("{re:.4}{im:+.4}i")).collect::<Vec<_>>().join(", ")
}

fn main() -> donet::Result<()> {
    // -- Companion matrix of z^3 - 6z^2 + 11z - 6 = (z-1)(z-2)(z-3) ---------
    let m = Mat::companion(&[-6.0, 11.0, -6.0])?;
    let f = DynamicsHandle::linear(&m);
    let report = analyze(&f, &vec![0.0; 3], 0.5, RhoKind::One)?;
    println!("companion of a cubic with roots 1, 2, 3:");
    println!("  raw spectrum    {}", fmt_spectrum(&report.raw_spectrum));
    println!("  damped (l=0.5)  {}", fmt_spectrum(&report.damped_spectrum));
    println!(
        "  max Re: {:.4} -> {:.4} (shift is exactly lambda when rho = 1)",
        report.max_re_raw, report.max_re_damped
    );

    // -- A nonlinear planar field --------------------------------------------
    // f(x, y) = (y - x^3, -x - y): Newton lands on the origin, and the
    // Jacobian there has eigenvalues -1/2 +- i sqrt(3)/2 (already stable).
    let cubic = DynamicsHandle::new(2, |x: &[f64]| vec![x[1] - x[0].powi(3), -x[0] - x[1]]);
    let rep = analyze(&cubic, &[0.4, -0.2], 0.25, RhoKind::LambdaPlusOne)?;
    println!("\nplanar cubic field:");
    println!("  equilibrium     ({:.2e}, {:.2e})", rep.equilibrium[0], rep.equilibrium[1]);
    println!("  raw spectrum    {}", fmt_spectrum(&rep.raw_spectrum));
    println!("  damped (l=0.25, rho=l+1) {}", fmt_spectrum(&rep.damped_spectrum));
    println!("  stable: raw {} -> damped {}", rep.stable_raw, rep.stable_damped);

    // -- Stabilizing an unstable system by damping ----------------------------
    // A slowly expanding spiral: both eigenvalues have real part +0.25
    // (unstable). Sweep lambda with rho = 1 until the damped spectrum
    // crosses the axis.
    let spiral = Mat::from_rows(&[vec![0.3, 1.0], vec![-1.0, 0.2]])?;
    let g = DynamicsHandle::linear(&spiral);
    println!("\nexpanding spiral, spectrum shifted left as lambda grows:");
    for lambda in [0.0, 0.1, 0.2, 0.25, 0.3, 0.5] {
        let r = analyze(&g, &[0.0, 0.0], lambda, RhoKind::One)?;
        println!(
            "  lambda {lambda:<4} max Re {:+.4}  stable: {}",
            r.max_re_damped, r.stable_damped
        );
    }

    // -- The admissible-weight frontier ----------------------------------------
    // For one eigenvalue nu, damping with weight rho improves the real part
    // iff rho < 1 + lambda / Re(nu) (for Re(nu) > 0). At the frontier the
    // improvement vanishes.
    let nu = Complex64::new(2.0, 1.0);
    let lambda = 1.0;
    println!("\nweight frontier at nu = {nu}, lambda = {lambda}:");
    for rho in [1.0, 1.4, 1.5, 1.6] {
        let (bound, ok) = rho_stability_frontier(nu, lambda, rho)?;
        println!("  rho {rho:<4} bound {bound:.3}  improves real part: {ok}");
    }
    Ok(())
}
