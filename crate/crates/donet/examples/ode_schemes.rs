//! Integrate the damped system `dx/dt = -lambda x + rho(lambda) f(x, t)`
//! with the two first-order schemes the crate implements — plain damped
//! Euler and the exponential (integrating-factor) step — and measure what
//! separates them: exactness on constant fields, convergence order, the
//! integral-form residual, and the step-size stability frontier.
//!
//! ```text
//! cargo run --example ode_schemes
//! ```

use donet::ode::{
    convergence_order, convergence_study, euler_stability_probe, integrate_damped_euler,
    integrate_exponential, integrate_rk4, interpolation_limit_check, verify_closed_form,
    DampedOdeSpec, Dynamics, EulerVariant, RhoKind, Scheme,
};
use std::sync::Arc;

fn main() -> donet::Result<()> {
    // A gently rotating, contracting planar field.
    let field: Dynamics = Arc::new(|x: &[f64], _t: f64| vec![x[1] + 0.5, -x[0] - 0.5 * x[1] - 0.25]);
    let spec = DampedOdeSpec::new(0.8, RhoKind::One, field.clone(), vec![1.0, -0.5], 4.0, 400)?;

    // -- Terminal states against a much finer RK4 oracle --------------------
    let oracle = integrate_rk4(&spec.with_steps(40_000))?;
    let expo = integrate_exponential(&spec)?;
    let euler = integrate_damped_euler(&spec, EulerVariant::RhoOne)?;
    let gap = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0f64, f64::max)
    };
    println!("terminal state at t = {} (dt = {}):", spec.horizon, spec.dt());
    println!("  rk4 oracle   {:?}", oracle.last());
    println!("  exponential  {:?}  (gap {:.3e})", expo.last(), gap(expo.last(), oracle.last()));
    println!("  damped euler {:?}  (gap {:.3e})", euler.last(), gap(euler.last(), oracle.last()));

    // -- Constant fields: the exponential step is exact ----------------------
    // One coarse step already lands on the closed form
    // x(t) = e^{-lambda t} x0 + rho phi(t) c, because the scheme integrates
    // the decay factor analytically.
    let c = vec![0.3, -0.8];
    let constant: Dynamics = Arc::new(move |_x: &[f64], _t: f64| c.clone());
    let coarse = DampedOdeSpec::new(0.8, RhoKind::One, constant, vec![1.0, -0.5], 4.0, 2)?;
    let end = integrate_exponential(&coarse)?;
    let lam = coarse.lambda;
    let phi = (1.0 - (-lam * 4.0).exp()) / lam;
    let exact = [
        (-lam * 4.0f64).exp() * 1.0 + phi * 0.3,
        (-lam * 4.0f64).exp() * -0.5 + phi * -0.8,
    ];
    println!(
        "\nconstant field, two giant steps: gap to closed form {:.3e}",
        gap(end.last(), &exact)
    );

    // -- Integral-form residual ----------------------------------------------
    // The exact solution satisfies
    //   e^{lambda t} x(t) - x0 = rho * integral of e^{lambda s} f(x(s), s) ds,
    // so along a near-exact (fine RK4) trajectory the trapezoid residual
    // should vanish; along the first-order exponential trajectory it is
    // dominated by that scheme's own O(dt) error.
    let fine = spec.with_steps(100_000);
    let residual = verify_closed_form(&fine, &integrate_rk4(&fine)?)?;
    println!("integral-form residual, rk4 trajectory over {} steps: {:.3e}", fine.steps, residual);
    let residual = verify_closed_form(&fine, &integrate_exponential(&fine)?)?;
    println!("same residual along the exponential trajectory:     {residual:.3e}");

    // -- Interpolation limits -------------------------------------------------
    // lambda -> 0 turns one exponential step into the residual update
    // x + f(x); lambda -> inf with weight lambda+1 turns it into plain f(x).
    let (res_gap, nonres_gap) = interpolation_limit_check(&field, &[1.0, -0.5], 1.0)?;
    println!("\nlimit gaps: residual {res_gap:.3e}, non-residual {nonres_gap:.3e}");

    // -- Convergence ------------------------------------------------------------
    let counts = [100, 200, 400, 800, 1600];
    println!("\nglobal error at the horizon vs dt:");
    println!("  {:>10} {:>14} {:>14}", "dt", "euler", "exponential");
    let eul = convergence_study(&spec, Scheme::Euler(EulerVariant::RhoOne), &counts, 100)?;
    let exp = convergence_study(&spec, Scheme::Exponential, &counts, 100)?;
    for (a, b) in eul.iter().zip(&exp) {
        println!("  {:>10.5} {:>14.3e} {:>14.3e}", a.dt, a.error, b.error);
    }
    println!(
        "  fitted order: euler {:.3}, exponential {:.3}",
        convergence_order(&eul),
        convergence_order(&exp)
    );

    // -- Stability frontier of the plain Euler factor ----------------------------
    // On dx/dt = -lambda x the update multiplies by (1 - lambda dt) each
    // step, which decays only while lambda dt < 2.
    println!("\nforward-Euler decay probe on dx/dt = -lambda x:");
    for lam_dt in [0.5, 1.0, 1.9, 2.0, 2.1, 2.5] {
        let verdict = euler_stability_probe(lam_dt, 1.0, 400);
        println!("  lambda*dt = {lam_dt:<4} -> {verdict:?}");
    }
    Ok(())
}
