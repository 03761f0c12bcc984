//! Integrators for the damped ODE `dx/dt = -lambda x + rho(lambda) f(x, t)`.
//!
//! Three schemes are provided: the exponential-integrator step that the
//! interpolation blocks discretize, two damped forward-Euler variants (one
//! per weight function), and a classic Runge-Kutta reference used purely as
//! an independent oracle. A closed-form residual check and the degenerate
//! limits of the exponential step round out the lab.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::check::log_log_slope;
use crate::error::{Error, Result};

/// Right-hand side `f(x, t)` of the undamped dynamics.
pub type Dynamics = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// Weight function `rho(lambda)`: must tend to 1 as `lambda -> 0+` and grow
/// like `lambda` as `lambda -> +inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoKind {
    /// `rho(lambda) = 1`.
    One,
    /// `rho(lambda) = lambda + 1`.
    LambdaPlusOne,
}

impl RhoKind {
    pub fn value(self, lambda: f64) -> f64 {
        match self {
            RhoKind::One => 1.0,
            RhoKind::LambdaPlusOne => lambda + 1.0,
        }
    }
}

/// A damped initial-value problem together with its discretization.
#[derive(Clone)]
pub struct DampedOdeSpec {
    pub lambda: f64,
    pub rho: RhoKind,
    pub dynamics: Dynamics,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
}

impl DampedOdeSpec {
    pub fn new(
        lambda: f64,
        rho: RhoKind,
        dynamics: Dynamics,
        x0: Vec<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(horizon > 0.0) || steps == 0 || x0.is_empty() {
            return Err(Error::invalid("need horizon > 0, steps >= 1 and a nonempty state"));
        }
        Ok(DampedOdeSpec { lambda, rho, dynamics, x0, horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Same problem under a different step count.
    pub fn with_steps(&self, steps: usize) -> Self {
        let mut s = self.clone();
        s.steps = steps;
        s
    }
}

/// Time grid and states of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// CSV with header `t,x0,x1,...`; floats use the shortest round-trip form.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let dim = self.states[0].len();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        writeln!(f, "t,{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// First-order damped Euler flavors, named after the weight function each
/// one discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerVariant {
    /// `x_{n+1} = (1 - lambda dt) x_n + dt f_n(x_n)` (weight 1).
    RhoOne,
    /// `x_{n+1} = (1 - lambda dt) x_n + (1 + lambda dt) f_n(x_n)` (weight lambda+1).
    RhoLambdaPlusOne,
}

/// `(1 - e^{-z}) / lambda` with a 4-term series once `z = lambda dt` drops
/// below the switch point, so the coefficient stays smooth near lambda = 0.
pub const PHI_SERIES_SWITCH: f64 = 1e-6;

pub fn phi_decay(lambda: f64, dt: f64) -> f64 {
    let z = lambda * dt;
    if z < PHI_SERIES_SWITCH {
        dt * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0)
    } else {
        (1.0 - (-z).exp()) / lambda
    }
}

fn finite_or(step: usize, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteDynamics { step })
    }
}

/// Exponential-integrator scheme:
/// `x_{n+1} = e^{-lambda dt} x_n + phi(lambda, dt) rho(lambda) f_n(x_n)`.
pub fn integrate_exponential(spec: &DampedOdeSpec) -> Result<Trajectory> {
    let dt = spec.dt();
    let decay = (-spec.lambda * dt).exp();
    let gain = phi_decay(spec.lambda, dt) * spec.rho.value(spec.lambda);
    integrate_one_step(spec, move |x, fx, _dt| {
        x.iter().zip(fx).map(|(&xi, &fi)| decay * xi + gain * fi).collect()
    })
}

/// Damped forward Euler in either variant.
pub fn integrate_damped_euler(spec: &DampedOdeSpec, variant: EulerVariant) -> Result<Trajectory> {
    let dt = spec.dt();
    let keep = 1.0 - spec.lambda * dt;
    let gain = match variant {
        EulerVariant::RhoOne => dt,
        EulerVariant::RhoLambdaPlusOne => 1.0 + spec.lambda * dt,
    };
    integrate_one_step(spec, move |x, fx, _dt| {
        x.iter().zip(fx).map(|(&xi, &fi)| keep * xi + gain * fi).collect()
    })
}

fn integrate_one_step(
    spec: &DampedOdeSpec,
    step: impl Fn(&[f64], &[f64], f64) -> Vec<f64>,
) -> Result<Trajectory> {
    let dt = spec.dt();
    let mut times = Vec::with_capacity(spec.steps + 1);
    let mut states = Vec::with_capacity(spec.steps + 1);
    times.push(0.0);
    states.push(spec.x0.clone());
    let mut x = spec.x0.clone();
    for n in 0..spec.steps {
        let t = n as f64 * dt;
        let fx = (spec.dynamics)(&x, t);
        finite_or(n, &fx)?;
        x = step(&x, &fx, dt);
        finite_or(n, &x)?;
        times.push((n + 1) as f64 * dt);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Classic fourth-order Runge-Kutta on the full damped right-hand side.
/// Used as the independent reference; it never shares a code path with the
/// schemes above beyond the `DampedOdeSpec` plumbing.
pub fn integrate_rk4(spec: &DampedOdeSpec) -> Result<Trajectory> {
    let dt = spec.dt();
    let lambda = spec.lambda;
    let rho = spec.rho.value(lambda);
    let rhs = |x: &[f64], t: f64| -> Vec<f64> {
        let fx = (spec.dynamics)(x, t);
        x.iter().zip(&fx).map(|(&xi, &fi)| -lambda * xi + rho * fi).collect()
    };
    let mut times = Vec::with_capacity(spec.steps + 1);
    let mut states = Vec::with_capacity(spec.steps + 1);
    times.push(0.0);
    states.push(spec.x0.clone());
    let mut x = spec.x0.clone();
    for n in 0..spec.steps {
        let t = n as f64 * dt;
        let k1 = rhs(&x, t);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(&xi, &k)| xi + 0.5 * dt * k).collect();
        let k2 = rhs(&x2, t + 0.5 * dt);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(&xi, &k)| xi + 0.5 * dt * k).collect();
        let k3 = rhs(&x3, t + 0.5 * dt);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(&xi, &k)| xi + dt * k).collect();
        let k4 = rhs(&x4, t + dt);
        x = (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        finite_or(n, &x)?;
        times.push((n + 1) as f64 * dt);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Residual of the closed-form solution along a trajectory:
/// `|| e^{lambda T} x(T) - x0 - rho(lambda) * I ||_inf` where `I` is the
/// trapezoid approximation of `int_0^T e^{lambda t} f(x(t), t) dt`.
pub fn verify_closed_form(spec: &DampedOdeSpec, traj: &Trajectory) -> Result<f64> {
    if traj.states.len() < 2 {
        return Err(Error::invalid("need at least two states to integrate"));
    }
    let dim = spec.x0.len();
    let rho = spec.rho.value(spec.lambda);
    let mut integral = vec![0.0; dim];
    let mut prev: Option<Vec<f64>> = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let weight = (spec.lambda * t).exp();
        let fx = (spec.dynamics)(x, *t);
        let term: Vec<f64> = fx.iter().map(|&fi| weight * fi).collect();
        if let Some(p) = prev.replace(term.clone()) {
            let dt = traj.times[1] - traj.times[0];
            for i in 0..dim {
                integral[i] += 0.5 * dt * (p[i] + term[i]);
            }
        }
    }
    let t_end = *traj.times.last().expect("nonempty");
    let lead = (spec.lambda * t_end).exp();
    let mut worst = 0.0f64;
    for i in 0..dim {
        let r = lead * traj.last()[i] - spec.x0[i] - rho * integral[i];
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Gaps of the exponential step at its two interpolation limits (dt = 1).
///
/// Returns `(residual_gap, nonresidual_gap)`: the first compares one step at
/// `lambda = 1e-9` against `x + f(x)`, maximized over both weight functions;
/// the second compares one step at `lambda = 1e6` with weight `lambda + 1`
/// against `f(x)`.
pub fn interpolation_limit_check(
    dynamics: &Dynamics,
    x: &[f64],
    dt: f64,
) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::invalid("empty state"));
    }
    let one_step = |lambda: f64, rho: RhoKind| -> Result<Vec<f64>> {
        let spec = DampedOdeSpec::new(lambda, rho, dynamics.clone(), x.to_vec(), dt, 1)?;
        Ok(integrate_exponential(&spec)?.last().to_vec())
    };
    let fx = dynamics(x, 0.0);
    let mut res_gap = 0.0f64;
    for rho in [RhoKind::One, RhoKind::LambdaPlusOne] {
        let step = one_step(1e-9, rho)?;
        for i in 0..x.len() {
            res_gap = res_gap.max((step[i] - (x[i] + fx[i])).abs());
        }
    }
    let step = one_step(1e6, RhoKind::LambdaPlusOne)?;
    let mut nonres_gap = 0.0f64;
    for i in 0..x.len() {
        nonres_gap = nonres_gap.max((step[i] - fx[i]).abs());
    }
    Ok((res_gap, nonres_gap))
}

/// Outcome of the scalar forward-Euler probe on `dx/dt = -lambda x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVerdict {
    Decays,
    Diverges,
    Boundary,
}

/// March `x_{n+1} = (1 - lambda dt) x_n` from `x0 = 1` and compare `|x_N|`
/// with 1. Plain forward Euler decays exactly for `lambda dt` in (0, 2).
pub fn euler_stability_probe(lambda: f64, dt: f64, steps: usize) -> ProbeVerdict {
    let factor = 1.0 - lambda * dt;
    let mut x = 1.0f64;
    for _ in 0..steps {
        x *= factor;
    }
    let mag = x.abs();
    if mag < 1.0 {
        ProbeVerdict::Decays
    } else if mag > 1.0 {
        ProbeVerdict::Diverges
    } else {
        ProbeVerdict::Boundary
    }
}

/// Which scheme a convergence study drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Exponential,
    Euler(EulerVariant),
}

/// One `(dt, error)` sample of a convergence study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub error: f64,
}

/// Global error at the horizon against an RK4 oracle with `refine`-times
/// finer steps, for each requested step count.
pub fn convergence_study(
    spec: &DampedOdeSpec,
    scheme: Scheme,
    step_counts: &[usize],
    refine: usize,
) -> Result<Vec<ConvergencePoint>> {
    if refine < 2 {
        return Err(Error::invalid("oracle refinement must be at least 2"));
    }
    let mut out = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let coarse = spec.with_steps(n);
        let end = match scheme {
            Scheme::Exponential => integrate_exponential(&coarse)?,
            Scheme::Euler(v) => integrate_damped_euler(&coarse, v)?,
        };
        let oracle = integrate_rk4(&spec.with_steps(n * refine))?;
        let err = end
            .last()
            .iter()
            .zip(oracle.last())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        out.push(ConvergencePoint { dt: coarse.dt(), error: err });
    }
    Ok(out)
}

/// Fit the convergence order from study points.
pub fn convergence_order(points: &[ConvergencePoint]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.dt, p.error.max(1e-300))).collect();
    log_log_slope(&pts)
}

/// CSV with header `dt,error`.
pub fn convergence_to_csv(points: &[ConvergencePoint], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "dt,error")?;
    for p in points {
        writeln!(f, "{},{}", p.dt, p.error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_field(c: Vec<f64>) -> Dynamics {
        Arc::new(move |_x: &[f64], _t: f64| c.clone())
    }

    fn linear_field() -> Dynamics {
        // f(x) = A x with A = [[0, 1], [-1, -0.5]].
        Arc::new(|x: &[f64], _t: f64| vec![x[1], -x[0] - 0.5 * x[1]])
    }

    #[test]
    fn exponential_scheme_is_exact_for_constant_f() {
        // For constant f the scheme equals the closed form at every step:
        // x(t) = e^{-lambda t} x0 + (1 - e^{-lambda t})/lambda * rho * c.
        let lambda = 0.8;
        let c = 1.3;
        let spec = DampedOdeSpec::new(
            lambda,
            RhoKind::One,
            constant_field(vec![c]),
            vec![2.0],
            5.0,
            7, // deliberately coarse: exactness must not depend on dt
        )
        .unwrap();
        let traj = integrate_exponential(&spec).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let want = (-lambda * t).exp() * 2.0 + (1.0 - (-lambda * t).exp()) / lambda * c;
            assert!((x[0] - want).abs() < 1e-10, "t={t}: {} vs {want}", x[0]);
        }
    }

    #[test]
    fn phi_series_branch_is_continuous_at_the_switch() {
        // Evaluate both branch formulas at the switch point z = 1e-6 with
        // lambda = 1 so the exact branch's cancellation noise (~2^-53 / lambda)
        // stays far below the tolerance.
        let (lambda, dt) = (1.0, PHI_SERIES_SWITCH);
        let z = lambda * dt;
        let series = dt * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0);
        let exact = (1.0 - (-z).exp()) / lambda;
        assert!((series - exact).abs() < 1e-12, "branch gap {:.3e}", series - exact);
        // Crossing the switch from either side moves phi smoothly.
        let below = phi_decay(lambda, dt * (1.0 - 1e-9));
        let above = phi_decay(lambda, dt * (1.0 + 1e-9));
        assert!((below - above).abs() < 1e-12);
        // And phi -> dt as lambda -> 0.
        assert!((phi_decay(0.0, 0.125) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn constant_f_converges_to_the_analytic_fixed_point() {
        let (lambda, c) = (0.8, 1.3);
        let spec = DampedOdeSpec::new(
            lambda,
            RhoKind::One,
            constant_field(vec![c]),
            vec![5.0],
            200.0,
            2_000,
        )
        .unwrap();
        let traj = integrate_exponential(&spec).unwrap();
        assert!((traj.last()[0] - c / lambda).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_reduces_to_plain_forward_euler() {
        let field = linear_field();
        let spec = DampedOdeSpec::new(0.0, RhoKind::One, field.clone(), vec![1.0, -0.5], 1.0, 4)
            .unwrap();
        let dt = spec.dt();
        let exp = integrate_exponential(&spec).unwrap();
        let net1 = integrate_damped_euler(&spec, EulerVariant::RhoOne).unwrap();
        let mut x = vec![1.0, -0.5];
        for n in 0..4 {
            let fx = field(&x, n as f64 * dt);
            x = x.iter().zip(&fx).map(|(&xi, &fi)| xi + dt * fi).collect();
            for i in 0..2 {
                assert_eq!(net1.states[n + 1][i], x[i]);
                assert!((exp.states[n + 1][i] - x[i]).abs() < 1e-12);
            }
        }
        // The second variant's f-gain is 1 + lambda*dt; at lambda = 0 it is a
        // unit-step forward Euler, i.e. it matches Eq.-1 Euler only at dt = 1.
        let unit = DampedOdeSpec::new(0.0, RhoKind::LambdaPlusOne, field.clone(), vec![1.0, -0.5], 4.0, 4)
            .unwrap();
        let net2 = integrate_damped_euler(&unit, EulerVariant::RhoLambdaPlusOne).unwrap();
        let f0 = field(&[1.0, -0.5], 0.0);
        assert_eq!(net2.states[1], vec![1.0 + f0[0], -0.5 + f0[1]]);
    }

    #[test]
    fn terminal_state_matches_fine_rk4_on_a_linear_system() {
        // f(x) = Ax + b with the scheme at N = 1e4 against RK4 at N = 1e6.
        let field: Dynamics =
            Arc::new(|x: &[f64], _t| vec![0.02 * x[1] + 0.01, -0.02 * x[0] - 0.01 * x[1] - 0.02]);
        let spec =
            DampedOdeSpec::new(0.7, RhoKind::One, field, vec![1.0, 0.0], 1.0, 10_000).unwrap();
        let got = integrate_exponential(&spec).unwrap();
        let oracle = integrate_rk4(&spec.with_steps(1_000_000)).unwrap();
        for i in 0..2 {
            let gap = (got.last()[i] - oracle.last()[i]).abs();
            assert!(gap < 1e-6, "component {i} gap {gap:.3e}");
        }
    }

    #[test]
    fn euler_variants_implement_their_update_rules() {
        let spec = DampedOdeSpec::new(
            0.5,
            RhoKind::One,
            constant_field(vec![2.0]),
            vec![1.0],
            0.1,
            1,
        )
        .unwrap();
        let net1 = integrate_damped_euler(&spec, EulerVariant::RhoOne).unwrap();
        // (1 - 0.05) * 1 + 0.1 * 2 = 1.15
        assert!((net1.last()[0] - 1.15).abs() < 1e-15);
        let net2 = integrate_damped_euler(&spec, EulerVariant::RhoLambdaPlusOne).unwrap();
        // (1 - 0.05) * 1 + (1 + 0.05) * 2 = 3.05
        assert!((net2.last()[0] - 3.05).abs() < 1e-15);
    }

    #[test]
    fn closed_form_residual_shrinks_with_resolution() {
        let spec = DampedOdeSpec::new(0.7, RhoKind::One, linear_field(), vec![1.0, 0.0], 1.0, 1_000)
            .unwrap();
        let coarse = verify_closed_form(&spec, &integrate_rk4(&spec).unwrap()).unwrap();
        let fine_spec = spec.with_steps(100_000);
        let fine = verify_closed_form(&fine_spec, &integrate_rk4(&fine_spec).unwrap()).unwrap();
        assert!(fine < coarse);
        assert!(fine < 1e-6, "fine-grid residual {fine:.3e}");
    }

    #[test]
    fn limits_recover_residual_and_nonresidual_steps() {
        let x = [0.3, -0.6];
        let (res_gap, nonres_gap) = interpolation_limit_check(&linear_field(), &x, 1.0).unwrap();
        assert!(res_gap < 1e-6, "residual-limit gap {res_gap:.3e}");
        assert!(nonres_gap < 1e-3, "non-residual-limit gap {nonres_gap:.3e}");
    }

    #[test]
    fn probe_matches_the_classic_stability_window() {
        assert_eq!(euler_stability_probe(0.5, 1.0, 100), ProbeVerdict::Decays);
        assert_eq!(euler_stability_probe(1.9, 1.0, 100), ProbeVerdict::Decays);
        assert_eq!(euler_stability_probe(2.0, 1.0, 101), ProbeVerdict::Boundary);
        assert_eq!(euler_stability_probe(2.5, 1.0, 100), ProbeVerdict::Diverges);
        assert_eq!(euler_stability_probe(0.0, 1.0, 100), ProbeVerdict::Boundary);
    }

    #[test]
    fn nan_in_dynamics_reports_the_step() {
        let field: Dynamics = Arc::new(|x: &[f64], _t| {
            vec![if x[0] > 10.0 { f64::NAN } else { x[0] * 3.0 }]
        });
        let spec = DampedOdeSpec::new(0.0, RhoKind::One, field, vec![1.0], 10.0, 10).unwrap();
        match integrate_damped_euler(&spec, EulerVariant::RhoOne) {
            Err(Error::NonFiniteDynamics { step }) => assert!(step > 0),
            other => panic!("expected NaN error, got {:?}", other.map(|t| t.states.len())),
        }
    }

    #[test]
    fn euler_and_exponential_schemes_are_first_order_on_nonlinear_f() {
        let field: Dynamics = Arc::new(|x: &[f64], _t| vec![(x[0]).sin(), -x[0] * x[1]]);
        let spec =
            DampedOdeSpec::new(0.3, RhoKind::One, field, vec![0.9, 0.4], 1.0, 10).unwrap();
        let counts = [100usize, 200, 400, 800];
        for scheme in [Scheme::Euler(EulerVariant::RhoOne), Scheme::Exponential] {
            let pts = convergence_study(&spec, scheme, &counts, 100).unwrap();
            let slope = convergence_order(&pts);
            assert!((slope - 1.0).abs() < 0.1, "slope {slope} for {scheme:?}");
        }
    }

    #[test]
    fn second_variant_approximates_the_exponential_step_at_unit_dt() {
        // The rho = lambda + 1 update keeps a unit f-gain, so it discretizes
        // the damped flow only in the unit-step regime; there its one-step gap
        // to the exponential scheme shrinks linearly in lambda.
        let field = linear_field();
        let x0 = vec![0.7, -0.3];
        let gap = |lambda: f64| -> f64 {
            let spec =
                DampedOdeSpec::new(lambda, RhoKind::LambdaPlusOne, field.clone(), x0.clone(), 1.0, 1)
                    .unwrap();
            let a = integrate_damped_euler(&spec, EulerVariant::RhoLambdaPlusOne).unwrap();
            let b = integrate_exponential(&spec).unwrap();
            a.last()
                .iter()
                .zip(b.last())
                .map(|(&u, &v)| (u - v).abs())
                .fold(0.0f64, f64::max)
        };
        let (g1, g2, g3) = (gap(0.1), gap(0.01), gap(0.001));
        assert!(g3 < g2 && g2 < g1);
        let ratio = g2 / g1;
        assert!((0.05..0.2).contains(&ratio), "gap ratio {ratio}");
    }

    #[test]
    fn rho_kind_boundary_values() {
        assert_eq!(RhoKind::One.value(3.0), 1.0);
        assert_eq!(RhoKind::LambdaPlusOne.value(0.0), 1.0);
        assert_eq!(RhoKind::LambdaPlusOne.value(2.5), 3.5);
        // Weight-function boundary behavior at both ends.
        for rho in [RhoKind::One, RhoKind::LambdaPlusOne] {
            assert!((rho.value(1e-7) - 1.0).abs() < 1e-6);
        }
        assert!((RhoKind::LambdaPlusOne.value(1e6) / 1e6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn scaled_field_limit_hits_the_doubled_state() {
        let field: Dynamics = Arc::new(|x: &[f64], _t| x.iter().map(|&v| 2.0 * v).collect());
        let x = [1.0, -1.0];
        let spec =
            DampedOdeSpec::new(1e6, RhoKind::LambdaPlusOne, field, x.to_vec(), 1.0, 1).unwrap();
        let out = integrate_exponential(&spec).unwrap();
        assert!((out.last()[0] - 2.0).abs() < 1e-3);
        assert!((out.last()[1] - -2.0).abs() < 1e-3);
    }

    #[test]
    fn homogeneous_problem_has_vanishing_closed_form_residual() {
        let spec = DampedOdeSpec::new(
            1.2,
            RhoKind::One,
            constant_field(vec![0.0, 0.0]),
            vec![3.0, -1.0],
            2.0,
            50,
        )
        .unwrap();
        let traj = integrate_exponential(&spec).unwrap();
        let r = verify_closed_form(&spec, &traj).unwrap();
        assert!(r < 1e-10, "residual {r:.3e}");
    }

    #[test]
    fn csv_exports_round_trip_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 2.0], vec![0.25, -0.125]],
        };
        let p = dir.path().join("traj.csv");
        traj.to_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x0,x1");
        assert_eq!(lines.next().unwrap(), "0,1,2");
        assert_eq!(lines.next().unwrap(), "0.5,0.25,-0.125");

        let pts = vec![ConvergencePoint { dt: 0.1, error: 1e-3 }];
        let p2 = dir.path().join("conv.csv");
        convergence_to_csv(&pts, &p2).unwrap();
        let text = std::fs::read_to_string(&p2).unwrap();
        assert_eq!(text, "dt,error\n0.1,0.001\n");
    }
}
