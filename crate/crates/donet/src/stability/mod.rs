//! Equilibria, Jacobians, and spectra of autonomous dynamics, plus the way
//! damping reshapes them.
//!
//! The headline quantity is the damped spectrum: if `nu` ranges over the
//! eigenvalues of the Jacobian of `f` at an equilibrium, the damped system
//! `dx/dt = -lambda x + rho(lambda) f(x)` has eigenvalues
//! `nu_hat = rho(lambda) nu - lambda`, so damping translates (and, for the
//! growing weight function, stretches) the spectrum. A report bundles the
//! raw and damped views with strict stability verdicts.

pub mod eig;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::RhoKind;
use crate::tensor::{Graph, Tensor};

pub use eig::{eigenvalues, lu_solve, Mat, MAX_EIG_DIM};

/// Step used by all central finite differences in this module.
pub const FD_STEP: f64 = 1e-6;

type DynFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type GraphBuilder = Arc<dyn Fn(&mut Graph, &Tensor) -> Result<Tensor> + Send + Sync>;

/// An autonomous vector field `f(x)` of fixed dimension. When the field can
/// also be expressed on the tape (`builder` maps a `[1, dim]` leaf to a
/// `[1, dim]` output node), Jacobians come from reverse-mode sweeps instead
/// of finite differences.
#[derive(Clone)]
pub struct DynamicsHandle {
    dim: usize,
    f: DynFn,
    builder: Option<GraphBuilder>,
}

impl DynamicsHandle {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        DynamicsHandle { dim, f: Arc::new(f), builder: None }
    }

    pub fn with_builder(
        dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        builder: impl Fn(&mut Graph, &Tensor) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        DynamicsHandle { dim, f: Arc::new(f), builder: Some(Arc::new(builder)) }
    }

    /// The linear field `f(x) = A x`, with the tape route attached.
    pub fn linear(a: &Mat) -> Self {
        let dim = a.dim();
        let a_for_f = a.clone();
        let a_for_b = a.clone();
        DynamicsHandle::with_builder(
            dim,
            move |x: &[f64]| a_for_f.matvec(x),
            move |g: &mut Graph, x: &Tensor| {
                // Row-vector convention: y = x A^T gives y_i = sum_j A[i][j] x_j.
                let mut at = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        at[j * dim + i] = a_for_b.get(i, j);
                    }
                }
                let at = g.leaf(&Tensor::new(vec![dim, dim], at)?);
                g.matmul(x, &at)
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "state has dimension {}, field expects {}",
                x.len(),
                self.dim
            )));
        }
        let y = (self.f)(x);
        if y.len() != self.dim {
            return Err(Error::invalid(format!(
                "field returned dimension {}, expected {}",
                y.len(),
                self.dim
            )));
        }
        Ok(y)
    }

    pub fn has_tape(&self) -> bool {
        self.builder.is_some()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Damped Newton iteration for `f(x) = 0` starting at `x_init`. Jacobians are
/// central finite differences regardless of the tape route so the search has
/// no dependency on graph plumbing; the step is halved until the residual
/// drops (up to 30 halvings).
pub fn find_equilibrium(f: &DynamicsHandle, x_init: &[f64]) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 200;
    let mut x = x_init.to_vec();
    let mut fx = f.eval(&x)?;
    for _ in 0..MAX_ITERS {
        let res = inf_norm(&fx);
        if res < TOL {
            return Ok(x);
        }
        let j = jacobian_fd(f, &x)?;
        let delta = lu_solve(&j, &fx)?;
        let mut t = 1.0f64;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(&xi, &di)| xi - t * di).collect();
            let ftrial = f.eval(&trial)?;
            if ftrial.iter().all(|v| v.is_finite()) && inf_norm(&ftrial) < res {
                x = trial;
                fx = ftrial;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            return Err(Error::NewtonStalled { iters: MAX_ITERS, residual: res });
        }
    }
    Err(Error::NewtonStalled { iters: MAX_ITERS, residual: inf_norm(&fx) })
}

/// Jacobian of `f` at `x`: reverse-mode rows when the handle carries a tape
/// builder, otherwise central finite differences.
pub fn jacobian(f: &DynamicsHandle, x: &[f64]) -> Result<Mat> {
    let j = match &f.builder {
        Some(b) => jacobian_tape(f.dim, b, x)?,
        None => jacobian_fd(f, x)?,
    };
    for i in 0..j.dim() {
        for jj in 0..j.dim() {
            if !j.get(i, jj).is_finite() {
                return Err(Error::invalid("jacobian has non-finite entries"));
            }
        }
    }
    Ok(j)
}

/// Central-difference Jacobian, one column per coordinate.
pub fn jacobian_fd(f: &DynamicsHandle, x: &[f64]) -> Result<Mat> {
    let n = f.dim();
    let mut j = Mat::zeros(n);
    let mut xp = x.to_vec();
    for col in 0..n {
        let x0 = x[col];
        xp[col] = x0 + FD_STEP;
        let plus = f.eval(&xp)?;
        xp[col] = x0 - FD_STEP;
        let minus = f.eval(&xp)?;
        xp[col] = x0;
        for row in 0..n {
            j.set(row, col, (plus[row] - minus[row]) / (2.0 * FD_STEP));
        }
    }
    Ok(j)
}

fn jacobian_tape(dim: usize, builder: &GraphBuilder, x: &[f64]) -> Result<Mat> {
    let mut j = Mat::zeros(dim);
    for row in 0..dim {
        // One reverse sweep per output row: mask out y_row, reduce to a
        // scalar, and read the gradient at the input leaf.
        let mut g = Graph::new();
        let leaf = g.leaf(&Tensor::new(vec![1, dim], x.to_vec())?);
        let y = builder(&mut g, &leaf)?;
        if y.shape() != [1, dim] {
            return Err(Error::invalid("tape builder must produce a [1, dim] output"));
        }
        let mut mask = vec![0.0; dim];
        mask[row] = 1.0;
        let mask = g.leaf(&Tensor::new(vec![1, dim], mask)?);
        let picked = g.mul(&y, &mask)?;
        let root = g.sum(&picked)?;
        let grads = g.backward(&root)?;
        let row_grad = grads.wrt(&leaf)?;
        for col in 0..dim {
            j.set(row, col, row_grad[col]);
        }
    }
    Ok(j)
}

/// `{rho(lambda) nu - lambda}` over the eigenvalues of `j`, sorted by (Re, Im).
pub fn damped_spectrum(j: &Mat, lambda: f64, rho: RhoKind) -> Result<Vec<Complex64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let r = rho.value(lambda);
    let mut vals: Vec<Complex64> =
        eigenvalues(j)?.into_iter().map(|nu| nu * r - lambda).collect();
    vals.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(vals)
}

/// The largest admissible weight for one eigenvalue: damping with weight
/// `rho` improves the real part iff `Re(rho nu - lambda) < Re(nu)`, and the
/// algebraic frontier is `rho = 1 + lambda / Re(nu)`. Division flips the
/// inequality when `Re(nu) < 0`, so the verdict always comes from the
/// real-part comparison, never from the bound.
pub fn rho_stability_frontier(nu: Complex64, lambda: f64, rho: f64) -> Result<(f64, bool)> {
    if nu.re == 0.0 {
        return Err(Error::FrontierUndefined);
    }
    let bound = 1.0 + lambda / nu.re;
    let satisfied = rho * nu.re - lambda < nu.re;
    Ok((bound, satisfied))
}

/// Everything the analysis pipeline produces for one `(f, lambda, rho)`.
/// Complex values serialize as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lambda: f64,
    pub rho: RhoKind,
    pub equilibrium: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
    pub raw_spectrum: Vec<(f64, f64)>,
    pub damped_spectrum: Vec<(f64, f64)>,
    pub max_re_raw: f64,
    pub max_re_damped: f64,
    pub stable_raw: bool,
    pub stable_damped: bool,
}

fn max_re(spectrum: &[Complex64]) -> f64 {
    spectrum.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Full pipeline: equilibrium from `x_init`, Jacobian there, both spectra,
/// strict stability verdicts.
pub fn analyze(
    f: &DynamicsHandle,
    x_init: &[f64],
    lambda: f64,
    rho: RhoKind,
) -> Result<StabilityReport> {
    let equilibrium = find_equilibrium(f, x_init)?;
    let j = jacobian(f, &equilibrium)?;
    let raw = eigenvalues(&j)?;
    let damped = damped_spectrum(&j, lambda, rho)?;
    let max_re_raw = max_re(&raw);
    let max_re_damped = max_re(&damped);
    Ok(StabilityReport {
        lambda,
        rho,
        equilibrium,
        jacobian: j.rows(),
        raw_spectrum: raw.iter().map(|c| (c.re, c.im)).collect(),
        damped_spectrum: damped.iter().map(|c| (c.re, c.im)).collect(),
        max_re_raw,
        max_re_damped,
        stable_raw: max_re_raw < 0.0,
        stable_damped: max_re_damped < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate_rk4, DampedOdeSpec, Dynamics};
    use rand::Rng;
    use std::sync::Arc as StdArc;

    #[test]
    fn newton_finds_trivial_and_scalar_roots() {
        let f = DynamicsHandle::new(3, |x: &[f64]| x.iter().map(|&v| -v).collect());
        let x = find_equilibrium(&f, &[5.0, -2.0, 0.3]).unwrap();
        assert!(inf_norm(&x) < 1e-10);

        let g = DynamicsHandle::new(1, |x: &[f64]| vec![x[0] * x[0] - 4.0]);
        let x = find_equilibrium(&g, &[3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn newton_matches_a_grid_search_on_a_2d_field() {
        let field = |x: &[f64]| vec![x[1] - x[0].powi(3), -x[0] - x[1]];
        let f = DynamicsHandle::new(2, field);
        let newton = find_equilibrium(&f, &[0.4, -0.2]).unwrap();
        assert!(inf_norm(&f.eval(&newton).unwrap()) < 1e-10);
        // Coarse grid scan for the smallest residual, then confirm Newton
        // landed in the same basin (the origin).
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        let mut p = [0.0f64; 2];
        for i in -20..=20 {
            for j in -20..=20 {
                p[0] = i as f64 * 0.05;
                p[1] = j as f64 * 0.05;
                let r = inf_norm(&field(&p));
                if r < best.0 {
                    best = (r, p);
                }
            }
        }
        assert!((newton[0] - best.1[0]).abs() < 1e-3);
        assert!((newton[1] - best.1[1]).abs() < 1e-3);
    }

    #[test]
    fn jacobian_routes_agree_and_match_hand_derivatives() {
        // f(x) = (x0^2, x0 x1) at (1, 2) has Jacobian [[2, 0], [2, 1]].
        let f = DynamicsHandle::new(2, |x: &[f64]| vec![x[0] * x[0], x[0] * x[1]]);
        let j = jacobian(&f, &[1.0, 2.0]).unwrap();
        assert!((j.get(0, 0) - 2.0).abs() < 1e-6);
        assert!(j.get(0, 1).abs() < 1e-6);
        assert!((j.get(1, 0) - 2.0).abs() < 1e-6);
        assert!((j.get(1, 1) - 1.0).abs() < 1e-6);

        // Linear field: tape route is exact.
        let a = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let lin = DynamicsHandle::linear(&a);
        assert!(lin.has_tape());
        let jt = jacobian(&lin, &[0.3, -0.7]).unwrap();
        assert_eq!(jt.rows(), a.rows());

        // Tape vs finite differences on the same handle.
        let jf = jacobian_fd(&lin, &[0.3, -0.7]).unwrap();
        for i in 0..2 {
            for c in 0..2 {
                assert!((jt.get(i, c) - jf.get(i, c)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tape_and_fd_jacobians_agree_on_a_random_polynomial_field() {
        let dim = 5;
        let mut rng = crate::util::rng_from(crate::util::named_seed(11, "jac-poly"));
        let coeffs: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c1 = coeffs.clone();
        // f_i(x) = sum_j c[i][j] * x_j^2, smooth and tape-expressible.
        let f = DynamicsHandle::with_builder(
            dim,
            move |x: &[f64]| {
                (0..dim)
                    .map(|i| (0..dim).map(|j| c1[i * dim + j] * x[j] * x[j]).sum())
                    .collect()
            },
            move |g: &mut Graph, x: &Tensor| {
                let sq = g.mul(x, x)?;
                let mut ct = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        ct[j * dim + i] = coeffs[i * dim + j];
                    }
                }
                let ct = g.leaf(&Tensor::new(vec![dim, dim], ct)?);
                g.matmul(&sq, &ct)
            },
        );
        let x: Vec<f64> = (0..dim).map(|i| 0.2 + 0.1 * i as f64).collect();
        let jt = jacobian(&f, &x).unwrap();
        let jf = jacobian_fd(&f, &x).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                assert!(
                    (jt.get(i, j) - jf.get(i, j)).abs() < 1e-6,
                    "({i},{j}): {} vs {}",
                    jt.get(i, j),
                    jf.get(i, j)
                );
            }
        }
    }

    #[test]
    fn damped_spectrum_shifts_and_matches_direct_eigensolve() {
        // Diagonal J with eigenvalues {1, 2, 3}; lambda = 0.5, rho = 1 shifts
        // them to {0.5, 1.5, 2.5}.
        let j = Mat::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        let vals = damped_spectrum(&j, 0.5, RhoKind::One).unwrap();
        for (v, w) in vals.iter().zip([0.5, 1.5, 2.5]) {
            assert!((v.re - w).abs() < 1e-9 && v.im.abs() < 1e-12);
        }
        // lambda = 0 leaves the spectrum alone for both weight functions.
        for rho in [RhoKind::One, RhoKind::LambdaPlusOne] {
            let vals = damped_spectrum(&j, 0.0, rho).unwrap();
            for (v, w) in vals.iter().zip([1.0, 2.0, 3.0]) {
                assert!((v.re - w).abs() < 1e-9);
            }
        }
        // Random J: shifted formula vs direct eigensolve of rho J - lambda I.
        let mut rng = crate::util::rng_from(crate::util::named_seed(3, "damped-multiset"));
        for trial in 0..50 {
            let n = 2 + trial % 15;
            let mut m = Mat::zeros(n);
            for i in 0..n {
                for jj in 0..n {
                    m.set(i, jj, rng.gen_range(-1.5..1.5));
                }
            }
            let (lambda, rho) = (0.8, RhoKind::LambdaPlusOne);
            let shifted = damped_spectrum(&m, lambda, rho).unwrap();
            let direct = eigenvalues(&m.scaled_shift(rho.value(lambda), lambda)).unwrap();
            for (a, b) in shifted.iter().zip(&direct) {
                assert!((a - b).norm() < 1e-8, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn frontier_uses_the_real_part_comparison_as_ground_truth() {
        // Negative real part: the bound flips under division, the verdict
        // must not.
        let (bound, satisfied) =
            rho_stability_frontier(Complex64::new(-1.0, 0.0), 0.5, 1.0).unwrap();
        assert!((bound - 0.5).abs() < 1e-12);
        assert!(satisfied); // Re(1*(-1) - 0.5) = -1.5 < -1.
        // Positive real part, comfortable margin.
        let (bound, satisfied) =
            rho_stability_frontier(Complex64::new(2.0, 0.0), 1.0, 1.0).unwrap();
        assert!((bound - 1.5).abs() < 1e-12);
        assert!(satisfied); // Re(2 - 1) = 1 < 2.
        // lambda = 0 is the strict boundary: no improvement.
        let (bound, satisfied) =
            rho_stability_frontier(Complex64::new(1.0, 0.0), 0.0, 1.0).unwrap();
        assert!((bound - 1.0).abs() < 1e-12);
        assert!(!satisfied);
        // Purely imaginary eigenvalue is rejected.
        match rho_stability_frontier(Complex64::new(0.0, 2.0), 0.5, 1.0) {
            Err(Error::FrontierUndefined) => {}
            other => panic!("expected undefined frontier, got {other:?}"),
        }
    }

    #[test]
    fn reports_shift_exactly_and_stabilize_monotonically_for_unit_weight() {
        let a = Mat::from_rows(&[vec![0.3, 1.0], vec![-1.0, 0.1]]).unwrap();
        let f = DynamicsHandle::linear(&a);
        let mut last_stable = false;
        for lambda in [0.0, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0] {
            let rep = analyze(&f, &[0.2, -0.1], lambda, RhoKind::One).unwrap();
            assert!(
                (rep.max_re_damped - (rep.max_re_raw - lambda)).abs() < 1e-9,
                "lambda={lambda}"
            );
            // Once stable, increasing lambda must keep it stable.
            assert!(!last_stable || rep.stable_damped, "lost stability at lambda={lambda}");
            last_stable = rep.stable_damped;
            // Component-wise shift of the sorted spectra.
            for (raw, damped) in rep.raw_spectrum.iter().zip(&rep.damped_spectrum) {
                assert!((damped.0 - (raw.0 - lambda)).abs() < 1e-9);
                assert!((damped.1 - raw.1).abs() < 1e-9);
            }
        }
        assert!(last_stable, "largest lambda should stabilize this spectrum");
    }

    #[test]
    fn linear_trajectories_contract_iff_the_spectrum_says_so() {
        let cases = [
            (Mat::from_rows(&[vec![-0.3, 1.0], vec![-1.0, -0.3]]).unwrap(), true),
            (Mat::from_rows(&[vec![0.3, 1.0], vec![-1.0, 0.3]]).unwrap(), false),
        ];
        let mut rng = crate::util::rng_from(crate::util::named_seed(5, "contraction"));
        for (a, expect_contract) in cases {
            let rep =
                analyze(&DynamicsHandle::linear(&a), &[0.1, 0.1], 0.0, RhoKind::One).unwrap();
            assert_eq!(rep.stable_raw, expect_contract);
            let horizon = 50.0 / rep.max_re_raw.abs();
            let a2 = a.clone();
            let field: Dynamics = StdArc::new(move |x: &[f64], _t: f64| a2.matvec(x));
            let mut agree = 0;
            for _ in 0..100 {
                let x0: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.01..0.01)).collect();
                if inf_norm(&x0) == 0.0 {
                    continue;
                }
                let spec = DampedOdeSpec::new(
                    0.0,
                    RhoKind::One,
                    field.clone(),
                    x0.clone(),
                    horizon,
                    20_000,
                )
                .unwrap();
                let traj = integrate_rk4(&spec).unwrap();
                let contracted = inf_norm(traj.last()) < inf_norm(&x0);
                if contracted == expect_contract {
                    agree += 1;
                }
            }
            assert_eq!(agree, 100, "contraction verdicts disagree with spectrum");
        }
    }

    #[test]
    fn report_serializes_complex_values_as_pairs() {
        let a = Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let rep = analyze(&DynamicsHandle::linear(&a), &[0.3, 0.2], 0.25, RhoKind::One).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"raw_spectrum\":[[")); // [re, im] pairs
        let back: StabilityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.raw_spectrum, rep.raw_spectrum);
        assert!(!rep.stable_raw); // purely imaginary pair: max Re == 0, strict
        assert!(rep.stable_damped); // shifted left by 0.25
    }
}
