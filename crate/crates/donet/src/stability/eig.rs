//! Dense real matrices and their eigenvalues.
//!
//! The solver follows the classic real-Schur route: Householder reduction to
//! upper Hessenberg form, then implicit double-shift QR (the trailing 2-by-2
//! block supplies the shifts, with the usual ad hoc exceptional shift every
//! ten stalled sweeps). Only eigenvalues are computed; complex pairs are read
//! off the 2-by-2 diagonal blocks. Dimensions are desk scale, so a dense
//! direct method beats anything iterative on robustness.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest dimension the eigensolver accepts.
pub const MAX_EIG_DIM: usize = 128;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix rows must form a nonempty square"));
        }
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            a.extend_from_slice(r);
        }
        Ok(Mat { n, a })
    }

    /// Companion matrix of the monic polynomial
    /// `z^k + c[k-1] z^{k-1} + ... + c[1] z + c[0]`.
    pub fn companion(c: &[f64]) -> Result<Self> {
        let k = c.len();
        if k == 0 {
            return Err(Error::invalid("polynomial needs at least one coefficient"));
        }
        let mut m = Mat::zeros(k);
        for i in 1..k {
            m.set(i, i - 1, 1.0);
        }
        for i in 0..k {
            m.set(i, k - 1, -c[i]);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `rho * A - lambda * I`.
    pub fn scaled_shift(&self, rho: f64, lambda: f64) -> Mat {
        let mut m = self.clone();
        for v in &mut m.a {
            *v *= rho;
        }
        for i in 0..self.n {
            let d = m.get(i, i);
            m.set(i, i, d - lambda);
        }
        m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.a[i * self.n..(i + 1) * self.n].to_vec()).collect()
    }
}

/// Solve `A x = b` by partial-pivot LU. The condition diagnostic is the crude
/// ratio of extreme pivot magnitudes; it is only used to reject factorizations
/// that are singular for practical purposes.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::invalid("rhs length must match matrix dimension"));
    }
    let mut lu = a.a.clone();
    let mut x = b.to_vec();
    let mut piv_min = f64::INFINITY;
    let mut piv_max = 0.0f64;
    for col in 0..n {
        let mut p = col;
        for r in col + 1..n {
            if lu[r * n + col].abs() > lu[p * n + col].abs() {
                p = r;
            }
        }
        if p != col {
            for j in 0..n {
                lu.swap(col * n + j, p * n + j);
            }
            x.swap(col, p);
        }
        let pivot = lu[col * n + col];
        piv_min = piv_min.min(pivot.abs());
        piv_max = piv_max.max(pivot.abs());
        if pivot == 0.0 {
            return Err(Error::SingularJacobian { cond: f64::INFINITY });
        }
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            lu[r * n + col] = factor;
            for j in col + 1..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }
    let cond = piv_max / piv_min;
    if cond > 1e14 {
        return Err(Error::SingularJacobian { cond });
    }
    for col in (0..n).rev() {
        x[col] /= lu[col * n + col];
        for r in 0..col {
            x[r] -= lu[r * n + col] * x[col];
        }
    }
    Ok(x)
}

/// All eigenvalues of a dense real matrix, sorted by (Re, Im).
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    let n = m.dim();
    if n > MAX_EIG_DIM {
        return Err(Error::DimensionTooLarge { dim: n, max: MAX_EIG_DIM });
    }
    if m.a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut work = Hqr { n, h: m.a.clone() };
    work.hessenberg();
    let mut vals = work.qr_values()?;
    vals.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(vals)
}

struct Hqr {
    n: usize,
    h: Vec<f64>,
}

impl Hqr {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.h[i * self.n + j] = v;
    }

    /// Householder similarity reduction to upper Hessenberg form.
    fn hessenberg(&mut self) {
        let n = self.n;
        if n < 3 {
            return;
        }
        let high = n - 1;
        let mut ort = vec![0.0f64; n];
        for m in 1..high {
            let scale: f64 = (m..=high).map(|i| self.at(i, m - 1).abs()).sum();
            if scale == 0.0 {
                continue;
            }
            let mut hsum = 0.0;
            for i in (m..=high).rev() {
                ort[i] = self.at(i, m - 1) / scale;
                hsum += ort[i] * ort[i];
            }
            let mut g = hsum.sqrt();
            if ort[m] > 0.0 {
                g = -g;
            }
            let hh = hsum - ort[m] * g;
            ort[m] -= g;
            // Apply the reflector from the left, then from the right.
            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += ort[i] * self.at(i, j);
                }
                f /= hh;
                for i in m..=high {
                    let v = self.at(i, j) - f * ort[i];
                    self.set(i, j, v);
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += ort[j] * self.at(i, j);
                }
                f /= hh;
                for j in m..=high {
                    let v = self.at(i, j) - f * ort[j];
                    self.set(i, j, v);
                }
            }
            self.set(m, m - 1, scale * g);
        }
        // The reduction leaves rounding dust below the first subdiagonal.
        for i in 2..n {
            for j in 0..i - 1 {
                self.set(i, j, 0.0);
            }
        }
    }

    /// Implicit double-shift QR on the Hessenberg matrix; eigenvalues only.
    /// Ported from the classic dataflow-heavy formulation, hence the allow.
    #[allow(unused_assignments)]
    fn qr_values(&mut self) -> Result<Vec<Complex64>> {
        let nn = self.n as isize;
        let mut d = vec![0.0f64; self.n];
        let mut e = vec![0.0f64; self.n];
        if self.n == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        let eps = 2.0f64.powi(-52);
        let budget = 30 * self.n * self.n;
        let mut total_sweeps = 0usize;

        let low: isize = 0;
        let high: isize = nn - 1;
        let mut exshift = 0.0f64;
        let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
        let (mut x, mut y, mut w): (f64, f64, f64);
        (p, q, r, s, z) = (0.0, 0.0, 0.0, 0.0, 0.0);

        let mut norm = 0.0f64;
        for i in 0..self.n {
            let jlo = i.saturating_sub(1);
            for j in jlo..self.n {
                norm += self.at(i, j).abs();
            }
        }

        let mut n = high;
        let mut iter = 0usize;
        while n >= low {
            // Find a negligible subdiagonal entry to split at.
            let mut l = n;
            while l > low {
                s = self.at(l as usize - 1, l as usize - 1).abs()
                    + self.at(l as usize, l as usize).abs();
                if s == 0.0 {
                    s = norm;
                }
                if self.at(l as usize, l as usize - 1).abs() < eps * s {
                    break;
                }
                l -= 1;
            }
            if l == n {
                // One real root.
                let v = self.at(n as usize, n as usize) + exshift;
                self.set(n as usize, n as usize, v);
                d[n as usize] = v;
                e[n as usize] = 0.0;
                n -= 1;
                iter = 0;
            } else if l == n - 1 {
                // A 2x2 block: either two real roots or a conjugate pair.
                w = self.at(n as usize, n as usize - 1) * self.at(n as usize - 1, n as usize);
                p = (self.at(n as usize - 1, n as usize - 1) - self.at(n as usize, n as usize))
                    / 2.0;
                q = p * p + w;
                z = q.abs().sqrt();
                let vn = self.at(n as usize, n as usize) + exshift;
                self.set(n as usize, n as usize, vn);
                let vm = self.at(n as usize - 1, n as usize - 1) + exshift;
                self.set(n as usize - 1, n as usize - 1, vm);
                x = vn;
                if q >= 0.0 {
                    z = if p >= 0.0 { p + z } else { p - z };
                    d[n as usize - 1] = x + z;
                    d[n as usize] = if z != 0.0 { x - w / z } else { d[n as usize - 1] };
                    e[n as usize - 1] = 0.0;
                    e[n as usize] = 0.0;
                } else {
                    d[n as usize - 1] = x + p;
                    d[n as usize] = x + p;
                    e[n as usize - 1] = z;
                    e[n as usize] = -z;
                }
                n -= 2;
                iter = 0;
            } else {
                // No luck yet: run one double-shift sweep.
                x = self.at(n as usize, n as usize);
                y = 0.0;
                w = 0.0;
                if l < n {
                    y = self.at(n as usize - 1, n as usize - 1);
                    w = self.at(n as usize, n as usize - 1) * self.at(n as usize - 1, n as usize);
                }
                if iter == 10 || iter == 20 {
                    // Exceptional shift.
                    exshift += x;
                    for i in low..=n {
                        let v = self.at(i as usize, i as usize) - x;
                        self.set(i as usize, i as usize, v);
                    }
                    s = self.at(n as usize, n as usize - 1).abs()
                        + self.at(n as usize - 1, n as usize - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                iter += 1;
                total_sweeps += 1;
                if total_sweeps > budget {
                    return Err(Error::EigenNoConvergence { sweeps: total_sweeps });
                }
                // Look for two consecutive small subdiagonals.
                let mut m = n - 2;
                while m >= l {
                    z = self.at(m as usize, m as usize);
                    r = x - z;
                    s = y - z;
                    p = (r * s - w) / self.at(m as usize + 1, m as usize)
                        + self.at(m as usize, m as usize + 1);
                    q = self.at(m as usize + 1, m as usize + 1) - z - r - s;
                    r = self.at(m as usize + 2, m as usize + 1);
                    s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    if self.at(m as usize, m as usize - 1).abs() * (q.abs() + r.abs())
                        < eps
                            * (p.abs()
                                * (self.at(m as usize - 1, m as usize - 1).abs()
                                    + z.abs()
                                    + self.at(m as usize + 1, m as usize + 1).abs()))
                    {
                        break;
                    }
                    m -= 1;
                }
                for i in m + 2..=n {
                    self.set(i as usize, i as usize - 2, 0.0);
                    if i > m + 2 {
                        self.set(i as usize, i as usize - 3, 0.0);
                    }
                }
                // Double QR sweep over rows l..n, columns m..n.
                for k in m..n {
                    let notlast = k != n - 1;
                    if k != m {
                        p = self.at(k as usize, k as usize - 1);
                        q = self.at(k as usize + 1, k as usize - 1);
                        r = if notlast { self.at(k as usize + 2, k as usize - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x == 0.0 {
                            continue;
                        }
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                    s = (p * p + q * q + r * r).sqrt();
                    if p < 0.0 {
                        s = -s;
                    }
                    if s != 0.0 {
                        if k != m {
                            self.set(k as usize, k as usize - 1, -s * x);
                        } else if l != m {
                            let v = -self.at(k as usize, k as usize - 1);
                            self.set(k as usize, k as usize - 1, v);
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;
                        // Row modification.
                        for j in k as usize..self.n {
                            let mut pp = self.at(k as usize, j) + q * self.at(k as usize + 1, j);
                            if notlast {
                                pp += r * self.at(k as usize + 2, j);
                                let v = self.at(k as usize + 2, j) - pp * z;
                                self.set(k as usize + 2, j, v);
                            }
                            let v0 = self.at(k as usize, j) - pp * x;
                            self.set(k as usize, j, v0);
                            let v1 = self.at(k as usize + 1, j) - pp * y;
                            self.set(k as usize + 1, j, v1);
                        }
                        // Column modification.
                        let imax = n.min(k + 3) as usize;
                        for i in 0..=imax {
                            let mut pp =
                                x * self.at(i, k as usize) + y * self.at(i, k as usize + 1);
                            if notlast {
                                pp += z * self.at(i, k as usize + 2);
                                let v = self.at(i, k as usize + 2) - pp * r;
                                self.set(i, k as usize + 2, v);
                            }
                            let v0 = self.at(i, k as usize) - pp;
                            self.set(i, k as usize, v0);
                            let v1 = self.at(i, k as usize + 1) - pp * q;
                            self.set(i, k as usize + 1, v1);
                        }
                    }
                }
            }
        }
        Ok(d.into_iter().zip(e).map(|(re, im)| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn diagonal_matrix_returns_its_diagonal() {
        let m = Mat::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let vals = eigenvalues(&m).unwrap();
        let want = [-1.0, 0.0, 3.0];
        for (v, w) in vals.iter().zip(want) {
            assert!(close(*v, Complex64::new(w, 0.0), 1e-12), "{v} vs {w}");
        }
    }

    #[test]
    fn rotation_matrix_gives_a_conjugate_pair() {
        let m = Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let vals = eigenvalues(&m).unwrap();
        assert!(close(vals[0], Complex64::new(0.0, -1.0), 1e-12));
        assert!(close(vals[1], Complex64::new(0.0, 1.0), 1e-12));
    }

    #[test]
    fn companion_of_cubic_recovers_its_roots() {
        // z^3 - 6z^2 + 11z - 6 = (z-1)(z-2)(z-3).
        let m = Mat::companion(&[-6.0, 11.0, -6.0]).unwrap();
        let vals = eigenvalues(&m).unwrap();
        for (v, w) in vals.iter().zip([1.0, 2.0, 3.0]) {
            assert!(close(*v, Complex64::new(w, 0.0), 1e-8), "{v} vs {w}");
        }
    }

    #[test]
    fn lu_solves_a_small_system_and_flags_singularity() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        // Solution of [2 1; 1 3] x = [5; 10] is [1; 3].
        let x = lu_solve(&a, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);

        let s = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        match lu_solve(&s, &[1.0, 2.0]) {
            Err(Error::SingularJacobian { .. }) => {}
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let m = Mat::zeros(MAX_EIG_DIM + 1);
        match eigenvalues(&m) {
            Err(Error::DimensionTooLarge { dim, max }) => {
                assert_eq!((dim, max), (MAX_EIG_DIM + 1, MAX_EIG_DIM));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn random_matrices_match_an_independent_eigensolver() {
        use rand::Rng;
        let mut rng = crate::util::rng_from(crate::util::named_seed(7, "eig-crosscheck"));
        for trial in 0..20 {
            let n = 2 + trial % 11;
            let mut m = Mat::zeros(n);
            let mut dm = nalgebra::DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    m.set(i, j, v);
                    dm[(i, j)] = v;
                }
            }
            let mut mine = eigenvalues(&m).unwrap();
            let mut theirs: Vec<Complex64> =
                dm.complex_eigenvalues().iter().map(|c| Complex64::new(c.re, c.im)).collect();
            let key = |c: &Complex64| (c.re, c.im);
            mine.sort_by(|a, b| key(a).0.total_cmp(&key(b).0).then(key(a).1.total_cmp(&key(b).1)));
            theirs
                .sort_by(|a, b| key(a).0.total_cmp(&key(b).0).then(key(a).1.total_cmp(&key(b).1)));
            for (a, b) in mine.iter().zip(&theirs) {
                assert!(close(*a, *b, 1e-7), "n={n} trial={trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn matvec_and_scaled_shift_do_what_they_say() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0]);
        let s = m.scaled_shift(2.0, 0.5);
        assert_eq!(s.rows(), vec![vec![1.5, 4.0], vec![6.0, 7.5]]);
    }
}
