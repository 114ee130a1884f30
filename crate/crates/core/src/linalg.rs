//! Small dense linear algebra: enough for stage solves and stability work.
//!
//! Systems here are tiny (tableau-sized `s x s` resolvents) or moderate
//! (`d x d` Newton matrices with `d` in the hundreds at most), so a
//! straightforward partial-pivot LU is the right tool.

use num_complex::Complex64;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DMat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DMat {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            let row = self.row(i);
            for j in 0..self.cols {
                acc += row[j] * x[j];
            }
            y[i] = acc;
        }
    }

    /// Row sums, i.e. A e.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Max absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> DMat {
        let mut t = DMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// True when every entry on or above the diagonal is exactly zero.
    pub fn is_strictly_lower(&self) -> bool {
        for i in 0..self.rows {
            for j in i..self.cols {
                if self.get(i, j) != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: DMat,
    piv: Vec<usize>,
}

impl Lu {
    /// Factors `a`; returns `None` if a pivot underflows to (near) zero.
    pub fn factor(mut a: DMat) -> Option<Lu> {
        let n = a.rows;
        assert_eq!(n, a.cols, "LU needs a square matrix");
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut max = a.get(k, k).abs();
            for i in k + 1..n {
                let v = a.get(i, k).abs();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            if !(max > f64::MIN_POSITIVE) || !max.is_finite() {
                return None;
            }
            if p != k {
                piv.swap(k, p);
                for j in 0..n {
                    let tmp = a.get(k, j);
                    a.set(k, j, a.get(p, j));
                    a.set(p, j, tmp);
                }
            }
            let pivot = a.get(k, k);
            for i in k + 1..n {
                let m = a.get(i, k) / pivot;
                a.set(i, k, m);
                for j in k + 1..n {
                    a.add_to(i, j, -m * a.get(k, j));
                }
            }
        }
        Some(Lu { lu: a, piv })
    }

    /// Solves `A x = b` in place (`b` becomes `x`).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        // apply the row permutation
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        b.copy_from_slice(&x);
    }
}

/// Solves the complex system `a x = b` by Gaussian elimination with partial
/// pivoting, in place. Returns `false` on a singular pivot.
pub fn solve_complex(a: &mut [Complex64], b: &mut [Complex64], n: usize) -> bool {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for k in 0..n {
        let mut p = k;
        let mut max = a[k * n + k].norm();
        for i in k + 1..n {
            let v = a[i * n + k].norm();
            if v > max {
                max = v;
                p = i;
            }
        }
        if !(max > f64::MIN_POSITIVE) || !max.is_finite() {
            return false;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let m = a[i * n + k] / pivot;
            a[i * n + k] = Complex64::new(0.0, 0.0);
            for j in k + 1..n {
                let akj = a[k * n + j];
                a[i * n + j] -= m * akj;
            }
            let bk = b[k];
            b[i] -= m * bk;
        }
    }
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i * n + j] * b[j];
        }
        b[i] = acc / a[i * n + i];
    }
    true
}

/// Eigenvalues of a small symmetric matrix via cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: &DMat) -> Vec<f64> {
    let n = a.rows;
    assert_eq!(n, a.cols);
    let mut m = a.clone();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.get(i, j).abs();
            }
        }
        if off < 1e-300 || off < 1e-15 * m.inf_norm().max(1.0) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| m.get(i, i)).collect()
}

/// Forward finite-difference Jacobian of `f` at `(t, x)`, column `j` step
/// `sqrt(eps) * max(|x_j|, 1)`.
pub fn fd_jacobian<F>(f: &F, t: f64, x: &[f64], fx: &[f64], jac: &mut DMat)
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    debug_assert_eq!(jac.rows, n);
    debug_assert_eq!(jac.cols, n);
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        let dx = sqrt_eps * x[j].abs().max(1.0);
        xp[j] = x[j] + dx;
        f(t, &xp, &mut fp);
        let inv = 1.0 / (xp[j] - x[j]);
        for i in 0..n {
            jac.set(i, j, (fp[i] - fx[i]) * inv);
        }
        xp[j] = x[j];
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
