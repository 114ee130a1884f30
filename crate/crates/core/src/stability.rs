//! Drift and mean-square stability analysis.
//!
//! The drift stability function `G(z) = 1 + z·αᵀ(I − zA⁽⁰⁾)⁻¹e` governs the
//! additive-noise methods (it is the deterministic RK stability function of
//! the drift tableau). For diagonal noise the mean-square criterion
//! `S(z, w) = E[(U_{n+1}/U_n)²] < 1` is evaluated on the linear test
//! equation under the substitution `z = μh`, `w = σ√h` (which removes the
//! `h`-dependence), with the expectation taken by Gauss–Hermite quadrature
//! or Monte Carlo over `(ΔW, ΔZ)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{solve_complex, sym_eigenvalues, DMat, Lu};
use crate::noise::NoiseStream;
use crate::quad::gauss_hermite;
use crate::tableaus::{SriTableau, Tableau};

/// Drift stability function value at complex `z` for a drift tableau
/// `(A⁽⁰⁾, α)`. Errors on a singular resolvent (a pole of `G`).
pub fn drift_g_parts(a0: &DMat, alpha: &[f64], z: Complex64) -> Result<Complex64> {
    let s = alpha.len();
    let mut mat = vec![Complex64::new(0.0, 0.0); s * s];
    let mut rhs = vec![Complex64::new(1.0, 0.0); s];
    for i in 0..s {
        for j in 0..s {
            let eye = if i == j { 1.0 } else { 0.0 };
            mat[i * s + j] = Complex64::new(eye, 0.0) - z * a0.get(i, j);
        }
    }
    if !solve_complex(&mut mat, &mut rhs, s) {
        return Err(Error::Stability(format!("resolvent pole at z = {z}")));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..s {
        acc += alpha[i] * rhs[i];
    }
    Ok(Complex64::new(1.0, 0.0) + z * acc)
}

/// Drift stability function of a method's drift tableau.
pub fn drift_g(t: &Tableau, z: Complex64) -> Result<Complex64> {
    let (a0, alpha) = t.drift();
    drift_g_parts(a0, alpha, z)
}

/// Real-axis stability extent: the distance from the origin to the first
/// raster cell on the negative real axis where `|G| ≥ 1`, scanned at
/// spacing `dx`.
pub fn drift_real_extent(t: &Tableau, dx: f64) -> f64 {
    let mut k = 1u64;
    loop {
        let z = -(k as f64) * dx;
        match drift_g(t, Complex64::new(z, 0.0)) {
            Ok(g) if g.norm() < 1.0 => {
                k += 1;
                if (k as f64) * dx > 1e6 {
                    return f64::INFINITY;
                }
            }
            _ => return (k as f64) * dx,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StabilityCert {
    pub a_stable: bool,
    pub l_stable: bool,
    /// Largest `|G| − 1` observed over the sampling grid (negative when
    /// A-stable with margin).
    pub max_violation: f64,
    /// `|G(−10⁸)|`.
    pub g_at_minus_1e8: f64,
}

/// A/L-stability certificate by dense sampling of the closed left
/// half-plane on a log-radial grid (10⁴ points, radii 10⁻³..10⁸). This is a
/// sampling certificate, not a proof.
pub fn check_a_l_stability(t: &Tableau) -> StabilityCert {
    let (a0, alpha) = t.drift();
    let nr = 100;
    let na = 100;
    let mut max_violation = f64::NEG_INFINITY;
    for ir in 0..nr {
        let lr = -3.0 + 11.0 * (ir as f64) / ((nr - 1) as f64);
        let r = 10f64.powf(lr);
        for ia in 0..na {
            let theta = std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (ia as f64) / ((na - 1) as f64);
            let z = Complex64::from_polar(r, theta);
            let v = match drift_g_parts(a0, alpha, z) {
                Ok(g) => g.norm() - 1.0,
                Err(_) => f64::INFINITY,
            };
            if v > max_violation {
                max_violation = v;
            }
        }
    }
    let a_stable = max_violation <= 1e-12;
    let g_far = drift_g_parts(a0, alpha, Complex64::new(-1e8, 0.0))
        .map(|g| g.norm())
        .unwrap_or(f64::INFINITY);
    // closed-form limit G(∞) = 1 − αᵀ(A⁽⁰⁾)⁻¹e, checked when A⁰ is invertible
    let limit_ok = match Lu::factor(a0.clone()) {
        Some(lu) => {
            let mut e = vec![1.0; alpha.len()];
            lu.solve(&mut e);
            let lim: f64 = 1.0 - alpha.iter().zip(&e).map(|(a, v)| a * v).sum::<f64>();
            lim.abs() < 1e-12
        }
        None => true, // singular A⁰ (e.g. ESDIRK first stage): sampling only
    };
    StabilityCert {
        a_stable,
        l_stable: a_stable && g_far < 1e-6 && limit_ok,
        max_violation,
        g_at_minus_1e8: g_far,
    }
}

/// Burrage–Butcher B-stability condition on the drift tableau: both
/// `B = diag(α)` and `M = BA⁽⁰⁾ + A⁽⁰⁾ᵀB − ααᵀ` non-negative definite.
pub fn check_b_stability_parts(a0: &DMat, alpha: &[f64]) -> bool {
    let tol = -1e-12;
    if alpha.iter().any(|&a| a < tol) {
        return false;
    }
    let s = alpha.len();
    let mut m = DMat::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            let v = alpha[i] * a0.get(i, j) + a0.get(j, i) * alpha[j] - alpha[i] * alpha[j];
            m.set(i, j, v);
        }
    }
    // symmetrize against rounding before the eigenvalue test
    let mt = m.transpose();
    for i in 0..s {
        for j in 0..s {
            m.set(i, j, 0.5 * (m.get(i, j) + mt.get(i, j)));
        }
    }
    sym_eigenvalues(&m).into_iter().all(|ev| ev >= tol)
}

pub fn check_b_stability(t: &Tableau) -> bool {
    let (a0, alpha) = t.drift();
    check_b_stability_parts(a0, alpha)
}

/// Expectation rule for the mean-square criterion.
#[derive(Debug, Clone, Copy)]
pub enum Expectation {
    GaussHermite(usize),
    MonteCarlo { n: usize, seed: u64 },
}

/// `A⁻¹ B` for small dense matrices; `None` when `A` is singular.
fn mat_solve(a: &DMat, b: &DMat) -> Option<DMat> {
    let lu = Lu::factor(a.clone())?;
    let n = a.rows;
    let mut out = DMat::zeros(n, b.cols);
    let mut col = vec![0.0; n];
    for j in 0..b.cols {
        for i in 0..n {
            col[i] = b.get(i, j);
        }
        lu.solve(&mut col);
        for i in 0..n {
            out.set(i, j, col[i]);
        }
    }
    Some(out)
}

fn mat_mul(a: &DMat, b: &DMat) -> DMat {
    let mut out = DMat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn scale(a: &DMat, c: f64) -> DMat {
    let mut out = a.clone();
    out.data.iter_mut().for_each(|v| *v *= c);
    out
}

fn mat_add(a: &DMat, b: &DMat) -> DMat {
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(&b.data) {
        *x += *y;
    }
    out
}

fn eye(n: usize) -> DMat {
    DMat::identity(n)
}

/// One-sample amplification factor `U_{n+1}/U_n` of the full SRI method on
/// the linear test equation, at `h = 1`, `μ = z`, `σ = w`, for standard
/// normal draws `(ΔW, ΔZ)`. `None` flags a singular inner matrix.
pub fn amplification_sample(
    t: &SriTableau,
    z: f64,
    w: f64,
    dw: f64,
    dz: f64,
    u_n: f64,
) -> Option<f64> {
    let s = t.stages;
    let i1 = dw;
    let i11 = 0.5 * (dw * dw - 1.0);
    let i10 = 0.5 * (dw + dz / 3.0_f64.sqrt());
    let i111 = (dw * dw * dw - 3.0 * dw) / 6.0;

    let inv_b1 = mat_solve(&mat_add(&eye(s), &scale(&t.b1, -w)), &eye(s))?;
    let inv_a0 = mat_solve(&mat_add(&eye(s), &scale(&t.a0, -z)), &eye(s))?;

    // H0 = (I − zA0 − z w I10 A1 B0 (I − wB1)⁻¹)⁻¹ (I + w I10 B0 (I − wB1)⁻¹) e·U_n
    let a1b0 = mat_mul(&t.a1, &t.b0);
    let lhs0 = mat_add(
        &mat_add(&eye(s), &scale(&t.a0, -z)),
        &scale(&mat_mul(&a1b0, &inv_b1), -z * w * i10),
    );
    let rhs0 = mat_add(&eye(s), &scale(&mat_mul(&t.b0, &inv_b1), w * i10));
    let m0 = mat_solve(&lhs0, &rhs0)?;

    // H1 = (I − wB1 − z A1 (I − zA0)⁻¹ w I10 B0)⁻¹ (I + z A1 (I − zA0)⁻¹) e·U_n
    let a1_inv_a0 = mat_mul(&t.a1, &inv_a0);
    let lhs1 = mat_add(
        &mat_add(&eye(s), &scale(&t.b1, -w)),
        &scale(&mat_mul(&a1_inv_a0, &t.b0), -z * w * i10),
    );
    let rhs1 = mat_add(&eye(s), &scale(&a1_inv_a0, z));
    let m1 = mat_solve(&lhs1, &rhs1)?;

    let e = vec![u_n; s];
    let mut h0 = vec![0.0; s];
    let mut h1 = vec![0.0; s];
    let mut tmp = vec![0.0; s];
    // m·e
    m0.matvec(&e, &mut h0);
    m1.matvec(&e, &mut h1);
    let dot = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    tmp.copy_from_slice(&h1);
    let u_next = u_n
        + z * dot(&t.alpha, &h0)
        + w * i1 * dot(&t.beta1, &tmp)
        + w * i11 * dot(&t.beta2, &tmp)
        + w * i10 * dot(&t.beta3, &tmp)
        + w * i111 * dot(&t.beta4, &tmp);
    if !u_next.is_finite() {
        return None;
    }
    Some(u_next / u_n)
}

/// Mean-square amplification `S(z, w) = E[(U_{n+1}/U_n)²]`.
///
/// Fails when more than 1% of the quadrature/Monte Carlo samples hit a
/// singular inner matrix.
pub fn meansquare_s(t: &SriTableau, z: f64, w: f64, rule: &Expectation) -> Result<f64> {
    let mut flagged = 0usize;
    let mut total = 0usize;
    let mut acc = 0.0;
    let mut weight_acc = 0.0;
    match rule {
        Expectation::GaussHermite(n) => {
            let (x, wt) = gauss_hermite(*n);
            let sqrt2 = std::f64::consts::SQRT_2;
            for i in 0..*n {
                for j in 0..*n {
                    total += 1;
                    let dw = sqrt2 * x[i];
                    let dz = sqrt2 * x[j];
                    match amplification_sample(t, z, w, dw, dz, 1.0) {
                        Some(a) => {
                            acc += wt[i] * wt[j] * a * a;
                            weight_acc += wt[i] * wt[j];
                        }
                        None => flagged += 1,
                    }
                }
            }
        }
        Expectation::MonteCarlo { n, seed } => {
            let mut stream = NoiseStream::new(*seed, 0);
            for _ in 0..*n {
                total += 1;
                let dw = stream.standard_normal();
                let dz = stream.standard_normal();
                match amplification_sample(t, z, w, dw, dz, 1.0) {
                    Some(a) => {
                        acc += a * a;
                        weight_acc += 1.0;
                    }
                    None => flagged += 1,
                }
            }
        }
    }
    if flagged * 100 > total {
        return Err(Error::Stability(format!(
            "{} of {} samples hit singular inner matrices at (z, w) = ({z}, {w})",
            flagged, total
        )));
    }
    if weight_acc == 0.0 {
        return Err(Error::Stability("no valid samples".into()));
    }
    Ok(acc / weight_acc)
}

/// Monte Carlo estimate with its standard error (for cross-checks against
/// the quadrature rule).
pub fn meansquare_s_mc_with_se(
    t: &SriTableau,
    z: f64,
    w: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut stream = NoiseStream::new(seed, 0);
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    let mut count = 0usize;
    let mut flagged = 0usize;
    for _ in 0..n {
        let dw = stream.standard_normal();
        let dz = stream.standard_normal();
        match amplification_sample(t, z, w, dw, dz, 1.0) {
            Some(a) => {
                let v = a * a;
                acc += v;
                acc2 += v * v;
                count += 1;
            }
            None => flagged += 1,
        }
    }
    if flagged * 100 > n {
        return Err(Error::Stability("too many singular samples".into()));
    }
    let mean = acc / count as f64;
    let var = (acc2 / count as f64 - mean * mean).max(0.0);
    Ok((mean, (var / count as f64).sqrt()))
}

/// Which stability criterion a raster evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// `|G(x + iy)| < 1` over the complex drift plane.
    Drift,
    /// `S(z, w) < 1` over the real `(z, w)` plane (Gauss–Hermite n = 20).
    MeanSquare,
}

/// Boolean raster of stability membership over a rectangular window, cell
/// centers at spacing `dx`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegionGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub dx: f64,
    pub nz: usize,
    pub nw: usize,
    /// Row-major over `w` (rows) then `z` (columns): index `iw * nz + iz`.
    pub mask: Vec<bool>,
    /// Criterion values at the cell centers (|G| or S).
    pub values: Vec<f64>,
}

impl RegionGrid {
    pub fn area(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 * self.dx * self.dx
    }

    /// Portable graymap (P2): stable cells white, unstable black.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n1\n", self.nz, self.nw);
        for iw in (0..self.nw).rev() {
            let row: Vec<&str> = (0..self.nz)
                .map(|iz| {
                    if self.mask[iw * self.nz + iz] {
                        "1"
                    } else {
                        "0"
                    }
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,w,value,stable\n");
        for iw in 0..self.nw {
            for iz in 0..self.nz {
                let z = self.z_min + (iz as f64 + 0.5) * self.dx;
                let w = self.w_min + (iw as f64 + 0.5) * self.dx;
                let idx = iw * self.nz + iz;
                s.push_str(&format!(
                    "{z},{w},{},{}\n",
                    self.values[idx],
                    u8::from(self.mask[idx])
                ));
            }
        }
        s
    }
}

/// Rasterizes the stability region over `z ∈ [−N, 1]`, `w ∈ [−M, M]` and
/// returns the region area with the grid.
pub fn region_area(
    t: &Tableau,
    n: f64,
    m: f64,
    dx: f64,
    criterion: Criterion,
) -> Result<(f64, RegionGrid)> {
    if !(dx > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dx must be positive, got {dx}"
        )));
    }
    let z_min = -n;
    let z_max = 1.0;
    let w_min = -m;
    let w_max = m;
    let nz = ((z_max - z_min) / dx).round().max(1.0) as usize;
    let nw = ((w_max - w_min) / dx).round().max(1.0) as usize;
    let mut mask = vec![false; nz * nw];
    let mut values = vec![f64::INFINITY; nz * nw];
    for iw in 0..nw {
        let w = w_min + (iw as f64 + 0.5) * dx;
        for iz in 0..nz {
            let z = z_min + (iz as f64 + 0.5) * dx;
            let v = match criterion {
                Criterion::Drift => {
                    let (a0, alpha) = t.drift();
                    drift_g_parts(a0, alpha, Complex64::new(z, w))
                        .map(|g| g.norm())
                        .unwrap_or(f64::INFINITY)
                }
                Criterion::MeanSquare => {
                    let sri = match t {
                        Tableau::Sri(s) => s,
                        Tableau::Sra(_) => {
                            return Err(Error::Unsupported(
                                "mean-square raster needs a diagonal-noise tableau".into(),
                            ))
                        }
                    };
                    meansquare_s(sri, z, w, &Expectation::GaussHermite(20)).unwrap_or(f64::INFINITY)
                }
            };
            let idx = iw * nz + iz;
            values[idx] = v;
            mask[idx] = v < 1.0;
        }
    }
    let grid = RegionGrid {
        z_min,
        z_max,
        w_min,
        w_max,
        dx,
        nz,
        nw,
        mask,
        values,
    };
    Ok((grid.area(), grid))
}
