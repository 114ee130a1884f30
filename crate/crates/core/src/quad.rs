//! Gauss–Hermite quadrature (physicists' convention).
//!
//! Nodes and weights for `∫ e^{-x²} f(x) dx ≈ Σ wᵢ f(xᵢ)`. For a standard
//! normal expectation use `E[f(X)] = (1/√π) Σ wᵢ f(√2 xᵢ)`.

/// Nodes and weights of the n-point Gauss–Hermite rule.
///
/// Newton iteration on the Hermite recurrence; initial guesses follow the
/// classic descending layout so each root is found from the previous one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // evaluate orthonormal Hermite polynomial and derivative at z
            let mut p1 = 1.0 / sqrt_pi.sqrt();
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// Expectation of `f(X, Y)` for independent standard normals via a tensor
/// Gauss–Hermite rule with `n` points per axis.
pub fn gh_expect2<F: FnMut(f64, f64) -> f64>(n: usize, mut f: F) -> f64 {
    let (x, w) = gauss_hermite(n);
    let sqrt2 = std::f64::consts::SQRT_2;
    let inv_pi = 1.0 / std::f64::consts::PI;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += w[i] * w[j] * f(sqrt2 * x[i], sqrt2 * x[j]);
        }
    }
    acc * inv_pi
}
