//! Retinoic-acid signaling SPDE, discretized by the method of lines:
//! six species per grid node, diffusion (5-point Laplacian) on the
//! extracellular species only, no-flux boundaries except a leaky right
//! edge.
//!
//! Desk-scale grids truncate the spatial domain while preserving the
//! Δx = Δy = 5 stencil spacing; the truncated window is anchored so the
//! production edge β(x) = β₀·H(x − 40) stays inside it.

use crate::error::{Error, Result};
use crate::linalg::DMat;
use crate::steppers::{NoiseKind, SdeProblem};

pub const RA_OUT: usize = 0;
pub const RA_IN: usize = 1;
pub const RA_BP: usize = 2;
pub const RA_RAR: usize = 3;
pub const BP: usize = 4;
pub const RAR: usize = 5;
pub const SPECIES: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct SpdeParams {
    pub b: f64,
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub alpha: f64,
    pub omega: f64,
    pub nu: f64,
    pub lambda: f64,
    pub u: f64,
    pub d_hill: f64,
    pub e_hill: f64,
    pub a: f64,
    pub zeta: f64,
    pub r: f64,
    pub beta0: f64,
    pub diff: f64,
    pub ka: f64,
    pub sigma_out: f64,
    pub sigma_rar: f64,
}

impl Default for SpdeParams {
    fn default() -> Self {
        SpdeParams {
            b: 0.17,
            c: 0.1,
            gamma: 3.0,
            delta: 0.0013,
            eta: 0.0001,
            alpha: 10000.0,
            omega: 100.0,
            nu: 0.85,
            lambda: 0.85,
            u: 0.01,
            d_hill: 0.1,
            e_hill: 1.0,
            a: 1.0,
            zeta: 0.02,
            r: 0.0001,
            beta0: 1.0,
            diff: 250.46,
            ka: 0.002,
            sigma_out: 0.1,
            sigma_rar: 0.1,
        }
    }
}

/// Grid geometry: species-major planes, node index `iy * nx + ix`.
#[derive(Debug, Clone, Copy)]
pub struct SpdeLayout {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub x_min: f64,
}

impl SpdeLayout {
    pub fn new(nx: usize, ny: usize) -> Result<SpdeLayout> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidInput(format!(
                "grid must be at least 3x3, got {nx}x{ny}"
            )));
        }
        // full domain starts at −100; truncated desk grids anchor at 0 so
        // the production edge at x = 40 stays inside
        let x_min = if nx >= 29 { -100.0 } else { 0.0 };
        Ok(SpdeLayout {
            nx,
            ny,
            dx: 5.0,
            x_min,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dim(&self) -> usize {
        SPECIES * self.n_nodes()
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn idx(&self, species: usize, ix: usize, iy: usize) -> usize {
        species * self.n_nodes() + self.node(ix, iy)
    }

    pub fn x_of(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.dx
    }
}

/// Retinoic-acid production profile β(x) = β₀·H(x − 40).
pub fn retinoic_beta(x: f64, beta0: f64) -> f64 {
    if x > 40.0 {
        beta0
    } else {
        0.0
    }
}

/// Assembles the RA_out diffusion operator (5-point Laplacian / Δx²) with
/// mirrored no-flux boundaries and a leaky right edge (ghost scaled by
/// `1 − ka`).
pub fn laplacian_matrix(layout: &SpdeLayout, ka: f64) -> DMat {
    let n = layout.n_nodes();
    let inv_dx2 = 1.0 / (layout.dx * layout.dx);
    let mut m = DMat::zeros(n, n);
    for iy in 0..layout.ny {
        for ix in 0..layout.nx {
            let row = layout.node(ix, iy);
            m.add_to(row, row, -4.0 * inv_dx2);
            if ix > 0 {
                m.add_to(row, layout.node(ix - 1, iy), inv_dx2);
            } else {
                m.add_to(row, row, inv_dx2); // mirror ghost
            }
            if ix + 1 < layout.nx {
                m.add_to(row, layout.node(ix + 1, iy), inv_dx2);
            } else {
                // leaky right edge: ghost = (1 − ka)·edge
                m.add_to(row, row, (1.0 - ka) * inv_dx2);
            }
            if iy > 0 {
                m.add_to(row, layout.node(ix, iy - 1), inv_dx2);
            } else {
                m.add_to(row, row, inv_dx2);
            }
            if iy + 1 < layout.ny {
                m.add_to(row, layout.node(ix, iy + 1), inv_dx2);
            } else {
                m.add_to(row, row, inv_dx2);
            }
        }
    }
    m
}

fn spde_drift(p: &SpdeParams, layout: &SpdeLayout, x: &[f64], out: &mut [f64]) {
    let n = layout.n_nodes();
    let inv_dx2 = 1.0 / (layout.dx * layout.dx);
    let plane = |s: usize| &x[s * n..(s + 1) * n];
    let ra_out = plane(RA_OUT);
    for iy in 0..layout.ny {
        for ix in 0..layout.nx {
            let node = layout.node(ix, iy);
            let ro = ra_out[node];
            let ri = x[RA_IN * n + node];
            let rb = x[RA_BP * n + node];
            let rr = x[RA_RAR * n + node];
            let bp = x[BP * n + node];
            let rar = x[RAR * n + node];

            // 5-point Laplacian with mirrored/leaky ghosts
            let left = if ix > 0 {
                ra_out[layout.node(ix - 1, iy)]
            } else {
                ro
            };
            let right = if ix + 1 < layout.nx {
                ra_out[layout.node(ix + 1, iy)]
            } else {
                (1.0 - p.ka) * ro
            };
            let down = if iy > 0 {
                ra_out[layout.node(ix, iy - 1)]
            } else {
                ro
            };
            let up = if iy + 1 < layout.ny {
                ra_out[layout.node(ix, iy + 1)]
            } else {
                ro
            };
            let lap = (left + right + down + up - 4.0 * ro) * inv_dx2;

            out[RA_OUT * n + node] =
                retinoic_beta(layout.x_of(ix), p.beta0) + p.diff * lap - p.b * ro + p.c * ri;
            out[RA_IN * n + node] = p.b * ro + p.delta * bp * rr
                - (p.gamma * bp + p.eta + p.alpha * rr / (p.omega + rr) - p.c) * ri;
            out[RA_BP * n + node] =
                p.gamma * bp * ri + p.lambda * bp * rr - (p.delta + p.nu * rar) * rb;
            out[RA_RAR * n + node] = p.nu * rb * rar - p.lambda * bp * rr;
            out[BP * n + node] = p.a - p.lambda * bp * rr - p.gamma * bp * ri
                + (p.delta + p.nu * rar) * rb
                - p.u * bp
                + p.d_hill * rr / (p.e_hill + rr);
            out[RAR * n + node] = p.zeta - p.nu * rb * rar + p.lambda * bp * rr - p.r * rar;
        }
    }
}

/// Method-of-lines SPDE problem on an `nx × ny` grid (paper scale 100×20,
/// desk default 20×5). Noise: additive σ on RA_out, multiplicative σ·value
/// on RA−RAR, zero elsewhere. Initial state is zero.
pub fn retinoic_spde(nx: usize, ny: usize) -> Result<SdeProblem> {
    let layout = SpdeLayout::new(nx, ny)?;
    let params = SpdeParams::default();
    let dim = layout.dim();
    let n = layout.n_nodes();
    let drift_layout = layout;
    let problem = SdeProblem::new(
        dim,
        move |_t: f64, x: &[f64], out: &mut [f64]| spde_drift(&params, &drift_layout, x, out),
        move |_t: f64, x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for node in 0..n {
                out[RA_OUT * n + node] = params.sigma_out;
                out[RA_RAR * n + node] = params.sigma_rar * x[RA_RAR * n + node];
            }
        },
        NoiseKind::Diagonal,
        (0.0, 500.0),
        vec![0.0; dim],
    );
    Ok(problem)
}
