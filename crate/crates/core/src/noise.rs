//! Brownian increments, Wiktorsson iterated integrals, and the
//! rejection-sampling noise stack.
//!
//! A trajectory owns one [`NoiseStream`] (a counter-based generator keyed by
//! `(seed, stream)`) and one [`FutureNoiseStack`]. Step rejections split the
//! proposed increment with a Brownian bridge and push the unused tail back,
//! so the underlying path is never resampled over an already-realized
//! window.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Counter-based Gaussian generator with per-trajectory streams.
///
/// Deterministic for a fixed `(seed, stream)` pair: the k-th draw is always
/// the same number, independent of what other streams do.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha12Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Independent `N(0, h)` draws for `dW` and `dZ`, `dim` components each.
    pub fn sample_pair(&mut self, h: f64, dim: usize) -> Result<GaussianPair> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sample_pair needs h > 0, got {h}"
            )));
        }
        let sd = h.sqrt();
        let dw = (0..dim).map(|_| sd * self.standard_normal()).collect();
        let dz = (0..dim).map(|_| sd * self.standard_normal()).collect();
        Ok(GaussianPair { dw, dz, h })
    }
}

/// One realized increment of the pair process `(W, Z)` over a window `h`.
///
/// `Z` is the auxiliary path feeding `I_(1,0)`; it is independent of `W` and
/// bridged with the same rule under rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPair {
    pub dw: Vec<f64>,
    pub dz: Vec<f64>,
    pub h: f64,
}

impl GaussianPair {
    pub fn dim(&self) -> usize {
        self.dw.len()
    }

    pub fn zero(h: f64, dim: usize) -> Self {
        GaussianPair {
            dw: vec![0.0; dim],
            dz: vec![0.0; dim],
            h,
        }
    }
}

/// Iterated stochastic integrals of one noise component over a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBundle {
    /// I_(1) = ΔW
    pub i1: f64,
    /// I_(1,1) = (ΔW² − h)/2
    pub i11: f64,
    /// I_(1,0) = h(ΔW + ΔZ/√3)/2
    pub i10: f64,
    /// I_(1,1,1) = (ΔW³ − 3hΔW)/6
    pub i111: f64,
    pub h: f64,
}

impl NoiseBundle {
    /// Wiktorsson substitutions for the scalar/diagonal case.
    pub fn from_increments(dw: f64, dz: f64, h: f64) -> Self {
        NoiseBundle {
            i1: dw,
            i11: 0.5 * (dw * dw - h),
            i10: 0.5 * h * (dw + dz / 3.0_f64.sqrt()),
            i111: (dw * dw * dw - 3.0 * h * dw) / 6.0,
            h,
        }
    }

    /// All fields zero (the deterministic-reduction contract; note this is
    /// *not* `from_increments(0, 0, h)`, which carries `i11 = -h/2`).
    pub fn zero(h: f64) -> Self {
        NoiseBundle {
            i1: 0.0,
            i11: 0.0,
            i10: 0.0,
            i111: 0.0,
            h,
        }
    }
}

/// Per-component bundles for a whole increment.
pub fn iterated_integrals(p: &GaussianPair) -> Vec<NoiseBundle> {
    p.dw.iter()
        .zip(&p.dz)
        .map(|(&dw, &dz)| NoiseBundle::from_increments(dw, dz, p.h))
        .collect()
}

/// Conditionally splits `p` at `h_new` with a Brownian bridge.
///
/// The left part is `N((h_new/h)·dW, h_new(h−h_new)/h)` given `dW`; the
/// right part is the remainder `p.dw − left.dw`, so the two reassemble the
/// original increment to rounding. `Z` is bridged by the same rule with
/// independent draws.
pub fn bridge_split(
    p: &GaussianPair,
    h_new: f64,
    stream: &mut NoiseStream,
) -> Result<(GaussianPair, GaussianPair)> {
    if !(h_new > 0.0 && h_new < p.h) {
        return Err(Error::InvalidInput(format!(
            "bridge_split needs 0 < h_new < h, got h_new={h_new}, h={}",
            p.h
        )));
    }
    let dim = p.dim();
    let frac = h_new / p.h;
    let sd = (h_new * (p.h - h_new) / p.h).sqrt();
    let mut left = GaussianPair::zero(h_new, dim);
    let mut right = GaussianPair::zero(p.h - h_new, dim);
    for k in 0..dim {
        let lw = frac * p.dw[k] + sd * stream.standard_normal();
        left.dw[k] = lw;
        right.dw[k] = p.dw[k] - lw;
        let lz = frac * p.dz[k] + sd * stream.standard_normal();
        left.dz[k] = lz;
        right.dz[k] = p.dz[k] - lz;
    }
    Ok((left, right))
}

/// Stored future segments of the pair process, earliest first.
///
/// Invariant: segments tile a contiguous window ahead of the current time;
/// popping in order and summing `dw` reproduces the underlying increment
/// exactly. One stack per trajectory.
#[derive(Debug, Clone)]
pub struct FutureNoiseStack {
    segments: VecDeque<GaussianPair>,
    dim: usize,
}

impl FutureNoiseStack {
    pub fn new(dim: usize) -> Self {
        FutureNoiseStack {
            segments: VecDeque::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total future time covered by stored segments.
    pub fn covered(&self) -> f64 {
        self.segments.iter().map(|s| s.h).sum()
    }

    /// Pushes a segment at the *near* end (next to be consumed).
    pub fn push_front(&mut self, p: GaussianPair) {
        assert_eq!(p.dim(), self.dim);
        self.segments.push_front(p);
    }

    /// Pushes a segment at the *far* end (consumed last).
    pub fn push_back(&mut self, p: GaussianPair) {
        assert_eq!(p.dim(), self.dim);
        self.segments.push_back(p);
    }

    /// Pops an increment covering exactly `h`, splitting the final segment
    /// via a Brownian bridge if it overshoots and sampling fresh noise past
    /// the covered window. `stream` may be `None` only when `h` is tiled
    /// exactly by whole stored segments.
    pub fn pop_covering(
        &mut self,
        h: f64,
        mut stream: Option<&mut NoiseStream>,
    ) -> Result<GaussianPair> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!(
                "pop_covering needs h > 0, got {h}"
            )));
        }
        let mut out = GaussianPair::zero(h, self.dim);
        let mut remaining = h;
        // consume whole segments while they fit; 1 ulp of slack keeps exact
        // tilings from spuriously triggering a bridge split
        while let Some(front) = self.segments.front() {
            if front.h <= remaining * (1.0 + 4.0 * f64::EPSILON) {
                let seg = self.segments.pop_front().unwrap();
                for k in 0..self.dim {
                    out.dw[k] += seg.dw[k];
                    out.dz[k] += seg.dz[k];
                }
                remaining -= seg.h;
                if remaining <= h * 4.0 * f64::EPSILON {
                    return Ok(out);
                }
            } else {
                break;
            }
        }
        // absorb sub-resolution slop from accumulated time rounding rather
        // than sampling a sliver of fresh noise for it
        if remaining <= h * 1e-9 {
            return Ok(out);
        }
        if let Some(front) = self.segments.front().cloned() {
            // overshooting segment: bridge-split at the remainder
            let stream = stream.as_deref_mut().ok_or_else(|| {
                Error::NoiseStack("pop needs a bridge split but no generator is attached".into())
            })?;
            let (left, right) = bridge_split(&front, remaining, stream)?;
            self.segments.pop_front();
            self.segments.push_front(right);
            for k in 0..self.dim {
                out.dw[k] += left.dw[k];
                out.dz[k] += left.dz[k];
            }
            return Ok(out);
        }
        // beyond the covered window: sample fresh
        let stream = stream.ok_or_else(|| {
            Error::NoiseStack("pop beyond covered window with no generator attached".into())
        })?;
        let fresh = stream.sample_pair(remaining, self.dim)?;
        for k in 0..self.dim {
            out.dw[k] += fresh.dw[k];
            out.dz[k] += fresh.dz[k];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> NoiseStream {
        NoiseStream::new(seed, 0)
    }

    #[test]
    fn sample_pair_rejects_nonpositive_h() {
        let mut s = stream(1);
        assert!(s.sample_pair(0.0, 1).is_err());
        assert!(s.sample_pair(-1.0, 1).is_err());
    }

    #[test]
    fn sample_pair_is_deterministic() {
        let mut a = NoiseStream::new(7, 3);
        let mut b = NoiseStream::new(7, 3);
        let pa = a.sample_pair(0.5, 2).unwrap();
        let pb = b.sample_pair(0.5, 2).unwrap();
        assert_eq!(pa, pb);
        // different stream, same seed gives a different draw
        let mut c = NoiseStream::new(7, 4);
        let pc = c.sample_pair(0.5, 2).unwrap();
        assert_ne!(pa, pc);
    }

    #[test]
    fn sample_pair_variance_shrinks_with_h() {
        let mut s = stream(2);
        let h = 1e-12;
        for _ in 0..100 {
            let p = s.sample_pair(h, 1).unwrap();
            assert!(p.dw[0].abs() < 1e-4);
            assert!(p.dz[0].abs() < 1e-4);
        }
    }

    #[test]
    fn sample_pair_moments() {
        // 1e5 draws at h = 1: mean within 0.02, variance within 0.03
        let mut s = stream(42);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let p = s.sample_pair(1.0, 1).unwrap();
            sum += p.dw[0];
            sumsq += p.dw[0] * p.dw[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn iterated_integrals_known_values() {
        // (dW=0, dZ=0, h=1)
        let b = NoiseBundle::from_increments(0.0, 0.0, 1.0);
        assert_eq!(b.i1, 0.0);
        assert_eq!(b.i11, -0.5);
        assert_eq!(b.i111, 0.0);
        assert_eq!(b.i10, 0.0);
        // (dW=1, dZ=0, h=1): dW² = h cancels
        let b = NoiseBundle::from_increments(1.0, 0.0, 1.0);
        assert_eq!(b.i11, 0.0);
        // (dW=2, dZ=0, h=1)
        let b = NoiseBundle::from_increments(2.0, 0.0, 1.0);
        assert_eq!(b.i1, 2.0);
        assert_eq!(b.i11, 1.5);
        assert!((b.i111 - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(b.i10, 1.0);
    }

    #[test]
    fn iterated_integral_identities() {
        // 2·i11 + h = dW² and 6·i111 + 3h·dW = dW³ to rounding
        let mut s = stream(3);
        for _ in 0..1000 {
            let h = 0.37;
            let p = s.sample_pair(h, 1).unwrap();
            let b = NoiseBundle::from_increments(p.dw[0], p.dz[0], h);
            let dw: f64 = p.dw[0];
            let ulp = 4.0 * f64::EPSILON;
            assert!((2.0 * b.i11 + h - dw * dw).abs() <= ulp * (dw * dw).abs().max(h));
            assert!(
                (6.0 * b.i111 + 3.0 * h * dw - dw.powi(3)).abs()
                    <= ulp * dw.powi(3).abs().max(3.0 * h * dw.abs())
            );
        }
    }

    #[test]
    fn bridge_split_is_additive() {
        let mut s = stream(4);
        for i in 0..200 {
            let p = s.sample_pair(1.0, 3).unwrap();
            let h_new = 0.05 + 0.9 * (i as f64 / 200.0);
            let (l, r) = bridge_split(&p, h_new, &mut s).unwrap();
            for k in 0..3 {
                assert!((l.dw[k] + r.dw[k] - p.dw[k]).abs() <= 1e-15);
                assert!((l.dz[k] + r.dz[k] - p.dz[k]).abs() <= 1e-15);
            }
            assert!((l.h + r.h - p.h).abs() < 1e-15);
        }
    }

    #[test]
    fn bridge_split_degenerate_tail() {
        let mut s = stream(5);
        let p = s.sample_pair(1.0, 1).unwrap();
        let (_, r) = bridge_split(&p, 1.0 - 1e-12, &mut s).unwrap();
        assert!(r.dw[0].abs() < 1e-4);
    }

    #[test]
    fn bridge_split_variance() {
        // splitting dW = 0 over h = 1 at h_new = 0.5: Var(left) = 0.25
        let mut s = stream(6);
        let p = GaussianPair::zero(1.0, 1);
        let n = 100_000;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (l, _) = bridge_split(&p, 0.5, &mut s).unwrap();
            sumsq += l.dw[0] * l.dw[0];
        }
        let var = sumsq / n as f64;
        assert!((var - 0.25).abs() < 0.01, "var {var}");
    }

    #[test]
    fn bridge_split_rejects_bad_window() {
        let mut s = stream(7);
        let p = s.sample_pair(1.0, 1).unwrap();
        assert!(bridge_split(&p, 0.0, &mut s).is_err());
        assert!(bridge_split(&p, 1.0, &mut s).is_err());
        assert!(bridge_split(&p, 1.5, &mut s).is_err());
    }

    #[test]
    fn stack_pop_exact_tiling_needs_no_generator() {
        let mut st = FutureNoiseStack::new(1);
        st.push_back(GaussianPair {
            dw: vec![0.3],
            dz: vec![0.1],
            h: 0.5,
        });
        st.push_back(GaussianPair {
            dw: vec![-0.2],
            dz: vec![0.4],
            h: 0.5,
        });
        let p = st.pop_covering(1.0, None).unwrap();
        assert!((p.dw[0] - 0.1).abs() < 1e-15);
        assert!((p.dz[0] - 0.5).abs() < 1e-15);
        assert!(st.is_empty());
    }

    #[test]
    fn stack_pop_split_then_remainder_sums_exactly() {
        // push (1.0, a); pop 0.4 then 0.6: the two dW values sum to a
        let mut s = stream(8);
        let a = s.sample_pair(1.0, 1).unwrap();
        let total = a.dw[0];
        let mut st = FutureNoiseStack::new(1);
        st.push_back(a);
        let p1 = st.pop_covering(0.4, Some(&mut s)).unwrap();
        let p2 = st.pop_covering(0.6, Some(&mut s)).unwrap();
        assert!((p1.dw[0] + p2.dw[0] - total).abs() < 1e-15);
        assert!(st.is_empty());
    }

    #[test]
    fn stack_pop_beyond_cover_without_generator_errors() {
        let mut st = FutureNoiseStack::new(1);
        st.push_back(GaussianPair {
            dw: vec![0.3],
            dz: vec![0.1],
            h: 0.5,
        });
        assert!(matches!(
            st.pop_covering(1.0, None),
            Err(Error::NoiseStack(_))
        ));
    }

    #[test]
    fn stack_pop_is_replayable_over_identical_windows() {
        let seg = GaussianPair {
            dw: vec![0.77],
            dz: vec![-0.3],
            h: 0.25,
        };
        for _ in 0..2 {
            let mut st = FutureNoiseStack::new(1);
            st.push_back(seg.clone());
            let p = st.pop_covering(0.25, None).unwrap();
            assert_eq!(p.dw[0], 0.77);
        }
    }

    /// Randomized reject/accept sequences must reassemble W(T) exactly:
    /// pre-generate a reference path as segments, consume it with random
    /// rejection chains, and compare the consumed sum against the known
    /// endpoint.
    #[test]
    fn path_consistency_under_rejections() {
        let mut s = stream(9);
        let mut meta = stream(10);
        for _ in 0..100 {
            let t_final = 1.0;
            let mut st = FutureNoiseStack::new(1);
            let n_seg = 4 + (meta.standard_normal().abs() * 8.0) as usize;
            let mut w_ref = 0.0;
            for _ in 0..n_seg {
                let seg = s.sample_pair(t_final / n_seg as f64, 1).unwrap();
                w_ref += seg.dw[0];
                st.push_back(seg);
            }
            let mut w = 0.0;
            let mut guard = 0;
            while !st.is_empty() {
                guard += 1;
                assert!(guard < 100_000, "consumption loop did not terminate");
                let h_prop = (0.01 + 0.2 * meta.standard_normal().abs()).min(st.covered());
                let mut pair = st.pop_covering(h_prop, Some(&mut s)).unwrap();
                while meta.standard_normal() > 0.8 && pair.h > 1e-6 {
                    let h_new = pair.h * 0.4;
                    let (l, r) = bridge_split(&pair, h_new, &mut s).unwrap();
                    st.push_front(r);
                    pair = l;
                }
                w += pair.dw[0];
            }
            assert!(
                (w - w_ref).abs() < 1e-12,
                "consumed W {w} vs reference {w_ref}"
            );
        }
    }
}
