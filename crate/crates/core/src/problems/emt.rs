//! Epithelial–mesenchymal transition model: 19 pathwise-stiff reaction
//! equations (mass-action kinetics with Hill feedbacks) plus diagonal
//! multiplicative noise.
//!
//! State layout:
//! `[snail1, SNAIL, miR34, SR, zeb, ZEB, miR200, ZR1..ZR5, tgf, TGF, TR,
//!   Ecad, Vim, OVOL2, OVOL2p]`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::steppers::{NoiseKind, SdeProblem};

pub const SNAIL1: usize = 0;
pub const SNAIL: usize = 1;
pub const MIR34: usize = 2;
pub const SR: usize = 3;
pub const ZEB_M: usize = 4;
pub const ZEB: usize = 5;
pub const MIR200: usize = 6;
pub const ZR1: usize = 7;
pub const TGF_M: usize = 12;
pub const TGF: usize = 13;
pub const TR: usize = 14;
pub const ECAD: usize = 15;
pub const VIM: usize = 16;
pub const OVOL2: usize = 17;
pub const OVOL2P: usize = 18;
pub const DIM: usize = 19;

/// Binomial weights C(5, i) and i·C(5, i) of the ZR complex sums.
pub const C5: [f64; 5] = [5.0, 10.0, 10.0, 5.0, 1.0];
pub const IC5: [f64; 5] = [5.0, 20.0, 30.0, 20.0, 5.0];

#[derive(Debug, Clone)]
pub struct EmtParams {
    pub j1_200: f64,
    pub j2_200: f64,
    pub j1_34: f64,
    pub j2_34: f64,
    pub j_o: f64,
    pub j0_snail: f64,
    pub j1_snail: f64,
    pub j2_snail: f64,
    pub j1_zeb: f64,
    pub j2_zeb: f64,
    pub j1_e: f64,
    pub j2_e: f64,
    pub j1_v: f64,
    pub j2_v: f64,
    pub j3_v: f64,
    pub n1_200: i32,
    pub n2_200: i32,
    pub n1_34: i32,
    pub n2_34: i32,
    pub n_o: i32,
    pub n0_snail: i32,
    pub n1_snail: i32,
    pub n1_zeb: i32,
    pub n2_zeb: i32,
    pub n1_e: i32,
    pub n2_e: i32,
    pub n1_v: i32,
    pub n2_v: i32,
    pub k0_snail: f64,
    pub k_snail: f64,
    pub k_snail_p: f64,
    pub kd_snail: f64,
    pub kd_snail_p: f64,
    pub k0_34: f64,
    pub k_34: f64,
    pub kd_34: f64,
    pub kd_sr: f64,
    pub lambda_sr: f64,
    pub k_sr: f64,
    pub k0_zeb: f64,
    pub k_zeb: f64,
    pub kd_zeb: f64,
    pub k_zeb_p: f64,
    pub kd_zeb_p: f64,
    pub k0_200: f64,
    pub k_200: f64,
    pub kd_200: f64,
    pub kd_zr: [f64; 5],
    pub lambda_zr: [f64; 5],
    pub k_zr: [f64; 5],
    pub k_tgf_m: f64,
    pub kd_tgf_m: f64,
    pub k0_tgf: f64,
    pub k_tgf: f64,
    pub kd_tgf: f64,
    pub kd_tr: f64,
    pub lambda_tr: f64,
    pub k_tr_assoc: f64,
    pub tk: f64,
    pub k0_e: f64,
    pub k_e1: f64,
    pub k_e2: f64,
    pub kd_e: f64,
    pub k0_v: f64,
    pub k_v1: f64,
    pub k_v2: f64,
    pub kd_v: f64,
    pub k0_o: f64,
    pub k_o: f64,
    pub kd_o: f64,
    pub k_op: f64,
    pub kd_op: f64,
    pub tgf0_base: f64,
}

impl Default for EmtParams {
    fn default() -> Self {
        EmtParams {
            j1_200: 3.0,
            j2_200: 0.2,
            j1_34: 0.15,
            j2_34: 0.35,
            j_o: 0.9,
            j0_snail: 0.6,
            j1_snail: 0.5,
            j2_snail: 1.8,
            j1_zeb: 3.5,
            j2_zeb: 0.9,
            j1_e: 0.1,
            j2_e: 0.3,
            j1_v: 0.4,
            j2_v: 0.4,
            j3_v: 2.0,
            n1_200: 3,
            n2_200: 2,
            n1_34: 2,
            n2_34: 2,
            n_o: 2,
            n0_snail: 2,
            n1_snail: 2,
            n1_zeb: 2,
            n2_zeb: 6,
            n1_e: 2,
            n2_e: 2,
            n1_v: 2,
            n2_v: 2,
            k0_snail: 0.0005,
            // transcription scale and SNAIL protein degradation are absent
            // from the parameter table; structural analogues used
            k_snail: 0.05,
            k_snail_p: 16.0,
            kd_snail: 0.09,
            kd_snail_p: 1.66,
            k0_34: 0.001,
            k_34: 0.01,
            kd_34: 0.035,
            kd_sr: 0.9,
            lambda_sr: 0.5,
            k_sr: 100.0,
            k0_zeb: 0.003,
            k_zeb: 0.06,
            kd_zeb: 0.1,
            k_zeb_p: 16.0,
            kd_zeb_p: 1.66,
            k0_200: 0.0002,
            k_200: 0.02,
            kd_200: 0.035,
            kd_zr: [0.5; 5],
            lambda_zr: [0.5; 5],
            k_zr: [1.0; 5],
            k_tgf_m: 0.05,
            kd_tgf_m: 0.1,
            k0_tgf: 1.1,
            k_tgf: 1.5,
            kd_tgf: 0.9,
            kd_tr: 0.5,
            lambda_tr: 0.5,
            k_tr_assoc: 20.0,
            tk: 1000.0,
            k0_e: 5.0,
            k_e1: 15.0,
            k_e2: 5.0,
            kd_e: 0.05,
            k0_v: 5.0,
            k_v1: 2.0,
            k_v2: 5.0,
            kd_v: 0.05,
            k0_o: 0.35,
            k_o: 1.2,
            kd_o: 1.0,
            k_op: 10.0,
            kd_op: 10.0,
            tgf0_base: 0.0,
        }
    }
}

impl EmtParams {
    /// Applies `key=value` overrides for the commonly swept parameters.
    pub fn apply_overrides(&mut self, overrides: &HashMap<String, f64>) {
        for (key, &v) in overrides {
            match key.as_str() {
                "tk" => self.tk = v,
                "k_snail" => self.k_snail = v,
                "kd_snail_p" => self.kd_snail_p = v,
                "kd_tr" => self.kd_tr = v,
                "tgf0" => self.tgf0_base = v,
                _ => {}
            }
        }
    }

    /// Exogenous TGF input: 1/2 after t = 100, else the base level.
    pub fn tgf0(&self, t: f64) -> f64 {
        if t > 100.0 {
            0.5
        } else {
            self.tgf0_base
        }
    }
}

/// Hill-style power guard: clamps negative bases to zero and counts the
/// clamps through `flag`.
#[inline]
fn pow_guard(base: f64, n: i32, flag: &AtomicU64) -> f64 {
    if base < 0.0 {
        flag.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        base.powi(n)
    }
}

/// Epithelial (Ecad-high) near-steady state used as the default initial
/// condition.
pub fn emt_x0() -> Vec<f64> {
    vec![
        0.128483,
        1.256853,
        0.0030203,
        0.0027977,
        0.0101511,
        0.0422942,
        0.2391346,
        0.0008014,
        0.0001464,
        2.67e-05,
        4.8e-6,
        9e-7,
        0.0619917,
        1.2444292,
        0.0486676,
        199.9383546,
        137.4267984,
        1.5180203,
        1.5180203,
    ]
}

/// EMT drift evaluated into `out`; `flag` counts Hill-base clamps.
pub fn emt_drift(p: &EmtParams, t: f64, x: &[f64], out: &mut [f64], flag: &AtomicU64) {
    let zr = &x[ZR1..ZR1 + 5];
    let s_zr: f64 = (0..5).map(|i| C5[i] * zr[i]).sum();
    let s_izr: f64 = (0..5).map(|i| IC5[i] * zr[i]).sum();
    let free_zeb_m = x[ZEB_M] - s_zr;
    let free_200 = x[MIR200] - s_izr - x[TR];
    let free_snail1 = x[SNAIL1] - x[SR];
    let free_34 = x[MIR34] - x[SR];
    let free_tgf_m = x[TGF_M] - x[TR];
    let tgf_eff = x[TGF] + p.tgf0(t);

    let h_tgf = pow_guard(tgf_eff / p.j0_snail, p.n0_snail, flag);
    let h_ovol_sn = pow_guard(x[OVOL2] / p.j1_snail, p.n1_snail, flag);
    let a = h_tgf + h_ovol_sn;
    out[SNAIL1] = p.k0_snail + p.k_snail * h_tgf / ((1.0 + a) * (1.0 + x[SNAIL] / p.j2_snail))
        - p.kd_snail * free_snail1
        - p.kd_sr * x[SR];
    out[SNAIL] = p.k_snail_p * free_snail1 - p.kd_snail_p * x[SNAIL];
    out[MIR34] = p.k0_34
        + p.k_34
            / (1.0
                + pow_guard(x[SNAIL] / p.j1_34, p.n1_34, flag)
                + pow_guard(x[ZEB] / p.j2_34, p.n2_34, flag))
        - p.kd_34 * free_34
        - (1.0 - p.lambda_sr) * p.kd_sr * x[SR];
    out[SR] = p.tk * (p.k_sr * free_snail1 * free_34 - x[SR]);

    let h_sn_zeb = pow_guard(x[SNAIL] / p.j1_zeb, p.n1_zeb, flag);
    let h_ov_zeb = pow_guard(x[OVOL2] / p.j2_zeb, p.n2_zeb, flag);
    let zr_decay: f64 = (0..5).map(|i| p.kd_zr[i] * C5[i] * zr[i]).sum();
    out[ZEB_M] = p.k0_zeb + p.k_zeb * h_sn_zeb / (1.0 + h_sn_zeb + h_ov_zeb)
        - p.kd_zeb * free_zeb_m
        - zr_decay;
    out[ZEB] = p.k_zeb_p * free_zeb_m - p.kd_zeb_p * x[ZEB];

    let zr_decay_200: f64 = (0..5)
        .map(|i| (1.0 - p.lambda_zr[i]) * p.kd_zr[i] * C5[i] * (i as f64 + 1.0) * zr[i])
        .sum();
    out[MIR200] = p.k0_200
        + p.k_200
            / (1.0
                + pow_guard(x[SNAIL] / p.j1_200, p.n1_200, flag)
                + pow_guard(x[ZEB] / p.j2_200, p.n2_200, flag))
        - p.kd_200 * free_200
        - zr_decay_200
        - (1.0 - p.lambda_tr) * p.kd_tr * x[TR];

    // complex cascade, substrate [ZR_1] in every association as printed
    out[ZR1] = p.tk * (p.k_zr[0] * free_200 * free_zeb_m - zr[0]);
    for i in 1..5 {
        out[ZR1 + i] = p.tk * (p.k_zr[i] * free_200 * zr[0] - zr[i]);
    }

    out[TGF_M] = p.k_tgf_m - p.kd_tgf_m * free_tgf_m - p.kd_tr * x[TR];
    out[TGF] = p.k0_tgf + p.k_tgf * free_tgf_m - p.kd_tgf * x[TGF];
    out[TR] = p.tk * (p.k_tr_assoc * free_200 * free_tgf_m - x[TR]);

    out[ECAD] = p.k0_e
        + p.k_e1 / (1.0 + pow_guard(x[SNAIL] / p.j1_e, p.n1_e, flag))
        + p.k_e2 / (1.0 + pow_guard(x[ZEB] / p.j2_e, p.n2_e, flag))
        - p.kd_e * x[ECAD];

    let h_sn_v = pow_guard(x[SNAIL] / p.j1_v, p.n1_v, flag);
    let h_zeb_v = pow_guard(x[ZEB] / p.j2_v, p.n2_v, flag);
    let b = p.k_v1 * h_sn_v / (1.0 + h_sn_v) + p.k_v2 * h_zeb_v / (1.0 + h_zeb_v);
    out[VIM] = p.k0_v + b / (1.0 + x[OVOL2] / p.j3_v) - p.kd_v * x[VIM];

    out[OVOL2] =
        p.k0_o + p.k_o / (1.0 + pow_guard(x[ZEB] / p.j_o, p.n_o, flag)) - p.kd_o * x[OVOL2];
    out[OVOL2P] = p.k_op * x[OVOL2] - p.kd_op * x[OVOL2P];
}

/// EMT problem with diagonal multiplicative noise `g_i = σ x_i`, returning
/// the Hill-clamp counter alongside.
pub fn emt_model_with_flag(
    noise_amplitude: f64,
    overrides: &HashMap<String, f64>,
) -> (SdeProblem, Arc<AtomicU64>) {
    let mut params = EmtParams::default();
    params.apply_overrides(overrides);
    let flag = Arc::new(AtomicU64::new(0));
    let f_flag = Arc::clone(&flag);
    let problem = SdeProblem::new(
        DIM,
        move |t: f64, x: &[f64], out: &mut [f64]| emt_drift(&params, t, x, out, &f_flag),
        move |_t: f64, x: &[f64], out: &mut [f64]| {
            for k in 0..DIM {
                out[k] = noise_amplitude * x[k];
            }
        },
        NoiseKind::Diagonal,
        (0.0, 1.0),
        emt_x0(),
    );
    (problem, flag)
}

pub fn emt_model(noise_amplitude: f64, overrides: &HashMap<String, f64>) -> SdeProblem {
    emt_model_with_flag(noise_amplitude, overrides).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseStream;

    #[test]
    fn tgf0_step() {
        let p = EmtParams::default();
        assert_eq!(p.tgf0(50.0), 0.0);
        assert_eq!(p.tgf0(150.0), 0.5);
    }

    #[test]
    fn binomial_weight_sums() {
        assert_eq!(C5, [5.0, 10.0, 10.0, 5.0, 1.0]);
        assert_eq!(IC5, [5.0, 20.0, 30.0, 20.0, 5.0]);
        assert_eq!(C5.iter().sum::<f64>(), 31.0);
        assert_eq!(IC5.iter().sum::<f64>(), 80.0);
    }

    #[test]
    fn zero_state_snail1_rate_is_basal() {
        let p = EmtParams::default();
        let flag = AtomicU64::new(0);
        let x = vec![0.0; DIM];
        let mut out = vec![0.0; DIM];
        emt_drift(&p, 0.0, &x, &mut out, &flag);
        assert_eq!(out[SNAIL1], 0.0005);
    }

    #[test]
    fn drift_is_finite_on_positive_box() {
        // 1e5 random evaluations on [0, 5]^19: finite, no NaN
        let p = EmtParams::default();
        let flag = AtomicU64::new(0);
        let mut s = NoiseStream::new(21, 0);
        let mut x = vec![0.0; DIM];
        let mut out = vec![0.0; DIM];
        for _ in 0..100_000 {
            for xi in x.iter_mut() {
                *xi = 2.5 * (1.0 + (s.standard_normal() / 2.0).tanh());
            }
            emt_drift(&p, 0.5, &x, &mut out, &flag);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn hill_guard_flags_negative_bases() {
        let p = EmtParams::default();
        let flag = AtomicU64::new(0);
        let mut x = vec![0.0; DIM];
        x[SNAIL] = -1.0;
        let mut out = vec![0.0; DIM];
        emt_drift(&p, 0.0, &x, &mut out, &flag);
        assert!(flag.load(Ordering::Relaxed) > 0);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn x0_dimension() {
        assert_eq!(emt_x0().len(), DIM);
    }
}
