//! Energy-detection statistics and cooperative-sensing fusion.
//!
//! Covers the Gaussian tail function and its inverse, the energy-detector
//! detection/false-alarm pair, hard-decision a-out-of-b fusion with and
//! without reporting errors, and the inversion that equalizes a fused
//! detection target across sensors.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::types::ErrorModel;

// ---------------------------------------------------------------------------
// Gaussian tail
// ---------------------------------------------------------------------------

/// Standard normal tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal density.
fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_function`] on (0, 1).
///
/// Bracketed bisection refined by Newton steps; the result satisfies
/// `q_function(q_inverse(p)) = p` to better than 1e-10 relative.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "q_inverse requires p in (0, 1), got {p}"
        )));
    }
    let mut lo = -40.0f64;
    let mut hi = 40.0f64;
    // Q is strictly decreasing: Q(lo) ~ 1, Q(hi) ~ 0.
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let f = q_function(x) - p;
        let d = phi(x);
        if d <= f64::MIN_POSITIVE {
            break;
        }
        let step = f / d;
        let next = x + step;
        if next.is_finite() && next > lo - 1.0 && next < hi + 1.0 {
            x = next;
        } else {
            break;
        }
        if step.abs() < 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Energy detector
// ---------------------------------------------------------------------------

/// Detection probability of an energy detector with threshold-to-noise
/// ratio `eps_over_n0`, sensing time `tau_s`, linear SNR `gamma`, and
/// sampling frequency `f_s`.
pub fn detection_probability(eps_over_n0: f64, tau_s: f64, gamma: f64, f_s: f64) -> Result<f64> {
    if !(tau_s > 0.0) || !(f_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensing time {tau_s} and sampling frequency {f_s} must be positive"
        )));
    }
    let arg = (eps_over_n0 - gamma - 1.0) * (tau_s * f_s / (2.0 * gamma + 1.0)).sqrt();
    Ok(q_function(arg))
}

/// False-alarm probability at a fixed detection probability `pd`,
/// sensing time `tau_s`, linear SNR `gamma`, and sampling frequency `f_s`.
///
/// Strictly decreasing in `tau_s` for `gamma > 0` at fixed `pd`.
pub fn false_alarm_probability(pd: f64, tau_s: f64, gamma: f64, f_s: f64) -> Result<f64> {
    if !(pd > 0.0 && pd < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "false_alarm_probability requires pd in (0, 1), got {pd}"
        )));
    }
    if !(tau_s > 0.0) || !(f_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensing time {tau_s} and sampling frequency {f_s} must be positive"
        )));
    }
    Ok(false_alarm_from_qinv(q_inverse(pd)?, tau_s, gamma, f_s))
}

/// Hot-path variant with `Q^{-1}(pd)` precomputed.
pub(crate) fn false_alarm_from_qinv(qinv_pd: f64, tau_s: f64, gamma: f64, f_s: f64) -> f64 {
    q_function((2.0 * gamma + 1.0).sqrt() * qinv_pd + (tau_s * f_s).sqrt() * gamma)
}

/// Detector threshold (relative to noise power) that achieves `pd`.
pub fn threshold_for_target(pd: f64, tau_s: f64, gamma: f64, f_s: f64) -> Result<f64> {
    if !(pd > 0.0 && pd < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold_for_target requires pd in (0, 1), got {pd}"
        )));
    }
    if !(tau_s > 0.0) || !(f_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensing time {tau_s} and sampling frequency {f_s} must be positive"
        )));
    }
    Ok(gamma + 1.0 + q_inverse(pd)? * ((2.0 * gamma + 1.0) / (tau_s * f_s)).sqrt())
}

/// Per-link sensing operating point: detection and false-alarm
/// probabilities with the sensing time and detector threshold behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSensingStats {
    pub pd: f64,
    pub pf: f64,
    pub tau_s: f64,
    pub eps_over_n0: f64,
}

impl LinkSensingStats {
    /// Operating point that meets detection probability `pd` exactly.
    pub fn for_target(pd: f64, tau_s: f64, gamma: f64, f_s: f64) -> Result<Self> {
        let eps_over_n0 = threshold_for_target(pd, tau_s, gamma, f_s)?;
        let pf = false_alarm_probability(pd, tau_s, gamma, f_s)?;
        Ok(Self {
            pd,
            pf,
            tau_s,
            eps_over_n0,
        })
    }
}

// ---------------------------------------------------------------------------
// a-out-of-b fusion
// ---------------------------------------------------------------------------

/// Probability that at least `a` of the independent per-SU events occur,
/// given their individual probabilities.
///
/// This is the hard-decision a-out-of-b rule: feed per-SU detection
/// probabilities to get the fused detection probability, or per-SU
/// false-alarm probabilities for the fused false alarm. Computed by
/// dynamic programming over the vote-count distribution in O(b^2).
pub fn fuse_a_out_of_b(per_su_probs: &[f64], a: usize) -> Result<f64> {
    let b = per_su_probs.len();
    if b == 0 {
        return Err(Error::InvalidArgument(
            "fusion requires at least one sensing report".into(),
        ));
    }
    if a < 1 || a > b {
        return Err(Error::InvalidArgument(format!(
            "fusion threshold {a} outside [1, {b}]"
        )));
    }
    Ok(fuse_tail(per_su_probs, a))
}

/// Vote-count tail without argument checks, for hot paths.
pub(crate) fn fuse_tail(probs: &[f64], a: usize) -> f64 {
    let b = probs.len();
    // counts[k] = P(exactly k of the first m reports are positive)
    let mut counts = vec![0.0f64; b + 1];
    counts[0] = 1.0;
    for (m, &p) in probs.iter().enumerate() {
        let q = 1.0 - p;
        for k in (0..=m).rev() {
            counts[k + 1] += counts[k] * p;
            counts[k] *= q;
        }
    }
    counts[a..].iter().sum()
}

/// The per-SU detection probability that makes the fused a-out-of-b
/// detection probability equal `pd_hat` when all `b` sensors operate at
/// the same point.
///
/// The fused value is strictly increasing in the common per-SU value, so
/// bisection converges; the result reproduces `pd_hat` to 1e-10.
pub fn per_su_target(pd_hat: f64, a: usize, b: usize) -> Result<f64> {
    if !(pd_hat > 0.0 && pd_hat < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "per_su_target requires pd_hat in (0, 1), got {pd_hat}"
        )));
    }
    if a < 1 || a > b {
        return Err(Error::InvalidArgument(format!(
            "fusion threshold {a} outside [1, {b}]"
        )));
    }
    if b == 1 {
        return Ok(pd_hat);
    }
    let fused = |x: f64| fuse_tail(&vec![x; b], a);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fused(mid) < pd_hat {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Reporting errors
// ---------------------------------------------------------------------------

/// Probability that a receiver records a positive report given the
/// sender's event probability `p_u` and the link bit-error probability
/// `pe`. An SU reading its own result sees it unmodified.
pub fn effective_report_probability(p_u: f64, pe: f64, same_su: bool) -> f64 {
    if same_su {
        p_u
    } else {
        p_u * (1.0 - pe) + (1.0 - p_u) * pe
    }
}

/// Fused a-out-of-b probability as seen by `receiver` when the reports of
/// `senders` traverse error-prone links.
///
/// `per_sender_probs[k]` is the event probability at `senders[k]`. With an
/// all-zero error model this reduces exactly to [`fuse_a_out_of_b`].
pub fn fused_with_errors(
    receiver: usize,
    per_sender_probs: &[f64],
    senders: &[usize],
    error_model: &ErrorModel,
    a: usize,
) -> Result<f64> {
    if per_sender_probs.len() != senders.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sender probabilities for {} senders",
            per_sender_probs.len(),
            senders.len()
        )));
    }
    if receiver >= error_model.num_sus() {
        return Err(Error::IndexOutOfRange(format!("receiver SU {}", receiver + 1)));
    }
    for &s in senders {
        if s >= error_model.num_sus() {
            return Err(Error::IndexOutOfRange(format!("sender SU {}", s + 1)));
        }
    }
    let effective: Vec<f64> = senders
        .iter()
        .zip(per_sender_probs)
        .map(|(&s, &p)| effective_report_probability(p, error_model.pe(receiver, s), s == receiver))
        .collect();
    fuse_a_out_of_b(&effective, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gaussian tail by adaptive Simpson quadrature, independent of the
    /// erfc-based implementation. Good to ~1e-14 absolute on [-8, 8].
    fn q_oracle(x: f64) -> f64 {
        if x < -8.0 {
            return 1.0 - q_oracle(-x);
        }
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        }
        fn adaptive(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            eps: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = simpson(a, m, fa, flm, fm);
            let right = simpson(m, b, fm, frm, fb);
            if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                    + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
            }
        }
        // Integrate from x out to x+45 where the density is far below 1e-300.
        let a = x;
        let b = x + 45.0;
        let fa = density(a);
        let m = 0.5 * (a + b);
        let fm = density(m);
        let fb = density(b);
        adaptive(&density, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), 1e-15, 40)
    }

    #[test]
    fn q_function_at_zero_is_half() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn q_function_underflows_in_far_tail() {
        assert!(q_function(38.0) < 1e-300);
        assert!(q_function(38.0) >= 0.0);
    }

    #[test]
    fn q_function_matches_quadrature_oracle() {
        for &x in &[
            -6.0, -3.2, -1.0, -0.5, 0.0, 0.3, 1.0, 1.6448536, 2.3, 4.0, 6.5, 8.0,
        ] {
            let got = q_function(x);
            let want = q_oracle(x);
            assert!(
                (got - want).abs() <= 1e-12,
                "Q({x}) = {got}, oracle {want}"
            );
        }
        assert!((q_function(1.6448536) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn q_function_monotone_non_increasing() {
        let mut prev = f64::INFINITY;
        let mut x = -10.0;
        while x <= 10.0 {
            let v = q_function(x);
            assert!(v <= prev);
            prev = v;
            x += 0.01;
        }
    }

    #[test]
    fn q_inverse_round_trips() {
        assert!(q_inverse(0.5).unwrap().abs() < 1e-12);
        let x = q_inverse(q_function(2.3)).unwrap();
        assert!((x - 2.3).abs() < 1e-10, "round trip gave {x}");
        let v = q_inverse(0.9).unwrap();
        assert!((v - (-1.2815516)).abs() < 1e-6, "Q^-1(0.9) = {v}");
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let x = q_inverse(p).unwrap();
            let back = q_function(x);
            assert!(
                ((back - p) / p).abs() < 1e-10,
                "Q(Q^-1({p})) = {back}"
            );
        }
        assert!(q_inverse(0.0).is_err());
        assert!(q_inverse(1.0).is_err());
    }

    #[test]
    fn detection_probability_degenerate_threshold() {
        // Threshold equal to signal-plus-noise power puts the argument at 0.
        for &(tau, fs) in &[(1e-3, 6e6), (0.05, 1e6)] {
            let pd = detection_probability(1.1, tau, 0.1, fs).unwrap();
            assert!((pd - 0.5).abs() < 1e-15);
        }
        // Very large threshold drives detection to zero.
        let pd = detection_probability(1e6, 1e-3, 0.1, 6e6).unwrap();
        assert!(pd < 1e-300);
        assert!(detection_probability(1.0, 0.0, 0.1, 6e6).is_err());
    }

    #[test]
    fn detection_probability_formula_cross_check() {
        // gamma = 0.1, tau*fs = 6000, threshold ratio 1.05.
        let tau = 1e-3_f64;
        let fs = 6e6_f64;
        let gamma = 0.1_f64;
        let arg = (1.05 - gamma - 1.0) * (tau * fs / (2.0 * gamma + 1.0)).sqrt();
        let want = q_oracle(arg);
        let got = detection_probability(1.05, tau, gamma, fs).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn false_alarm_zero_snr_equals_pd() {
        for &pd in &[0.1, 0.5, 0.9, 0.999] {
            let pf = false_alarm_probability(pd, 5e-3, 0.0, 6e6).unwrap();
            assert!((pf - pd).abs() < 1e-10, "pf {pf} vs pd {pd}");
        }
    }

    #[test]
    fn false_alarm_at_half_pd_reduces() {
        // Q^-1(0.5) = 0 leaves only the SNR term.
        let tau = 2e-3;
        let fs = 6e6;
        let gamma = 0.05;
        let pf = false_alarm_probability(0.5, tau, gamma, fs).unwrap();
        let want = q_function((tau * fs).sqrt() * gamma);
        assert!((pf - want).abs() < 1e-15);
    }

    #[test]
    fn false_alarm_study_point_matches_oracle() {
        // pd = 0.9, gamma = -15 dB, tau = 5 ms, fs = 6 MHz.
        let gamma = 10f64.powf(-1.5);
        let pf = false_alarm_probability(0.9, 5e-3, gamma, 6e6).unwrap();
        let arg =
            (2.0 * gamma + 1.0).sqrt() * q_inverse(0.9).unwrap() + (5e-3_f64 * 6e6).sqrt() * gamma;
        let want = q_oracle(arg);
        assert!((pf - want).abs() < 1e-12);
        assert!(pf < 1e-3, "long sensing at -15 dB should suppress false alarms: {pf}");
    }

    #[test]
    fn false_alarm_monotone_in_tau_and_gamma() {
        let fs = 6e6;
        for &pd in &[0.6, 0.9, 0.99] {
            let mut prev = f64::INFINITY;
            for k in 1..=40 {
                let tau = 1e-4 * k as f64;
                let pf = false_alarm_probability(pd, tau, 0.0316, fs).unwrap();
                assert!(pf <= prev + 1e-15, "pf not decreasing in tau at pd={pd}");
                prev = pf;
            }
            let mut prev = f64::INFINITY;
            for k in 1..=40 {
                let gamma = 0.002 * k as f64;
                let pf = false_alarm_probability(pd, 3e-3, gamma, fs).unwrap();
                assert!(pf <= prev + 1e-15, "pf not decreasing in gamma at pd={pd}");
                prev = pf;
            }
        }
    }

    /// Exhaustive 2^b enumeration oracle for the fusion rule.
    fn fuse_oracle(probs: &[f64], a: usize) -> f64 {
        let b = probs.len();
        let mut total = 0.0;
        let mut mass = 0.0;
        for pattern in 0u32..(1 << b) {
            let mut prob = 1.0;
            let mut votes = 0;
            for (k, &p) in probs.iter().enumerate() {
                if pattern >> k & 1 == 1 {
                    prob *= p;
                    votes += 1;
                } else {
                    prob *= 1.0 - p;
                }
            }
            mass += prob;
            if votes >= a {
                total += prob;
            }
        }
        assert!((mass - 1.0).abs() < 1e-12, "oracle mass {mass}");
        total
    }

    #[test]
    fn fusion_closed_form_examples() {
        let p = [0.1, 0.1, 0.1];
        let or = fuse_a_out_of_b(&p, 1).unwrap();
        assert!((or - (1.0 - 0.9f64.powi(3))).abs() < 1e-15);
        let and = fuse_a_out_of_b(&p, 3).unwrap();
        assert!((and - 0.001).abs() < 1e-15);
        let maj = fuse_a_out_of_b(&[0.5, 0.5, 0.5], 2).unwrap();
        assert!((maj - 0.5).abs() < 1e-15);
        assert!(fuse_a_out_of_b(&[], 1).is_err());
        assert!(fuse_a_out_of_b(&p, 0).is_err());
        assert!(fuse_a_out_of_b(&p, 4).is_err());
    }

    #[test]
    fn fusion_matches_enumeration_oracle() {
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = || {
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            (state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
        };
        for b in 1..=6 {
            for a in 1..=b {
                for _ in 0..50 {
                    let probs: Vec<f64> = (0..b).map(|_| next()).collect();
                    let dp = fuse_a_out_of_b(&probs, a).unwrap();
                    let oracle = fuse_oracle(&probs, a);
                    assert!(
                        (dp - oracle).abs() <= 1e-12,
                        "b={b} a={a}: dp {dp} oracle {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn fusion_monotone_in_inputs_and_threshold() {
        let probs = [0.2, 0.5, 0.7, 0.4];
        let mut prev = f64::INFINITY;
        for a in 1..=probs.len() {
            let v = fuse_a_out_of_b(&probs, a).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        for k in 0..probs.len() {
            let mut bumped = probs;
            bumped[k] += 0.1;
            let v0 = fuse_a_out_of_b(&probs, 2).unwrap();
            let v1 = fuse_a_out_of_b(&bumped, 2).unwrap();
            assert!(v1 >= v0);
        }
    }

    #[test]
    fn per_su_target_examples_and_round_trip() {
        assert!((per_su_target(0.73, 1, 1).unwrap() - 0.73).abs() < 1e-15);
        let x = per_su_target(0.99, 1, 2).unwrap();
        assert!((x - 0.9).abs() < 1e-9, "closed-form inversion gave {x}");
        for &(a, b, pd_hat) in &[(2usize, 3usize, 0.9f64), (3, 5, 0.95), (1, 4, 0.9), (4, 4, 0.8)] {
            let x = per_su_target(pd_hat, a, b).unwrap();
            let fused = fuse_a_out_of_b(&vec![x; b], a).unwrap();
            assert!(
                (fused - pd_hat).abs() < 1e-10,
                "a={a} b={b}: fused {fused} target {pd_hat}"
            );
        }
    }

    #[test]
    fn effective_report_probability_examples() {
        assert_eq!(effective_report_probability(0.7, 0.0, false), 0.7);
        assert!((effective_report_probability(0.3, 0.5, false) - 0.5).abs() < 1e-15);
        assert!((effective_report_probability(0.9, 0.05, false) - 0.86).abs() < 1e-15);
        assert_eq!(effective_report_probability(0.9, 0.4, true), 0.9);
    }

    #[test]
    fn fused_with_errors_reduces_without_errors() {
        let zero = ErrorModel::zero(4);
        let probs = [0.93, 0.88, 0.9];
        let senders = [0, 2, 3];
        for a in 1..=3 {
            let with = fused_with_errors(1, &probs, &senders, &zero, a).unwrap();
            let without = fuse_a_out_of_b(&probs, a).unwrap();
            assert_eq!(with, without, "pe = 0 must bit-match the error-free path");
        }
    }

    #[test]
    fn fused_with_errors_single_own_report() {
        let em = ErrorModel::uniform(3, 0.2).unwrap();
        let v = fused_with_errors(1, &[0.84], &[1], &em, 1).unwrap();
        assert_eq!(v, 0.84);
    }

    #[test]
    fn fused_with_errors_two_senders_joint_oracle() {
        // Receiver 0 hears itself perfectly and SU 1 through a 5% link.
        let em = ErrorModel::uniform(2, 0.05).unwrap();
        let pd = [0.9, 0.9];
        let got = fused_with_errors(0, &pd, &[0, 1], &em, 1).unwrap();
        // Enumerate (outcome, flip) jointly: outcome bits for both SUs,
        // flip bit only on the 1 -> 0 link.
        let mut want = 0.0;
        for o0 in 0..2 {
            for o1 in 0..2 {
                for f1 in 0..2 {
                    let p = (if o0 == 1 { pd[0] } else { 1.0 - pd[0] })
                        * (if o1 == 1 { pd[1] } else { 1.0 - pd[1] })
                        * (if f1 == 1 { 0.05 } else { 0.95 });
                    let received0 = o0;
                    let received1 = o1 ^ f1;
                    if received0 + received1 >= 1 {
                        want += p;
                    }
                }
            }
        }
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
    }

    #[test]
    fn fused_with_errors_index_checks() {
        let em = ErrorModel::zero(2);
        assert!(fused_with_errors(5, &[0.5], &[0], &em, 1).is_err());
        assert!(fused_with_errors(0, &[0.5], &[7], &em, 1).is_err());
        assert!(fused_with_errors(0, &[0.5, 0.5], &[0], &em, 1).is_err());
    }
}
