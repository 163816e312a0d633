//! Slot-level p-persistent CSMA quantities: frame durations, generic-slot
//! probabilities, expected contention time, and per-channel conditional
//! throughput.
//!
//! All arithmetic here is in contention-slot units; seconds are converted
//! at the module boundary. The per-cycle packet count is a floor, so the
//! exact throughput is piecewise constant; optimizers may use the relaxed
//! (floor-free) variant and re-apply the floor when reporting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::TimingParams;

/// Durations of the three frame outcomes, in slots: a full successful
/// data exchange, the RTS/CTS handshake preceding it, and a collision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameDurations {
    /// Data packet plus ACK and interframe overhead (`T_S`).
    pub success_slots: f64,
    /// Successful RTS/CTS reservation (`bar T_S`).
    pub handshake_slots: f64,
    /// Collision cost (`T_C`).
    pub collision_slots: f64,
}

/// Frame durations under the 4-way handshake.
pub fn frame_durations(t: &TimingParams) -> FrameDurations {
    let pd = t.propagation_slots();
    FrameDurations {
        success_slots: t.packet_slots + 2.0 * t.sifs_slots + 2.0 * pd + t.ack_slots,
        handshake_slots: t.difs_slots + t.rts_slots + t.cts_slots + 2.0 * pd,
        collision_slots: t.rts_slots + t.difs_slots + pd,
    }
}

/// Probabilities that a generic slot with `n` contenders holds a
/// successful transmission, stays idle, or holds a collision.
pub fn slot_probabilities(n: usize, p: f64) -> Result<(f64, f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "slot probabilities need at least one contender".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "transmission probability {p} outside [0, 1]"
        )));
    }
    let q = 1.0 - p;
    let p_success = n as f64 * p * q.powi(n as i32 - 1);
    let p_idle = q.powi(n as i32);
    let p_collision = 1.0 - p_success - p_idle;
    Ok((p_success, p_idle, p_collision.max(0.0)))
}

/// Expected time from the start of contention to the end of the first
/// successful RTS/CTS reservation, in slots: collisions, the idle runs
/// separating them, and the final handshake.
pub fn average_contention_time(n: usize, p: f64, frames: &FrameDurations) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "contention needs at least one contender".into(),
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "transmission probability {p} is degenerate; contention requires 0 < p < 1"
        )));
    }
    Ok(contention_slots(n, p, frames))
}

/// Unchecked contention-time evaluation for hot paths.
pub(crate) fn contention_slots(n: usize, p: f64, frames: &FrameDurations) -> f64 {
    let q = 1.0 - p;
    let q_n = q.powi(n as i32);
    // Mean idle-run length and mean collision count before a success,
    // both geometric.
    let mean_idle = q_n / (1.0 - q_n);
    let p_success = n as f64 * p * q.powi(n as i32 - 1);
    let mean_collisions = (1.0 - q_n) / p_success - 1.0;
    mean_collisions * frames.collision_slots
        + mean_idle * (mean_collisions + 1.0)
        + frames.handshake_slots
}

/// Conditional normalized throughput of one channel contended by `n` SUs,
/// given the sensing-phase length `tau_s` and reporting-phase length
/// `report_s`. The packet count is a floor; zero when no whole packet
/// exchange fits.
pub fn conditional_channel_throughput(
    n: usize,
    p: f64,
    timing: &TimingParams,
    frames: &FrameDurations,
    tau_s: f64,
    report_s: f64,
) -> Result<f64> {
    check_budget(timing, tau_s, report_s)?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "throughput needs at least one contender".into(),
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "transmission probability {p} is degenerate; throughput requires 0 < p < 1"
        )));
    }
    Ok(per_contender_throughput(n, p, timing, frames, tau_s, report_s, false))
}

/// Floor-free variant used as a smooth optimization objective.
pub fn conditional_channel_throughput_relaxed(
    n: usize,
    p: f64,
    timing: &TimingParams,
    frames: &FrameDurations,
    tau_s: f64,
    report_s: f64,
) -> Result<f64> {
    check_budget(timing, tau_s, report_s)?;
    if n == 0 || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(
            "relaxed throughput requires n >= 1 and 0 < p < 1".into(),
        ));
    }
    Ok(per_contender_throughput(n, p, timing, frames, tau_s, report_s, true))
}

fn check_budget(timing: &TimingParams, tau_s: f64, report_s: f64) -> Result<()> {
    if tau_s + report_s > timing.cycle_s {
        return Err(Error::InvalidArgument(format!(
            "sensing {} s plus reporting {} s exceed the {} s cycle",
            tau_s, report_s, timing.cycle_s
        )));
    }
    Ok(())
}

pub(crate) fn per_contender_throughput(
    n: usize,
    p: f64,
    timing: &TimingParams,
    frames: &FrameDurations,
    tau_s: f64,
    report_s: f64,
    relax_floor: bool,
) -> f64 {
    let budget_slots = (timing.cycle_s - tau_s - report_s) / timing.slot_s;
    if budget_slots <= 0.0 {
        return 0.0;
    }
    let per_packet = contention_slots(n, p, frames) + frames.success_slots;
    let packets = budget_slots / per_packet;
    let packets = if relax_floor { packets } else { packets.floor() };
    packets * frames.success_slots / timing.cycle_slots()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study_timing() -> TimingParams {
        TimingParams::default_study()
    }

    struct TestRng(u64);
    impl TestRng {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 >> 12;
            self.0 ^= self.0 << 25;
            self.0 ^= self.0 >> 27;
            (self.0.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn frame_durations_study_values() {
        let f = frame_durations(&study_timing());
        assert!((f.success_slots - 474.1).abs() < 1e-12);
        assert!((f.handshake_slots - 50.1).abs() < 1e-12);
        assert!((f.collision_slots - 30.05).abs() < 1e-12);
    }

    #[test]
    fn slot_probabilities_closed_forms() {
        let (s, i, c) = slot_probabilities(1, 0.3).unwrap();
        assert!((s - 0.3).abs() < 1e-15 && (i - 0.7).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, i, c) = slot_probabilities(2, 0.5).unwrap();
        assert!((s - 0.5).abs() < 1e-15 && (i - 0.25).abs() < 1e-15 && (c - 0.25).abs() < 1e-15);
        assert!(slot_probabilities(0, 0.5).is_err());
    }

    #[test]
    fn slot_probabilities_sum_to_one_on_grid() {
        for n in 1..=50 {
            for k in 1..20 {
                let p = k as f64 / 20.0;
                let (s, i, c) = slot_probabilities(n, p).unwrap();
                assert!((s + i + c - 1.0).abs() < 1e-12, "n={n} p={p}");
                assert!(s >= 0.0 && i >= 0.0 && c >= 0.0);
            }
        }
    }

    #[test]
    fn slot_probabilities_match_bernoulli_simulation() {
        let n = 5;
        let p = 0.1;
        let trials = 1_000_000u32;
        let mut rng = TestRng(0x9E3779B97F4A7C15);
        let (mut succ, mut idle) = (0u32, 0u32);
        for _ in 0..trials {
            let transmitters = (0..n).filter(|_| rng.next_f64() < p).count();
            match transmitters {
                0 => idle += 1,
                1 => succ += 1,
                _ => {}
            }
        }
        let (ps, pi, pc) = slot_probabilities(n, p).unwrap();
        let t = trials as f64;
        // 3-sigma binomial bands.
        for (hat, want) in [
            (succ as f64 / t, ps),
            (idle as f64 / t, pi),
            ((trials - succ - idle) as f64 / t, pc),
        ] {
            let sigma = (want * (1.0 - want) / t).sqrt();
            assert!(
                (hat - want).abs() <= 3.0 * sigma,
                "empirical {hat} vs {want} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn contention_time_single_contender() {
        let f = frame_durations(&study_timing());
        // One contender never collides; at p = 0.5 the mean idle run is 1.
        let t = average_contention_time(1, 0.5, &f).unwrap();
        assert!((t - (1.0 + f.handshake_slots)).abs() < 1e-12);
    }

    #[test]
    fn contention_time_two_contenders_closed_form() {
        let f = frame_durations(&study_timing());
        let t = average_contention_time(2, 0.5, &f).unwrap();
        // mean collisions 0.5, mean idle run 1/3.
        let want = 0.5 * f.collision_slots + (1.0 / 3.0) * 1.5 + f.handshake_slots;
        assert!((t - want).abs() < 1e-12);
    }

    #[test]
    fn contention_time_blows_up_for_tiny_p() {
        let f = frame_durations(&study_timing());
        let mut prev = 0.0;
        for &p in &[1e-2, 1e-3, 1e-4, 1e-5] {
            let t = average_contention_time(10, p, &f).unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(prev > 1e4);
        assert!(average_contention_time(10, 0.0, &f).is_err());
        assert!(average_contention_time(10, 1.0, &f).is_err());
    }

    /// Renewal-process Monte Carlo using the geometric laws of the idle
    /// runs and the collision count.
    fn contention_mc(n: usize, p: f64, frames: &FrameDurations, epochs: u32, seed: u64) -> f64 {
        let (ps, pi, pc) = slot_probabilities(n, p).unwrap();
        let collision_ratio = pc / (1.0 - pi);
        let mut rng = TestRng(seed);
        let mut total = 0.0;
        let _ = ps;
        for _ in 0..epochs {
            // Number of collisions before the successful reservation.
            let mut collisions = 0u32;
            while rng.next_f64() < collision_ratio {
                collisions += 1;
            }
            let mut t = collisions as f64 * frames.collision_slots + frames.handshake_slots;
            // One idle run before each collision and one before the success.
            for _ in 0..=collisions {
                let mut run = 0u32;
                while rng.next_f64() < pi {
                    run += 1;
                }
                t += run as f64;
            }
            total += t;
        }
        total / epochs as f64
    }

    #[test]
    fn contention_time_matches_renewal_monte_carlo() {
        let f = frame_durations(&study_timing());
        for &(n, p) in &[(2usize, 0.5f64), (5, 0.1), (10, 0.05)] {
            let analytic = average_contention_time(n, p, &f).unwrap();
            let mc = contention_mc(n, p, &f, 1_000_000, 0xC0FFEE ^ n as u64);
            let rel = ((mc - analytic) / analytic).abs();
            assert!(rel < 0.01, "n={n} p={p}: analytic {analytic} mc {mc} rel {rel}");
        }
    }

    #[test]
    fn conditional_throughput_floor_and_zero_cases() {
        let timing = study_timing();
        let f = frame_durations(&timing);
        // No contention time left.
        let t = conditional_channel_throughput(1, 0.2, &timing, &f, timing.cycle_s - 8e-4, 8e-4)
            .unwrap();
        assert_eq!(t, 0.0);
        // Budget below one packet exchange.
        let tau = timing.cycle_s - 8e-4 - 400.0 * timing.slot_s;
        let t = conditional_channel_throughput(1, 0.2, &timing, &f, tau, 8e-4).unwrap();
        assert_eq!(t, 0.0);
        // Over-budget sensing is an error.
        assert!(
            conditional_channel_throughput(1, 0.2, &timing, &f, timing.cycle_s, 8e-4).is_err()
        );
    }

    #[test]
    fn conditional_throughput_study_point() {
        let timing = study_timing();
        let f = frame_durations(&timing);
        let nt = conditional_channel_throughput(1, 0.1026, &timing, &f, 5.4e-3, 8e-4).unwrap();
        // 4690 budget slots, 58.85 + 474.1 slots per packet -> 8 packets.
        let mean_idle = (1.0 - 0.1026) / 0.1026;
        let per_packet = mean_idle + f.handshake_slots + f.success_slots;
        let packets = ((0.1 - 5.4e-3 - 8e-4) / 20e-6 / per_packet).floor();
        assert_eq!(packets, 8.0);
        let want = packets * f.success_slots / timing.cycle_slots();
        assert!((nt - want).abs() < 1e-12);
        let relaxed =
            conditional_channel_throughput_relaxed(1, 0.1026, &timing, &f, 5.4e-3, 8e-4).unwrap();
        assert!(relaxed >= nt);
        assert!(relaxed - nt < f.success_slots / timing.cycle_slots());
    }

    #[test]
    fn conditional_throughput_monotone_in_tau_and_n() {
        let timing = study_timing();
        let f = frame_durations(&timing);
        let report = 8e-4;
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let tau = 1e-3 * k as f64;
            let t = conditional_channel_throughput(2, 0.1, &timing, &f, tau, report).unwrap();
            assert!(t <= prev + 1e-15);
            prev = t;
        }
        let mut prev = f64::INFINITY;
        for n in 1..=10 {
            let t = conditional_channel_throughput(n, 0.1, &timing, &f, 5e-3, report).unwrap();
            assert!(t <= prev + 1e-15, "throughput increased at n={n}");
            prev = t;
        }
    }
}
