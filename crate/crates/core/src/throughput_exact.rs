//! Exact normalized throughput without reporting errors.
//!
//! Enumerates channel availability, the fused sensing outcome per channel
//! (correctly detected available channels and misdetected busy ones), and
//! the random access split of SUs over perceived-available channels. All
//! SUs share one fused view here, so outcomes are enumerated at the
//! per-channel fused level and the access split is a multinomial over the
//! perceived-available set.

use crate::contention::{frame_durations, per_contender_throughput, FrameDurations};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sensing;
use crate::types::{SensingAccessParams, SensingAssignment, ThroughputReport};

/// Scenario-count cap for the exact enumeration.
pub const SCENARIO_BUDGET: u128 = 10_000_000;
/// Access-vector composition cap for one conditional-throughput sum.
pub const COMPOSITION_BUDGET: u128 = 1_000_000;

// ---------------------------------------------------------------------------
// Access context
// ---------------------------------------------------------------------------

/// Precomputed per-contender-count channel throughput for one choice of
/// sensing-phase length and access probability.
///
/// The conditional throughput of a channel depends on the number of SUs
/// that picked it but not on which channel it is, so one table serves the
/// whole enumeration.
#[derive(Debug, Clone)]
pub struct AccessContext {
    pub n_sus: usize,
    pub num_channels: usize,
    /// `per_contender_nt[n]`: throughput of a channel chosen by `n` SUs;
    /// entry 0 is zero.
    pub per_contender_nt: Vec<f64>,
}

impl AccessContext {
    /// Build the table. A sensing-plus-reporting load that exceeds the
    /// cycle yields an all-zero table rather than an error so optimizers
    /// can probe infeasible corners.
    pub fn new(
        scenario: &ScenarioConfig,
        frames: &FrameDurations,
        tau_total_s: f64,
        p: f64,
        relax_floor: bool,
    ) -> Self {
        let n = scenario.num_sus();
        let report_s = scenario.timing.report_phase_s(n);
        let mut per_contender_nt = vec![0.0; n + 1];
        if p > 0.0 && p < 1.0 {
            for (cnt, slot) in per_contender_nt.iter_mut().enumerate().skip(1) {
                *slot = per_contender_throughput(
                    cnt,
                    p,
                    &scenario.timing,
                    frames,
                    tau_total_s,
                    report_s,
                    relax_floor,
                );
            }
        }
        Self {
            n_sus: n,
            num_channels: scenario.num_channels(),
            per_contender_nt,
        }
    }
}

// ---------------------------------------------------------------------------
// Access-vector enumeration
// ---------------------------------------------------------------------------

/// Probability that the SUs split over `k_e` perceived-available channels
/// exactly as `n_vec` describes: the multinomial count times `(1/k_e)^N`.
pub fn access_vector_probability(n_vec: &[usize], k_e: usize, n_sus: usize) -> Result<f64> {
    if k_e == 0 || n_vec.len() != k_e {
        return Err(Error::InvalidArgument(format!(
            "access vector of length {} for {} perceived channels",
            n_vec.len(),
            k_e
        )));
    }
    let total: usize = n_vec.iter().sum();
    if total != n_sus {
        return Err(Error::InvalidArgument(format!(
            "access vector sums to {total}, expected {n_sus}"
        )));
    }
    let mut coeff = 1.0f64;
    let mut remaining = n_sus;
    for &n_j in n_vec {
        coeff *= binomial(remaining, n_j);
        remaining -= n_j;
    }
    Ok(coeff * (1.0 / k_e as f64).powi(n_sus as i32))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Visit every composition of `total` into `parts` ordered non-negative
/// integers.
fn for_each_composition(total: usize, parts: usize, f: &mut impl FnMut(&[usize])) {
    fn recurse(buf: &mut Vec<usize>, remaining: usize, left: usize, f: &mut impl FnMut(&[usize])) {
        if left == 1 {
            buf.push(remaining);
            f(buf);
            buf.pop();
            return;
        }
        for take in 0..=remaining {
            buf.push(take);
            recurse(buf, remaining - take, left - 1, f);
            buf.pop();
        }
    }
    if parts == 0 {
        return;
    }
    let mut buf = Vec::with_capacity(parts);
    recurse(&mut buf, total, parts, f);
}

fn composition_count(total: usize, parts: usize) -> u128 {
    // C(total + parts - 1, parts - 1)
    if parts == 0 {
        return 0;
    }
    let n = (total + parts - 1) as u128;
    let k = (parts - 1) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Conditional normalized throughput for one fused sensing realization:
/// `theta` holds the correctly detected available channels, `omega` the
/// misdetected busy ones. Sums the access-split multinomial; only `theta`
/// channels contribute. Returns 0 when nothing is perceived available.
pub fn conditional_throughput_ne(theta: &[usize], omega: &[usize], ctx: &AccessContext) -> f64 {
    conditional_throughput_ne_accumulate(theta, omega, ctx, 1.0, None)
}

/// Same sum, optionally scaled by `weight` and scattered into a
/// per-channel accumulator.
fn conditional_throughput_ne_accumulate(
    theta: &[usize],
    omega: &[usize],
    ctx: &AccessContext,
    weight: f64,
    mut per_channel: Option<&mut [f64]>,
) -> f64 {
    let k_e = theta.len() + omega.len();
    if k_e == 0 || theta.is_empty() {
        return 0.0;
    }
    let n = ctx.n_sus;
    let m = ctx.num_channels as f64;
    let uniform = (1.0 / k_e as f64).powi(n as i32);
    // Composition positions: theta channels first, then omega.
    let mut total = 0.0;
    for_each_composition(n, k_e, &mut |split| {
        let mut coeff = 1.0f64;
        let mut remaining = n;
        for &n_j in split {
            coeff *= binomial(remaining, n_j);
            remaining -= n_j;
        }
        let prob = coeff * uniform;
        for (pos, &ch) in theta.iter().enumerate() {
            let n_j = split[pos];
            if n_j > 0 {
                let term = prob * ctx.per_contender_nt[n_j] / m;
                total += term;
                if let Some(acc) = per_channel.as_deref_mut() {
                    acc[ch] += weight * term;
                }
            }
        }
    });
    total
}

// ---------------------------------------------------------------------------
// Scenario enumeration
// ---------------------------------------------------------------------------

/// One realization of channel truth and fused sensing outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeScenario {
    /// Truly available channels.
    pub available: Vec<usize>,
    /// Available channels whose fused decision is also "available".
    pub detected_available: Vec<usize>,
    /// Busy channels whose fused decision is "available".
    pub misdetected: Vec<usize>,
    /// Joint probability of this realization.
    pub weight: f64,
}

/// Per-channel fused false-alarm and detection probabilities for the
/// given parameters, under the equalized per-SU detection construction.
///
/// Channels with no sensors report `(1, 1)`: they are treated as sensed
/// busy with certainty and are never accessed.
pub fn channel_fusion_stats(
    scenario: &ScenarioConfig,
    params: &SensingAccessParams,
    assignment: &SensingAssignment,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = scenario.num_channels();
    let mut fused_pf = vec![1.0; m];
    let mut fused_pd = vec![1.0; m];
    for j in 0..m {
        let sensors = &assignment.per_channel()[j];
        let b = sensors.len();
        if b == 0 {
            continue;
        }
        let a = params.a[j];
        let pd_star = sensing::per_su_target(scenario.pd_target[j], a, b)?;
        let pf: Result<Vec<f64>> = sensors
            .iter()
            .map(|&i| {
                sensing::false_alarm_probability(
                    pd_star,
                    params.tau[i][j],
                    scenario.snr[i][j],
                    scenario.sampling_freq_hz,
                )
            })
            .collect();
        fused_pf[j] = sensing::fuse_a_out_of_b(&pf?, a)?;
        fused_pd[j] = sensing::fuse_a_out_of_b(&vec![pd_star; b], a)?;
    }
    Ok((fused_pf, fused_pd))
}

/// Enumerate every (availability, detection, misdetection) realization
/// with its probability. Weights sum to one over the full list.
pub fn outcome_scenarios(
    p_idle: &[f64],
    fused_pf: &[f64],
    fused_pd: &[f64],
) -> Result<Vec<OutcomeScenario>> {
    let m = p_idle.len();
    let count = scenario_count(m);
    if count > SCENARIO_BUDGET {
        return Err(Error::BudgetExceeded {
            what: "outcome scenarios",
            count,
            cap: SCENARIO_BUDGET,
        });
    }
    let mut out = Vec::new();
    enumerate_scenarios(p_idle, fused_pf, fused_pd, &mut |theta, omega, psi, w| {
        out.push(OutcomeScenario {
            available: psi.to_vec(),
            detected_available: theta.to_vec(),
            misdetected: omega.to_vec(),
            weight: w,
        });
    });
    Ok(out)
}

fn scenario_count(m: usize) -> u128 {
    // For each of 2^M availability patterns, every subset of the available
    // channels can be detected and every subset of the busy ones
    // misdetected: 4^M realizations in total.
    (4u128).saturating_pow(m as u32)
}

fn enumerate_scenarios(
    p_idle: &[f64],
    fused_pf: &[f64],
    fused_pd: &[f64],
    visit: &mut impl FnMut(&[usize], &[usize], &[usize], f64),
) {
    let m = p_idle.len();
    let full: u32 = if m >= 32 { u32::MAX } else { (1u32 << m) - 1 };
    let channels_of =
        |mask: u32| -> Vec<usize> { (0..m).filter(|&j| mask >> j & 1 == 1).collect() };
    for psi_mask in 0..=full {
        let mut w_psi = 1.0;
        for j in 0..m {
            w_psi *= if psi_mask >> j & 1 == 1 {
                p_idle[j]
            } else {
                1.0 - p_idle[j]
            };
        }
        if w_psi == 0.0 {
            continue;
        }
        let psi = channels_of(psi_mask);
        let busy_mask = full & !psi_mask;
        // Subsets of psi are the detected-available sets; subsets of the
        // busy channels are the misdetected sets.
        let mut theta_mask = psi_mask;
        loop {
            let mut w_theta = 1.0;
            for &j in &psi {
                w_theta *= if theta_mask >> j & 1 == 1 {
                    1.0 - fused_pf[j]
                } else {
                    fused_pf[j]
                };
            }
            if w_theta != 0.0 {
                let theta = channels_of(theta_mask);
                let mut omega_mask = busy_mask;
                loop {
                    let mut w_omega = 1.0;
                    for j in 0..m {
                        if busy_mask >> j & 1 == 1 {
                            w_omega *= if omega_mask >> j & 1 == 1 {
                                1.0 - fused_pd[j]
                            } else {
                                fused_pd[j]
                            };
                        }
                    }
                    if w_omega != 0.0 {
                        let omega = channels_of(omega_mask);
                        visit(&theta, &omega, &psi, w_psi * w_theta * w_omega);
                    }
                    if omega_mask == 0 {
                        break;
                    }
                    omega_mask = (omega_mask - 1) & busy_mask;
                }
            }
            if theta_mask == 0 {
                break;
            }
            theta_mask = (theta_mask - 1) & psi_mask;
        }
    }
}

// ---------------------------------------------------------------------------
// Normalized throughput
// ---------------------------------------------------------------------------

/// Exact normalized throughput (no reporting errors) for the given
/// parameters: the full enumeration over availability, fused sensing
/// outcomes, and access splits.
pub fn normalized_throughput_ne(
    scenario: &ScenarioConfig,
    params: &SensingAccessParams,
    assignment: &SensingAssignment,
) -> Result<ThroughputReport> {
    params.validate(assignment, scenario.timing.cycle_s)?;
    let m = scenario.num_channels();
    let n = scenario.num_sus();
    let scen_count = scenario_count(m);
    if scen_count > SCENARIO_BUDGET {
        return Err(Error::BudgetExceeded {
            what: "outcome scenarios",
            count: scen_count,
            cap: SCENARIO_BUDGET,
        });
    }
    let comp_count = composition_count(n, m);
    if comp_count > COMPOSITION_BUDGET {
        return Err(Error::BudgetExceeded {
            what: "access-vector compositions",
            count: comp_count,
            cap: COMPOSITION_BUDGET,
        });
    }

    let (fused_pf, fused_pd) = channel_fusion_stats(scenario, params, assignment)?;
    let frames = frame_durations(&scenario.timing);
    let tau_total = params.max_total_sensing(assignment);
    let ctx = AccessContext::new(scenario, &frames, tau_total, params.p, false);

    let mut nt = 0.0;
    let mut per_channel = vec![0.0; m];
    enumerate_scenarios(
        &scenario.p_idle,
        &fused_pf,
        &fused_pd,
        &mut |theta, omega, _psi, w| {
            nt += w
                * conditional_throughput_ne_accumulate(
                    theta,
                    omega,
                    &ctx,
                    w,
                    Some(&mut per_channel),
                );
        },
    );

    Ok(ThroughputReport {
        nt,
        per_channel_nt: per_channel,
        params_used: params.clone(),
        assignment_used: assignment.clone(),
        trace: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Factored evaluation (shared with the optimizers)
// ---------------------------------------------------------------------------

/// Exact throughput by per-channel factoring instead of subset
/// enumeration.
///
/// Channels are perceived independently: channel `j` is perceived
/// available while idle with probability `p_idle (1 - pf_j)` and while
/// busy with probability `(1 - p_idle)(1 - pd_j)`. The DP below tracks
/// the joint count distribution of those two classes, and the access
/// split over a `k`-channel perceived set is Binomial per channel.
/// Algebraically identical to [`normalized_throughput_ne`] at O(M^3 + MN)
/// cost, which is what the optimizer hot loops need.
pub(crate) fn nt_ne_factored(
    p_idle: &[f64],
    fused_pf: &[f64],
    fused_pd: &[f64],
    ctx: &AccessContext,
) -> f64 {
    let m = p_idle.len();
    let n = ctx.n_sus;
    // w[t][b]: probability of t perceived idle channels and b perceived
    // busy (misdetected) channels, flattened.
    let dim = m + 1;
    let mut w = vec![0.0f64; dim * dim];
    w[0] = 1.0;
    let mut w_next = vec![0.0f64; dim * dim];
    for j in 0..m {
        let pa = p_idle[j] * (1.0 - fused_pf[j]);
        let pb = (1.0 - p_idle[j]) * (1.0 - fused_pd[j]);
        let rest = 1.0 - pa - pb;
        w_next.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..=j {
            for b in 0..=(j - t) {
                let cur = w[t * dim + b];
                if cur == 0.0 {
                    continue;
                }
                w_next[t * dim + b] += cur * rest;
                w_next[(t + 1) * dim + b] += cur * pa;
                w_next[t * dim + b + 1] += cur * pb;
            }
        }
        std::mem::swap(&mut w, &mut w_next);
    }

    // g[k]: expected contribution of one perceived-idle channel when the
    // perceived set has k channels and each SU picks uniformly.
    let mut g = vec![0.0f64; m + 1];
    for (k, slot) in g.iter_mut().enumerate().skip(1) {
        *slot = binomial_expectation(n, 1.0 / k as f64, &ctx.per_contender_nt);
    }

    let mut nt = 0.0;
    for t in 1..=m {
        for b in 0..=(m - t) {
            let prob = w[t * dim + b];
            if prob != 0.0 {
                nt += prob * t as f64 * g[t + b];
            }
        }
    }
    nt / m as f64
}

/// E[f(B)] with B ~ Binomial(n, p) and f given by `table`, f(0) ignored.
fn binomial_expectation(n: usize, p: f64, table: &[f64]) -> f64 {
    if p >= 1.0 {
        return table[n];
    }
    let q = 1.0 - p;
    let mut pmf = q.powi(n as i32);
    let ratio = p / q;
    let mut acc = 0.0;
    for cnt in 1..=n {
        pmf *= ratio * (n - cnt + 1) as f64 / cnt as f64;
        acc += pmf * table[cnt];
    }
    acc
}
