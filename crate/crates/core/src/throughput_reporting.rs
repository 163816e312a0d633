//! Exact normalized throughput with reporting errors.
//!
//! When one-bit sensing reports can flip in transit, receivers no longer
//! share a fused view: each SU fuses its own possibly-corrupted copy of
//! the reports and contends on its own perceived-available set. The
//! semantics live at the joint sample space of (channel states, per-sensor
//! outcome bits, per-(receiver, sensor, channel) flip bits), all
//! independent.
//!
//! [`normalized_throughput_re`] evaluates the expectation exactly by
//! factoring over that sample space: given states and outcomes, receiver
//! views are independent with per-channel product form, so the number of
//! SUs landing on a channel is Poisson-binomial with per-SU pick
//! probabilities. This is algebraically identical to enumerating flip
//! patterns, views, and choices (the form [`receiver_views`] and
//! [`conditional_throughput_re`] compute for concrete realizations) and
//! is what makes optimization over this model tractable.

use crate::contention::frame_durations;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sensing;
use crate::throughput_exact::AccessContext;
use crate::types::{ErrorModel, SensingAccessParams, SensingAssignment, ThroughputReport};

/// Budget for exact evaluation with reporting errors.
pub const MAX_SUS: usize = 6;
pub const MAX_CHANNELS: usize = 4;
pub const MAX_TOTAL_SENSORS: usize = 10;

// ---------------------------------------------------------------------------
// Receiver views
// ---------------------------------------------------------------------------

/// One SU's perceived-available channel set, split into the channels that
/// are truly available and those perceived available only through sensing
/// or reporting errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverView {
    pub su: usize,
    pub truly_available: Vec<usize>,
    pub erroneous: Vec<usize>,
}

impl ReceiverView {
    /// Size of the perceived-available set.
    pub fn k_e(&self) -> usize {
        self.truly_available.len() + self.erroneous.len()
    }

    /// Perceived-available channels in ascending order.
    pub fn perceived(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .truly_available
            .iter()
            .chain(self.erroneous.iter())
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Fuse one concrete realization of sensing outcomes and link flips into
/// per-receiver views.
///
/// `outcomes[j][k]` is the report of the k-th sensor of channel `j`
/// (sensors in ascending SU order), `true` meaning "busy".
/// `flips[r][j][k]` marks the corresponding report arriving flipped at
/// receiver `r`; a receiver never flips its own report. With no flips
/// every receiver reproduces the error-free fused decision.
pub fn receiver_views(
    true_idle: &[bool],
    outcomes: &[Vec<bool>],
    flips: &[Vec<Vec<bool>>],
    assignment: &SensingAssignment,
    a: &[usize],
) -> Result<Vec<ReceiverView>> {
    let m = assignment.num_channels();
    let n = assignment.num_sus();
    if true_idle.len() != m || outcomes.len() != m || a.len() != m {
        return Err(Error::InvalidArgument(
            "per-channel inputs must have one entry per channel".into(),
        ));
    }
    if flips.len() != n {
        return Err(Error::InvalidArgument(
            "flip patterns must have one entry per receiver".into(),
        ));
    }
    for j in 0..m {
        let b = assignment.sensor_count(j);
        if outcomes[j].len() != b {
            return Err(Error::InvalidArgument(format!(
                "channel {}: {} outcome bits for {} sensors",
                j + 1,
                outcomes[j].len(),
                b
            )));
        }
        for (r, flip) in flips.iter().enumerate() {
            if flip.len() != m || flip[j].len() != b {
                return Err(Error::InvalidArgument(format!(
                    "receiver {}: flip pattern shape mismatch on channel {}",
                    r + 1,
                    j + 1
                )));
            }
            for (k, &su) in assignment.per_channel()[j].iter().enumerate() {
                if su == r && flip[j][k] {
                    return Err(Error::InvalidArgument(format!(
                        "receiver {} cannot flip its own report on channel {}",
                        r + 1,
                        j + 1
                    )));
                }
            }
        }
    }

    let mut views = Vec::with_capacity(n);
    for r in 0..n {
        let mut truly_available = Vec::new();
        let mut erroneous = Vec::new();
        for j in 0..m {
            let b = assignment.sensor_count(j);
            if b == 0 {
                continue; // no reports: perceived busy
            }
            let busy_votes = (0..b).filter(|&k| outcomes[j][k] ^ flips[r][j][k]).count();
            if busy_votes < a[j] {
                if true_idle[j] {
                    truly_available.push(j);
                } else {
                    erroneous.push(j);
                }
            }
        }
        views.push(ReceiverView {
            su: r,
            truly_available,
            erroneous,
        });
    }
    Ok(views)
}

// ---------------------------------------------------------------------------
// Access realizations over heterogeneous views
// ---------------------------------------------------------------------------

/// One joint channel choice: per-SU picks (`None` for an SU whose view is
/// empty and therefore abstains), induced per-channel contender counts,
/// and the probability of this realization.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessRealization {
    pub choices: Vec<Option<usize>>,
    pub counts: Vec<usize>,
    pub weight: f64,
}

/// Enumerate every joint channel choice for the given views. Each SU
/// picks uniformly from its perceived set; the weights are products of
/// the per-SU pick probabilities and sum to one.
pub fn access_realizations(
    views: &[ReceiverView],
    num_channels: usize,
) -> Result<Vec<AccessRealization>> {
    let mut total: u128 = 1;
    for v in views {
        total = total.saturating_mul(v.k_e().max(1) as u128);
        if total > 10_000_000 {
            return Err(Error::BudgetExceeded {
                what: "joint access choices",
                count: total,
                cap: 10_000_000,
            });
        }
    }
    let perceived: Vec<Vec<usize>> = views.iter().map(|v| v.perceived()).collect();
    let n_active = perceived.iter().filter(|p| !p.is_empty()).count();

    fn recurse(
        su: usize,
        perceived: &[Vec<usize>],
        choices: &mut Vec<Option<usize>>,
        counts: &mut Vec<usize>,
        weight: f64,
        out: &mut Vec<AccessRealization>,
    ) {
        if su == perceived.len() {
            out.push(AccessRealization {
                choices: choices.clone(),
                counts: counts.clone(),
                weight,
            });
            return;
        }
        if perceived[su].is_empty() {
            choices[su] = None;
            recurse(su + 1, perceived, choices, counts, weight, out);
            return;
        }
        let w = weight / perceived[su].len() as f64;
        for &ch in &perceived[su] {
            choices[su] = Some(ch);
            counts[ch] += 1;
            recurse(su + 1, perceived, choices, counts, w, out);
            counts[ch] -= 1;
        }
        choices[su] = None;
    }

    let mut out = Vec::new();
    let mut choices: Vec<Option<usize>> = vec![None; views.len()];
    let mut counts = vec![0usize; num_channels];
    recurse(0, &perceived, &mut choices, &mut counts, 1.0, &mut out);
    // The contenders in any realization are exactly the non-abstaining SUs.
    debug_assert!(out
        .iter()
        .all(|r| r.counts.iter().sum::<usize>() == n_active));
    Ok(out)
}

/// Conditional throughput for one concrete set of receiver views: the
/// expectation over joint channel choices of the per-channel throughput,
/// where only truly available channels contribute.
pub fn conditional_throughput_re(views: &[ReceiverView], ctx: &AccessContext) -> Result<f64> {
    let mut truly_available = vec![false; ctx.num_channels];
    for v in views {
        for &j in &v.truly_available {
            truly_available[j] = true;
        }
    }
    let realizations = access_realizations(views, ctx.num_channels)?;
    let m = ctx.num_channels as f64;
    let mut nt = 0.0;
    for real in &realizations {
        let mut term = 0.0;
        for (j, &cnt) in real.counts.iter().enumerate() {
            if cnt > 0 && truly_available[j] {
                term += ctx.per_contender_nt[cnt] / m;
            }
        }
        nt += real.weight * term;
    }
    Ok(nt)
}

// ---------------------------------------------------------------------------
// Normalized throughput with reporting errors
// ---------------------------------------------------------------------------

/// Per-sensor operating stats for the error-aware evaluation.
pub(crate) struct ReSensorStats {
    /// Sensors of each channel in ascending SU order.
    pub sensors: Vec<Vec<usize>>,
    /// Fusion threshold per channel.
    pub a: Vec<usize>,
    /// Equalized per-sensor detection probability per channel.
    pub pd_star: Vec<f64>,
    /// Per (su, channel) false-alarm probability.
    pub pf: Vec<Vec<f64>>,
}

impl ReSensorStats {
    pub(crate) fn build(
        scenario: &ScenarioConfig,
        params: &SensingAccessParams,
        assignment: &SensingAssignment,
        error_model: &ErrorModel,
    ) -> Result<Self> {
        let m = scenario.num_channels();
        let n = scenario.num_sus();
        let mut pd_star = vec![0.0; m];
        let mut pf = vec![vec![0.0; m]; n];
        let sensors: Vec<Vec<usize>> = assignment
            .per_channel()
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        for j in 0..m {
            if sensors[j].is_empty() {
                continue;
            }
            pd_star[j] = crate::optimize::equalized_pd_star(
                scenario.pd_target[j],
                params.a[j],
                &sensors[j],
                n,
                Some(error_model),
            )?;
            for &i in &sensors[j] {
                pf[i][j] = sensing::false_alarm_probability(
                    pd_star[j],
                    params.tau[i][j],
                    scenario.snr[i][j],
                    scenario.sampling_freq_hz,
                )?;
            }
        }
        Ok(Self {
            sensors,
            a: params.a.clone(),
            pd_star,
            pf,
        })
    }
}

/// Exact normalized throughput with reporting errors.
///
/// Feasible for `N <= 6`, `M <= 4`, and at most 10 (SU, channel) sensing
/// pairs; larger instances are the simulator's job. With an all-zero
/// error model the value coincides with
/// [`crate::throughput_exact::normalized_throughput_ne`].
pub fn normalized_throughput_re(
    scenario: &ScenarioConfig,
    params: &SensingAccessParams,
    assignment: &SensingAssignment,
    error_model: &ErrorModel,
) -> Result<ThroughputReport> {
    params.validate(assignment, scenario.timing.cycle_s)?;
    let m = scenario.num_channels();
    let n = scenario.num_sus();
    if error_model.num_sus() != n {
        return Err(Error::InvalidArgument(
            "error model size must match the SU count".into(),
        ));
    }
    let total_sensors = assignment.pair_count();
    if n > MAX_SUS || m > MAX_CHANNELS || total_sensors > MAX_TOTAL_SENSORS {
        return Err(Error::BudgetExceeded {
            what: "reporting-error outcome patterns",
            count: (1u128 << total_sensors.min(100)) << m.min(20),
            cap: (1u128 << MAX_TOTAL_SENSORS) << MAX_CHANNELS,
        });
    }

    let stats = ReSensorStats::build(scenario, params, assignment, error_model)?;
    let frames = frame_durations(&scenario.timing);
    let tau_total = params.max_total_sensing(assignment);
    let ctx = AccessContext::new(scenario, &frames, tau_total, params.p, false);

    let (nt, per_channel) = nt_re_factored(scenario, &stats, error_model, &ctx);
    Ok(ThroughputReport {
        nt,
        per_channel_nt: per_channel,
        params_used: params.clone(),
        assignment_used: assignment.clone(),
        trace: Vec::new(),
    })
}

/// Exact evaluation over (state, outcome) scenarios with receiver views
/// and access splits factored out analytically.
pub(crate) fn nt_re_factored(
    scenario: &ScenarioConfig,
    stats: &ReSensorStats,
    error_model: &ErrorModel,
    ctx: &AccessContext,
) -> (f64, Vec<f64>) {
    let m = scenario.num_channels();
    let n = scenario.num_sus();
    let sensor_total: usize = stats.sensors.iter().map(|s| s.len()).sum();
    // Flat order of (channel, sensor) pairs for outcome bits.
    let mut pair_channel = Vec::with_capacity(sensor_total);
    let mut pair_sensor = Vec::with_capacity(sensor_total);
    for (j, sensors) in stats.sensors.iter().enumerate() {
        for &i in sensors {
            pair_channel.push(j);
            pair_sensor.push(i);
        }
    }

    let mut nt = 0.0;
    let mut per_channel = vec![0.0; m];
    let mut p_avail = vec![vec![0.0f64; m]; n];
    let mut received_busy = vec![0.0f64; sensor_total.max(1)];
    let mut q_pick = vec![0.0f64; n];

    let state_count: u32 = 1 << m;
    for state_mask in 0..state_count {
        let mut w_state = 1.0;
        for j in 0..m {
            let idle = state_mask >> j & 1 == 1;
            w_state *= if idle {
                scenario.p_idle[j]
            } else {
                1.0 - scenario.p_idle[j]
            };
        }
        if w_state == 0.0 {
            continue;
        }
        let outcome_count: u64 = 1 << sensor_total;
        for outcome_mask in 0..outcome_count {
            let mut w_outcome = 1.0;
            for (bit, (&j, &i)) in pair_channel.iter().zip(&pair_sensor).enumerate() {
                let says_busy = outcome_mask >> bit & 1 == 1;
                let idle = state_mask >> j & 1 == 1;
                let p_busy = if idle {
                    stats.pf[i][j]
                } else {
                    stats.pd_star[j]
                };
                w_outcome *= if says_busy { p_busy } else { 1.0 - p_busy };
                if w_outcome == 0.0 {
                    break;
                }
            }
            if w_outcome == 0.0 {
                continue;
            }
            let w = w_state * w_outcome;

            // Per-receiver perceived-available probability per channel:
            // each received copy of a report flips independently, so the
            // fused busy-vote count is Poisson-binomial per receiver.
            for (r, row) in p_avail.iter_mut().enumerate() {
                let mut bit = 0usize;
                for (j, sensors) in stats.sensors.iter().enumerate() {
                    let b = sensors.len();
                    if b == 0 {
                        row[j] = 0.0;
                        continue;
                    }
                    for (k, &i) in sensors.iter().enumerate() {
                        let says_busy = outcome_mask >> (bit + k) & 1 == 1;
                        let pe = error_model.pe(r, i);
                        received_busy[k] = if says_busy { 1.0 - pe } else { pe };
                    }
                    row[j] = 1.0 - sensing::fuse_tail(&received_busy[..b], stats.a[j]);
                    bit += b;
                }
            }

            // Contribution of each truly idle channel: the contender count
            // is Poisson-binomial over per-SU pick probabilities.
            for j in 0..m {
                if state_mask >> j & 1 == 0 {
                    continue;
                }
                for (r, row) in p_avail.iter().enumerate() {
                    q_pick[r] = pick_probability(row, j);
                }
                let term =
                    poisson_binomial_expectation(&q_pick, &ctx.per_contender_nt) / m as f64;
                nt += w * term;
                per_channel[j] += w * term;
            }
        }
    }
    (nt, per_channel)
}

/// P(an SU picks channel `j`) given its per-channel perceived-available
/// probabilities: P(j perceived) * E[1 / (1 + #others perceived)].
fn pick_probability(p_avail_row: &[f64], j: usize) -> f64 {
    let pj = p_avail_row[j];
    if pj == 0.0 {
        return 0.0;
    }
    let mut dist = vec![0.0f64; p_avail_row.len() + 1];
    dist[0] = 1.0;
    let mut len = 1;
    for (idx, &p) in p_avail_row.iter().enumerate() {
        if idx == j {
            continue;
        }
        for k in (0..len).rev() {
            let cur = dist[k];
            dist[k + 1] += cur * p;
            dist[k] = cur * (1.0 - p);
        }
        len += 1;
    }
    let mut acc = 0.0;
    for (k, &pk) in dist.iter().enumerate().take(len) {
        acc += pk / (k + 1) as f64;
    }
    pj * acc
}

/// E[f(K)] with K Poisson-binomial over `probs` and f given by `table`,
/// where `table[0]` is never used (no contenders, no throughput).
fn poisson_binomial_expectation(probs: &[f64], table: &[f64]) -> f64 {
    let n = probs.len();
    let mut dist = vec![0.0f64; n + 1];
    dist[0] = 1.0;
    let mut len = 1;
    for &p in probs {
        for k in (0..len).rev() {
            let cur = dist[k];
            dist[k + 1] += cur * p;
            dist[k] = cur * (1.0 - p);
        }
        len += 1;
    }
    let mut acc = 0.0;
    for k in 1..len {
        acc += dist[k] * table[k];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TimingParams;
    use crate::throughput_exact::{conditional_throughput_ne, AccessContext};
    use std::collections::BTreeSet;

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    fn scenario(m: usize, n: usize, p_idle: f64) -> ScenarioConfig {
        ScenarioConfig::new(
            vec![p_idle; m],
            vec![vec![10f64.powf(-1.0); m]; n],
            vec![0.9; m],
            TimingParams::default_study(),
            1.0,
            6e6,
        )
        .unwrap()
    }

    fn ctx_for(s: &ScenarioConfig, tau: f64, p: f64) -> AccessContext {
        let frames = frame_durations(&s.timing);
        AccessContext::new(s, &frames, tau, p, false)
    }

    fn no_flips(assignment: &SensingAssignment) -> Vec<Vec<Vec<bool>>> {
        (0..assignment.num_sus())
            .map(|_| {
                (0..assignment.num_channels())
                    .map(|j| vec![false; assignment.sensor_count(j)])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn views_without_flips_agree_across_receivers() {
        // 3 SUs, 2 channels; SU3 senses nothing and still gets a view.
        let assignment =
            SensingAssignment::from_per_su(vec![set(&[0, 1]), set(&[0]), set(&[])], 2).unwrap();
        let true_idle = [true, false];
        // Channel 0 (idle): SU1 says idle, SU2 says busy; a=2 -> idle wins.
        // Channel 1 (busy): SU1 says idle; a=1 -> perceived available.
        let outcomes = vec![vec![false, true], vec![false]];
        let flips = no_flips(&assignment);
        let views = receiver_views(&true_idle, &outcomes, &flips, &assignment, &[2, 1]).unwrap();
        for v in &views {
            assert_eq!(v.truly_available, vec![0]);
            assert_eq!(v.erroneous, vec![1]);
            assert_eq!(v.k_e(), 2);
        }
    }

    #[test]
    fn single_flip_changes_only_that_receiver() {
        // One channel sensed by SU1 only (b=1, a=1), truly idle, sensor
        // says idle. Flip on the link to receiver 2: channel vanishes
        // from receiver 2's view only.
        let assignment =
            SensingAssignment::from_per_su(vec![set(&[0]), set(&[])], 1).unwrap();
        let outcomes = vec![vec![false]];
        let mut flips = no_flips(&assignment);
        flips[1][0][0] = true;
        let views =
            receiver_views(&[true], &outcomes, &flips, &assignment, &[1]).unwrap();
        assert_eq!(views[0].truly_available, vec![0]);
        assert!(views[1].truly_available.is_empty());
        assert_eq!(views[1].k_e(), 0);
    }

    #[test]
    fn own_report_flip_rejected() {
        let assignment = SensingAssignment::from_per_su(vec![set(&[0])], 1).unwrap();
        let outcomes = vec![vec![false]];
        let mut flips = no_flips(&assignment);
        flips[0][0][0] = true;
        assert!(receiver_views(&[true], &outcomes, &flips, &assignment, &[1]).is_err());
    }

    #[test]
    fn access_realization_weights_sum_to_one() {
        let views = vec![
            ReceiverView { su: 0, truly_available: vec![0, 2], erroneous: vec![1] },
            ReceiverView { su: 1, truly_available: vec![0], erroneous: vec![] },
            ReceiverView { su: 2, truly_available: vec![], erroneous: vec![] },
        ];
        let reals = access_realizations(&views, 3).unwrap();
        assert_eq!(reals.len(), 3);
        let mass: f64 = reals.iter().map(|r| r.weight).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        for r in &reals {
            assert_eq!(r.choices[2], None);
            let contenders: usize = r.counts.iter().sum();
            assert_eq!(contenders, 2, "abstaining SUs never contend");
        }
    }

    #[test]
    fn conditional_re_reduces_to_ne_for_identical_views() {
        let s = scenario(3, 3, 0.5);
        let ctx = ctx_for(&s, 2e-3, 0.2);
        let shared = ReceiverView {
            su: 0,
            truly_available: vec![0, 2],
            erroneous: vec![1],
        };
        let views: Vec<ReceiverView> = (0..3)
            .map(|su| ReceiverView { su, ..shared.clone() })
            .collect();
        let re = conditional_throughput_re(&views, &ctx).unwrap();
        let ne = conditional_throughput_ne(&[0, 2], &[1], &ctx);
        assert!((re - ne).abs() < 1e-12, "re {re} vs ne {ne}");
    }

    #[test]
    fn conditional_re_single_su_single_channel() {
        let s = scenario(2, 1, 1.0);
        let ctx = ctx_for(&s, 1e-3, 0.2);
        let views = vec![ReceiverView {
            su: 0,
            truly_available: vec![1],
            erroneous: vec![],
        }];
        let re = conditional_throughput_re(&views, &ctx).unwrap();
        assert!((re - ctx.per_contender_nt[1] / 2.0).abs() < 1e-15);
    }

    /// Counted access-vector form: group joint choices by the induced
    /// count vector and weight each by (ways) * prod(1/k_e^i). Checks the
    /// direct per-SU enumeration against the grouped form.
    #[test]
    fn conditional_re_matches_counted_form() {
        let s = scenario(3, 3, 0.5);
        let ctx = ctx_for(&s, 2e-3, 0.2);
        let views = vec![
            ReceiverView { su: 0, truly_available: vec![0], erroneous: vec![1] },
            ReceiverView { su: 1, truly_available: vec![0, 2], erroneous: vec![] },
            ReceiverView { su: 2, truly_available: vec![2], erroneous: vec![1] },
        ];
        let direct = conditional_throughput_re(&views, &ctx).unwrap();

        let reals = access_realizations(&views, 3).unwrap();
        let mut grouped: std::collections::BTreeMap<Vec<usize>, (f64, usize)> =
            std::collections::BTreeMap::new();
        for r in &reals {
            let e = grouped.entry(r.counts.clone()).or_insert((0.0, 0));
            e.0 += r.weight;
            e.1 += 1;
        }
        let truly: Vec<bool> = vec![true, false, true];
        let mut counted = 0.0;
        for (counts, (weight, _ways)) in &grouped {
            let mut term = 0.0;
            for (j, &cnt) in counts.iter().enumerate() {
                if cnt > 0 && truly[j] {
                    term += ctx.per_contender_nt[cnt] / 3.0;
                }
            }
            counted += weight * term;
        }
        assert!((direct - counted).abs() < 1e-12);
    }

    #[test]
    fn budget_rejects_oversized_instances() {
        let s = scenario(2, 7, 0.5);
        let assignment = SensingAssignment::from_per_su(
            (0..7).map(|_| set(&[0, 1])).collect(),
            2,
        )
        .unwrap();
        let mut params = SensingAccessParams::zeroed(7, 2);
        params.p = 0.2;
        params.a = vec![1, 1];
        for i in 0..7 {
            params.tau[i][0] = 1e-3;
            params.tau[i][1] = 1e-3;
        }
        let em = ErrorModel::uniform(7, 0.05).unwrap();
        let err = normalized_throughput_re(&s, &params, &assignment, &em).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }
}
