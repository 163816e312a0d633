//! Joint optimization of sensing times, fusion thresholds, and the access
//! probability for a fixed sensing assignment.
//!
//! The search follows a coordinate-descent pattern: for every access
//! probability on a grid and every feasible fusion-threshold vector, the
//! per-(SU, channel) sensing times are improved one at a time by golden
//! section until the objective stops moving, and the best branch wins.
//! The descent objective drops the whole-packet floor so it is smooth;
//! the reported throughput re-applies the exact floor.

use rayon::prelude::*;

use crate::contention::{frame_durations, FrameDurations};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sensing;
use crate::throughput_exact::{self, AccessContext};
use crate::throughput_reporting::{self, ReSensorStats};
use crate::types::{
    ErrorModel, SensingAccessParams, SensingAssignment, ThroughputReport, TracePoint,
};

/// Cap on the number of fusion-threshold vectors enumerated per call.
pub const THRESHOLD_COMBINATION_BUDGET: u128 = 10_000;

/// Lower access-probability bound; degenerate endpoints are excluded.
pub const P_MIN: f64 = 1e-4;
/// Upper access-probability bound for the grid.
pub const P_MAX: f64 = 0.5;

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

/// Hyperparameters of the parameter search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Access-probability grid step on `[P_MIN, P_MAX]`.
    pub p_grid_step: f64,
    /// Golden-section bracket width at which a sensing-time line search
    /// stops, in seconds.
    pub tau_tolerance_s: f64,
    /// Relative objective improvement below which a descent stops.
    pub inner_convergence_rel: f64,
    /// Hard cap on descent sweeps.
    pub max_rounds: usize,
    /// Use the floor-free objective inside the descent.
    pub relax_floor: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            p_grid_step: 0.01,
            tau_tolerance_s: 1e-5,
            inner_convergence_rel: 1e-6,
            max_rounds: 50,
            relax_floor: true,
        }
    }
}

impl OptimizerSettings {
    /// Coarser settings for search loops that call the optimizer once per
    /// candidate (assignment search over many candidates).
    pub fn fast() -> Self {
        Self {
            p_grid_step: 0.1,
            tau_tolerance_s: 3e-4,
            inner_convergence_rel: 1e-5,
            max_rounds: 3,
            relax_floor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_grid_step > 0.0 && self.p_grid_step <= 0.5) {
            return Err(Error::field("p_grid_step", "must lie in (0, 0.5]"));
        }
        if !(self.tau_tolerance_s > 0.0) {
            return Err(Error::field("tau_tolerance_s", "must be positive"));
        }
        if self.max_rounds < 1 {
            return Err(Error::field("max_rounds", "at least one sweep required"));
        }
        if !(self.inner_convergence_rel >= 0.0) {
            return Err(Error::field("inner_convergence_rel", "must be >= 0"));
        }
        Ok(())
    }
}

/// Fusion-rule families: the three fixed classics plus the free search
/// over every threshold vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionRule {
    Or,
    And,
    Majority,
    Optimal,
}

// ---------------------------------------------------------------------------
// Detection equalization
// ---------------------------------------------------------------------------

/// The common per-sensor detection probability that meets the fused
/// target for one channel.
///
/// Without reporting errors this inverts the homogeneous a-out-of-b rule.
/// With reporting errors every SU fuses its own corrupted copy, so the
/// per-sensor level is raised until the worst receiver's fused detection
/// probability reaches the target (conservative: every receiver then
/// protects the PU at least that well).
pub fn equalized_pd_star(
    pd_hat: f64,
    a: usize,
    sensors: &[usize],
    n_sus: usize,
    error_model: Option<&ErrorModel>,
) -> Result<f64> {
    let b = sensors.len();
    if b == 0 {
        return Err(Error::InvalidArgument(
            "detection equalization needs at least one sensor".into(),
        ));
    }
    if !(pd_hat > 0.0 && pd_hat < 1.0) {
        return Err(Error::Infeasible(format!(
            "detection target {pd_hat} outside (0, 1)"
        )));
    }
    let em = match error_model {
        None => return sensing::per_su_target(pd_hat, a, b),
        Some(em) if em.is_zero() => return sensing::per_su_target(pd_hat, a, b),
        Some(em) => em,
    };

    let mut effective = vec![0.0f64; b];
    let mut worst_fused = |x: f64| -> f64 {
        let mut worst = f64::INFINITY;
        for r in 0..n_sus {
            for (k, &s) in sensors.iter().enumerate() {
                effective[k] = sensing::effective_report_probability(x, em.pe(r, s), s == r);
            }
            let fused = sensing::fuse_tail(&effective, a);
            if fused < worst {
                worst = fused;
            }
        }
        worst
    };

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if worst_fused(mid) < pd_hat {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    if (worst_fused(x) - pd_hat).abs() > 1e-8 {
        return Err(Error::Infeasible(format!(
            "fused detection target {pd_hat} unreachable under the reporting-error model \
             (worst receiver reaches {})",
            worst_fused(1.0 - 1e-12)
        )));
    }
    Ok(x)
}

/// Equalized per-channel detection operating points plus the machinery to
/// evaluate the corresponding false-alarm curves in sensing time.
#[derive(Debug, Clone)]
pub struct DetectionEqualization {
    /// Per-channel equalized per-sensor detection probability (zero for
    /// channels without sensors).
    pub pd_star: Vec<f64>,
    qinv_pd_star: Vec<f64>,
}

impl DetectionEqualization {
    /// False-alarm probability of SU `su` on `channel` after sensing for
    /// `tau_s` seconds at the equalized detection level.
    pub fn false_alarm(
        &self,
        scenario: &ScenarioConfig,
        su: usize,
        channel: usize,
        tau_s: f64,
    ) -> f64 {
        sensing::false_alarm_from_qinv(
            self.qinv_pd_star[channel],
            tau_s,
            scenario.snr[su][channel],
            scenario.sampling_freq_hz,
        )
    }
}

/// Solve the detection equalization for every channel under the given
/// fusion thresholds.
pub fn equalize_detection(
    scenario: &ScenarioConfig,
    assignment: &SensingAssignment,
    a: &[usize],
    error_model: Option<&ErrorModel>,
) -> Result<DetectionEqualization> {
    let m = scenario.num_channels();
    if a.len() != m {
        return Err(Error::InvalidArgument(
            "one fusion threshold per channel required".into(),
        ));
    }
    let mut pd_star = vec![0.0; m];
    let mut qinv = vec![0.0; m];
    for j in 0..m {
        let sensors: Vec<usize> = assignment.per_channel()[j].iter().copied().collect();
        if sensors.is_empty() {
            continue;
        }
        pd_star[j] = equalized_pd_star(
            scenario.pd_target[j],
            a[j],
            &sensors,
            scenario.num_sus(),
            error_model,
        )?;
        qinv[j] = sensing::q_inverse(pd_star[j])?;
    }
    Ok(DetectionEqualization {
        pd_star,
        qinv_pd_star: qinv,
    })
}

// ---------------------------------------------------------------------------
// Line search
// ---------------------------------------------------------------------------

/// Golden-section maximization over a bracket, refined to `tolerance`.
///
/// Returns the best sampled point and its value; on an effectively
/// constant objective the bracket midpoint is returned. The result is
/// never below the objective at either bracket endpoint.
pub fn line_search_tau(
    lo: f64,
    hi: f64,
    tolerance: f64,
    mut objective: impl FnMut(f64) -> f64,
) -> Result<(f64, f64)> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "degenerate line-search bracket [{lo}, {hi}]"
        )));
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best_v = f64::NEG_INFINITY;
    let mut best_x = lo;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    let consider = |x: f64,
                    v: f64,
                    best_x: &mut f64,
                    best_v: &mut f64,
                    min_v: &mut f64,
                    max_v: &mut f64| {
        if v > *best_v || (v == *best_v && x < *best_x) {
            *best_v = v;
            *best_x = x;
        }
        if v < *min_v {
            *min_v = v;
        }
        if v > *max_v {
            *max_v = v;
        }
    };
    let va = objective(lo);
    consider(lo, va, &mut best_x, &mut best_v, &mut min_v, &mut max_v);
    let vb = objective(hi);
    consider(hi, vb, &mut best_x, &mut best_v, &mut min_v, &mut max_v);

    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = objective(x1);
    consider(x1, f1, &mut best_x, &mut best_v, &mut min_v, &mut max_v);
    let mut f2 = objective(x2);
    consider(x2, f2, &mut best_x, &mut best_v, &mut min_v, &mut max_v);
    while b - a > tolerance {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = objective(x2);
            consider(x2, f2, &mut best_x, &mut best_v, &mut min_v, &mut max_v);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = objective(x1);
            consider(x1, f1, &mut best_x, &mut best_v, &mut min_v, &mut max_v);
        }
    }
    if max_v - min_v <= f64::EPSILON * max_v.abs().max(1.0) {
        // Constant objective: midpoint by convention.
        return Ok((0.5 * (lo + hi), best_v));
    }
    Ok((best_x, best_v))
}

// ---------------------------------------------------------------------------
// Objective model
// ---------------------------------------------------------------------------

/// Mutable evaluation state for one (assignment, threshold-vector) branch:
/// caches the equalized detection points and per-link false alarms so a
/// single-tau update only recomputes its own channel.
pub(crate) struct ObjectiveModel<'a> {
    scenario: &'a ScenarioConfig,
    assignment: &'a SensingAssignment,
    error_model: Option<&'a ErrorModel>,
    frames: FrameDurations,
    sensors: Vec<Vec<usize>>,
    a: Vec<usize>,
    pd_star: Vec<f64>,
    qinv_pd_star: Vec<f64>,
    fused_pd: Vec<f64>,
    fused_pf: Vec<f64>,
    pf: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    su_total: Vec<f64>,
    pub p: f64,
    pub relax: bool,
}

impl<'a> ObjectiveModel<'a> {
    pub(crate) fn new(
        scenario: &'a ScenarioConfig,
        assignment: &'a SensingAssignment,
        error_model: Option<&'a ErrorModel>,
        a: Vec<usize>,
        pd_star: Vec<f64>,
        relax: bool,
    ) -> Result<Self> {
        let m = scenario.num_channels();
        let n = scenario.num_sus();
        let sensors: Vec<Vec<usize>> = assignment
            .per_channel()
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        if sensors.iter().any(|s| s.len() > 64) {
            return Err(Error::InvalidArgument(
                "more than 64 sensors on one channel".into(),
            ));
        }
        let mut qinv = vec![0.0; m];
        let mut fused_pd = vec![1.0; m];
        for j in 0..m {
            if sensors[j].is_empty() {
                continue;
            }
            qinv[j] = sensing::q_inverse(pd_star[j])?;
            fused_pd[j] = sensing::fuse_tail(&vec![pd_star[j]; sensors[j].len()], a[j]);
        }
        let mut model = Self {
            scenario,
            assignment,
            error_model,
            frames: frame_durations(&scenario.timing),
            sensors,
            a,
            pd_star,
            qinv_pd_star: qinv,
            fused_pd,
            fused_pf: vec![1.0; m],
            pf: vec![vec![0.0; m]; n],
            tau: vec![vec![0.0; m]; n],
            su_total: vec![0.0; n],
            p: 0.1,
            relax,
        };
        model.reset_tau_to_initial();
        Ok(model)
    }

    /// Deterministic starting point: 5% of the post-reporting budget per
    /// SU, split evenly over its channels.
    pub(crate) fn reset_tau_to_initial(&mut self) {
        let budget = self.scenario.timing.cycle_s
            - self.scenario.timing.report_phase_s(self.scenario.num_sus());
        for i in 0..self.scenario.num_sus() {
            let share = self.assignment.per_su()[i].len();
            if share == 0 {
                continue;
            }
            let tau0 = (0.05 * budget / share as f64).max(self.min_tau());
            for &j in self.assignment.per_su()[i].clone().iter() {
                self.tau[i][j] = tau0;
            }
        }
        self.refresh_all();
    }

    pub(crate) fn min_tau(&self) -> f64 {
        1.0 / self.scenario.sampling_freq_hz
    }

    pub(crate) fn max_tau(&self) -> f64 {
        self.scenario.timing.cycle_s
            - self.scenario.timing.report_phase_s(self.scenario.num_sus())
    }

    pub(crate) fn set_all_tau(&mut self, tau: &[Vec<f64>]) {
        for i in 0..self.tau.len() {
            self.tau[i].copy_from_slice(&tau[i]);
        }
        self.refresh_all();
    }

    fn refresh_all(&mut self) {
        for i in 0..self.scenario.num_sus() {
            self.su_total[i] = self.assignment.per_su()[i]
                .iter()
                .map(|&j| self.tau[i][j])
                .sum();
        }
        for j in 0..self.scenario.num_channels() {
            self.refresh_channel(j);
        }
    }

    fn refresh_channel(&mut self, j: usize) {
        if self.sensors[j].is_empty() {
            self.fused_pf[j] = 1.0;
            return;
        }
        let mut buf = [0.0f64; 64];
        for (k, &i) in self.sensors[j].iter().enumerate() {
            let pf = sensing::false_alarm_from_qinv(
                self.qinv_pd_star[j],
                self.tau[i][j],
                self.scenario.snr[i][j],
                self.scenario.sampling_freq_hz,
            );
            self.pf[i][j] = pf;
            buf[k] = pf;
        }
        self.fused_pf[j] = sensing::fuse_tail(&buf[..self.sensors[j].len()], self.a[j]);
    }

    pub(crate) fn set_tau(&mut self, su: usize, channel: usize, tau_s: f64) {
        let old = self.tau[su][channel];
        self.tau[su][channel] = tau_s;
        self.su_total[su] += tau_s - old;
        self.pf[su][channel] = sensing::false_alarm_from_qinv(
            self.qinv_pd_star[channel],
            tau_s,
            self.scenario.snr[su][channel],
            self.scenario.sampling_freq_hz,
        );
        if self.error_model.is_none() || self.error_model.is_some_and(|e| e.is_zero()) {
            let mut buf = [0.0f64; 64];
            for (k, &i) in self.sensors[channel].iter().enumerate() {
                buf[k] = self.pf[i][channel];
            }
            self.fused_pf[channel] =
                sensing::fuse_tail(&buf[..self.sensors[channel].len()], self.a[channel]);
        }
    }

    pub(crate) fn tau_total(&self) -> f64 {
        self.su_total.iter().copied().fold(0.0, f64::max)
    }

    /// Current objective value.
    pub(crate) fn nt(&self) -> f64 {
        let ctx = AccessContext::new(
            self.scenario,
            &self.frames,
            self.tau_total(),
            self.p,
            self.relax,
        );
        match self.error_model {
            Some(em) if !em.is_zero() => {
                let stats = ReSensorStats {
                    sensors: self.sensors.clone(),
                    a: self.a.clone(),
                    pd_star: self.pd_star.clone(),
                    pf: self.pf.clone(),
                };
                throughput_reporting::nt_re_factored(self.scenario, &stats, em, &ctx).0
            }
            _ => throughput_exact::nt_ne_factored(
                &self.scenario.p_idle,
                &self.fused_pf,
                &self.fused_pd,
                &ctx,
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Coordinate descent and the branch search
// ---------------------------------------------------------------------------

fn descend(
    model: &mut ObjectiveModel<'_>,
    settings: &OptimizerSettings,
    mut trace: Option<&mut Vec<TracePoint>>,
) -> Result<f64> {
    let lo = model.min_tau();
    let hi = model.max_tau();
    let mut current = model.nt();
    let mut step_idx = 0usize;
    if let Some(t) = trace.as_deref_mut() {
        t.push(TracePoint {
            iteration: step_idx,
            nt: current,
        });
    }
    let pairs: Vec<(usize, usize)> = model
        .assignment
        .per_su()
        .iter()
        .enumerate()
        .flat_map(|(i, set)| set.iter().map(move |&j| (i, j)))
        .collect();
    for _round in 0..settings.max_rounds {
        let round_start = current;
        for &(i, j) in &pairs {
            let cur_tau = model.tau[i][j];
            let (tau_best, nt_best) = line_search_tau(lo, hi, settings.tau_tolerance_s, |t| {
                model.set_tau(i, j, t);
                model.nt()
            })?;
            if nt_best > current || (nt_best == current && tau_best < cur_tau) {
                model.set_tau(i, j, tau_best);
                current = nt_best;
            } else {
                model.set_tau(i, j, cur_tau);
            }
            step_idx += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(TracePoint {
                    iteration: step_idx,
                    nt: current,
                });
            }
        }

        // Joint rescale of the whole sensing-time field. The overhead term
        // depends on tau only through the per-SU maximum, so single-pair
        // moves below that maximum cannot shorten the sensing phase; a
        // common scale factor slides along that ridge.
        current = scale_sweep(model, current)?;
        step_idx += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TracePoint {
                iteration: step_idx,
                nt: current,
            });
        }

        let improvement = current - round_start;
        if improvement <= settings.inner_convergence_rel * round_start.abs().max(f64::MIN_POSITIVE)
        {
            break;
        }
    }
    Ok(current)
}

/// Golden-section search over a common log-scale factor applied to every
/// assigned sensing time. Applies the factor only when it improves the
/// objective (ties resolved toward shorter sensing).
fn scale_sweep(model: &mut ObjectiveModel<'_>, current: f64) -> Result<f64> {
    let base = model.tau.clone();
    let mut min_cur = f64::INFINITY;
    let mut max_cur: f64 = 0.0;
    for (i, set) in model.assignment.per_su().iter().enumerate() {
        for &j in set {
            min_cur = min_cur.min(base[i][j]);
            max_cur = max_cur.max(base[i][j]);
        }
    }
    if !(max_cur > 0.0) {
        return Ok(current);
    }
    let s_lo = (model.min_tau() / min_cur).ln();
    let s_hi = (model.max_tau() / max_cur).ln();
    if !(s_hi > s_lo) {
        return Ok(current);
    }
    let scale_into = |model: &mut ObjectiveModel<'_>, s: f64, buf: &mut Vec<Vec<f64>>| {
        for (i, row) in base.iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                buf[i][j] = t * s;
            }
        }
        model.set_all_tau(buf);
    };
    let mut buf = base.clone();
    let (u_best, nt_best) = line_search_tau(s_lo, s_hi, 1e-3, |u| {
        scale_into(model, u.exp(), &mut buf);
        model.nt()
    })?;
    let s_best = u_best.exp();
    if nt_best > current || (nt_best == current && s_best < 1.0) {
        scale_into(model, s_best, &mut buf);
        Ok(nt_best)
    } else {
        model.set_all_tau(&base);
        Ok(current)
    }
}

fn threshold_vectors(
    assignment: &SensingAssignment,
    rule: FusionRule,
) -> Result<Vec<Vec<usize>>> {
    let m = assignment.num_channels();
    let b: Vec<usize> = (0..m).map(|j| assignment.sensor_count(j)).collect();
    match rule {
        FusionRule::Or => Ok(vec![b
            .iter()
            .map(|&bj| if bj == 0 { 0 } else { 1 })
            .collect()]),
        FusionRule::And => Ok(vec![b.clone()]),
        FusionRule::Majority => Ok(vec![b.iter().map(|&bj| bj.div_ceil(2)).collect()]),
        FusionRule::Optimal => {
            let mut count: u128 = 1;
            for &bj in &b {
                count = count.saturating_mul(bj.max(1) as u128);
            }
            if count > THRESHOLD_COMBINATION_BUDGET {
                return Err(Error::BudgetExceeded {
                    what: "fusion-threshold combinations",
                    count,
                    cap: THRESHOLD_COMBINATION_BUDGET,
                });
            }
            let mut vecs = Vec::with_capacity(count as usize);
            let mut current: Vec<usize> =
                b.iter().map(|&bj| if bj == 0 { 0 } else { 1 }).collect();
            loop {
                vecs.push(current.clone());
                // Mixed-radix increment over channels with sensors.
                let mut pos = 0;
                loop {
                    if pos == m {
                        return Ok(vecs);
                    }
                    if b[pos] == 0 {
                        pos += 1;
                        continue;
                    }
                    if current[pos] < b[pos] {
                        current[pos] += 1;
                        break;
                    }
                    current[pos] = 1;
                    pos += 1;
                }
            }
        }
    }
}

fn p_grid(step: f64) -> Vec<f64> {
    let mut values = Vec::new();
    let mut k = 0usize;
    loop {
        let p = P_MIN + step * k as f64;
        if p >= P_MAX - 1e-12 {
            values.push(P_MAX);
            break;
        }
        values.push(p);
        k += 1;
    }
    values
}

struct BranchResult {
    p_idx: usize,
    a_idx: usize,
    nt: f64,
    tau: Vec<Vec<f64>>,
    tau_total: f64,
}

/// Optimize sensing times, fusion thresholds, and the access probability
/// for a fixed assignment. Returns the chosen parameters and a report
/// whose `nt` is the exact-floor throughput and whose trace records the
/// winning branch's descent.
pub fn optimize_params(
    scenario: &ScenarioConfig,
    assignment: &SensingAssignment,
    settings: &OptimizerSettings,
    error_model: Option<&ErrorModel>,
) -> Result<(SensingAccessParams, ThroughputReport)> {
    optimize_params_with_rule(scenario, assignment, settings, error_model, FusionRule::Optimal)
}

/// [`optimize_params`] restricted to one fusion-rule family.
pub fn optimize_params_with_rule(
    scenario: &ScenarioConfig,
    assignment: &SensingAssignment,
    settings: &OptimizerSettings,
    error_model: Option<&ErrorModel>,
    rule: FusionRule,
) -> Result<(SensingAccessParams, ThroughputReport)> {
    settings.validate()?;
    if assignment.num_sus() != scenario.num_sus()
        || assignment.num_channels() != scenario.num_channels()
    {
        return Err(Error::InvalidArgument(
            "assignment shape must match the scenario".into(),
        ));
    }
    if assignment.pair_count() == 0 {
        return Err(Error::InvalidArgument(
            "no channel is sensed by any SU; nothing to optimize".into(),
        ));
    }
    if let Some(em) = error_model {
        if !em.is_zero() {
            let over_budget = scenario.num_sus() > throughput_reporting::MAX_SUS
                || scenario.num_channels() > throughput_reporting::MAX_CHANNELS
                || assignment.pair_count() > throughput_reporting::MAX_TOTAL_SENSORS;
            if over_budget {
                return Err(Error::BudgetExceeded {
                    what: "reporting-error optimization instance",
                    count: assignment.pair_count() as u128,
                    cap: throughput_reporting::MAX_TOTAL_SENSORS as u128,
                });
            }
        }
    }

    let a_vectors = threshold_vectors(assignment, rule)?;
    // Equalized detection level per (channel, threshold), shared by all
    // branches that use it.
    let m = scenario.num_channels();
    let mut pd_star_table: Vec<Vec<f64>> = vec![Vec::new(); m];
    for j in 0..m {
        let sensors: Vec<usize> = assignment.per_channel()[j].iter().copied().collect();
        let b = sensors.len();
        let mut column = vec![0.0; b + 1];
        for (a, slot) in column.iter_mut().enumerate().skip(1) {
            *slot = equalized_pd_star(
                scenario.pd_target[j],
                a,
                &sensors,
                scenario.num_sus(),
                error_model,
            )?;
        }
        pd_star_table[j] = column;
    }
    let pd_star_for = |a_vec: &[usize]| -> Vec<f64> {
        (0..m)
            .map(|j| {
                if a_vec[j] == 0 {
                    0.0
                } else {
                    pd_star_table[j][a_vec[j]]
                }
            })
            .collect()
    };

    let grid = p_grid(settings.p_grid_step);
    let branches: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|pi| (0..a_vectors.len()).map(move |ai| (pi, ai)))
        .collect();

    let results: Result<Vec<BranchResult>> = branches
        .par_iter()
        .map(|&(p_idx, a_idx)| {
            let a_vec = a_vectors[a_idx].clone();
            let pd_star = pd_star_for(&a_vec);
            let mut model = ObjectiveModel::new(
                scenario,
                assignment,
                error_model,
                a_vec,
                pd_star,
                settings.relax_floor,
            )?;
            model.p = grid[p_idx];
            descend(&mut model, settings, None)?;
            // Score the branch with the exact floor regardless of the
            // descent objective, sliding along the common-scale ridge to
            // the plateau edge the relaxed objective stops short of.
            model.relax = false;
            let nt_exact = model.nt();
            let nt_exact = scale_sweep(&mut model, nt_exact)?;
            Ok(BranchResult {
                p_idx,
                a_idx,
                nt: nt_exact,
                tau_total: model.tau_total(),
                tau: model.tau,
            })
        })
        .collect();
    let results = results?;

    // Per threshold-vector family: pick the best grid branch by exact
    // value (ties: smaller total sensing time, then smaller p), then
    // refine p locally around it. Restricting the rule family therefore
    // yields exactly one of the candidates the free search considers.
    let mut family_best: Vec<Option<&BranchResult>> = vec![None; a_vectors.len()];
    for r in &results {
        let slot = &mut family_best[r.a_idx];
        let better = match slot {
            None => true,
            Some(cur) => {
                r.nt > cur.nt
                    || (r.nt == cur.nt
                        && (r.tau_total < cur.tau_total
                            || (r.tau_total == cur.tau_total && r.p_idx < cur.p_idx)))
            }
        };
        if better {
            *slot = Some(r);
        }
    }

    struct FamilyCandidate {
        a_idx: usize,
        p_grid_idx: usize,
        p: f64,
        nt: f64,
        tau_total: f64,
    }

    let refined: Result<Vec<FamilyCandidate>> = family_best
        .par_iter()
        .enumerate()
        .filter_map(|(a_idx, slot)| slot.map(|r| (a_idx, r)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(a_idx, branch)| {
            let a_vec = a_vectors[a_idx].clone();
            let pd_star = pd_star_for(&a_vec);
            let mut model =
                ObjectiveModel::new(scenario, assignment, error_model, a_vec, pd_star, false)?;
            model.set_all_tau(&branch.tau);
            let p_w = grid[branch.p_idx];
            let p_lo = (p_w - settings.p_grid_step).max(P_MIN);
            let p_hi = (p_w + settings.p_grid_step).min(P_MAX);
            let (p_hat, nt_hat) = line_search_tau(p_lo, p_hi, 1e-5, |p| {
                model.p = p;
                model.nt()
            })?;
            // Keep the refined point only when it strictly improves; on a
            // tie prefer the smaller p.
            let (p_best, nt_best) = if nt_hat > branch.nt || (nt_hat == branch.nt && p_hat < p_w)
            {
                (p_hat, nt_hat)
            } else {
                (p_w, branch.nt)
            };
            Ok(FamilyCandidate {
                a_idx,
                p_grid_idx: branch.p_idx,
                p: p_best,
                nt: nt_best,
                tau_total: branch.tau_total,
            })
        })
        .collect();
    let refined = refined?;

    let winner = refined
        .iter()
        .min_by(|x, y| {
            // argmax nt; ties toward smaller tau_total, then p, then a_idx.
            y.nt.partial_cmp(&x.nt)
                .unwrap()
                .then(x.tau_total.partial_cmp(&y.tau_total).unwrap())
                .then(x.p.partial_cmp(&y.p).unwrap())
                .then(x.a_idx.cmp(&y.a_idx))
        })
        .expect("at least one feasible branch");
    let winner_branch = family_best[winner.a_idx].expect("winner family has a branch");

    // Regenerate the winning branch's descent for the trace.
    let a_vec = a_vectors[winner.a_idx].clone();
    let pd_star = pd_star_for(&a_vec);
    let mut model = ObjectiveModel::new(
        scenario,
        assignment,
        error_model,
        a_vec.clone(),
        pd_star,
        settings.relax_floor,
    )?;
    model.p = grid[winner.p_grid_idx];
    let mut trace = Vec::new();
    descend(&mut model, settings, Some(&mut trace))?;

    let params = SensingAccessParams {
        tau: winner_branch.tau.clone(),
        a: a_vec,
        p: winner.p,
    };
    let mut report = match error_model {
        Some(em) if !em.is_zero() => {
            throughput_reporting::normalized_throughput_re(scenario, &params, assignment, em)?
        }
        _ => throughput_exact::normalized_throughput_ne(scenario, &params, assignment)?,
    };
    report.trace = trace;
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TimingParams;
    use std::collections::BTreeSet;

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    fn scenario(m: usize, n: usize, p_idle: f64, snr_db: f64) -> ScenarioConfig {
        ScenarioConfig::new(
            vec![p_idle; m],
            vec![vec![10f64.powf(snr_db / 10.0); m]; n],
            vec![0.9; m],
            TimingParams::default_study(),
            1.0,
            6e6,
        )
        .unwrap()
    }

    #[test]
    fn equalized_pd_star_examples() {
        assert_eq!(equalized_pd_star(0.9, 1, &[0], 1, None).unwrap(), 0.9);
        let x = equalized_pd_star(0.99, 1, &[0, 1], 2, None).unwrap();
        assert!((x - 0.9).abs() < 1e-9);
        // Round trip through the fused rule.
        let x = equalized_pd_star(0.9, 2, &[0, 1, 2], 3, None).unwrap();
        let fused = sensing::fuse_a_out_of_b(&vec![x; 3], 2).unwrap();
        assert!((fused - 0.9).abs() < 1e-8);
    }

    #[test]
    fn equalized_pd_star_with_errors_binds_worst_receiver() {
        let em = ErrorModel::uniform(4, 0.05).unwrap();
        let sensors = vec![0, 1, 2];
        let a = 2;
        let x = equalized_pd_star(0.9, a, &sensors, 4, Some(&em)).unwrap();
        // Every receiver's fused detection must now reach the target;
        // SU 3 hears all three sensors through noisy links and is worst.
        let mut worst = f64::INFINITY;
        for r in 0..4 {
            let fused =
                sensing::fused_with_errors(r, &[x, x, x], &sensors, &em, a).unwrap();
            worst = worst.min(fused);
            assert!(fused >= 0.9 - 1e-8);
        }
        assert!((worst - 0.9).abs() < 1e-8);
        // Errors force a higher per-sensor level than the clean case.
        let clean = equalized_pd_star(0.9, a, &sensors, 4, None).unwrap();
        assert!(x > clean);
    }

    #[test]
    fn equalize_detection_covers_all_channels() {
        let s = scenario(2, 3, 0.5, -15.0);
        let assignment =
            SensingAssignment::from_per_su(vec![set(&[0, 1]), set(&[0]), set(&[])], 2).unwrap();
        let eq = equalize_detection(&s, &assignment, &[1, 1], None).unwrap();
        // OR fusion lets each sensor run below the fused target; a single
        // sensor must meet it alone.
        assert!(eq.pd_star[0] < 0.9);
        assert_eq!(eq.pd_star[1], 0.9);
        // False-alarm curve decreasing in tau.
        let pf1 = eq.false_alarm(&s, 0, 0, 1e-3);
        let pf2 = eq.false_alarm(&s, 0, 0, 5e-3);
        assert!(pf2 < pf1);
        assert!(equalize_detection(&s, &assignment, &[2], None).is_err());
    }

    #[test]
    fn line_search_finds_interior_maximum() {
        let f = |x: f64| -(x - 0.3).powi(2);
        let (x, v) = line_search_tau(0.0, 1.0, 1e-6, f).unwrap();
        assert!((x - 0.3).abs() < 1e-4, "argmax {x}");
        assert!(v <= 0.0 && v > -1e-8);
        // Never below the bracket endpoints.
        assert!(v >= f(0.0) && v >= f(1.0));
    }

    #[test]
    fn line_search_constant_objective_returns_midpoint() {
        let (x, v) = line_search_tau(2.0, 4.0, 1e-6, |_| 7.0).unwrap();
        assert_eq!(x, 3.0);
        assert_eq!(v, 7.0);
        assert!(line_search_tau(1.0, 1.0, 1e-6, |_| 0.0).is_err());
    }

    #[test]
    fn line_search_matches_grid_argmax() {
        // Skewed unimodal objective.
        let f = |x: f64| (x * 3.0).sin() * (-x).exp();
        let (x, _) = line_search_tau(0.0, 1.0, 1e-7, f).unwrap();
        let grid_best = (0..=1000)
            .map(|k| k as f64 / 1000.0)
            .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        assert!((x - grid_best).abs() < 2e-3, "golden {x} grid {grid_best}");
    }

    #[test]
    fn threshold_vectors_shapes() {
        let assignment = SensingAssignment::from_per_su(
            vec![set(&[0, 1]), set(&[0]), set(&[0])],
            3,
        )
        .unwrap();
        // b = [3, 1, 0]
        let all = threshold_vectors(&assignment, FusionRule::Optimal).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.contains(&vec![1, 1, 0]));
        assert!(all.contains(&vec![3, 1, 0]));
        assert_eq!(
            threshold_vectors(&assignment, FusionRule::Or).unwrap(),
            vec![vec![1, 1, 0]]
        );
        assert_eq!(
            threshold_vectors(&assignment, FusionRule::And).unwrap(),
            vec![vec![3, 1, 0]]
        );
        assert_eq!(
            threshold_vectors(&assignment, FusionRule::Majority).unwrap(),
            vec![vec![2, 1, 0]]
        );
    }

    #[test]
    fn single_pair_optimum_matches_grid_search() {
        // M = 1, N = 1: classic sensing-time/access tradeoff. Compare the
        // optimizer against a dense 2-D grid on (tau, p).
        let s = scenario(1, 1, 0.7, -15.0);
        let assignment = SensingAssignment::from_per_su(vec![set(&[0])], 1).unwrap();
        let settings = OptimizerSettings {
            p_grid_step: 0.02,
            tau_tolerance_s: 1e-6,
            ..OptimizerSettings::default()
        };
        let (params, report) = optimize_params(&s, &assignment, &settings, None).unwrap();
        assert!(report.nt > 0.0);

        let mut grid_best = 0.0f64;
        for ti in 1..=400 {
            let tau = ti as f64 * 2.5e-4 / 4.0 * 4.0; // 0.25 ms steps up to 100 ms
            if tau + s.timing.report_phase_s(1) >= s.timing.cycle_s {
                break;
            }
            for pi in 1..=50 {
                let p = pi as f64 * 0.01;
                let mut candidate = SensingAccessParams::zeroed(1, 1);
                candidate.tau[0][0] = tau;
                candidate.a = vec![1];
                candidate.p = p;
                let nt = crate::throughput_exact::normalized_throughput_ne(
                    &s,
                    &candidate,
                    &assignment,
                )
                .unwrap()
                .nt;
                grid_best = grid_best.max(nt);
            }
        }
        assert!(
            report.nt >= grid_best * 0.995,
            "optimizer {} vs grid {}",
            report.nt,
            grid_best
        );
        assert!(params.tau[0][0] > 0.0 && params.tau[0][0] < 0.05);
    }

    #[test]
    fn descent_trace_is_monotone() {
        let s = scenario(2, 3, 0.6, -15.0);
        let assignment = SensingAssignment::from_per_su(
            vec![set(&[0, 1]), set(&[0]), set(&[1])],
            2,
        )
        .unwrap();
        let (_, report) =
            optimize_params(&s, &assignment, &OptimizerSettings::fast(), None).unwrap();
        assert!(!report.trace.is_empty());
        for pair in report.trace.windows(2) {
            assert!(
                pair[1].nt >= pair[0].nt - 1e-15,
                "descent trace decreased: {:?}",
                pair
            );
        }
    }

    #[test]
    fn optimum_dominates_random_feasible_draws() {
        let s = scenario(2, 2, 0.5, -12.0);
        let assignment =
            SensingAssignment::from_per_su(vec![set(&[0, 1]), set(&[0, 1])], 2).unwrap();
        let (_, report) =
            optimize_params(&s, &assignment, &OptimizerSettings::default(), None).unwrap();

        let mut state = 0xABCDEF12345u64;
        let mut next = || {
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            (state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
        };
        for draw in 0..100 {
            let mut candidate = SensingAccessParams::zeroed(2, 2);
            candidate.p = 0.01 + 0.49 * next();
            candidate.a = vec![1 + (next() * 2.0) as usize, 1 + (next() * 2.0) as usize];
            for i in 0..2 {
                for j in 0..2 {
                    candidate.tau[i][j] = 1e-4 + next() * 0.02;
                }
            }
            let nt = crate::throughput_exact::normalized_throughput_ne(
                &s,
                &candidate,
                &assignment,
            )
            .unwrap()
            .nt;
            assert!(
                report.nt >= nt - 1e-9,
                "draw {draw}: random {} beat optimum {}",
                nt,
                report.nt
            );
        }
    }

    #[test]
    fn single_sensor_channels_have_one_threshold_vector() {
        let s = scenario(2, 2, 0.5, -12.0);
        let assignment =
            SensingAssignment::from_per_su(vec![set(&[0]), set(&[1])], 2).unwrap();
        let vecs = threshold_vectors(&assignment, FusionRule::Optimal).unwrap();
        assert_eq!(vecs, vec![vec![1, 1]]);
        let (params, _) =
            optimize_params(&s, &assignment, &OptimizerSettings::fast(), None).unwrap();
        assert_eq!(params.a, vec![1, 1]);
    }
}
