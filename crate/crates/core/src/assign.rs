//! Channel sensing-set search: a Hungarian seed, one-pair-at-a-time
//! greedy growth, and exhaustive search over all inclusion patterns.
//!
//! Both searches score candidate assignments with
//! [`optimize_params`](crate::optimize::optimize_params) under the caller's
//! settings, so greedy and exhaustive results are directly comparable:
//! the exhaustive search visits every assignment the greedy could reach
//! and therefore never scores below it.

use rayon::prelude::*;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optimize::{optimize_params, OptimizerSettings};
use crate::scenario::ScenarioConfig;
use crate::types::{ErrorModel, SensingAccessParams, SensingAssignment};

/// Hard cap on exhaustive search: at most `2^16` inclusion patterns.
pub const BRUTE_FORCE_MAX_PAIRS: usize = 16;

// ---------------------------------------------------------------------------
// Result type
// ---------------------------------------------------------------------------

/// How an assignment was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Greedy,
    BruteForce,
}

/// One step of an assignment search trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    pub step: usize,
    /// The (SU, channel) pair added at this step; `None` for the
    /// initialization entry.
    pub added: Option<(usize, usize)>,
    /// Throughput gain over the previous step.
    pub delta_nt: f64,
    /// Throughput after this step.
    pub nt: f64,
}

impl Serialize for SearchStep {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Added {
            su: usize,
            channel: usize,
        }
        let mut st = serializer.serialize_struct("SearchStep", 4)?;
        st.serialize_field("step", &self.step)?;
        st.serialize_field(
            "added",
            &self.added.map(|(su, ch)| Added {
                su: su + 1,
                channel: ch + 1,
            }),
        )?;
        st.serialize_field("delta_nt", &self.delta_nt)?;
        st.serialize_field("nt", &self.nt)?;
        st.end()
    }
}

/// Final assignment, its optimized parameters, the throughput they
/// achieve, and the search trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentSearchResult {
    pub method: SearchMethod,
    pub assignment: SensingAssignment,
    pub params: SensingAccessParams,
    pub nt: f64,
    pub iterations: Vec<SearchStep>,
}

// ---------------------------------------------------------------------------
// Hungarian assignment
// ---------------------------------------------------------------------------

/// Minimum-cost channel-to-SU matching: every channel gets exactly one
/// SU, SUs serve at most one channel while enough SUs exist, and SUs are
/// replicated evenly when there are more channels than SUs.
///
/// `cost[i][j]` is the cost of putting SU `i` on channel `j`; the return
/// value maps each channel to its SU.
pub fn hungarian_min_cost(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n_sus = cost.len();
    if n_sus == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    let m_channels = cost[0].len();
    if m_channels == 0 || cost.iter().any(|row| row.len() != m_channels) {
        return Err(Error::InvalidArgument(
            "cost matrix must be rectangular and non-empty".into(),
        ));
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "cost ({}, {}) = {c} must be finite and non-negative",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    // Replicate SUs so each channel can get a distinct column.
    let copies = m_channels.div_ceil(n_sus);
    let cols = n_sus * copies;
    let su_of_col = |c: usize| c % n_sus;

    // Potentials-and-augmenting-paths assignment on rows = channels,
    // columns = SU copies (1-based internals).
    let n = m_channels;
    let m = cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[su_of_col(j - 1)][i0 - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut per_channel_su = vec![0usize; m_channels];
    for j in 1..=m {
        if matched_row[j] != 0 {
            per_channel_su[matched_row[j] - 1] = su_of_col(j - 1);
        }
    }
    Ok(per_channel_su)
}

// ---------------------------------------------------------------------------
// Greedy search
// ---------------------------------------------------------------------------

/// Grow sensing sets one (SU, channel) pair at a time.
///
/// Seeding: optimize a temporary everyone-senses-everything assignment on
/// a reduced probability grid, then give each channel the SU with the
/// cheapest optimized sensing time (Hungarian matching). Afterwards, add
/// whichever pair raises the optimized throughput most, as long as the
/// gain exceeds `1e-3` of the current throughput.
pub fn greedy_assignment(
    scenario: &ScenarioConfig,
    settings: &OptimizerSettings,
    error_model: Option<&ErrorModel>,
) -> Result<AssignmentSearchResult> {
    settings.validate()?;
    let n = scenario.num_sus();
    let m = scenario.num_channels();

    // Seed costs from the all-channel temporary assignment.
    let everything = SensingAssignment::from_per_channel(
        vec![(0..n).collect(); m],
        n,
    )?;
    let mut seed_settings = *settings;
    seed_settings.p_grid_step = settings.p_grid_step.max(0.05);
    let (seed_params, _) = optimize_params(scenario, &everything, &seed_settings, error_model)?;
    let per_channel_su = hungarian_min_cost(&seed_params.tau)?;

    let mut per_channel = vec![std::collections::BTreeSet::new(); m];
    for (ch, &su) in per_channel_su.iter().enumerate() {
        per_channel[ch].insert(su);
    }
    let mut assignment = SensingAssignment::from_per_channel(per_channel, n)?;

    let (mut params, mut report) = optimize_params(scenario, &assignment, settings, error_model)?;
    let mut nt_current = report.nt;
    let mut steps = vec![SearchStep {
        step: 0,
        added: None,
        delta_nt: 0.0,
        nt: nt_current,
    }];

    // The number of additions is bounded by the number of free pairs.
    for step in 1..=(n * m) {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| !assignment.contains(i, j))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let scored: Result<Vec<_>> = candidates
            .par_iter()
            .map(|&(i, j)| {
                let trial = assignment.with_added(i, j)?;
                let (trial_params, trial_report) =
                    optimize_params(scenario, &trial, settings, error_model)?;
                Ok((i, j, trial, trial_params, trial_report))
            })
            .collect();
        let scored = scored?;
        // Deterministic argmax with lexicographic (su, channel) tie-break.
        let best = scored
            .into_iter()
            .max_by(|a, b| {
                a.4.nt
                    .partial_cmp(&b.4.nt)
                    .unwrap()
                    .then_with(|| (b.0, b.1).cmp(&(a.0, a.1)))
            })
            .unwrap();
        let (i, j, trial, trial_params, trial_report) = best;
        let delta = trial_report.nt - nt_current;
        let threshold = 1e-3 * nt_current;
        if delta <= threshold {
            break;
        }
        assignment = trial;
        params = trial_params;
        nt_current = trial_report.nt;
        report = trial_report;
        steps.push(SearchStep {
            step,
            added: Some((i, j)),
            delta_nt: delta,
            nt: nt_current,
        });
    }
    let _ = report;

    Ok(AssignmentSearchResult {
        method: SearchMethod::Greedy,
        assignment,
        params,
        nt: nt_current,
        iterations: steps,
    })
}

// ---------------------------------------------------------------------------
// Exhaustive search
// ---------------------------------------------------------------------------

/// Optimize every one of the `2^(M N)` inclusion patterns and keep the
/// best. Guarded to `M x N <= 16` pairs; the all-empty pattern scores
/// zero and is skipped.
pub fn brute_force_assignment(
    scenario: &ScenarioConfig,
    settings: &OptimizerSettings,
    error_model: Option<&ErrorModel>,
) -> Result<AssignmentSearchResult> {
    settings.validate()?;
    let n = scenario.num_sus();
    let m = scenario.num_channels();
    let pairs = n * m;
    if pairs > BRUTE_FORCE_MAX_PAIRS {
        return Err(Error::BudgetExceeded {
            what: "assignment inclusion patterns",
            count: 1u128 << pairs.min(127),
            cap: 1u128 << BRUTE_FORCE_MAX_PAIRS,
        });
    }

    let assignment_of = |mask: u32| -> Result<SensingAssignment> {
        let mut per_su = vec![std::collections::BTreeSet::new(); n];
        for (i, set) in per_su.iter_mut().enumerate() {
            for j in 0..m {
                if mask >> (i * m + j) & 1 == 1 {
                    set.insert(j);
                }
            }
        }
        SensingAssignment::from_per_su(per_su, m)
    };

    let total: u32 = 1 << pairs;
    let scores: Result<Vec<(u32, f64)>> = (1..total)
        .into_par_iter()
        .map(|mask| {
            let assignment = assignment_of(mask)?;
            let (_, report) = optimize_params(scenario, &assignment, settings, error_model)?;
            Ok((mask, report.nt))
        })
        .collect();
    let scores = scores?;

    // Deterministic winner: highest throughput, lowest mask on ties.
    let &(best_mask, best_nt) = scores
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
        .expect("at least one candidate");

    let assignment = assignment_of(best_mask)?;
    let (params, report) = optimize_params(scenario, &assignment, settings, error_model)?;
    Ok(AssignmentSearchResult {
        method: SearchMethod::BruteForce,
        assignment,
        params,
        nt: report.nt,
        iterations: vec![SearchStep {
            step: 0,
            added: None,
            delta_nt: 0.0,
            nt: best_nt,
        }],
    })
}
