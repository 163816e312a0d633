//! Shared domain types: sensing assignments, sensing/access parameters,
//! reporting-error models, and throughput reports.
//!
//! SU and channel indices are 0-based everywhere in the API. Serialized
//! reports and scenario files use 1-based indices, matching the usual
//! tabular presentation of channel assignments.

use std::collections::BTreeSet;

use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// SensingAssignment
// ---------------------------------------------------------------------------

/// Which SU senses which channel, kept in two consistent views:
/// per-SU channel sets and per-channel sensor sets.
///
/// Both views are maintained together so that `su i senses channel j`
/// can be answered from either side without recomputation. Sets may be
/// empty on either side: an SU with no assigned channels relies entirely
/// on reported results, and a channel with no sensors is never accessed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingAssignment {
    per_su: Vec<BTreeSet<usize>>,
    per_channel: Vec<BTreeSet<usize>>,
}

impl SensingAssignment {
    /// Build the dual view from per-SU channel sets.
    pub fn from_per_su(per_su: Vec<BTreeSet<usize>>, num_channels: usize) -> Result<Self> {
        let num_sus = per_su.len();
        let mut per_channel = vec![BTreeSet::new(); num_channels];
        for (su, channels) in per_su.iter().enumerate() {
            for &ch in channels {
                if ch >= num_channels {
                    return Err(Error::IndexOutOfRange(format!(
                        "SU {} assigned channel index {} but only {} channels exist",
                        su + 1,
                        ch + 1,
                        num_channels
                    )));
                }
                per_channel[ch].insert(su);
            }
        }
        let _ = num_sus;
        Ok(Self { per_su, per_channel })
    }

    /// Build the dual view from per-channel sensor sets.
    pub fn from_per_channel(per_channel: Vec<BTreeSet<usize>>, num_sus: usize) -> Result<Self> {
        let mut per_su = vec![BTreeSet::new(); num_sus];
        for (ch, sus) in per_channel.iter().enumerate() {
            for &su in sus {
                if su >= num_sus {
                    return Err(Error::IndexOutOfRange(format!(
                        "channel {} sensed by SU index {} but only {} SUs exist",
                        ch + 1,
                        su + 1,
                        num_sus
                    )));
                }
                per_su[su].insert(ch);
            }
        }
        Ok(Self { per_su, per_channel })
    }

    /// Empty assignment (no SU senses anything).
    pub fn empty(num_sus: usize, num_channels: usize) -> Self {
        Self {
            per_su: vec![BTreeSet::new(); num_sus],
            per_channel: vec![BTreeSet::new(); num_channels],
        }
    }

    pub fn num_sus(&self) -> usize {
        self.per_su.len()
    }

    pub fn num_channels(&self) -> usize {
        self.per_channel.len()
    }

    /// Channel sets per SU.
    pub fn per_su(&self) -> &[BTreeSet<usize>] {
        &self.per_su
    }

    /// Sensor sets per channel.
    pub fn per_channel(&self) -> &[BTreeSet<usize>] {
        &self.per_channel
    }

    /// Number of sensors assigned to `channel` (`b_j`).
    pub fn sensor_count(&self, channel: usize) -> usize {
        self.per_channel[channel].len()
    }

    pub fn contains(&self, su: usize, channel: usize) -> bool {
        self.per_su[su].contains(&channel)
    }

    /// Total number of (SU, channel) sensing pairs.
    pub fn pair_count(&self) -> usize {
        self.per_su.iter().map(|s| s.len()).sum()
    }

    /// Copy of this assignment with one extra (SU, channel) pair.
    pub fn with_added(&self, su: usize, channel: usize) -> Result<Self> {
        if su >= self.num_sus() || channel >= self.num_channels() {
            return Err(Error::IndexOutOfRange(format!(
                "pair (SU {}, channel {})",
                su + 1,
                channel + 1
            )));
        }
        let mut next = self.clone();
        next.per_su[su].insert(channel);
        next.per_channel[channel].insert(su);
        Ok(next)
    }

    /// Render the assignment as one `x`/`.` grid row per SU, channels in
    /// column order, the way assignment tables are usually printed.
    pub fn grid_rows(&self) -> Vec<String> {
        self.per_su
            .iter()
            .map(|set| {
                (0..self.num_channels())
                    .map(|ch| if set.contains(&ch) { 'x' } else { '.' })
                    .collect()
            })
            .collect()
    }
}

impl Serialize for SensingAssignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        // 1-based channel lists plus the x-grid for readability.
        let mut st = serializer.serialize_struct("SensingAssignment", 2)?;
        let per_su: Vec<Vec<usize>> = self
            .per_su
            .iter()
            .map(|set| set.iter().map(|&c| c + 1).collect())
            .collect();
        st.serialize_field("per_su", &per_su)?;
        st.serialize_field("grid", &self.grid_rows())?;
        st.end()
    }
}

// ---------------------------------------------------------------------------
// SensingAccessParams
// ---------------------------------------------------------------------------

/// Sensing times, fusion thresholds, and the CSMA access probability.
///
/// `tau[i][j]` is meaningful only for pairs present in the accompanying
/// [`SensingAssignment`]; unassigned entries are zero. `a[j]` is the
/// a-out-of-b fusion threshold for channel `j` and is zero for channels
/// with no sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingAccessParams {
    /// Sensing time in seconds per (SU, channel) pair.
    pub tau: Vec<Vec<f64>>,
    /// Fusion threshold per channel.
    pub a: Vec<usize>,
    /// Transmission probability per observed-idle slot.
    pub p: f64,
}

impl SensingAccessParams {
    /// All-zero parameter set shaped for `num_sus` x `num_channels`.
    pub fn zeroed(num_sus: usize, num_channels: usize) -> Self {
        Self {
            tau: vec![vec![0.0; num_channels]; num_sus],
            a: vec![0; num_channels],
            p: 0.0,
        }
    }

    /// Total sensing time of one SU (sum over its assigned channels).
    pub fn su_sensing_time(&self, su: usize, assignment: &SensingAssignment) -> f64 {
        assignment.per_su()[su]
            .iter()
            .map(|&ch| self.tau[su][ch])
            .sum()
    }

    /// Sensing-phase length: the maximum per-SU total sensing time.
    pub fn max_total_sensing(&self, assignment: &SensingAssignment) -> f64 {
        (0..assignment.num_sus())
            .map(|i| self.su_sensing_time(i, assignment))
            .fold(0.0, f64::max)
    }

    /// Check shape and invariants against an assignment and cycle length.
    pub fn validate(&self, assignment: &SensingAssignment, cycle_s: f64) -> Result<()> {
        let n = assignment.num_sus();
        let m = assignment.num_channels();
        if self.tau.len() != n || self.tau.iter().any(|row| row.len() != m) {
            return Err(Error::field("params.tau", "matrix shape must be SUs x channels"));
        }
        if self.a.len() != m {
            return Err(Error::field("params.a", "one fusion threshold per channel"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::field("params.p", "access probability must lie in [0, 1]"));
        }
        for (j, sensors) in assignment.per_channel().iter().enumerate() {
            let b = sensors.len();
            if b == 0 {
                if self.a[j] != 0 {
                    return Err(Error::field(
                        "params.a",
                        format!("channel {} has no sensors; threshold must be 0", j + 1),
                    ));
                }
                continue;
            }
            if self.a[j] < 1 || self.a[j] > b {
                return Err(Error::field(
                    "params.a",
                    format!(
                        "channel {}: threshold {} outside [1, {}]",
                        j + 1,
                        self.a[j],
                        b
                    ),
                ));
            }
        }
        for i in 0..n {
            for j in 0..m {
                let assigned = assignment.contains(i, j);
                let tau = self.tau[i][j];
                if assigned && !(tau > 0.0 && tau <= cycle_s) {
                    return Err(Error::field(
                        "params.tau",
                        format!(
                            "SU {} channel {}: sensing time {} outside (0, {}]",
                            i + 1,
                            j + 1,
                            tau,
                            cycle_s
                        ),
                    ));
                }
                if !assigned && tau != 0.0 {
                    return Err(Error::field(
                        "params.tau",
                        format!("SU {} channel {}: pair is not assigned", i + 1, j + 1),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl Serialize for SensingAccessParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct TauEntry {
            su: usize,
            channel: usize,
            seconds: f64,
        }
        let mut st = serializer.serialize_struct("SensingAccessParams", 3)?;
        let entries: Vec<TauEntry> = self
            .tau
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().enumerate().filter_map(move |(j, &t)| {
                    (t > 0.0).then_some(TauEntry {
                        su: i + 1,
                        channel: j + 1,
                        seconds: t,
                    })
                })
            })
            .collect();
        st.serialize_field("tau", &entries)?;
        st.serialize_field("a", &self.a)?;
        st.serialize_field("p", &self.p)?;
        st.end()
    }
}

// ---------------------------------------------------------------------------
// ErrorModel
// ---------------------------------------------------------------------------

/// Per-ordered-pair reporting bit-error probabilities.
///
/// `pe[r][s]` is the probability that the one-bit sensing report sent by
/// SU `s` arrives flipped at SU `r`. The diagonal is zero: an SU never
/// corrupts its own sensing result.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pe: Vec<Vec<f64>>,
}

impl ErrorModel {
    /// No reporting errors.
    pub fn zero(num_sus: usize) -> Self {
        Self {
            pe: vec![vec![0.0; num_sus]; num_sus],
        }
    }

    /// The same error probability on every ordered pair of distinct SUs.
    pub fn uniform(num_sus: usize, pe: f64) -> Result<Self> {
        let mut m = vec![vec![pe; num_sus]; num_sus];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let model = Self { pe: m };
        model.validate()?;
        Ok(model)
    }

    /// Build from a full matrix; diagonal entries must be zero.
    pub fn from_matrix(pe: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self { pe };
        model.validate()?;
        Ok(model)
    }

    pub fn num_sus(&self) -> usize {
        self.pe.len()
    }

    /// Error probability on the link from sender `s` to receiver `r`.
    pub fn pe(&self, receiver: usize, sender: usize) -> f64 {
        self.pe[receiver][sender]
    }

    pub fn is_zero(&self) -> bool {
        self.pe.iter().all(|row| row.iter().all(|&v| v == 0.0))
    }

    fn validate(&self) -> Result<()> {
        let n = self.pe.len();
        for (r, row) in self.pe.iter().enumerate() {
            if row.len() != n {
                return Err(Error::field("errors.pe", "matrix must be square"));
            }
            for (s, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::field(
                        "errors.pe",
                        format!("entry ({}, {}) = {} outside [0, 1]", r + 1, s + 1, v),
                    ));
                }
                if r == s && v != 0.0 {
                    return Err(Error::field(
                        "errors.pe",
                        format!("diagonal entry ({0}, {0}) must be 0", r + 1),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl Serialize for ErrorModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.pe.len()))?;
        for row in &self.pe {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

// ---------------------------------------------------------------------------
// ThroughputReport
// ---------------------------------------------------------------------------

/// One point of an optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub nt: f64,
}

/// Normalized throughput together with the inputs that produced it.
///
/// `nt` is the expected per-channel normalized throughput; the
/// `per_channel_nt` entries are the per-channel shares and sum to `nt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub nt: f64,
    pub per_channel_nt: Vec<f64>,
    pub params_used: SensingAccessParams,
    pub assignment_used: SensingAssignment,
    /// Objective values recorded by the optimizer, empty for plain
    /// evaluations.
    pub trace: Vec<TracePoint>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn dual_view_matches_assignment_table_example() {
        // 5 SUs x 5 channels; SU 4 intentionally unassigned.
        let per_su = vec![
            set(&[0, 2, 3]),
            set(&[0, 1]),
            set(&[1, 2, 3]),
            set(&[]),
            set(&[0, 4]),
        ];
        let a = SensingAssignment::from_per_su(per_su, 5).unwrap();
        assert_eq!(a.per_channel()[0], set(&[0, 1, 4]));
        assert_eq!(a.per_channel()[1], set(&[1, 2]));
        assert_eq!(a.per_channel()[2], set(&[0, 2]));
        assert_eq!(a.per_channel()[3], set(&[0, 2]));
        assert_eq!(a.per_channel()[4], set(&[4]));
        assert_eq!(a.sensor_count(0), 3);
        assert!(a.per_su()[3].is_empty());
    }

    #[test]
    fn dual_view_empty_and_full() {
        let a = SensingAssignment::from_per_su(vec![set(&[]); 3], 2).unwrap();
        assert!(a.per_channel().iter().all(|s| s.is_empty()));

        let full = SensingAssignment::from_per_su(vec![set(&[0, 1]); 3], 2).unwrap();
        assert!(full.per_channel().iter().all(|s| s.len() == 3));
    }

    #[test]
    fn dual_view_is_an_involution() {
        let per_su = vec![set(&[1]), set(&[0, 2]), set(&[])];
        let a = SensingAssignment::from_per_su(per_su.clone(), 3).unwrap();
        let b = SensingAssignment::from_per_channel(a.per_channel().to_vec(), 3).unwrap();
        assert_eq!(b.per_su(), per_su.as_slice());
        assert_eq!(a, b);
    }

    #[test]
    fn dual_view_rejects_out_of_range() {
        let err = SensingAssignment::from_per_su(vec![set(&[5])], 3).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange(_)));
    }

    #[test]
    fn grid_rows_render() {
        let a = SensingAssignment::from_per_su(vec![set(&[0, 3]), set(&[1])], 4).unwrap();
        assert_eq!(a.grid_rows(), vec!["x..x".to_string(), ".x..".to_string()]);
    }

    #[test]
    fn error_model_uniform_has_zero_diagonal() {
        let m = ErrorModel::uniform(3, 0.05).unwrap();
        for i in 0..3 {
            assert_eq!(m.pe(i, i), 0.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(m.pe(i, j), 0.05);
                }
            }
        }
        assert!(ErrorModel::uniform(2, 1.5).is_err());
    }

    #[test]
    fn params_validate_catches_shape_and_range() {
        let assignment = SensingAssignment::from_per_su(vec![set(&[0]), set(&[0])], 1).unwrap();
        let mut params = SensingAccessParams::zeroed(2, 1);
        params.a = vec![1];
        params.p = 0.2;
        params.tau[0][0] = 0.005;
        params.tau[1][0] = 0.005;
        assert!(params.validate(&assignment, 0.1).is_ok());

        params.a = vec![3];
        assert!(params.validate(&assignment, 0.1).is_err());
        params.a = vec![1];
        params.tau[1][0] = 0.0;
        assert!(params.validate(&assignment, 0.1).is_err());
    }
}
