//! Scenario configuration: network dimensions, channel statistics, link
//! SNRs, detection targets, and MAC timing, plus the text config format.
//!
//! Config files are TOML. SNRs are given in dB (the usual presentation)
//! and converted to linear scale on load; SU and channel indices in files
//! are 1-based. See the crate README for the full schema.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{ErrorModel, SensingAccessParams, SensingAssignment};

// ---------------------------------------------------------------------------
// TimingParams
// ---------------------------------------------------------------------------

/// MAC timing constants. Frame fields are in contention slots; the cycle,
/// slot, propagation delay, and report slot are in seconds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    /// Cycle length `T` in seconds.
    pub cycle_s: f64,
    /// Contention slot length `v` in seconds.
    pub slot_s: f64,
    /// Data packet size in slots.
    pub packet_slots: f64,
    /// ACK length in slots.
    pub ack_slots: f64,
    /// RTS length in slots.
    pub rts_slots: f64,
    /// CTS length in slots.
    pub cts_slots: f64,
    /// Short interframe space in slots.
    pub sifs_slots: f64,
    /// Distributed interframe space in slots.
    pub difs_slots: f64,
    /// Propagation delay in seconds (must be below one slot).
    pub propagation_s: f64,
    /// Per-SU sensing-report slot in seconds.
    pub report_slot_s: f64,
}

impl TimingParams {
    /// Timing constants used throughout the numerical studies: 100 ms
    /// cycle, 20 us slots, 450-slot packets, 1 us propagation delay,
    /// 80 us report slots.
    pub fn default_study() -> Self {
        Self {
            cycle_s: 0.1,
            slot_s: 20e-6,
            packet_slots: 450.0,
            ack_slots: 20.0,
            rts_slots: 20.0,
            cts_slots: 20.0,
            sifs_slots: 2.0,
            difs_slots: 10.0,
            propagation_s: 1e-6,
            report_slot_s: 80e-6,
        }
    }

    /// Cycle length in slots.
    pub fn cycle_slots(&self) -> f64 {
        self.cycle_s / self.slot_s
    }

    /// Propagation delay in slots.
    pub fn propagation_slots(&self) -> f64 {
        self.propagation_s / self.slot_s
    }

    /// Total reporting-phase length for `num_sus` SUs, in seconds.
    pub fn report_phase_s(&self, num_sus: usize) -> f64 {
        num_sus as f64 * self.report_slot_s
    }

    fn validate(&self, num_sus: usize) -> Result<()> {
        let nonneg = [
            ("timing.packet_slots", self.packet_slots),
            ("timing.ack_slots", self.ack_slots),
            ("timing.rts_slots", self.rts_slots),
            ("timing.cts_slots", self.cts_slots),
            ("timing.sifs_slots", self.sifs_slots),
            ("timing.difs_slots", self.difs_slots),
            ("timing.propagation_s", self.propagation_s),
            ("timing.report_slot_s", self.report_slot_s),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::field(name, format!("{v} must be >= 0")));
            }
        }
        if !(self.cycle_s > 0.0) {
            return Err(Error::field("timing.cycle_s", "cycle must be positive"));
        }
        if !(self.slot_s > 0.0) {
            return Err(Error::field("timing.slot_s", "slot must be positive"));
        }
        if self.propagation_s >= self.slot_s {
            return Err(Error::field(
                "timing.propagation_s",
                "propagation delay must be below one slot",
            ));
        }
        let report = self.report_phase_s(num_sus);
        if report >= self.cycle_s {
            return Err(Error::field(
                "timing.report_slot_s",
                format!(
                    "reporting phase {report} s for {num_sus} SUs does not fit in the {} s cycle",
                    self.cycle_s
                ),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ScenarioConfig
// ---------------------------------------------------------------------------

/// Validated scenario: dimensions, channel idle probabilities, linear
/// per-(SU, channel) SNRs, per-channel detection targets, timing, and
/// the energy-detector sampling setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    num_channels: usize,
    num_sus: usize,
    /// Probability that each channel is idle (available) in a cycle.
    pub p_idle: Vec<f64>,
    /// Linear-scale SNR of the PU signal at SU `i` on channel `j`.
    pub snr: Vec<Vec<f64>>,
    /// Target fused detection probability per channel.
    pub pd_target: Vec<f64>,
    pub timing: TimingParams,
    /// Noise power (normalized).
    pub noise_power: f64,
    /// Energy-detector sampling frequency in Hz.
    pub sampling_freq_hz: f64,
}

/// Fused detection target used when a scenario does not specify one.
pub const DEFAULT_PD_TARGET: f64 = 0.9;

impl ScenarioConfig {
    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_sus(&self) -> usize {
        self.num_sus
    }

    /// Build and validate a scenario from already-linear SNRs.
    pub fn new(
        p_idle: Vec<f64>,
        snr_linear: Vec<Vec<f64>>,
        pd_target: Vec<f64>,
        timing: TimingParams,
        noise_power: f64,
        sampling_freq_hz: f64,
    ) -> Result<Self> {
        let num_channels = p_idle.len();
        let num_sus = snr_linear.len();
        let cfg = Self {
            num_channels,
            num_sus,
            p_idle,
            snr: snr_linear,
            pd_target,
            timing,
            noise_power,
            sampling_freq_hz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.num_channels < 1 {
            return Err(Error::field("channels", "at least one channel required"));
        }
        if self.num_sus < 1 {
            return Err(Error::field("sus", "at least one SU required"));
        }
        for (j, &p) in self.p_idle.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::field(
                    "p_idle",
                    format!("channel {}: {} outside [0, 1]", j + 1, p),
                ));
            }
        }
        if self.pd_target.len() != self.num_channels {
            return Err(Error::field("pd_target", "one target per channel"));
        }
        for (j, &p) in self.pd_target.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::field(
                    "pd_target",
                    format!("channel {}: {} outside [0, 1]", j + 1, p),
                ));
            }
        }
        if self.snr.len() != self.num_sus
            || self.snr.iter().any(|row| row.len() != self.num_channels)
        {
            return Err(Error::field("snr", "matrix shape must be SUs x channels"));
        }
        for (i, row) in self.snr.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                if !(g > 0.0) || !g.is_finite() {
                    return Err(Error::field(
                        "snr",
                        format!("SU {} channel {}: linear SNR {} must be > 0", i + 1, j + 1, g),
                    ));
                }
            }
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::field("noise_power", "must be positive"));
        }
        if !(self.sampling_freq_hz > 0.0) {
            return Err(Error::field("sampling_freq_hz", "must be positive"));
        }
        self.timing.validate(self.num_sus)?;
        Ok(())
    }
}

pub(crate) fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

// ---------------------------------------------------------------------------
// Config file format
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    channels: usize,
    sus: usize,
    p_idle: ScalarOrVec,
    #[serde(default)]
    pd_target: Option<ScalarOrVec>,
    #[serde(default = "default_noise")]
    noise_power: f64,
    sampling_freq_hz: f64,
    timing: TimingParams,
    snr: RawSnr,
    #[serde(default)]
    assignment: Option<RawAssignment>,
    #[serde(default)]
    params: Option<RawParams>,
    #[serde(default)]
    errors: Option<RawErrors>,
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, len: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrVec::Vec(v) => {
                if v.len() != len {
                    Err(Error::field(
                        field,
                        format!("expected {} entries, found {}", len, v.len()),
                    ))
                } else {
                    Ok(v.clone())
                }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnr {
    default_db: f64,
    #[serde(default)]
    entries: Vec<RawSnrEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnrEntry {
    su: usize,
    channel: usize,
    db: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAssignment {
    /// 1-based channel lists, one per SU.
    per_su: Vec<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    p: f64,
    a: Vec<usize>,
    tau: Vec<RawTauEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTauEntry {
    su: usize,
    channel: usize,
    seconds: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawErrors {
    #[serde(default)]
    uniform_pe: Option<f64>,
    #[serde(default)]
    entries: Vec<RawErrorEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawErrorEntry {
    /// Receiving SU, 1-based.
    to: usize,
    /// Sending SU, 1-based.
    from: usize,
    pe: f64,
}

/// Overrides applied while loading a scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOverrides {
    /// Shift added to every SNR entry, in dB, before linear conversion.
    pub dgamma_db: Option<f64>,
    /// Replaces the detection target on every channel.
    pub pd_target: Option<f64>,
    /// Replaces the reporting-error model with a uniform one.
    pub uniform_pe: Option<f64>,
}

/// A parsed scenario file: the validated scenario plus any optional
/// assignment, parameter, and error-model blocks it carried.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: ScenarioConfig,
    pub assignment: Option<SensingAssignment>,
    pub params: Option<SensingAccessParams>,
    pub error_model: Option<ErrorModel>,
}

/// Parse and validate a scenario from TOML text.
pub fn load_scenario_str(text: &str, overrides: &LoadOverrides) -> Result<ScenarioFile> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build_scenario(raw, overrides)
}

/// Parse and validate a scenario from a file on disk.
pub fn load_scenario_path(path: &Path, overrides: &LoadOverrides) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)?;
    load_scenario_str(&text, overrides)
}

fn build_scenario(raw: RawScenario, overrides: &LoadOverrides) -> Result<ScenarioFile> {
    if raw.channels < 1 {
        return Err(Error::field("channels", "at least one channel required"));
    }
    if raw.sus < 1 {
        return Err(Error::field("sus", "at least one SU required"));
    }
    let m = raw.channels;
    let n = raw.sus;

    let p_idle = raw.p_idle.expand(m, "p_idle")?;
    let pd_target = match (&raw.pd_target, overrides.pd_target) {
        (_, Some(v)) => vec![v; m],
        (Some(sv), None) => sv.expand(m, "pd_target")?,
        (None, None) => vec![DEFAULT_PD_TARGET; m],
    };

    let shift = overrides.dgamma_db.unwrap_or(0.0);
    let mut snr_db = vec![vec![raw.snr.default_db; m]; n];
    for e in &raw.snr.entries {
        if e.su < 1 || e.su > n {
            return Err(Error::field("snr.entries", format!("su {} out of range", e.su)));
        }
        if e.channel < 1 || e.channel > m {
            return Err(Error::field(
                "snr.entries",
                format!("channel {} out of range", e.channel),
            ));
        }
        snr_db[e.su - 1][e.channel - 1] = e.db;
    }
    let snr_linear: Vec<Vec<f64>> = snr_db
        .iter()
        .map(|row| row.iter().map(|&db| db_to_linear(db + shift)).collect())
        .collect();

    let scenario = ScenarioConfig::new(
        p_idle,
        snr_linear,
        pd_target,
        raw.timing,
        raw.noise_power,
        raw.sampling_freq_hz,
    )?;

    let assignment = match &raw.assignment {
        None => None,
        Some(a) => {
            if a.per_su.len() != n {
                return Err(Error::field(
                    "assignment.per_su",
                    format!("expected {} SU rows, found {}", n, a.per_su.len()),
                ));
            }
            let per_su: Result<Vec<BTreeSet<usize>>> = a
                .per_su
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&c| {
                            if c < 1 || c > m {
                                Err(Error::field(
                                    "assignment.per_su",
                                    format!("channel {c} out of range"),
                                ))
                            } else {
                                Ok(c - 1)
                            }
                        })
                        .collect()
                })
                .collect();
            Some(SensingAssignment::from_per_su(per_su?, m)?)
        }
    };

    let params = match (&raw.params, &assignment) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::field(
                "params",
                "a params block requires an assignment block",
            ))
        }
        (Some(p), Some(assignment)) => {
            let mut out = SensingAccessParams::zeroed(n, m);
            out.p = p.p;
            if p.a.len() != m {
                return Err(Error::field("params.a", "one threshold per channel"));
            }
            out.a = p.a.clone();
            for t in &p.tau {
                if t.su < 1 || t.su > n || t.channel < 1 || t.channel > m {
                    return Err(Error::field(
                        "params.tau",
                        format!("pair (su {}, channel {}) out of range", t.su, t.channel),
                    ));
                }
                out.tau[t.su - 1][t.channel - 1] = t.seconds;
            }
            out.validate(assignment, scenario.timing.cycle_s)?;
            Some(out)
        }
    };

    let error_model = match (overrides.uniform_pe, &raw.errors) {
        (Some(pe), _) => Some(ErrorModel::uniform(n, pe)?),
        (None, None) => None,
        (None, Some(e)) => {
            let mut pe = vec![vec![e.uniform_pe.unwrap_or(0.0); n]; n];
            for (i, row) in pe.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            for entry in &e.entries {
                if entry.to < 1 || entry.to > n || entry.from < 1 || entry.from > n {
                    return Err(Error::field(
                        "errors.entries",
                        format!("pair (to {}, from {}) out of range", entry.to, entry.from),
                    ));
                }
                pe[entry.to - 1][entry.from - 1] = entry.pe;
            }
            Some(ErrorModel::from_matrix(pe)?)
        }
    };

    Ok(ScenarioFile {
        scenario,
        assignment,
        params,
        error_model,
    })
}
