//! Seeded cycle-level Monte Carlo simulation of the full protocol:
//! channel-state draws, per-sensor sensing outcomes, reporting-bit flips,
//! per-SU fusion, random channel choice, and slotted p-persistent
//! contention with RTS/CTS.
//!
//! The simulator is the independent oracle for the analytic throughput
//! models. Reproducibility contract: results are a pure function of
//! `(seed, cycles)` — cycles are simulated on independent substreams
//! derived from the seed by cycle index and merged with integer tallies,
//! so any thread count produces bit-identical results.

use rayon::prelude::*;

use serde::Serialize;

use crate::contention::frame_durations;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::throughput_reporting::ReSensorStats;
use crate::types::{ErrorModel, SensingAccessParams, SensingAssignment};

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

/// xorshift64* generator with a splitmix64-style seed scrambler.
///
/// Constants: xorshift triple (12, 25, 27) with multiplier
/// `0x2545F4914F6CDD1D`; scrambler increments by the golden-ratio word
/// `0x9E3779B97F4A7C15` and finalizes with the splitmix64 mixer. A zero
/// state is remapped to the golden-ratio word.
#[derive(Debug, Clone)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let s = if seed == 0 { 0x9E3779B97F4A7C15 } else { seed };
        Self { state: s }
    }

    /// Substream for one cycle: scramble (seed, cycle) into a well-mixed
    /// state so consecutive cycles are decorrelated regardless of how
    /// cycles are partitioned over threads.
    pub fn substream(seed: u64, cycle: u64) -> Self {
        let mut z = seed.wrapping_add((cycle.wrapping_add(1)).wrapping_mul(0x9E3779B97F4A7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        Self::new(z)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Bernoulli draw.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in [0, n).
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

// ---------------------------------------------------------------------------
// Settings and results
// ---------------------------------------------------------------------------

/// Simulation run controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSettings {
    pub seed: u64,
    pub cycles: u64,
    /// Record one trace line per cycle (forces single-threaded cycles).
    pub record_traces: bool,
}

/// Per-channel event tallies over all cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelTally {
    /// Completed packet exchanges on a truly idle channel.
    pub successes: u64,
    /// SU-SU collisions (two or more transmitters).
    pub su_collisions: u64,
    /// Transmission attempts on a truly busy channel (PU collisions).
    pub pu_collisions: u64,
    /// Observed idle slots.
    pub idle_slots: u64,
    /// Cycles in which at least one SU contended on this channel.
    pub contended_cycles: u64,
}

/// Empirical sensing tallies for one (SU, channel) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkTally {
    pub su: usize,
    pub channel: usize,
    /// Cycles with the channel busy / sensed busy among them.
    pub busy_cycles: u64,
    pub detections: u64,
    /// Cycles with the channel idle / sensed busy among them.
    pub idle_cycles: u64,
    pub false_alarms: u64,
}

/// Simulation outcome: throughput estimate with its standard error plus
/// the raw tallies behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub nt_estimate: f64,
    pub stderr: f64,
    pub cycles: u64,
    pub total_packets: u64,
    pub per_channel: Vec<ChannelTally>,
    pub link_stats: Vec<LinkTally>,
    /// One line per cycle when trace recording was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<String>>,
}

#[derive(Default, Clone)]
struct Tally {
    packets: u64,
    packets_sq: u128,
    per_channel: Vec<ChannelTally>,
    // detections/busy/false alarms/idle per (su, channel), flattened.
    link: Vec<[u64; 4]>,
}

impl Tally {
    fn new(n: usize, m: usize) -> Self {
        Self {
            packets: 0,
            packets_sq: 0,
            per_channel: vec![ChannelTally::default(); m],
            link: vec![[0; 4]; n * m],
        }
    }

    fn merge(mut self, other: &Tally) -> Self {
        self.packets += other.packets;
        self.packets_sq += other.packets_sq;
        for (a, b) in self.per_channel.iter_mut().zip(&other.per_channel) {
            a.successes += b.successes;
            a.su_collisions += b.su_collisions;
            a.pu_collisions += b.pu_collisions;
            a.idle_slots += b.idle_slots;
            a.contended_cycles += b.contended_cycles;
        }
        for (a, b) in self.link.iter_mut().zip(&other.link) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        self
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Run the cycle-level simulation.
///
/// Sensing bits are drawn from the equalized detection operating point
/// (the same construction the analytic models use), reporting bits flip
/// per (receiver, sensor, channel) according to the error model, each SU
/// fuses its received copies and picks uniformly among its
/// perceived-available channels, and contention runs slot by slot until
/// the cycle budget is exhausted. Identical seeds give identical results.
pub fn simulate(
    scenario: &ScenarioConfig,
    params: &SensingAccessParams,
    assignment: &SensingAssignment,
    error_model: Option<&ErrorModel>,
    settings: &SimSettings,
) -> Result<SimResult> {
    params.validate(assignment, scenario.timing.cycle_s)?;
    if settings.cycles < 1 {
        return Err(Error::InvalidArgument("at least one cycle required".into()));
    }
    let n = scenario.num_sus();
    let m = scenario.num_channels();
    if let Some(em) = error_model {
        if em.num_sus() != n {
            return Err(Error::InvalidArgument(
                "error model size must match the SU count".into(),
            ));
        }
    }
    let tau_total = params.max_total_sensing(assignment);
    let report_s = scenario.timing.report_phase_s(n);
    if tau_total + report_s > scenario.timing.cycle_s {
        return Err(Error::InvalidArgument(format!(
            "sensing {tau_total} s plus reporting {report_s} s exceed the cycle"
        )));
    }

    let zero_errors = ErrorModel::zero(n);
    let em = match error_model {
        Some(e) => e,
        None => &zero_errors,
    };
    // Per-sensor operating point (pd*, pf) under this error model.
    let stats = ReSensorStats::build(scenario, params, assignment, em)?;
    let frames = frame_durations(&scenario.timing);
    let budget_slots = (scenario.timing.cycle_s - tau_total - report_s) / scenario.timing.slot_s;

    let world = CycleWorld {
        scenario,
        stats: &stats,
        em,
        p: params.p,
        a: &params.a,
        budget_slots,
        handshake: frames.handshake_slots,
        success: frames.success_slots,
        collision: frames.collision_slots,
    };

    let (tally, trace) = if settings.record_traces {
        let mut tally = Tally::new(n, m);
        let mut lines = Vec::with_capacity(settings.cycles as usize);
        for cycle in 0..settings.cycles {
            let line = world.run_cycle(settings.seed, cycle, &mut tally, true);
            lines.push(line.unwrap_or_default());
        }
        (tally, Some(lines))
    } else {
        const CHUNK: u64 = 4096;
        let chunks: Vec<u64> = (0..settings.cycles.div_ceil(CHUNK)).collect();
        let tally = chunks
            .par_iter()
            .map(|&chunk| {
                let lo = chunk * CHUNK;
                let hi = ((chunk + 1) * CHUNK).min(settings.cycles);
                let mut t = Tally::new(n, m);
                for cycle in lo..hi {
                    world.run_cycle(settings.seed, cycle, &mut t, false);
                }
                t
            })
            .reduce(|| Tally::new(n, m), |a, b| a.merge(&b));
        (tally, None)
    };

    let t_slots = scenario.timing.cycle_slots();
    let cycles_f = settings.cycles as f64;
    let scale = frames.success_slots / (m as f64 * t_slots);
    let nt_estimate = tally.packets as f64 * scale / cycles_f;
    // Standard error of the per-cycle packet count, propagated.
    let mean = tally.packets as f64 / cycles_f;
    let var = if settings.cycles > 1 {
        (tally.packets_sq as f64 - cycles_f * mean * mean) / (cycles_f - 1.0)
    } else {
        0.0
    };
    let stderr = (var.max(0.0) / cycles_f).sqrt() * scale;

    let link_stats = assignment
        .per_su()
        .iter()
        .enumerate()
        .flat_map(|(i, chans)| chans.iter().map(move |&j| (i, j)))
        .map(|(i, j)| {
            let cell = tally.link[i * m + j];
            LinkTally {
                su: i + 1,
                channel: j + 1,
                busy_cycles: cell[0],
                detections: cell[1],
                idle_cycles: cell[2],
                false_alarms: cell[3],
            }
        })
        .collect();

    Ok(SimResult {
        nt_estimate,
        stderr,
        cycles: settings.cycles,
        total_packets: tally.packets,
        per_channel: tally.per_channel,
        link_stats,
        trace,
    })
}

struct CycleWorld<'a> {
    scenario: &'a ScenarioConfig,
    stats: &'a ReSensorStats,
    em: &'a ErrorModel,
    p: f64,
    a: &'a [usize],
    budget_slots: f64,
    handshake: f64,
    success: f64,
    collision: f64,
}

impl CycleWorld<'_> {
    /// One cycle. Draw order is fixed: channel states, sensing bits in
    /// (channel, sensor) order, flips in (receiver, channel, sensor)
    /// order, choices in SU order, then per-channel contention.
    fn run_cycle(
        &self,
        seed: u64,
        cycle: u64,
        tally: &mut Tally,
        want_trace: bool,
    ) -> Option<String> {
        let mut rng = SimRng::substream(seed, cycle);
        let n = self.scenario.num_sus();
        let m = self.scenario.num_channels();

        // Channel states.
        let mut idle = vec![false; m];
        for (j, slot) in idle.iter_mut().enumerate() {
            *slot = rng.chance(self.scenario.p_idle[j]);
        }

        // Sensing outcomes per (channel, sensor), true = "busy".
        let mut outcomes: Vec<Vec<bool>> = Vec::with_capacity(m);
        for j in 0..m {
            let sensors = &self.stats.sensors[j];
            let mut bits = Vec::with_capacity(sensors.len());
            for &i in sensors {
                let p_busy = if idle[j] {
                    self.stats.pf[i][j]
                } else {
                    self.stats.pd_star[j]
                };
                let says_busy = rng.chance(p_busy);
                bits.push(says_busy);
                let cell = &mut tally.link[i * m + j];
                if idle[j] {
                    cell[2] += 1;
                    if says_busy {
                        cell[3] += 1;
                    }
                } else {
                    cell[0] += 1;
                    if says_busy {
                        cell[1] += 1;
                    }
                }
            }
            outcomes.push(bits);
        }

        // Per-receiver fusion over possibly flipped copies.
        let errors_active = !self.em.is_zero();
        let mut choice: Vec<Option<usize>> = vec![None; n];
        let mut perceived = Vec::with_capacity(m);
        for r in 0..n {
            perceived.clear();
            for j in 0..m {
                let sensors = &self.stats.sensors[j];
                if sensors.is_empty() {
                    continue;
                }
                let mut busy_votes = 0usize;
                for (k, &i) in sensors.iter().enumerate() {
                    let mut bit = outcomes[j][k];
                    if errors_active && i != r {
                        let pe = self.em.pe(r, i);
                        if rng.chance(pe) {
                            bit = !bit;
                        }
                    }
                    if bit {
                        busy_votes += 1;
                    }
                }
                if busy_votes < self.a[j] {
                    perceived.push(j);
                }
            }
            if !perceived.is_empty() {
                choice[r] = Some(perceived[rng.index(perceived.len())]);
            }
        }

        // Contender counts.
        let mut contenders = vec![0usize; m];
        for c in choice.iter().flatten() {
            contenders[*c] += 1;
        }

        // Slotted contention per channel.
        let mut packets_this_cycle = 0u64;
        for j in 0..m {
            let n_j = contenders[j];
            if n_j == 0 {
                continue;
            }
            let ch = &mut tally.per_channel[j];
            ch.contended_cycles += 1;
            packets_this_cycle += self.contend(&mut rng, n_j, idle[j], ch);
        }
        tally.packets += packets_this_cycle;
        tally.packets_sq += (packets_this_cycle as u128) * (packets_this_cycle as u128);

        if want_trace {
            let states: String = idle.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let choices: Vec<String> = choice
                .iter()
                .map(|c| match c {
                    Some(j) => (j + 1).to_string(),
                    None => "-".to_string(),
                })
                .collect();
            Some(format!(
                "cycle={cycle} idle={states} choices={} packets={packets_this_cycle}",
                choices.join(",")
            ))
        } else {
            None
        }
    }

    /// Slot loop for one channel with `n_j` pending SUs. Idle runs are
    /// drawn as geometric block skips, which is distribution-identical to
    /// stepping slot by slot.
    fn contend(&self, rng: &mut SimRng, n_j: usize, idle: bool, ch: &mut ChannelTally) -> u64 {
        let mut remaining = self.budget_slots;
        let mut packets = 0u64;
        let p = self.p;
        if p <= 0.0 {
            ch.idle_slots += remaining.max(0.0) as u64;
            return 0;
        }
        let q_n = (1.0 - p).powi(n_j as i32);
        let p_success_given_active = if p >= 1.0 {
            if n_j == 1 {
                1.0
            } else {
                0.0
            }
        } else {
            let p_s = n_j as f64 * p * (1.0 - p).powi(n_j as i32 - 1);
            p_s / (1.0 - q_n)
        };
        loop {
            if remaining < 1.0 {
                break;
            }
            // Idle run before the next active slot.
            let run = if q_n == 0.0 {
                0.0
            } else if q_n >= 1.0 {
                remaining
            } else {
                let u = 1.0 - rng.next_f64(); // (0, 1]
                (u.ln() / q_n.ln()).floor()
            };
            if run >= remaining {
                ch.idle_slots += remaining as u64;
                remaining = 0.0;
                break;
            }
            ch.idle_slots += run as u64;
            remaining -= run;
            // Active slot: single transmitter or collision.
            let single = rng.chance(p_success_given_active);
            if single && idle {
                let cost = self.handshake + self.success;
                if cost <= remaining {
                    remaining -= cost;
                    packets += 1;
                    ch.successes += 1;
                } else {
                    remaining = 0.0;
                    break;
                }
            } else {
                // SU-SU collision, or any attempt on a busy channel.
                if single {
                    ch.pu_collisions += 1;
                } else {
                    ch.su_collisions += 1;
                }
                let cost = self.collision;
                if cost <= remaining {
                    remaining -= cost;
                } else {
                    remaining = 0.0;
                    break;
                }
            }
        }
        let _ = remaining;
        packets
    }
}
