//! Batch front end for the throughput models: loads a scenario file,
//! dispatches one of the analytic / optimization / assignment-search /
//! simulation modes (or a sweep over a scenario variable), and writes a
//! JSON report plus a CSV summary table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use serde_json::json;

use cogmac_core::simulate::{simulate, SimSettings};
use cogmac_core::throughput_exact::normalized_throughput_ne;
use cogmac_core::throughput_reporting::normalized_throughput_re;
use cogmac_core::{
    brute_force_assignment, greedy_assignment, load_scenario_str, optimize_params, ErrorModel,
    LoadOverrides, OptimizerSettings, ScenarioFile, SensingAccessParams, SensingAssignment,
    ThroughputReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Evaluate the exact no-reporting-error throughput model.
    Analytic,
    /// Evaluate the exact model with reporting errors.
    AnalyticRe,
    /// Optimize sensing times, fusion thresholds, and access probability.
    Optimize,
    /// Greedy channel sensing-set search.
    AssignGreedy,
    /// Exhaustive channel sensing-set search (M*N <= 16).
    AssignBrute,
    /// Monte Carlo protocol simulation.
    Simulate,
    /// Sweep a scenario variable and tabulate one row per grid point.
    Sweep,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::AnalyticRe => "analytic-re",
            Mode::Optimize => "optimize",
            Mode::AssignGreedy => "assign-greedy",
            Mode::AssignBrute => "assign-brute",
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepVar {
    /// Set every channel's idle probability to the grid value.
    PIdle,
    /// Shift every SNR entry by the grid value, in dB.
    Dgamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMethod {
    Analytic,
    Optimize,
    Greedy,
    Simulate,
}

impl SweepMethod {
    fn name(self) -> &'static str {
        match self {
            SweepMethod::Analytic => "analytic",
            SweepMethod::Optimize => "optimize",
            SweepMethod::Greedy => "greedy",
            SweepMethod::Simulate => "simulate",
        }
    }
}

/// Saturation-throughput models for a cognitive-radio MAC with
/// cooperative sensing and p-persistent CSMA access.
#[derive(Debug, Parser)]
#[command(name = "cogmac", version, about)]
struct Cli {
    /// What to run.
    #[arg(long, value_enum)]
    mode: Mode,

    /// Scenario file path, or the name of a bundled scenario
    /// (table1_4x4, fig4_10x4, fig9_4x3, roundrobin_case1..3).
    #[arg(long)]
    scenario: String,

    /// Output directory for report.json / results.csv / trace.txt.
    #[arg(long, default_value = "cogmac-out")]
    out: PathBuf,

    /// Simulator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Simulator cycle count.
    #[arg(long, default_value_t = 100_000)]
    cycles: u64,

    /// Override: uniform reporting bit-error probability.
    #[arg(long)]
    pe: Option<f64>,

    /// Override: fused detection target for every channel.
    #[arg(long)]
    pd_target: Option<f64>,

    /// Override: shift every SNR entry by this many dB.
    #[arg(long)]
    dgamma: Option<f64>,

    /// Cap on the exact-model enumeration size.
    #[arg(long, default_value_t = 10_000_000)]
    budget_scenarios: u64,

    /// Access-probability grid step for the optimizer.
    #[arg(long)]
    p_step: Option<f64>,

    /// Sweep variable.
    #[arg(long, value_enum, default_value_t = SweepVar::PIdle)]
    sweep_var: SweepVar,

    /// Sweep grid start (default: 0.1 for p-idle, -11 for dgamma).
    #[arg(long)]
    sweep_from: Option<f64>,

    /// Sweep grid end, inclusive (default: 1.0 for p-idle, -2 for dgamma).
    #[arg(long)]
    sweep_to: Option<f64>,

    /// Sweep grid step (default: 0.1 for p-idle, 3 for dgamma).
    #[arg(long)]
    sweep_step: Option<f64>,

    /// Method run at each sweep grid point.
    #[arg(long, value_enum, default_value_t = SweepMethod::Optimize)]
    sweep_method: SweepMethod,

    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,

    /// Write a per-cycle trace file in simulate mode.
    #[arg(long, default_value_t = false)]
    trace: bool,
}

const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("table1_4x4", include_str!("../../../scenarios/table1_4x4.toml")),
    ("fig4_10x4", include_str!("../../../scenarios/fig4_10x4.toml")),
    ("fig9_4x3", include_str!("../../../scenarios/fig9_4x3.toml")),
    (
        "roundrobin_case1",
        include_str!("../../../scenarios/roundrobin_case1.toml"),
    ),
    (
        "roundrobin_case2",
        include_str!("../../../scenarios/roundrobin_case2.toml"),
    ),
    (
        "roundrobin_case3",
        include_str!("../../../scenarios/roundrobin_case3.toml"),
    ),
];

fn scenario_text(spec: &str) -> anyhow::Result<String> {
    let path = Path::new(spec);
    if path.exists() {
        return std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario file {}", path.display()));
    }
    let stem = spec.trim_end_matches(".toml");
    for (name, text) in BUILTIN_SCENARIOS {
        if *name == stem {
            return Ok(text.to_string());
        }
    }
    bail!(
        "scenario `{spec}` is neither a readable file nor a bundled scenario \
         (bundled: table1_4x4, fig4_10x4, fig9_4x3, roundrobin_case1..3)"
    );
}

/// One CSV row of the results table.
struct CsvRow {
    sweep_var: Option<f64>,
    nt: f64,
    p: f64,
    tau_max: f64,
    a_vec: String,
    method: String,
    seed: u64,
}

fn format_a_vec(a: &[usize]) -> String {
    let mut out = String::new();
    for (k, v) in a.iter().enumerate() {
        if k > 0 {
            out.push('-');
        }
        let _ = write!(out, "{v}");
    }
    out
}

fn csv_table(rows: &[CsvRow]) -> String {
    let mut out = String::from("sweep_var,nt,p,tau_max,a_vec,method,seed\n");
    for r in rows {
        let sv = r.sweep_var.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{sv},{},{},{},{},{},{}",
            r.nt, r.p, r.tau_max, r.a_vec, r.method, r.seed
        );
    }
    out
}

struct Inputs {
    file: ScenarioFile,
    settings: OptimizerSettings,
    search_settings: OptimizerSettings,
}

impl Inputs {
    fn assignment(&self) -> anyhow::Result<&SensingAssignment> {
        self.file.assignment.as_ref().context(
            "this mode needs an [assignment] block in the scenario; \
             use --mode assign-greedy or assign-brute to search for one",
        )
    }

    /// Explicit params from the scenario, or a fresh optimization.
    fn params_or_optimize(&self) -> anyhow::Result<(SensingAccessParams, &'static str)> {
        if let Some(p) = &self.file.params {
            return Ok((p.clone(), "scenario"));
        }
        let assignment = self.assignment()?;
        let (params, _) = optimize_params(
            &self.file.scenario,
            assignment,
            &self.settings,
            self.file.error_model.as_ref(),
        )?;
        Ok((params, "optimized"))
    }

    fn error_model_or_zero(&self) -> ErrorModel {
        self.file
            .error_model
            .clone()
            .unwrap_or_else(|| ErrorModel::zero(self.file.scenario.num_sus()))
    }
}

fn check_enumeration_budget(file: &ScenarioFile, cap: u64) -> anyhow::Result<()> {
    let m = file.scenario.num_channels() as u32;
    let count = 4u128.saturating_pow(m);
    if count > cap as u128 {
        bail!(
            "exact enumeration needs {count} outcome scenarios, above the \
             --budget-scenarios cap {cap}; use --mode simulate instead"
        );
    }
    Ok(())
}

fn report_row(
    report: &ThroughputReport,
    assignment: &SensingAssignment,
    method: &str,
    seed: u64,
    sweep_var: Option<f64>,
) -> CsvRow {
    CsvRow {
        sweep_var,
        nt: report.nt,
        p: report.params_used.p,
        tau_max: report.params_used.max_total_sensing(assignment),
        a_vec: format_a_vec(&report.params_used.a),
        method: method.to_string(),
        seed,
    }
}

type RunOutput = (serde_json::Value, Vec<CsvRow>, Option<Vec<String>>);

fn run(cli: &Cli) -> anyhow::Result<RunOutput> {
    let text = scenario_text(&cli.scenario)?;
    let overrides = LoadOverrides {
        dgamma_db: cli.dgamma,
        pd_target: cli.pd_target,
        uniform_pe: cli.pe,
    };
    let file = load_scenario_str(&text, &overrides)?;

    let mut settings = OptimizerSettings::default();
    let mut search_settings = OptimizerSettings::fast();
    if let Some(step) = cli.p_step {
        settings.p_grid_step = step;
        search_settings.p_grid_step = step;
    }
    let inputs = Inputs {
        file,
        settings,
        search_settings,
    };

    match cli.mode {
        Mode::Analytic => {
            check_enumeration_budget(&inputs.file, cli.budget_scenarios)?;
            let assignment = inputs.assignment()?;
            let (params, source) = inputs.params_or_optimize()?;
            let report = normalized_throughput_ne(&inputs.file.scenario, &params, assignment)?;
            let row = report_row(&report, assignment, "analytic", cli.seed, None);
            Ok((
                json!({ "mode": "analytic", "params_source": source, "report": report }),
                vec![row],
                None,
            ))
        }
        Mode::AnalyticRe => {
            let assignment = inputs.assignment()?;
            let (params, source) = inputs.params_or_optimize()?;
            let em = inputs.error_model_or_zero();
            let report =
                normalized_throughput_re(&inputs.file.scenario, &params, assignment, &em)?;
            let row = report_row(&report, assignment, "analytic-re", cli.seed, None);
            Ok((
                json!({ "mode": "analytic-re", "params_source": source, "report": report,
                        "error_model": em }),
                vec![row],
                None,
            ))
        }
        Mode::Optimize => {
            check_enumeration_budget(&inputs.file, cli.budget_scenarios)?;
            let assignment = inputs.assignment()?;
            let (_, report) = optimize_params(
                &inputs.file.scenario,
                assignment,
                &inputs.settings,
                inputs.file.error_model.as_ref(),
            )?;
            let row = report_row(&report, assignment, "optimize", cli.seed, None);
            Ok((
                json!({ "mode": "optimize", "report": report }),
                vec![row],
                None,
            ))
        }
        Mode::AssignGreedy | Mode::AssignBrute => {
            check_enumeration_budget(&inputs.file, cli.budget_scenarios)?;
            let result = if cli.mode == Mode::AssignGreedy {
                greedy_assignment(
                    &inputs.file.scenario,
                    &inputs.search_settings,
                    inputs.file.error_model.as_ref(),
                )?
            } else {
                brute_force_assignment(
                    &inputs.file.scenario,
                    &inputs.search_settings,
                    inputs.file.error_model.as_ref(),
                )?
            };
            let method = if cli.mode == Mode::AssignGreedy {
                "greedy"
            } else {
                "brute-force"
            };
            let row = CsvRow {
                sweep_var: None,
                nt: result.nt,
                p: result.params.p,
                tau_max: result.params.max_total_sensing(&result.assignment),
                a_vec: format_a_vec(&result.params.a),
                method: method.to_string(),
                seed: cli.seed,
            };
            Ok((
                json!({ "mode": cli.mode.name(), "result": result }),
                vec![row],
                None,
            ))
        }
        Mode::Simulate => {
            let assignment = inputs.assignment()?;
            let (params, source) = inputs.params_or_optimize()?;
            let sim = simulate(
                &inputs.file.scenario,
                &params,
                assignment,
                inputs.file.error_model.as_ref(),
                &SimSettings {
                    seed: cli.seed,
                    cycles: cli.cycles,
                    record_traces: cli.trace,
                },
            )?;
            let row = CsvRow {
                sweep_var: None,
                nt: sim.nt_estimate,
                p: params.p,
                tau_max: params.max_total_sensing(assignment),
                a_vec: format_a_vec(&params.a),
                method: "simulate".to_string(),
                seed: cli.seed,
            };
            let trace = sim.trace.clone();
            Ok((
                json!({ "mode": "simulate", "params_source": source, "params": params,
                        "result": sim }),
                vec![row],
                trace,
            ))
        }
        Mode::Sweep => run_sweep(cli, &text, &overrides, &inputs),
    }
}

fn run_sweep(
    cli: &Cli,
    text: &str,
    base_overrides: &LoadOverrides,
    inputs: &Inputs,
) -> anyhow::Result<RunOutput> {
    let (from, to, step) = match cli.sweep_var {
        SweepVar::PIdle => (
            cli.sweep_from.unwrap_or(0.1),
            cli.sweep_to.unwrap_or(1.0),
            cli.sweep_step.unwrap_or(0.1),
        ),
        SweepVar::Dgamma => (
            cli.sweep_from.unwrap_or(-11.0),
            cli.sweep_to.unwrap_or(-2.0),
            cli.sweep_step.unwrap_or(3.0),
        ),
    };
    if !(step > 0.0) {
        bail!("--sweep-step must be positive");
    }
    let mut grid = Vec::new();
    let mut v = from;
    while v <= to + 1e-9 {
        grid.push(v);
        v += step;
    }
    if grid.is_empty() {
        bail!("empty sweep grid [{from}, {to}] step {step}");
    }

    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &value in &grid {
        // Rebuild the scenario for this grid point.
        let file = match cli.sweep_var {
            SweepVar::PIdle => {
                let mut f = load_scenario_str(text, base_overrides)?;
                if !(0.0..=1.0).contains(&value) {
                    bail!("p-idle sweep value {value} outside [0, 1]");
                }
                f.scenario.p_idle = vec![value; f.scenario.num_channels()];
                f
            }
            SweepVar::Dgamma => {
                let overrides = LoadOverrides {
                    dgamma_db: Some(base_overrides.dgamma_db.unwrap_or(0.0) + value),
                    ..*base_overrides
                };
                load_scenario_str(text, &overrides)?
            }
        };
        check_enumeration_budget(&file, cli.budget_scenarios)?;

        let (nt, p, tau_max, a_vec) = match cli.sweep_method {
            SweepMethod::Greedy => {
                let result = greedy_assignment(
                    &file.scenario,
                    &inputs.search_settings,
                    file.error_model.as_ref(),
                )?;
                (
                    result.nt,
                    result.params.p,
                    result.params.max_total_sensing(&result.assignment),
                    format_a_vec(&result.params.a),
                )
            }
            SweepMethod::Optimize => {
                let assignment = file.assignment.as_ref().context(
                    "sweep-method optimize needs an [assignment] block in the scenario",
                )?;
                let (params, report) = optimize_params(
                    &file.scenario,
                    assignment,
                    &inputs.settings,
                    file.error_model.as_ref(),
                )?;
                (
                    report.nt,
                    params.p,
                    params.max_total_sensing(assignment),
                    format_a_vec(&params.a),
                )
            }
            SweepMethod::Analytic => {
                let assignment = file.assignment.as_ref().context(
                    "sweep-method analytic needs an [assignment] block in the scenario",
                )?;
                let params = file
                    .params
                    .clone()
                    .context("sweep-method analytic needs a [params] block in the scenario")?;
                let report = match &file.error_model {
                    Some(em) if !em.is_zero() => {
                        normalized_throughput_re(&file.scenario, &params, assignment, em)?
                    }
                    _ => normalized_throughput_ne(&file.scenario, &params, assignment)?,
                };
                (
                    report.nt,
                    params.p,
                    params.max_total_sensing(assignment),
                    format_a_vec(&params.a),
                )
            }
            SweepMethod::Simulate => {
                let assignment = file.assignment.as_ref().context(
                    "sweep-method simulate needs an [assignment] block in the scenario",
                )?;
                let params = match &file.params {
                    Some(p) => p.clone(),
                    None => {
                        optimize_params(
                            &file.scenario,
                            assignment,
                            &inputs.settings,
                            file.error_model.as_ref(),
                        )?
                        .0
                    }
                };
                let sim = simulate(
                    &file.scenario,
                    &params,
                    assignment,
                    file.error_model.as_ref(),
                    &SimSettings {
                        seed: cli.seed,
                        cycles: cli.cycles,
                        record_traces: false,
                    },
                )?;
                (
                    sim.nt_estimate,
                    params.p,
                    params.max_total_sensing(assignment),
                    format_a_vec(&params.a),
                )
            }
        };
        rows.push(CsvRow {
            sweep_var: Some(value),
            nt,
            p,
            tau_max,
            a_vec: a_vec.clone(),
            method: cli.sweep_method.name().to_string(),
            seed: cli.seed,
        });
        points.push(json!({
            "sweep_var": value,
            "nt": nt,
            "p": p,
            "tau_max": tau_max,
            "a_vec": a_vec,
        }));
    }
    let variable = match cli.sweep_var {
        SweepVar::PIdle => "p-idle",
        SweepVar::Dgamma => "dgamma",
    };
    Ok((
        json!({
            "mode": "sweep",
            "variable": variable,
            "method": cli.sweep_method.name(),
            "points": points,
        }),
        rows,
        None,
    ))
}

fn write_outputs(
    cli: &Cli,
    report: &serde_json::Value,
    rows: &[CsvRow],
    trace: Option<&[String]>,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let report_path = cli.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    let csv_path = cli.out.join("results.csv");
    std::fs::write(&csv_path, csv_table(rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    if let Some(lines) = trace {
        let trace_path = cli.out.join("trace.txt");
        std::fs::write(&trace_path, lines.join("\n") + "\n")
            .with_context(|| format!("writing {}", trace_path.display()))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!(
                "error: failed to configure {} worker threads: {e}",
                cli.threads
            );
            std::process::exit(1);
        }
    }
    match run(&cli) {
        Ok((report, rows, trace)) => {
            if let Err(e) = write_outputs(&cli, &report, &rows, trace.as_deref()) {
                eprintln!("error: {e:#}");
                std::process::exit(1);
            }
            for row in &rows {
                let sv = row.sweep_var.map(|v| format!("{v} ")).unwrap_or_default();
                println!(
                    "{}{}: nt={:.6} p={:.4} tau_max={:.6}s a={}",
                    sv, row.method, row.nt, row.p, row.tau_max, row.a_vec
                );
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
