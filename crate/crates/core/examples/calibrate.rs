//! Scratch calibration driver: times the optimizer and searches on the
//! bundled scenarios and prints the headline numbers.

use std::time::Instant;

use cogmac_core::{
    greedy_assignment, load_scenario_path, optimize_params, LoadOverrides, OptimizerSettings,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("table1");

    match which {
        "table1" => {
            let p_idle: f64 = args
                .get(2)
                .map(|s| s.parse().unwrap())
                .unwrap_or(0.5);
            let file = load_scenario_path(
                "scenarios/table1_4x4.toml".as_ref(),
                &LoadOverrides::default(),
            )
            .unwrap();
            let mut scenario = file.scenario;
            scenario.p_idle = vec![p_idle; 4];
            let settings = OptimizerSettings::fast();

            let t0 = Instant::now();
            let greedy = greedy_assignment(&scenario, &settings, None).unwrap();
            println!(
                "greedy p_idle={p_idle}: nt={:.4} steps={} elapsed={:.1?}",
                greedy.nt,
                greedy.iterations.len(),
                t0.elapsed()
            );
            for row in greedy.assignment.grid_rows() {
                println!("  {row}");
            }
            println!("  a={:?} p={:.4}", greedy.params.a, greedy.params.p);

            // Time a single optimize call on the greedy assignment.
            let t1 = Instant::now();
            let (_, rep) =
                optimize_params(&scenario, &greedy.assignment, &settings, None).unwrap();
            println!(
                "single optimize(fast) on that assignment: nt={:.4} in {:.1?}",
                rep.nt,
                t1.elapsed()
            );
        }
        "fig4" => {
            let dgamma: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(-7.0);
            let file = load_scenario_path(
                "scenarios/fig4_10x4.toml".as_ref(),
                &LoadOverrides {
                    dgamma_db: Some(dgamma),
                    ..Default::default()
                },
            )
            .unwrap();
            let settings = OptimizerSettings::fast();
            let t0 = Instant::now();
            let greedy = greedy_assignment(&file.scenario, &settings, None).unwrap();
            println!(
                "greedy fig4 dgamma={dgamma}: nt={:.4} steps={} elapsed={:.1?}",
                greedy.nt,
                greedy.iterations.len(),
                t0.elapsed()
            );
            for row in greedy.assignment.grid_rows() {
                println!("  {row}");
            }
            for (k, s) in greedy.iterations.iter().enumerate() {
                println!("  step {k}: nt={:.4}", s.nt);
            }

            let t1 = Instant::now();
            let (params, rep) = optimize_params(
                &file.scenario,
                &greedy.assignment,
                &OptimizerSettings::default(),
                None,
            )
            .unwrap();
            println!(
                "full optimize on greedy assignment: nt={:.4} p={:.4} tau11={:.5} tau_total={:.5} in {:.1?}",
                rep.nt,
                params.p,
                params.tau[0][0],
                params.max_total_sensing(&greedy.assignment),
                t1.elapsed()
            );
        }
        other => eprintln!("unknown calibration target {other}"),
    }
}
