//! Scratch debugging driver for the optimizer pipeline.

use cogmac_core::throughput_exact::normalized_throughput_ne;
use cogmac_core::{
    load_scenario_path, optimize_params, LoadOverrides, OptimizerSettings, SensingAccessParams,
    SensingAssignment,
};
use std::collections::BTreeSet;

fn set(items: &[usize]) -> BTreeSet<usize> {
    items.iter().copied().collect()
}

fn main() {
    let file = load_scenario_path(
        "scenarios/table1_4x4.toml".as_ref(),
        &LoadOverrides::default(),
    )
    .unwrap();
    let scenario = file.scenario;

    // Good assignment by hand: each channel one strong (-15 dB) SU.
    // ch1 -> SU1, ch2 -> SU2, ch3 -> SU4, ch4 -> SU3.
    let good = SensingAssignment::from_per_su(
        vec![set(&[0]), set(&[1]), set(&[3]), set(&[2])],
        4,
    )
    .unwrap();
    // Bad assignment: the all -20 dB matching the greedy seed picked.
    let bad = SensingAssignment::from_per_su(
        vec![set(&[1]), set(&[3]), set(&[2]), set(&[0])],
        4,
    )
    .unwrap();

    for (name, assignment) in [("good", &good), ("bad", &bad)] {
        // Hand params: tau 3 ms, a = 1, p = 0.1.
        let mut params = SensingAccessParams::zeroed(4, 4);
        params.p = 0.1;
        params.a = vec![1, 1, 1, 1];
        for (i, chans) in assignment.per_su().iter().enumerate() {
            for &j in chans {
                params.tau[i][j] = 3e-3;
            }
        }
        let nt = normalized_throughput_ne(&scenario, &params, assignment)
            .unwrap()
            .nt;
        println!("{name}: hand params nt = {nt:.4}");

        for (label, settings) in [
            ("fast", OptimizerSettings::fast()),
            ("default", OptimizerSettings::default()),
        ] {
            let (p, rep) = optimize_params(&scenario, assignment, &settings, None).unwrap();
            let taus: Vec<(usize, usize, f64)> = assignment
                .per_su()
                .iter()
                .enumerate()
                .flat_map(|(i, chans)| {
                    let tau = &p.tau;
                    chans.iter().map(move |&j| (i + 1, j + 1, tau[i][j]))
                })
                .collect();
            println!(
                "{name}: optimize({label}) nt = {:.4} p = {:.4} tau = {taus:?}",
                rep.nt, p.p
            );
        }
    }

    // The all-channel seed assignment.
    let everything =
        SensingAssignment::from_per_channel(vec![(0..4).collect(); 4], 4).unwrap();
    let mut seed_settings = OptimizerSettings::fast();
    seed_settings.p_grid_step = 0.1;
    let (params, rep) = optimize_params(&scenario, &everything, &seed_settings, None).unwrap();
    println!("all-channel seed: nt = {:.4} p = {:.4}", rep.nt, params.p);
    for i in 0..4 {
        let row: Vec<String> = (0..4)
            .map(|j| format!("{:.2}ms", params.tau[i][j] * 1e3))
            .collect();
        println!("  SU{} tau: {}", i + 1, row.join(" "));
    }
}
