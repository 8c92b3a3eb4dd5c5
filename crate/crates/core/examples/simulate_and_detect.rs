// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulate one scenario at reduced size, run the detector and score it.
//!
//! cargo run --release --example simulate_and_detect -- <scenario> <n_vars> <iterations> [seed]

use std::time::Instant;

use nmfcpd::sim::{self, SimulationScenario};
use nmfcpd::{detect, DetectorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let id: u8 = args.first().map_or(Ok(2), |s| s.parse())?;
    let n_vars: usize = args.get(1).map_or(Ok(80), |s| s.parse())?;
    let iterations: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;
    let base_seed: u64 = args.get(3).map_or(Ok(1), |s| s.parse())?;
    let scenario = SimulationScenario::with_vars(id, n_vars)?;

    for it in 0..iterations {
        let seed = base_seed + it;
        let data = sim::generate(&scenario, seed)?;
        let config = DetectorConfig {
            seed,
            ..DetectorConfig::desk()
        };
        let start = Instant::now();
        let result = detect(data.data.view(), &config)?;
        let report = sim::evaluate(&data.truth, &result.change_points, scenario.n_times);
        let stats: Vec<String> = result
            .confirmed
            .tests
            .iter()
            .map(|t| match t.welch {
                Some(w) => format!("{}:t={:.2},p={:.2e}", t.sample.candidate, w.t_stat, w.p_value),
                None => format!("{}:degenerate", t.sample.candidate),
            })
            .collect();
        println!(
            "sim {id} seed {seed}: rank {} candidates {:?} confirmed {:?} tp10 {} fp10 {} [{}] {:.1}s",
            result.rank.rank,
            result.candidates.points,
            result.change_points,
            report.within_10.tp,
            report.within_10.fp,
            stats.join(" "),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
