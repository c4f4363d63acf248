// Replicated simulation: mean and standard error of gene-set 1's p-value
// for several statistics over five shift patterns.
//
// `cargo run --release --example scenario_study -- 20` runs 20 replicates
// with 200 permutations each; the default is a quick 3-replicate pass.

use gsa::set_statistics::SetStatisticKind;
use gsa::simulation::{format_study_tsv, run_scenario_study, ScenarioSpec, StudySpec};

fn study(reps: usize, permutations: usize) -> Result<String, Box<dyn std::error::Error>> {
    let statistics = vec![
        SetStatisticKind::Mean,
        SetStatisticKind::MeanAbs,
        SetStatisticKind::MaxMean,
    ];
    let mut rows = Vec::new();
    for id in 1..=5 {
        let scenario = ScenarioSpec {
            n_per_class: 25,
            ..ScenarioSpec::preset(&id.to_string(), 0)?
        };
        let mut spec = StudySpec::new(scenario, statistics.clone());
        spec.reps = reps;
        spec.inference.permutations = permutations;
        rows.push((format!("scenario{id}"), run_scenario_study(&spec)?));
    }
    Ok(format_study_tsv(&rows))
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    print!("{}", study(2, 50)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let reps = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(3);
    match study(reps, 200) {
        Ok(tsv) => print!("{tsv}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
