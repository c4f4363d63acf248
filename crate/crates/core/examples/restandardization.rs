// Every gene-set carries the same shift, so no set is special. Plain
// permutation p-values call all of them significant; restandardized ones
// do not.

use gsa::data_model::resolve_catalog;
use gsa::inference::{analyze, InferenceConfig};
use gsa::set_statistics::SetStatisticKind;
use gsa::simulation::{generate_scenario, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (matrix, catalog) = generate_scenario(&ScenarioSpec::preset("example2", 3)?)?;
    let resolved = resolve_catalog(&catalog, &matrix, 2, None)?;

    for restandardize in [false, true] {
        let config = InferenceConfig {
            permutations: 100,
            seed: 3,
            restandardize,
            ..InferenceConfig::default()
        };
        let table = analyze(&matrix, &resolved, SetStatisticKind::MaxMean, &config)?;
        let p_small = table.rows.iter().filter(|r| r.p < 0.05).count();
        let flagged = table.significant(0.10).len();
        println!(
            "restandardize={restandardize:<5}  sets with p < 0.05: {p_small:>2}/50  BH q <= 0.10: {flagged:>2}"
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
