// Round trip through the on-disk formats: an expression TSV, a labels
// table and two GMT catalogs, one with genes missing from the matrix.

use std::fs;

use gsa::data_model::{
    format_expression_tsv, format_gmt, format_labels_tsv, load_expression_tsv, load_gmt,
    resolve_catalog, LabelSource,
};
use gsa::inference::{analyze_many, InferenceConfig, PermutationPlan};
use gsa::set_statistics::SetStatisticKind;
use gsa::simulation::{generate_scenario, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let spec = ScenarioSpec {
        n_genes: 300,
        n_sets: 15,
        n_per_class: 8,
        ..ScenarioSpec::preset("scenario4", 2)?
    };
    let (matrix, catalog) = generate_scenario(&spec)?;
    fs::write(
        dir.path().join("expression.tsv"),
        format_expression_tsv(&matrix),
    )?;
    fs::write(dir.path().join("labels.tsv"), format_labels_tsv(&matrix))?;
    fs::write(dir.path().join("blocks.gmt"), format_gmt(&catalog))?;
    fs::write(
        dir.path().join("extra.gmt"),
        "odd\tgenes 1,3,5,...\tg0001\tg0003\tg0005\tg0007\tg0009\n\
         head\tfirst block\tg0001\tg0002\tg0003\tg0004\tg0005\tg0006\tg0007\tg0008\n\
         tail\tlast genes\tg0291\tg0292\tg0293\tg0294\tg0295\tg0296\n\
         ghosts\tmostly unknown ids\tg0002\tnope1\tnope2\tnope3\n",
    )?;

    let matrix = load_expression_tsv(
        dir.path().join("expression.tsv"),
        &LabelSource::File(dir.path().join("labels.tsv")),
    )?;
    println!(
        "{} genes x {} samples, classes {:?}",
        matrix.n_genes(),
        matrix.n_samples(),
        matrix.class_sizes()
    );

    let config = InferenceConfig {
        permutations: 100,
        ..InferenceConfig::default()
    };
    let plan = PermutationPlan::for_matrix(&matrix, config.permutations, config.seed);
    for name in ["blocks.gmt", "extra.gmt"] {
        let catalog = load_gmt(dir.path().join(name))?;
        let resolved = resolve_catalog(&catalog, &matrix, 2, None)?;
        println!(
            "{name}: {} sets, {} kept, {} excluded, {} unknown members dropped",
            catalog.len(),
            resolved.len(),
            resolved.excluded.len(),
            resolved.total_dropped()
        );
        let analysis = analyze_many(
            &matrix,
            &resolved,
            &[SetStatisticKind::MaxMean, SetStatisticKind::Mean],
            &plan,
            &config,
        )?;
        for table in &analysis.tables {
            let best = table.sorted_rows()[0];
            println!(
                "  {:<9} best {} (p = {:.3})",
                table.statistic.name(),
                best.name,
                best.p
            );
        }
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
