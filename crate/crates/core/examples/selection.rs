// Tilted selection of gene-sets: draw sets that favour high scores, then
// recover the tilt from a single drawn set.

use gsa::numerics::RandomStream;
use gsa::selection_model::{mle_beta, tilted_mean_beta, TiltedModel};
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = RandomStream::new(5, 0).rng();
    let scores: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();

    for beta in [0.0, 0.5, 1.0] {
        let model = TiltedModel::new(scores.clone(), beta, 200)?;
        let subset = model.sample_subset(RandomStream::new(5, 1));
        let mean = subset.iter().map(|&i| scores[i]).sum::<f64>() / subset.len() as f64;
        println!(
            "beta {beta:.1}: expected set mean {:.3}, drawn set mean {mean:.3}, mle {:.3}, poisson-form root {:.3}",
            model.expected_subset_mean(),
            mle_beta(&scores, &subset)?,
            tilted_mean_beta(&scores, &subset)?
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
