// Gene-level scores: pooled two-sample t, its CDF and the z transform,
// plus the set statistics on a small vector.

use gsa::numerics::{normal_cdf, normal_quantile, t_cdf, t_to_normal};
use gsa::set_statistics::{set_ks_signed, set_maxmean, set_mean, ScoreFunction};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for t in [-3.0, -1.0, 0.5, 2.0, 6.0] {
        let z = t_to_normal(t, 8)?;
        println!(
            "t = {t:>5.1} (df 8): F(t) = {:.6}, z = {z:>8.5}, Phi(z) = {:.6}",
            t_cdf(t, 8)?,
            normal_cdf(z)?
        );
    }
    println!("Phi^-1(0.975) = {:.10}", normal_quantile(0.975)?);

    let mut z = vec![-0.5; 99];
    z.push(10.0);
    let mm = set_maxmean(&z)?;
    println!(
        "99 x -0.5 and one 10: mean {:.3}, maxmean {:.3} ({}), s+ {:.3}, s- {:.3}",
        set_mean(&z, ScoreFunction::Identity)?,
        mm.value,
        mm.side.name(),
        mm.s_plus,
        mm.s_minus
    );
    println!(
        "ks of (1, 2) vs (0, 0.5): {:.3}",
        set_ks_signed(&[1.0, 2.0], &[0.0, 0.5])?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
