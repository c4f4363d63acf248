// Power of four set statistics against location and scale alternatives
// for m = 25 z-values, at level 0.95.

use gsa::simulation::{power_grid, PowerGridSpec, ShiftMode};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for shift_mode in [ShiftMode::All, ShiftMode::Half] {
        let spec = PowerGridSpec {
            b_grid: vec![0.0, 0.3, 0.6],
            g_grid: vec![1.0, 1.25, 1.5],
            shift_mode,
            null_draws: 5000,
            alt_draws: 2000,
            ..PowerGridSpec::default()
        };
        let cells = power_grid(&spec)?;
        println!("shift mode {shift_mode:?}");
        println!("{:>9} {:>5} {:>5} {:>7}", "statistic", "b", "g", "power");
        for c in cells {
            println!(
                "{:>9} {:>5} {:>5} {:>7.3}",
                c.statistic.name(),
                c.b,
                c.g,
                c.power
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
