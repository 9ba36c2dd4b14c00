//! All Monte Carlo guarantee checks, with CSV output.

use skill_lifecycle::theory::{reports_csv, run_all};

fn main() -> skill_lifecycle::Result<()> {
    let reports = run_all(0)?;
    for r in &reports {
        print!("{}", r.summary());
    }
    println!("\n{}", reports_csv(&reports)?);
    Ok(())
}
