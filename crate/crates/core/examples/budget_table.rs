//! Comparison counts and effective beam sizes when matching compute across
//! estimators.

use umbr::mbr::{budget_plan, Estimator};

fn main() -> umbr::Result<()> {
    let rows = [
        (1, 20, Estimator::Single),
        (4, 10, Estimator::Concat),
        (4, 20, Estimator::PerModelBlocked),
        (4, 20, Estimator::TokenEnsemble),
        (4, 20, Estimator::Concat),
    ];
    println!("{:<18} {:>3} {:>4} {:>12} {:>15}", "estimator", "M", "h", "comparisons", "effective beam");
    for (m, h, e) in rows {
        let p = budget_plan(m, h, e)?;
        println!("{:<18} {:>3} {:>4} {:>12} {:>15}", e.name(), m, h, p.comparisons, p.effective_beam);
    }
    Ok(())
}
