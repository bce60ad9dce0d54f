//! Finite-difference verification of every hand-written gradient.

use weakseg::gradsuite::gradient_suite;

fn main() -> weakseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(7);
    let mut all = true;
    for c in gradient_suite(seed, 5)? {
        println!(
            "{:<24} {:.2e} (< {:.0e}: {})",
            c.name,
            c.max_rel_error,
            c.tolerance,
            c.passed()
        );
        all &= c.passed();
    }
    if !all {
        std::process::exit(2);
    }
    Ok(())
}
