//! Finite-difference verification of every analytic gradient: layers, the
//! solver backward pass and the full cascades, plus a corrupted control.
//!
//! cargo run --release --example gradient_check

use deepam::cli::{gradcheck_suite, Scale};

fn main() -> deepam::Result<()> {
    let suite = gradcheck_suite(Scale::Tiny, 0, 1e-5)?;
    for (name, report) in &suite.components {
        println!("{name:<16} max relative error {:.2e}", report.max_rel_error());
        for e in &report.entries {
            println!("    {:<24} {:>5} values  rel {:.2e}  abs {:.2e}", e.name, e.count, e.max_rel_error, e.max_abs_error);
        }
    }
    println!("corrupted control max relative error {:.2e} (expected to fail)", suite.negative_control.max_rel_error());
    println!("truncated backward solve vs exact: relative error {:.2e}", suite.truncated_backward);
    println!("{}", if suite.passed() { "all checks passed" } else { "CHECK FAILED" });
    Ok(())
}
