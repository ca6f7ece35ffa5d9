//! Verifies analytic gradients against central differences: first the full
//! registry of training objectives, then a custom scalar function wired
//! through the same checker.

use contentctr::autodiff::{grad_check, Tape};
use contentctr::pipeline::{run_gradcheck, GRADCHECK_TOLERANCE};
use contentctr::Result;

fn main() -> Result<()> {
    for outcome in run_gradcheck(0)? {
        println!(
            "{:<26} max rel err {:>10.3e}  tol {:.0e}  {}",
            outcome.target,
            outcome.max_rel_error,
            outcome.tolerance,
            if outcome.passed { "ok" } else { "FAIL" }
        );
    }
    assert!(run_gradcheck(0)?.iter().all(|o| o.passed));

    // The checker itself is generic over any scalar function that reports
    // its own gradient: here f(a, b) = sum(a * exp(b)) over two buffers.
    let report = grad_check(
        &[vec![0.4, -1.2, 2.0], vec![0.3, 0.0, -0.7]],
        |point, _| {
            let tape = Tape::new();
            let a = tape.leaf(point[0].clone(), &[3])?;
            let b = tape.leaf(point[1].clone(), &[3])?;
            let loss = tape.sum(&tape.mul(&a, &tape.exp(&b)?)?, None)?;
            let grads = tape.backward(&loss)?;
            let ga = grads.wrt(&a).unwrap().to_vec();
            let gb = grads.wrt(&b).unwrap().to_vec();
            Ok((loss.item()?, Some(vec![ga, gb])))
        },
        1e-5,
    )?;
    println!(
        "custom objective: max rel err {:.3e} at buffer {}, coordinate {}",
        report.max_rel_error, report.worst.0, report.worst.1
    );
    assert!(report.max_rel_error < GRADCHECK_TOLERANCE);
    Ok(())
}
