//! Tape-based reverse-mode differentiation from scratch: record a small
//! expression, pull gradients back through it, cross-check one coordinate
//! against a central difference, then fit a least-squares line with Adam.

use contentctr::autodiff::{grad_check, Adam, AdamConfig, ParamSet, Parameter, Tape};
use contentctr::Result;

fn main() -> Result<()> {
    // f(x, w) = sum(sigmoid(x w)) for a 2x3 input and 3x1 weights.
    let tape = Tape::new();
    let x = tape.leaf(vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75], &[2, 3])?;
    let w = tape.leaf(vec![0.3, -0.2, 0.9], &[3, 1])?;
    let y = tape.sigmoid(&tape.matmul(&x, &w)?)?;
    let loss = tape.sum(&y, None)?;
    println!("loss = {:.6}", loss.item()?);

    let grads = tape.backward(&loss)?;
    let gw = grads.wrt(&w).expect("w is on the tape");
    println!("dloss/dw = {gw:?}");

    // The same loss as a closure over the weight vector, for an independent
    // finite-difference check of every coordinate.
    let report = grad_check(
        &[vec![0.3, -0.2, 0.9]],
        |point, _| {
            let tape = Tape::new();
            let x = tape.leaf(vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75], &[2, 3])?;
            let w = tape.leaf(point[0].clone(), &[3, 1])?;
            let loss = tape.sum(&tape.sigmoid(&tape.matmul(&x, &w)?)?, None)?;
            let grads = tape.backward(&loss)?;
            let gw = grads.wrt(&w).unwrap().to_vec();
            Ok((loss.item()?, Some(vec![gw])))
        },
        1e-5,
    )?;
    println!(
        "finite-difference check: max relative error {:.3e} (analytic {:.6}, central {:.6})",
        report.max_rel_error, report.analytic_at_worst, report.central_at_worst
    );

    // Fit w in y = X w by gradient descent on squared error. A bare
    // Parameter vector is a valid ParamSet, so Adam drives it directly.
    struct Line {
        w: Parameter,
    }
    impl ParamSet for Line {
        fn visit(&self, f: &mut dyn FnMut(&str, &Parameter)) {
            f("w", &self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
            f("w", &mut self.w);
        }
    }

    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let targets: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
    let mut line = Line {
        w: Parameter::new(vec![0.0, 0.0], &[2])?,
    };
    let mut adam = Adam::new(AdamConfig::default());
    for step in 0..400 {
        let tape = Tape::new();
        let w = line.w.tracked(&tape)?;
        let slope = tape.slice(&w, 0, 0, 1)?;
        let bias = tape.slice(&w, 0, 1, 1)?;
        let x = tape.leaf(xs.to_vec(), &[5])?;
        let pred = tape.add(
            &tape.mul(&x, &tape.broadcast_to(&slope, &[5])?)?,
            &tape.broadcast_to(&bias, &[5])?,
        )?;
        let err = tape.sub(&pred, &tape.leaf(targets.clone(), &[5])?)?;
        let loss = tape.mean(&tape.mul(&err, &err)?, None)?;
        let grads = tape.backward(&loss)?;
        adam.step(&mut line, &grads, 0.05);
        if step % 100 == 99 {
            println!("step {:3}  mse {:.6}", step + 1, loss.item()?);
        }
    }
    println!(
        "fitted slope {:.4}, intercept {:.4} (true 2, -1)",
        line.w.data()[0],
        line.w.data()[1]
    );
    Ok(())
}
