//! Central-difference gradient verification. The probe function evaluates a
//! scalar objective at a parameter point and, on request, its analytic
//! gradients; the checker compares those against (f(x+h) - f(x-h)) / 2h one
//! coordinate at a time.

use crate::error::{Error, Result};

/// Worst coordinate found by a check.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// max over coordinates of |analytic - central| / max(1e-8, |central|)
    pub max_rel_error: f64,
    /// (buffer index, coordinate index) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub central_at_worst: f64,
}

/// Checks analytic gradients of `f` at `point` with central differences of
/// half-width `step`.
///
/// `f(buffers, want_grad)` returns the objective value and, when asked, one
/// gradient buffer per input buffer (same lengths). `f` must be deterministic
/// in its inputs; any internal randomness has to be fixed by the caller.
pub fn grad_check<F>(point: &[Vec<f64>], mut f: F, step: f64) -> Result<GradReport>
where
    F: FnMut(&[Vec<f64>], bool) -> Result<(f64, Option<Vec<Vec<f64>>>)>,
{
    let (value, analytic) = f(point, true)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let analytic = analytic.ok_or(Error::NonFinite { op: "grad_check" })?;
    if analytic.len() != point.len()
        || analytic.iter().zip(point).any(|(a, p)| a.len() != p.len())
    {
        return Err(Error::BadShape {
            op: "grad_check",
            msg: "analytic gradient buffers do not match the point".into(),
            shape: vec![analytic.len()],
        });
    }

    let mut probe: Vec<Vec<f64>> = point.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        central_at_worst: 0.0,
    };
    for b in 0..point.len() {
        for i in 0..point[b].len() {
            let x = point[b][i];
            probe[b][i] = x + step;
            let (up, _) = f(&probe, false)?;
            probe[b][i] = x - step;
            let (down, _) = f(&probe, false)?;
            probe[b][i] = x;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            let central = (up - down) / (2.0 * step);
            let a = analytic[b][i];
            let rel = (a - central).abs() / f64::max(1e-8, central.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (b, i);
                report.analytic_at_worst = a;
                report.central_at_worst = central;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    /// f(x) = x^2 at x = 3: analytic 6 vs central difference, error < 1e-8.
    #[test]
    fn square_at_three() {
        let point = vec![vec![3.0]];
        let report = grad_check(
            &point,
            |bufs, want| {
                let x = bufs[0][0];
                Ok((x * x, want.then(|| vec![vec![2.0 * x]])))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{:?}", report);
    }

    /// Constant function: both analytic and numeric are 0, error exactly 0.
    #[test]
    fn constant_function_reports_zero() {
        let point = vec![vec![1.0, -4.0, 0.5]];
        let report = grad_check(
            &point,
            |bufs, want| Ok((7.5, want.then(|| vec![vec![0.0; bufs[0].len()]]))),
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    /// A deliberately wrong gradient must be flagged loudly.
    #[test]
    fn corrupted_gradient_is_detected() {
        let point = vec![vec![2.0]];
        let report = grad_check(
            &point,
            |bufs, want| {
                let x = bufs[0][0];
                // claims d/dx = 3x for f = x^2
                Ok((x * x, want.then(|| vec![vec![3.0 * x]])))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.1, "{:?}", report);
    }

    /// The tape's backward agrees with central differences on a composite
    /// expression exercising several op kinds at once.
    #[test]
    fn tape_composite_expression_checks_out() {
        let point = vec![
            vec![0.3, -0.8, 1.1, 0.4, -0.2, 0.9],
            vec![0.5, -0.4, 0.7, 0.2, -0.9, 0.1],
        ];
        let f = |bufs: &[Vec<f64>], want: bool| {
            let tape = Tape::new();
            let a = tape.leaf(bufs[0].clone(), &[2, 3])?;
            let b = tape.leaf(bufs[1].clone(), &[3, 2])?;
            let prod = tape.matmul(&a, &b)?;
            let sm = tape.softmax(&prod, 1)?;
            let gated = tape.mul(&sm, &tape.gelu(&prod)?)?;
            let squashed = tape.sigmoid(&tape.sum(&gated, Some(1))?)?;
            let loss = tape.mean(&squashed, None)?;
            let value = loss.item()?;
            let grads = want
                .then(|| -> crate::error::Result<Vec<Vec<f64>>> {
                    let g = tape.backward(&loss)?;
                    Ok(vec![
                        g.wrt(&a).unwrap().to_vec(),
                        g.wrt(&b).unwrap().to_vec(),
                    ])
                })
                .transpose()?;
            Ok((value, grads))
        };
        let report = grad_check(&point, f, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{:?}", report);
    }

    /// Every unary op's backward against central differences.
    #[test]
    fn each_unary_op_checks_out() {
        type OpFn = fn(&Tape, &crate::autodiff::tensor::Tensor) -> crate::error::Result<crate::autodiff::tensor::Tensor>;
        let cases: Vec<(&str, OpFn, Vec<f64>)> = vec![
            ("exp", |t, x| t.exp(x), vec![0.3, -1.2, 0.8]),
            ("log", |t, x| t.log(x), vec![0.4, 1.7, 2.3]),
            ("sqrt", |t, x| t.sqrt(x), vec![0.5, 2.0, 3.3]),
            ("tanh", |t, x| t.tanh(x), vec![-0.7, 0.2, 1.4]),
            ("sigmoid", |t, x| t.sigmoid(x), vec![-1.1, 0.0, 2.2]),
            ("softplus", |t, x| t.softplus(x), vec![-2.0, 0.1, 3.0]),
            ("gelu", |t, x| t.gelu(x), vec![-1.5, -0.1, 0.9]),
            ("neg", |t, x| t.neg(x), vec![-0.3, 0.6, 1.2]),
            ("scale", |t, x| t.scale(x, -2.5), vec![0.4, -0.9, 1.1]),
            ("offset", |t, x| t.offset(x, 0.7), vec![0.4, -0.9, 1.1]),
        ];
        for (name, op, point) in cases {
            let f = |bufs: &[Vec<f64>], want: bool| {
                let tape = Tape::new();
                let x = tape.leaf(bufs[0].clone(), &[3])?;
                let y = op(&tape, &x)?;
                // weight elements unevenly so axis bugs show up
                let w = crate::autodiff::tensor::Tensor::new(vec![1.0, -2.0, 0.5], &[3])?;
                let loss = tape.sum(&tape.mul(&y, &w)?, None)?;
                let value = loss.item()?;
                let grads = want
                    .then(|| -> crate::error::Result<Vec<Vec<f64>>> {
                        let g = tape.backward(&loss)?;
                        Ok(vec![g.wrt(&x).unwrap().to_vec()])
                    })
                    .transpose()?;
                Ok((value, grads))
            };
            let report = grad_check(&[point].to_vec(), f, 1e-6).unwrap();
            assert!(
                report.max_rel_error < 1e-6,
                "{name}: {:?}",
                report
            );
        }
    }
}
