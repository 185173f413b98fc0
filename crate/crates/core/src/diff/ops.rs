//! Forward and backward passes of the primitive operations.

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms in the loss.
pub const PROB_EPS: f64 = 1e-7;

/// `input · weights + bias` for a batch of row vectors.
pub fn dense_affine_forward(input: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if input.cols() != weights.rows() || bias.len() != weights.cols() {
        return Err(Error::contract(format!(
            "affine: input {}x{}, weights {}x{}, bias {}",
            input.rows(),
            input.cols(),
            weights.rows(),
            weights.cols(),
            bias.len()
        )));
    }
    let q = weights.cols();
    let mut out = Matrix::zeros(input.rows(), q);
    for b in 0..input.rows() {
        let x = input.row(b);
        let o = out.row_mut(b);
        o.copy_from_slice(bias);
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let w = weights.row(k);
            for (oj, &wj) in o.iter_mut().zip(w) {
                *oj += xk * wj;
            }
        }
    }
    Ok(out)
}

/// Gradients of the affine map.
pub struct AffineGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

pub fn dense_affine_backward(input: &Matrix, weights: &Matrix, grad_out: &Matrix) -> Result<AffineGrads> {
    if grad_out.rows() != input.rows() || grad_out.cols() != weights.cols() || input.cols() != weights.rows() {
        return Err(Error::contract("affine backward: shape mismatch"));
    }
    let (p, q) = (weights.rows(), weights.cols());
    let mut dw = Matrix::zeros(p, q);
    let mut db = vec![0.0; q];
    let mut dx = Matrix::zeros(input.rows(), p);
    for b in 0..input.rows() {
        let g = grad_out.row(b);
        for (dbj, &gj) in db.iter_mut().zip(g) {
            *dbj += gj;
        }
        let x = input.row(b);
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                for (d, &gj) in dw.row_mut(k).iter_mut().zip(g) {
                    *d += xk * gj;
                }
            }
        }
        let dxr = dx.row_mut(b);
        for (k, d) in dxr.iter_mut().enumerate() {
            *d = weights.row(k).iter().zip(g).map(|(w, gj)| w * gj).sum();
        }
    }
    Ok(AffineGrads { weights: dw, bias: db, input: dx })
}

pub fn relu_forward(input: &Matrix) -> Matrix {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Zeroes `grad` wherever the forward input was not strictly positive.
pub fn relu_backward(pre_activation: &Matrix, grad: &mut Matrix) {
    for (g, &z) in grad.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&x| sigmoid(x)).collect()
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract(format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Mean binary cross-entropy of clamped predictions.
pub fn bce_value(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    Ok(bce_loss(predictions, labels)?.0)
}

/// Mean binary cross-entropy and its gradient with respect to each prediction.
///
/// Predictions are clamped to `[PROB_EPS, 1 - PROB_EPS]`; the gradient is that
/// of the clamped function, so it vanishes outside the clamp range.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!("bce: {} predictions vs {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(Error::contract("bce on empty batch"));
    }
    check_labels(labels)?;
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total += y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        let inside = p > PROB_EPS && p < 1.0 - PROB_EPS;
        grad.push(if inside { (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n } else { 0.0 });
    }
    Ok((-total / n, grad))
}

/// Inverted dropout in place. Returns the per-entry multiplier when applied.
pub fn dropout(input: &mut Matrix, rate: f64, rng: &mut Rng, training: bool) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.data().len()).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    for (v, m) in input.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok(Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::finite_diff_check;

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn affine_identity_and_hand_case() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let out = dense_affine_forward(&x, &Matrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(out, x);
        let out = dense_affine_forward(&x, &Matrix::identity(2), &[3.0, 4.0]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn affine_shape_mismatch_is_contract_error() {
        let x = Matrix::zeros(2, 3);
        let w = Matrix::zeros(2, 2);
        assert!(matches!(dense_affine_forward(&x, &w, &[0.0, 0.0]), Err(Error::Contract(_))));
    }

    // Loss = sum(out ⊙ probe); compare each analytic gradient to central differences.
    #[test]
    fn affine_backward_matches_finite_differences() {
        let mut rng = Rng::stream(5, "affine-test");
        for _ in 0..5 {
            let x = random_matrix(&mut rng, 3, 4);
            let w = random_matrix(&mut rng, 4, 2);
            let bias: Vec<f64> = (0..2).map(|_| rng.normal(0.0, 1.0)).collect();
            let probe = random_matrix(&mut rng, 3, 2);
            let loss = |x: &Matrix, w: &Matrix, b: &[f64]| -> f64 {
                let out = dense_affine_forward(x, w, b).unwrap();
                out.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
            };
            let grads = dense_affine_backward(&x, &w, &probe).unwrap();

            let all_w: Vec<usize> = (0..8).collect();
            let r = finite_diff_check(
                |v| loss(&x, &Matrix::from_vec(4, 2, v.to_vec()).unwrap(), &bias),
                w.data(),
                grads.weights.data(),
                &all_w,
                1e-4,
            );
            assert!(r.max_rel_error <= 1e-6, "{r:?}");

            let all_x: Vec<usize> = (0..12).collect();
            let r = finite_diff_check(
                |v| loss(&Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &w, &bias),
                x.data(),
                grads.input.data(),
                &all_x,
                1e-4,
            );
            assert!(r.max_rel_error <= 1e-6, "{r:?}");

            let r = finite_diff_check(|v| loss(&x, &w, v), &bias, &grads.bias, &[0, 1], 1e-4);
            assert!(r.max_rel_error <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn relu_values_and_mask() {
        let z = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu_forward(&z).data(), &[0.0, 0.0, 2.0]);
        let mut g = Matrix::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        relu_backward(&z, &mut g);
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_backward_matches_finite_differences_off_kink() {
        let mut rng = Rng::stream(9, "relu-test");
        let values: Vec<f64> = (0..200)
            .map(|_| {
                let v: f64 = rng.normal(0.0, 1.0);
                if v.abs() < 0.01 {
                    0.5
                } else {
                    v
                }
            })
            .collect();
        let probe: Vec<f64> = (0..200).map(|_| rng.normal(0.0, 1.0)).collect();
        let z = Matrix::from_vec(1, 200, values.clone()).unwrap();
        let mut g = Matrix::from_vec(1, 200, probe.clone()).unwrap();
        relu_backward(&z, &mut g);
        let coords: Vec<usize> = (0..200).collect();
        let r = finite_diff_check(
            |v| {
                let out = relu_forward(&Matrix::from_vec(1, 200, v.to_vec()).unwrap());
                out.data().iter().zip(&probe).map(|(a, p)| a * p).sum()
            },
            &values,
            g.data(),
            &coords,
            1e-4,
        );
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(700.0) <= 1.0);
        assert!(sigmoid(-745.0).is_finite());
    }

    #[test]
    fn bce_known_values() {
        let (l, _) = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        // Clamp bound: -ln(1 - eps) per row.
        assert!((0.0..=PROB_EPS * 2.0).contains(&l));
        assert!(matches!(bce_loss(&[0.5], &[2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = Rng::stream(1, "bce-test");
        let preds: Vec<f64> = (0..64).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let labels: Vec<f64> = (0..64).map(|_| if rng.uniform() < 0.4 { 1.0 } else { 0.0 }).collect();
        let (_, grad) = bce_loss(&preds, &labels).unwrap();
        let coords: Vec<usize> = (0..64).collect();
        let r = finite_diff_check(|p| bce_value(p, &labels).unwrap(), &preds, &grad, &coords, 1e-6);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::stream(0, "d");
        let orig = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut m = orig.clone();
        assert!(dropout(&mut m, 0.0, &mut rng, true).unwrap().is_none());
        assert_eq!(m, orig);
        assert!(dropout(&mut m, 0.5, &mut rng, false).unwrap().is_none());
        assert_eq!(m, orig);
        assert!(dropout(&mut m, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_rate_and_mean_monte_carlo() {
        let n = 1_000_000;
        let mut rng = Rng::stream(2024, "dropout-mc");
        let mut m = Matrix::from_vec(1000, 1000, vec![1.0; n]).unwrap();
        dropout(&mut m, 0.2, &mut rng, true).unwrap();
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        let mean = m.data().iter().sum::<f64>() / n as f64;
        assert!((zeros - 0.2).abs() <= 0.002, "zero fraction {zeros}");
        assert!((mean - 1.0).abs() <= 0.005, "mean {mean}");
    }
}
