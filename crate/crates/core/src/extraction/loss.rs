use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::victim::LayerRepresentations;

pub const DEFAULT_EPS_NORM: f64 = 1e-8;

/// `ln(1 + e^-x)`, i.e. `-log σ(x)`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cosine similarity, defined as 0 when either norm is below `eps_norm`.
pub fn cosine(a: &[f64], b: &[f64], eps_norm: f64) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < eps_norm || nb < eps_norm {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn check_pair(h: &Matrix, hhat: &Matrix) -> Result<()> {
    if h.shape() != hhat.shape() {
        return Err(Error::param(format!(
            "target is {:?} but prediction is {:?}",
            h.shape(),
            hhat.shape()
        )));
    }
    if !h.is_finite() || !hhat.is_finite() {
        return Err(Error::input("non-finite value in loss input"));
    }
    Ok(())
}

/// Cosine and L1 parts of one timestep.
pub fn timestep_terms(h: &[f64], hhat: &[f64], eps_norm: f64) -> (f64, f64) {
    let cos = cosine(h, hhat, eps_norm);
    let l1: f64 = h.iter().zip(hhat).map(|(a, b)| (a - b).abs()).sum();
    (neg_log_sigmoid(cos), l1 / h.len() as f64)
}

/// `Σ_t [-log σ(cos(h_t, ĥ_t)) + (1/D)‖h_t − ĥ_t‖₁]`.
pub fn layer_loss(h: &Matrix, hhat: &Matrix, eps_norm: f64) -> Result<f64> {
    check_pair(h, hhat)?;
    Ok(h.row_iter()
        .zip(hhat.row_iter())
        .map(|(a, b)| {
            let (c, l) = timestep_terms(a, b, eps_norm);
            c + l
        })
        .sum())
}

/// Sum of [`layer_loss`] over `layers`, in ascending layer order.
pub fn total_loss(
    targets: &LayerRepresentations,
    predicted: &LayerRepresentations,
    layers: &BTreeSet<usize>,
    eps_norm: f64,
) -> Result<f64> {
    if layers.is_empty() {
        return Err(Error::param("empty layer set"));
    }
    let mut total = 0.0;
    for &n in layers {
        let (h, hhat) = match (targets.get(n), predicted.get(n)) {
            (Some(h), Some(hhat)) => (h, hhat),
            _ => return Err(Error::param(format!("layer {n} missing from loss inputs"))),
        };
        total += layer_loss(h, hhat, eps_norm)?;
    }
    Ok(total)
}

fn sign(x: f64) -> f64 {
    f64::from(u8::from(x > 0.0)) - f64::from(u8::from(x < 0.0))
}

/// Writes `∂/∂ĥ_t` of one timestep's loss into `grad` and returns the loss.
pub(crate) fn timestep_grad_into(h: &[f64], hhat: &[f64], eps_norm: f64, grad: &mut [f64]) -> f64 {
    let inv_d = 1.0 / h.len() as f64;
    let (nh, nhat) = (norm(h), norm(hhat));
    let l1: f64 = h.iter().zip(hhat).map(|(a, b)| (a - b).abs()).sum();
    if nh < eps_norm || nhat < eps_norm {
        for ((g, &a), &b) in grad.iter_mut().zip(h).zip(hhat) {
            *g = sign(b - a) * inv_d;
        }
        return neg_log_sigmoid(0.0) + l1 * inv_d;
    }
    let cos = dot(h, hhat) / (nh * nhat);
    let outer = -(1.0 - sigmoid(cos));
    let (s1, s2) = (outer / (nh * nhat), outer * cos / (nhat * nhat));
    for ((g, &a), &b) in grad.iter_mut().zip(h).zip(hhat) {
        *g = sign(b - a) * inv_d + (a * s1 - b * s2);
    }
    neg_log_sigmoid(cos) + l1 * inv_d
}

/// `∂ layer_loss / ∂ĥ` with `sign(0) = 0`; timesteps with a near-zero
/// vector contribute only the L1 part.
pub fn loss_gradient(h: &Matrix, hhat: &Matrix, eps_norm: f64) -> Result<Matrix> {
    Ok(loss_and_gradient(h, hhat, eps_norm)?.1)
}

pub fn loss_and_gradient(h: &Matrix, hhat: &Matrix, eps_norm: f64) -> Result<(f64, Matrix)> {
    check_pair(h, hhat)?;
    let mut grad = Matrix::zeros(h.rows(), h.cols());
    let mut loss = 0.0;
    for t in 0..h.rows() {
        loss += timestep_grad_into(h.row(t), hhat.row(t), eps_norm, grad.row_mut(t));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;

    const E: f64 = DEFAULT_EPS_NORM;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_vectors() {
        let h = m(&[&[0.3, -0.2, 0.9]]);
        let want = (1.0 + (-1f64).exp()).ln();
        assert!((layer_loss(&h, &h, E).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.313262).abs() < 1e-6);
        let h2 = m(&[&[0.3, -0.2, 0.9], &[0.3, -0.2, 0.9]]);
        assert!((layer_loss(&h2, &h2, E).unwrap() - 2.0 * want).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_units() {
        let got = layer_loss(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), E).unwrap();
        assert!((got - (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_cosine_is_zero() {
        let got = layer_loss(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 1.0]]), E).unwrap();
        assert!((got - (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = m(&[&[1.0, 0.0]]);
        let b = m(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(layer_loss(&a, &b, E), Err(Error::Parameter(_))));
        let nan = m(&[&[f64::NAN, 0.0]]);
        assert!(matches!(layer_loss(&a, &nan, E), Err(Error::Input(_))));
        assert!(matches!(loss_gradient(&a, &b, E), Err(Error::Parameter(_))));
    }

    fn reps(pairs: &[(usize, Matrix)]) -> LayerRepresentations {
        LayerRepresentations::new(pairs.iter().cloned().collect::<BTreeMap<_, _>>()).unwrap()
    }

    #[test]
    fn total_is_layer_sum() {
        let h = m(&[&[0.5, 0.1], &[-0.3, 0.2]]);
        let p = m(&[&[0.1, 0.4], &[0.3, -0.2]]);
        let one = layer_loss(&h, &p, E).unwrap();
        let t = reps(&[(4, h.clone()), (8, h.clone()), (12, h.clone())]);
        let q = reps(&[(4, p.clone()), (8, p.clone()), (12, p.clone())]);
        let all: BTreeSet<usize> = [4, 8, 12].into();
        assert_eq!(total_loss(&t, &q, &all, E).unwrap(), one + one + one);
        assert_eq!(total_loss(&t, &q, &[4].into(), E).unwrap(), one);
        let missing = reps(&[(4, p.clone())]);
        assert!(matches!(total_loss(&t, &missing, &all, E), Err(Error::Parameter(_))));
    }

    #[test]
    fn gradient_zero_at_identity() {
        let h = m(&[&[0.3, -0.2, 0.9], &[0.1, 0.5, -0.4]]);
        let g = loss_gradient(&h, &h, E).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_l1_sign_flips() {
        // Collinear vectors keep the cosine term at its stationary point.
        let h = m(&[&[1.0, 2.0]]);
        let below = loss_gradient(&h, &m(&[&[0.5, 1.0]]), E).unwrap();
        let above = loss_gradient(&h, &m(&[&[1.5, 3.0]]), E).unwrap();
        for (b, a) in below.as_slice().iter().zip(above.as_slice()) {
            assert!((b + 0.5).abs() < 1e-12 && (a - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_norm_gets_only_l1() {
        let g = loss_gradient(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, -1.0]]), E).unwrap();
        assert_eq!(g.as_slice(), &[0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn per_timestep_bounds(
            h in prop::collection::vec(-2.0f64..2.0, 8),
            p in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let (c, l) = timestep_terms(&h, &p, E);
            let lo = neg_log_sigmoid(1.0);
            let hi = neg_log_sigmoid(-1.0);
            prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn gradient_matches_finite_differences(
            h in prop::collection::vec(-1.0f64..1.0, 6),
            p in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            prop_assume!(h.iter().zip(&p).all(|(a, b)| (a - b).abs() > 1e-3));
            prop_assume!(norm(&p) > 0.1 && norm(&h) > 0.1);
            let hm = Matrix::from_vec(1, 6, h).unwrap();
            let pm = Matrix::from_vec(1, 6, p.clone()).unwrap();
            let g = loss_gradient(&hm, &pm, E).unwrap();
            let step = 1e-5;
            for j in 0..6 {
                let mut up = pm.clone();
                up.set(0, j, p[j] + step);
                let mut dn = pm.clone();
                dn.set(0, j, p[j] - step);
                let fd = (layer_loss(&hm, &up, E).unwrap() - layer_loss(&hm, &dn, E).unwrap()) / (2.0 * step);
                let an = g.get(0, j);
                prop_assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3), "{fd} vs {an}");
            }
        }
    }
}
