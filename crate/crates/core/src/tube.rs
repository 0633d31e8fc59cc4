//! The per-step contraction certificate of the ellipsoidal tube.

use alloc::vec::Vec;
use thiserror::Error;

use crate::geometry::EllipsoidShape;
use crate::linalg::{self, Matrix, Vector};
use crate::model::JacobianPair;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TubeError {
    /// `V^{-1} - w w' / sigma^2` is not positive definite for this vertex.
    #[error("sigma too small for disturbance vertex {vertex}: the offline design must be redone")]
    SigmaTooSmall { vertex: usize },
}

/// `lambda_k` and `sigma` for one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeCertificate {
    pub lambda: f64,
    pub sigma: f64,
}

/// `Psi = (V^{-1} - w w' / sigma^2)^{-1}`.
pub fn psi_matrix(shape: &EllipsoidShape, w: &Vector, sigma: f64) -> Result<Matrix, TubeError> {
    psi_for_vertex(shape, w, sigma, 0)
}

fn psi_for_vertex(shape: &EllipsoidShape, w: &Vector, sigma: f64, vertex: usize) -> Result<Matrix, TubeError> {
    if w.iter().all(|&x| x == 0.0) {
        return Ok(shape.matrix().clone());
    }
    if !(sigma > 0.0) {
        return Err(TubeError::SigmaTooSmall { vertex });
    }
    let m = shape.inverse() - w * w.transpose() / (sigma * sigma);
    if !linalg::is_positive_definite(&m) {
        return Err(TubeError::SigmaTooSmall { vertex });
    }
    linalg::spd_inverse(&m).ok_or(TubeError::SigmaTooSmall { vertex })
}

/// `Psi^(r)` for every disturbance vertex.
pub fn psi_set(shape: &EllipsoidShape, w_vertices: &[Vector], sigma: f64) -> Result<Vec<Matrix>, TubeError> {
    w_vertices
        .iter()
        .enumerate()
        .map(|(r, w)| psi_for_vertex(shape, w, sigma, r))
        .collect()
}

/// `lambda = max_{j,r} lambda_max(M' Psi^(r) M)`, `M = (Phi + C_j) V^{-1/2}`.
pub fn compute_lambda(
    phi: &Matrix,
    pairs: &[JacobianPair],
    shape: &EllipsoidShape,
    w_vertices: &[Vector],
    sigma: f64,
) -> Result<f64, TubeError> {
    let psis = psi_set(shape, w_vertices, sigma)?;
    Ok(lambda_from_psis(phi, pairs, shape, &psis))
}

/// [`compute_lambda`] with the `Psi` matrices precomputed.
pub fn lambda_from_psis(phi: &Matrix, pairs: &[JacobianPair], shape: &EllipsoidShape, psis: &[Matrix]) -> f64 {
    let mut lambda = 0.0f64;
    let mut eval = |c: Option<&Matrix>| {
        let m = match c {
            Some(c) => (phi + c) * shape.inv_sqrt(),
            None => phi * shape.inv_sqrt(),
        };
        for psi in psis {
            lambda = lambda.max(linalg::max_eigenvalue(&(m.transpose() * psi * &m)));
        }
    };
    if pairs.is_empty() {
        eval(None);
    } else {
        for p in pairs {
            eval(Some(&p.c));
        }
    }
    lambda.max(0.0)
}

/// `(lambda beta^2 + sigma^2)^{1/2} + norm`, the smallest admissible `beta_{k+1}`.
pub fn beta_rhs(cert: &TubeCertificate, beta: f64, cz_dv_delta0_norm: f64) -> f64 {
    linalg::sqrt(cert.lambda * beta * beta + cert.sigma * cert.sigma) + cz_dv_delta0_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn scalar_shape(v: f64) -> EllipsoidShape {
        EllipsoidShape::new(dmatrix![v]).unwrap()
    }

    #[test]
    fn psi_examples() {
        let v = dmatrix![2.0, 0.3; 0.3, 1.0];
        let shape = EllipsoidShape::new(v.clone()).unwrap();
        let psi = psi_matrix(&shape, &dvector![0.0, 0.0], 0.1).unwrap();
        assert!((psi - v).abs().max() < 1e-12);

        let psi = psi_matrix(&scalar_shape(1.0), &dvector![0.1], 0.2).unwrap();
        assert!(close(psi[(0, 0)], 4.0 / 3.0, 1e-12));

        assert_eq!(
            psi_matrix(&scalar_shape(1.0), &dvector![0.2], 0.2),
            Err(TubeError::SigmaTooSmall { vertex: 0 })
        );
    }

    #[test]
    fn lambda_examples() {
        let zero = JacobianPair {
            c: dmatrix![0.0],
            d: dmatrix![0.0],
        };
        let w = [dvector![0.1], dvector![-0.1]];
        let l = compute_lambda(&dmatrix![0.0], core::slice::from_ref(&zero), &scalar_shape(1.0), &w, 0.2).unwrap();
        assert_eq!(l, 0.0);

        let l = compute_lambda(&dmatrix![0.5], &[zero], &scalar_shape(1.0), &w, 0.2).unwrap();
        assert!(close(l, 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn beta_rhs_examples() {
        let zero = TubeCertificate { lambda: 0.0, sigma: 0.0 };
        assert_eq!(beta_rhs(&zero, 0.7, 0.0), 0.0);
        let cert = TubeCertificate {
            lambda: 1.0 / 3.0,
            sigma: 0.2,
        };
        let expected = libm::sqrt(1.0 / 3.0 + 0.04) + 0.1;
        assert!(close(beta_rhs(&cert, 1.0, 0.1), expected, 1e-12));
        assert!(close(beta_rhs(&cert, 1.0, 0.1), 0.7110, 5e-5));
    }

    /// Points on the boundary of `E(V, beta^2)` from raw directions.
    fn boundary(shape: &EllipsoidShape, dirs: &[Vector], beta: f64) -> Vec<Vector> {
        dirs.iter()
            .filter(|d| d.norm() > 1e-9)
            .map(|d| shape.inv_sqrt() * d * (beta / d.norm()))
            .collect()
    }

    fn spd(n: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-1.0f64..1.0, n * n)
            .prop_map(move |v| {
                let a = Matrix::from_vec(n, n, v);
                &a * a.transpose() + Matrix::identity(n, n) * 0.2
            })
    }

    fn instance() -> impl Strategy<Value = (Matrix, Vec<Matrix>, Matrix, Vec<Vector>, f64, Vec<Vector>)> {
        (1usize..=4).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| Matrix::from_vec(n, n, v)),
                prop::collection::vec(prop::collection::vec(-0.3f64..0.3, n * n), 1..4)
                    .prop_map(move |cs| cs.into_iter().map(|c| Matrix::from_vec(n, n, c)).collect::<Vec<_>>()),
                spd(n),
                prop::collection::vec(prop::collection::vec(-0.2f64..0.2, n), 1..4)
                    .prop_map(|ws| ws.into_iter().map(Vector::from_vec).collect::<Vec<_>>()),
                0.05f64..1.0,
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), 200)
                    .prop_map(|ds| ds.into_iter().map(Vector::from_vec).collect::<Vec<_>>()),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn one_step_containment((phi, cs, v, ws, sigma_scale, dirs) in instance(), beta in 0.0f64..2.0) {
            let shape = EllipsoidShape::new(v).unwrap();
            // Make sigma large enough for every vertex: sigma > max ||w||_V.
            let wmax = ws.iter().map(|w| shape.norm(w)).fold(0.0, f64::max);
            let sigma = wmax * (1.0 + sigma_scale) + 1e-3;
            let pairs: Vec<JacobianPair> = cs
                .iter()
                .map(|c| JacobianPair { c: c.clone(), d: Matrix::zeros(c.nrows(), 1) })
                .collect();
            let lambda = compute_lambda(&phi, &pairs, &shape, &ws, sigma).unwrap();
            let bound = libm::sqrt(lambda * beta * beta + sigma * sigma);
            for e in boundary(&shape, &dirs, beta) {
                for p in &pairs {
                    for w in &ws {
                        let next = (&phi + &p.c) * &e + w;
                        prop_assert!(shape.norm(&next) <= bound + 1e-7);
                    }
                }
            }
        }

        #[test]
        fn lambda_invariant_under_rescaling((phi, cs, v, ws, sigma_scale, _d) in instance(), alpha in 0.2f64..5.0) {
            // e -> alpha e with V -> V / alpha^2 and w -> alpha w, sigma -> alpha sigma.
            let shape = EllipsoidShape::new(v.clone()).unwrap();
            let wmax = ws.iter().map(|w| shape.norm(w)).fold(0.0, f64::max);
            let sigma = wmax * (1.0 + sigma_scale) + 1e-3;
            let pairs: Vec<JacobianPair> = cs
                .iter()
                .map(|c| JacobianPair { c: c.clone(), d: Matrix::zeros(c.nrows(), 1) })
                .collect();
            let l1 = compute_lambda(&phi, &pairs, &shape, &ws, sigma).unwrap();
            let scaled = EllipsoidShape::new(v / (alpha * alpha)).unwrap();
            let ws2: Vec<Vector> = ws.iter().map(|w| w * alpha).collect();
            let l2 = compute_lambda(&phi, &pairs, &scaled, &ws2, sigma).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-7 * (1.0 + l1));
        }

        #[test]
        fn beta_rhs_monotone(l in 0.0f64..2.0, s in 0.0f64..1.0, b1 in 0.0f64..3.0, db in 0.0f64..1.0, n in 0.0f64..1.0) {
            let cert = TubeCertificate { lambda: l, sigma: s };
            prop_assert!(beta_rhs(&cert, b1 + db, n) >= beta_rhs(&cert, b1, n));
        }
    }
}
