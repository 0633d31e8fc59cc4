use nalgebra::{dmatrix, dvector};
use tubempc::ClarabelBackend;
use tubempc_core::geometry::BoxSet;
use tubempc_core::terminal::{build_ldi, solve_terminal_lmi, LdiModel, LmiDesign, TerminalError};
use tubempc_core::{BasisTerm, Matrix, QuadraticBasisModel, SolverSettings, VPolytope, Vector};

fn scalar_ldi(vertices: &[(f64, f64)]) -> LdiModel {
    LdiModel {
        pairs: vertices.iter().map(|&(a, b)| (dmatrix![a], dmatrix![b])).collect(),
        x_hat: BoxSet::symmetric(1, 1.5),
        u_hat: BoxSet::unbounded(1),
    }
}

fn solve(ldi: &LdiModel, w: f64) -> Result<LmiDesign, TerminalError> {
    let ws: Vec<Vector> = if w == 0.0 { vec![] } else { vec![dvector![w], dvector![-w]] };
    solve_terminal_lmi(
        &ClarabelBackend::new(),
        ldi,
        &ws,
        &dmatrix![1.0],
        &dmatrix![1.0],
        &SolverSettings::default(),
    )
}

/// `f = 0.5 x + u + theta x^2` on `|x| <= 1.5`, `|theta| <= 0.1`.
fn scalar_model() -> QuadraticBasisModel {
    QuadraticBasisModel::new(dmatrix![0.5], dmatrix![1.0], vec![BasisTerm::Quadratic { row: 0, state: 0 }], 3.0).unwrap()
}

#[test]
fn scalar_ldi_vertices() {
    let theta = VPolytope::new(vec![dvector![-0.1], dvector![0.1]]).unwrap();
    let ldi = build_ldi(&scalar_model(), &BoxSet::symmetric(1, 1.5), &BoxSet::unbounded(1), &theta).unwrap();
    let mut a: Vec<f64> = ldi.pairs.iter().map(|(a, _)| a[(0, 0)]).collect();
    a.sort_by(f64::total_cmp);
    assert!((a[0] - 0.2).abs() < 1e-12 && (a[a.len() - 1] - 0.8).abs() < 1e-12, "{a:?}");
    assert!(ldi.pairs.iter().all(|(_, b)| (b[(0, 0)] - 1.0).abs() < 1e-12));
}

#[test]
fn scalar_design_pointwise() {
    let d = solve(&scalar_ldi(&[(0.2, 1.0), (0.8, 1.0)]), 0.01).unwrap();
    let (v, k) = (d.v[(0, 0)], d.k[(0, 0)]);
    let q_hat = 1.0 + k * k;
    for a in [0.2, 0.8] {
        let phi = a + k;
        for i in 0..=400 {
            let x = -2.0 + 4.0 * i as f64 / 400.0;
            for w in [0.01, -0.01] {
                let lhs = v * (phi * x + w).powi(2);
                let rhs = v * x * x - q_hat * x * x + d.sigma * d.sigma;
                assert!(lhs <= rhs + 1e-9, "a={a} x={x}: {lhs} > {rhs}");
            }
        }
    }
}

#[test]
fn deadbeat_needs_no_sigma() {
    let d = solve(&scalar_ldi(&[(0.0, 1.0)]), 0.0).unwrap();
    assert!(d.sigma <= 1e-6, "sigma = {}", d.sigma);
}

#[test]
fn sigma_scales_with_disturbance() {
    let ldi = scalar_ldi(&[(0.2, 1.0), (0.8, 1.0)]);
    let full = solve(&ldi, 0.02).unwrap();
    let half = solve(&ldi, 0.01).unwrap();
    let ratio = half.sigma / full.sigma;
    assert!((ratio - 0.5).abs() <= 0.01, "ratio {ratio}");
}

#[test]
fn unstabilizable_vertex_is_infeasible() {
    let r = solve(&scalar_ldi(&[(2.0, 0.0)]), 0.01);
    assert!(matches!(r, Err(TerminalError::LmiInfeasible { .. })), "{r:?}");
}

#[test]
fn two_state_design_is_contractive() {
    let ldi = LdiModel {
        pairs: vec![
            (dmatrix![1.0, 0.1; 0.0, 1.0], dmatrix![0.0; 0.1]),
            (dmatrix![1.1, 0.1; 0.0, 0.9], dmatrix![0.0; 0.12]),
        ],
        x_hat: BoxSet::symmetric(2, 1.0),
        u_hat: BoxSet::unbounded(1),
    };
    let ws = vec![dvector![0.01, 0.0], dvector![-0.01, 0.0]];
    let d = solve_terminal_lmi(
        &ClarabelBackend::new(),
        &ldi,
        &ws,
        &Matrix::identity(2, 2),
        &dmatrix![1.0],
        &SolverSettings::default(),
    )
    .unwrap();
    let q_hat = Matrix::identity(2, 2) + d.k.transpose() * &d.k;
    for (a, b) in &ldi.pairs {
        let phi = a + b * &d.k;
        let m = &d.v - &q_hat - phi.transpose() * &d.v * &phi;
        assert!(m.symmetric_eigenvalues().min() > 0.0);
    }
}
