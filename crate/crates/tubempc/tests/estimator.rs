use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;
use tubempc::ClarabelBackend;
use tubempc_core::estimator::Transition;
use tubempc_core::{BasisModel, Matrix, ParamEstimate, PolytopeSet, SolverSettings, VPolytope, Vector};

/// `x+ = theta x + w`.
struct ScalarGain;

impl BasisModel for ScalarGain {
    fn n_x(&self) -> usize {
        1
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn basis(&self, i: usize, x: &Vector, _u: &Vector) -> Vector {
        if i == 0 {
            dvector![0.0]
        } else {
            x.clone()
        }
    }
    fn basis_jacobian(&self, i: usize, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        (dmatrix![if i == 0 { 0.0 } else { 1.0 }], dmatrix![0.0])
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
}

const W_BOUND: f64 = 0.01;

fn w() -> VPolytope {
    VPolytope::new(vec![dvector![-W_BOUND], dvector![W_BOUND]]).unwrap()
}

/// Prior `[lo, hi]`.
fn estimate(lo: f64, hi: f64) -> ParamEstimate {
    ParamEstimate::new(&PolytopeSet::simplex(dvector![-lo, hi]).unwrap(), 5).unwrap()
}

fn tr(x: f64, xn: f64) -> Transition {
    Transition {
        x: dvector![x],
        u: dvector![0.0],
        x_next: dvector![xn],
    }
}

fn interval(est: &ParamEstimate) -> (f64, f64) {
    let h = est.offsets();
    (-h[0], h[1])
}

fn update(est: &mut ParamEstimate, t: Transition) {
    est.update(&ClarabelBackend::new(), &ScalarGain, &w(), t, &SolverSettings::default())
        .unwrap();
}

#[test]
fn single_transition_interval() {
    let mut est = estimate(0.0, 0.2);
    update(&mut est, tr(2.0, 0.19));
    let (lo, hi) = interval(&est);
    assert!((lo - 0.09).abs() < 1e-6 && (hi - 0.10).abs() < 1e-6, "[{lo}, {hi}]");
}

#[test]
fn two_transitions_intersect() {
    let mut est = estimate(0.0, 0.2);
    update(&mut est, tr(1.0, 0.105));
    update(&mut est, tr(2.0, 0.19));
    let (lo, hi) = interval(&est);
    assert!((lo - 0.095).abs() < 1e-6 && (hi - 0.10).abs() < 1e-6, "[{lo}, {hi}]");
}

#[test]
fn no_excitation_keeps_set() {
    let mut est = estimate(0.0, 0.2);
    let before = est.offsets().clone();
    update(&mut est, tr(0.0, 0.005));
    assert_eq!(est.offsets(), &before);
}

#[test]
fn inconsistent_data_is_reported() {
    let mut est = estimate(0.0, 0.2);
    let before = est.offsets().clone();
    let r = est.update(
        &ClarabelBackend::new(),
        &ScalarGain,
        &w(),
        tr(1.0, 0.5),
        &SolverSettings::default(),
    );
    assert!(r.is_err());
    assert_eq!(est.offsets(), &before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The update matches interval arithmetic on the admissible gains.
    #[test]
    fn matches_interval_oracle(
        theta in 0.0f64..0.2,
        xs in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..4),
    ) {
        let mut est = estimate(0.0, 0.2);
        let (mut lo, mut hi) = (0.0f64, 0.2f64);
        for (x, s) in xs {
            let xn = theta * x + s * W_BOUND;
            update(&mut est, tr(x, xn));
            if x.abs() > 1e-12 {
                let a = (xn - W_BOUND) / x;
                let b = (xn + W_BOUND) / x;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
            let (elo, ehi) = interval(&est);
            prop_assert!((elo - lo).abs() < 1e-6 && (ehi - hi).abs() < 1e-6, "[{elo}, {ehi}] vs [{lo}, {hi}]");
            prop_assert!(elo <= theta + 1e-12 && theta <= ehi + 1e-12);
        }
    }
}
