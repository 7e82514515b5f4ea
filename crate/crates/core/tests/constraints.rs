//! Schur-complement solves against dense monolithic saddle-point solves.

mod common;

use cutfem::constraints::{schur_solve, RowMode, SchurSystem, SparseRow};
use cutfem::linalg::DenseCholesky;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Saddle {
    a: DMatrix<f64>,
    j: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

fn saddle() -> impl Strategy<Value = Saddle> {
    (1usize..=30)
        .prop_flat_map(|n| (Just(n), 1usize..=5.min(n)))
        .prop_flat_map(|(n, m)| {
            let entries = |len: usize| proptest::collection::vec(-1.0f64..1.0, len);
            (Just(n), Just(m), entries(n * n), entries(m * n), entries(n), entries(m), 0.01f64..10.0)
        })
        .prop_map(|(n, m, g, j, b, c, shift)| {
            let g = DMatrix::from_vec(n, n, g);
            let a = &g * g.transpose() + DMatrix::identity(n, n) * shift;
            Saddle {
                a,
                j: DMatrix::from_vec(m, n, j),
                b: DVector::from_vec(b),
                c: DVector::from_vec(c),
            }
        })
}

fn sparse_rows(j: &DMatrix<f64>) -> Vec<SparseRow> {
    (0..j.nrows())
        .map(|r| SparseRow {
            entries: (0..j.ncols()).filter(|&k| j[(r, k)] != 0.0).map(|k| (k, j[(r, k)])).collect(),
        })
        .collect()
}

fn monolithic(s: &Saddle) -> Option<(DVector<f64>, DVector<f64>)> {
    common::monolithic_saddle(&s.a, &s.j, &s.b, &s.c)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn schur_matches_dense_saddle_point(s in saddle()) {
        // keep well-conditioned constraint sets; random rows are almost surely independent
        let sv = s.j.clone().svd(false, false).singular_values;
        prop_assume!(sv.min() > 1e-3 * sv.max());
        let (x_ref, l_ref) = monolithic(&s).expect("regular saddle system");
        let factor = DenseCholesky::new(s.a.clone()).unwrap();
        let sol = schur_solve(&factor, &sparse_rows(&s.j), s.b.as_slice(), s.c.as_slice()).unwrap();
        prop_assert!(!sol.regularized);
        let x = DVector::from_vec(sol.x.clone());
        let l = DVector::from_vec(sol.lambda.clone());
        prop_assert!((&x - &x_ref).norm() <= 1e-10 * x_ref.norm().max(1.0), "x error {}", (&x - &x_ref).norm());
        prop_assert!((&l - &l_ref).norm() <= 1e-10 * l_ref.norm().max(1.0), "λ error {}", (&l - &l_ref).norm());
        let residual = (&s.j * &x - &s.c).amax();
        prop_assert!(residual <= 1e-10 * s.c.amax().max(1.0));
    }

    #[test]
    fn known_multipliers_act_as_external_forces(s in saddle()) {
        let m = s.j.nrows();
        prop_assume!(m >= 2);
        let factor = DenseCholesky::new(s.a.clone()).unwrap();
        let rows = sparse_rows(&s.j);
        let system = SchurSystem::new(&factor, s.b.as_slice(), rows.clone());
        // fix the first multiplier; enforce the rest
        let mut modes = vec![RowMode::Enforce; m];
        modes[0] = RowMode::Known(0.7);
        let sol = system.solve(s.c.as_slice(), &modes).unwrap();
        // oracle: move the known term to the right-hand side and drop the row
        let b_shift = &s.b - s.j.row(0).transpose() * 0.7;
        let reduced = Saddle {
            a: s.a.clone(),
            j: s.j.rows(1, m - 1).into_owned(),
            b: b_shift,
            c: s.c.rows(1, m - 1).into_owned(),
        };
        let sv = reduced.j.clone().svd(false, false).singular_values;
        prop_assume!(sv.min() > 1e-3 * sv.max());
        let (x_ref, _) = monolithic(&reduced).unwrap();
        let x = DVector::from_vec(sol.x.clone());
        prop_assert!((&x - &x_ref).norm() <= 1e-10 * x_ref.norm().max(1.0));
        prop_assert_eq!(sol.lambda[0], 0.7);
    }
}

#[test]
fn repeated_rows_are_satisfied_exactly() {
    let n = 6;
    let g = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    let a = &g * g.transpose() + DMatrix::identity(n, n);
    let factor = DenseCholesky::new(a).unwrap();
    let r0 = SparseRow { entries: vec![(0, 1.0), (3, -0.5)] };
    let r1 = SparseRow { entries: vec![(2, 2.0)] };
    let mut doubled = r0.clone();
    doubled.extend(&r0, 1.0);
    let rows = vec![r0.clone(), r1.clone(), doubled];
    let c = [0.3, -0.1, 0.6];
    let sol = schur_solve(&factor, &rows, &[1.0, 0.0, -1.0, 0.5, 0.2, 0.0], &c).unwrap();
    assert!(sol.regularized);
    for (r, ci) in rows.iter().zip(c) {
        assert!((r.dot(&sol.x) - ci).abs() < 1e-12);
    }
}
