use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use qpdelay::config::RunConfig;
use qpdelay::lattice::{
    assemble_linearization, check_translation, evaluate_f, evaluate_w, FourierVector, IndexBox, LatticeIndex,
};
use qpdelay::model::{diagonalize, manufacture_forcing, DiagonalizedSpec};
use qpdelay::multiscale::{build_covering, dense_inverse, resolvent_residual, InverseParams, PasteOptions};
use qpdelay::newton::{error_split, newton_step, run, NewtonState};
use qpdelay::poly::Polynomial;
use qpdelay::verification::conjugate_symmetry_defect;

fn canonical() -> RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.toml");
    RunConfig::load(&path).unwrap()
}

fn cubic(d: usize) -> DiagonalizedSpec {
    let s = Polynomial::variable(2, 0).add(&Polynomial::variable(2, 1));
    DiagonalizedSpec::from_parts(vec![1.0], d, vec![s.pow(3).scale(C64::new(0.6, 0.2))], FourierVector::zeros(1, d), 1.0, 1e-3, 1 << 16)
}

fn complex() -> impl Strategy<Value = C64> {
    (-0.4..0.4f64, -0.4..0.4f64).prop_map(|(a, b)| C64::new(a, b))
}

/// Lattice vector on one oscillator with `d = 1`, supported in `[-r, r]`.
fn vector(r: i32) -> impl Strategy<Value = FourierVector> {
    prop::collection::vec(complex(), (2 * (2 * r + 1)) as usize).prop_map(move |vals| {
        let mut y = FourierVector::zeros(1, 1);
        for (i, v) in vals.into_iter().enumerate() {
            let mu = if i % 2 == 0 { -1 } else { 1 };
            y.set(LatticeIndex::new(mu, 1, vec![(i / 2) as i32 - r]), v);
        }
        y
    })
}

/// A vector with `y(+1,j,-k) = conj y(-1,j,k)`.
fn symmetric(r: i32) -> impl Strategy<Value = FourierVector> {
    prop::collection::vec(complex(), (2 * r + 1) as usize).prop_map(move |vals| {
        let mut y = FourierVector::zeros(1, 1);
        for (i, v) in vals.into_iter().enumerate() {
            let k = i as i32 - r;
            y.set(LatticeIndex::new(-1, 1, vec![k]), v);
            y.set(LatticeIndex::new(1, 1, vec![-k]), v.conj());
        }
        y
    })
}

fn params(n0: i32, c5: f64) -> InverseParams {
    InverseParams { epsilon1: 0.01, c1: 8.0, eta: 0.1, n0, c5, fit_samples: 7, paste: PasteOptions::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translation_identity(
        y in vector(2),
        omega in 1.0..2.0f64,
        omega2 in 1.0..2.0f64,
        sigma in -1.0..1.0f64,
        q in prop::collection::vec(-6..=6i32, 2),
        two_d in any::<bool>(),
    ) {
        let d = if two_d { 2 } else { 1 };
        let ds = cubic(d);
        let mut yd = FourierVector::zeros(1, d);
        for (m, v) in y.iter() {
            let mut k = m.k.clone();
            k.resize(d, 0);
            yd.set(LatticeIndex::new(m.mu, m.j, k), *v);
        }
        let omega = [omega, omega2][..d].to_vec();
        let op = assemble_linearization(&yd, &ds, &omega, 12).unwrap();
        let r = check_translation(&op, &q[..d], &IndexBox::cube(d, 6), sigma).unwrap();
        prop_assert!(r <= 1e-12, "residual {r:e}");
    }

    #[test]
    fn resolvent_identity(
        n in 4usize..16,
        seed in prop::collection::vec(complex(), 256),
        split in prop::collection::vec(any::<bool>(), 16),
    ) {
        prop_assume!(split[..n].iter().any(|&b| b) && split[..n].iter().any(|&b| !b));
        let t = DMatrix::from_fn(n, n, |i, j| seed[i * 16 + j] + if i == j { C64::new(2.0, 0.0) } else { C64::new(0.0, 0.0) });
        let s = &split[..n];
        let i1: Vec<usize> = (0..n).filter(|&i| s[i]).collect();
        let i2: Vec<usize> = (0..n).filter(|&i| !s[i]).collect();
        let inv1 = dense_inverse(&t.select_rows(&i1).select_columns(&i1));
        let inv2 = dense_inverse(&t.select_rows(&i2).select_columns(&i2));
        let full = dense_inverse(&t);
        prop_assume!(inv1.is_ok() && inv2.is_ok() && full.is_ok());
        let sv = t.clone().singular_values();
        let cond = sv.max() / sv.min();
        let r = resolvent_residual(&t, s, &inv1.unwrap(), &inv2.unwrap(), &full.unwrap()).unwrap();
        prop_assert!(r <= 1e-10 * cond, "residual {r:e}, cond {cond:e}");
    }

    #[test]
    fn real_nonlinearity_keeps_conjugate_symmetry(y in symmetric(2), omega in 1.0..2.0f64) {
        let ds = diagonalize(&canonical().problem).unwrap();
        let w = evaluate_w(&y, &ds.nonlinearity, ds.degree_cap).unwrap();
        prop_assert!(conjugate_symmetry_defect(&w) <= 1e-12 * (1.0 + w.norm_sup()));
        let f = evaluate_f(&y, &[omega], &ds).unwrap();
        prop_assert!(conjugate_symmetry_defect(&f) <= 1e-12 * (1.0 + f.norm_sup()));
    }

    #[test]
    fn support_discipline(y in vector(3), r in 0..3i32) {
        let ds = cubic(1);
        let w = evaluate_w(&y, &ds.nonlinearity, ds.degree_cap).unwrap();
        prop_assert!(w.support_radius() <= 3 * y.support_radius());
        let t = y.truncate(r);
        prop_assert!(t.support_radius() <= r);
        prop_assert!(t.iter().all(|(m, v)| *v == y.get(m)));
    }

    #[test]
    fn error_split_sums_to_the_new_residual(y in symmetric(2), delta in symmetric(3), omega in 1.1..1.9f64) {
        let ds = diagonalize(&canonical().problem).unwrap();
        let omega = [omega];
        let f0 = evaluate_f(&y, &omega, &ds).unwrap();
        let t = assemble_linearization(&y, &ds, &omega, 8).unwrap();
        let f1 = evaluate_f(&y.add(&delta), &omega, &ds).unwrap();
        let s = error_split(&f0, &t, &delta, &f1, 4, 3);
        let scale = f0.norm_l2() + f1.norm_l2() + s.tail + s.solve + s.coupling + s.taylor;
        prop_assert!(s.defect <= 1e-13 * scale, "defect {:e}", s.defect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn covering_solve_matches_lu(
        y in vector(2),
        omega in 1.0..2.0f64,
        sigma in -0.5..0.5f64,
        big_n in 8..40i32,
        rhs in vector(6),
    ) {
        let ds = cubic(1);
        let mut op = assemble_linearization(&y, &ds, &[omega], big_n).unwrap();
        op.epsilon = 0.05;
        let p = params(2, 10.0);
        let cov = build_covering(&op, sigma, big_n, &p);
        prop_assume!(cov.is_ok());
        let cov = cov.unwrap();
        let (x, _) = cov.solve(&op, &rhs, &p.paste).unwrap();
        let t = op.dense(&cov.sites, sigma);
        let b = DVector::from_vec(rhs.values_on(&cov.sites));
        let want = t.lu().solve(&b).unwrap();
        let got = DVector::from_vec(x.values_on(&cov.sites));
        let err = (&got - &want).camax() / want.camax();
        prop_assert!(err <= 1e-9, "relative error {err:e}");
    }

    #[test]
    fn manufactured_solution_is_recovered(y_star in symmetric(2), omega in 1.1..1.9f64) {
        let cfg = canonical();
        let ds = diagonalize(&cfg.problem).unwrap();
        let y_star = y_star.scale(C64::new(0.1, 0.0));
        let g = manufacture_forcing(&ds, &y_star, &[omega]).unwrap();
        let (report, y) = run(&ds.with_forcing(g), &[omega], &cfg.solver);
        prop_assume!(report.accepted());
        let err = y.unwrap().sub(&y_star).norm_l2();
        prop_assert!(err <= 1e-8, "error {err:e}");
    }

    #[test]
    fn newton_step_stays_in_its_box(omega in 1.1..1.9f64) {
        let cfg = canonical();
        let ds = diagonalize(&cfg.problem).unwrap();
        let state = NewtonState::initial(&ds, &[omega], 3, &cfg.solver).unwrap();
        if let Ok((next, step)) = newton_step(&state, &ds, &cfg.solver) {
            prop_assert!(next.y.support_radius() <= step.big_n);
            prop_assert!(step.rhs_radius <= step.big_n);
            prop_assert!(step.split.defect <= 1e-10 * (1.0 + step.residual_before));
        }
    }
}
