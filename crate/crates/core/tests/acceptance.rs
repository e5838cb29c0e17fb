//! Acceptance suite. Runs every criterion at its stated tolerance and
//! runtime, prints one line each and exits non-zero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpdelay::cli::{summarize, sweep_reports};
use qpdelay::config::RunConfig;
use qpdelay::excision::{estimate_bad_measure, sample_box};
use qpdelay::lattice::{assemble_linearization, check_translation, evaluate_w, FourierVector, IndexBox, LatticeIndex, LatticeOperator};
use qpdelay::model::{diagonalize, manufacture_forcing, DiagonalizedSpec};
use qpdelay::multiscale::{build_covering, dense_inverse, resolvent_residual, InverseParams, PasteOptions};
use qpdelay::newton::{run, SolverConfig};
use qpdelay::poly::Polynomial;
use qpdelay::smalldivisor::{check_melnikov, singular_sites_of};
use qpdelay::verification::{convergence_order, default_grid, dde_residual};

/// Acceptance fraction of the 200-sample sweep on `configs/sweep.toml`,
/// frozen from a reference run.
const SWEEP_GOLDEN: f64 = 0.99;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).expect("config loads")
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `f̃ = a (y + ȳ)³` on one oscillator with `d` frequencies.
fn cubic_spec(d: usize, a: C64) -> DiagonalizedSpec {
    let s = Polynomial::variable(2, 0).add(&Polynomial::variable(2, 1));
    let f = s.pow(3).scale(a);
    DiagonalizedSpec::from_parts(vec![1.0], d, vec![f], FourierVector::zeros(1, d), 1.0, 1e-3, 1 << 16)
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, radius: i32, amp: f64) -> FourierVector {
    let mut y = FourierVector::zeros(1, d);
    for k in IndexBox::cube(d, radius).points() {
        for mu in [-1i8, 1] {
            y.set(LatticeIndex::new(mu, 1, k.clone()), c(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)));
        }
    }
    y
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ds = cubic_spec(1, c(0.5, 0.0));
    let mut worst: f64 = 0.0;
    let (mut planted, mut pasted, mut schur) = (0, 0, 0);
    let mut failures = Vec::new();
    for i in 0..50 {
        let big_n = [8, 16, 24, 32][i % 4];
        let omega = [rng.gen_range(1.0..2.0)];
        let y = random_vector(&mut rng, 1, 2, 0.3);
        let mut op = assemble_linearization(&y, &ds, &omega, big_n).unwrap();
        op.epsilon = rng.gen_range(0.02..0.1);
        let params = InverseParams {
            epsilon1: 0.01,
            c1: 8.0,
            eta: 0.1,
            n0: if i % 3 == 0 { 2 } else { 4 },
            c5: if i % 3 == 0 { 10.0 } else { 3.0 },
            fit_samples: 7,
            paste: PasteOptions::default(),
        };
        let region = IndexBox::cube(1, big_n);
        let want_singular = i % 2 == 1;
        let sigma = loop {
            let sigma = if want_singular {
                let k0 = rng.gen_range(-big_n / 2..=big_n / 2);
                let mu: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let delta = rng.gen_range(0.002..0.006) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                -(k0 as f64 * omega[0] + mu) + delta
            } else {
                rng.gen_range(-0.5..0.5)
            };
            let count = singular_sites_of(&op, sigma, params.epsilon1, &region).len();
            if count == usize::from(want_singular) {
                break sigma;
            }
        };
        planted += usize::from(want_singular);
        let result = build_covering(&op, sigma, big_n, &params).and_then(|cov| {
            let (g, _) = cov.dense(&op, &params.paste)?;
            let lu = dense_inverse(&op.dense(&cov.sites, sigma))?;
            Ok((cov, max_abs(&(g - &lu)) / max_abs(&lu)))
        });
        match result {
            Ok((cov, rel)) => {
                pasted += usize::from(cov.patches.len() > 1);
                schur += usize::from(!cov.singular.is_empty());
                worst = worst.max(rel);
                if !(rel <= 1e-8) {
                    failures.push(format!("#{i} rel {rel:.2e}"));
                }
            }
            Err(e) => failures.push(format!("#{i} {e}")),
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "50 instances ({planted} planted, {schur} via Schur, {pasted} pasted), max rel err {worst:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    }
}

fn resolvent_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_ratio: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.gen_range(8..=32);
        let t = DMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let split: Vec<bool> = loop {
            let s: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if s.iter().any(|&b| b) && s.iter().any(|&b| !b) {
                break s;
            }
        };
        let i1: Vec<usize> = (0..n).filter(|&i| split[i]).collect();
        let i2: Vec<usize> = (0..n).filter(|&i| !split[i]).collect();
        let inv1 = dense_inverse(&t.select_rows(&i1).select_columns(&i1)).unwrap();
        let inv2 = dense_inverse(&t.select_rows(&i2).select_columns(&i2)).unwrap();
        let full = dense_inverse(&t).unwrap();
        let sv = t.clone().singular_values();
        let cond = sv.max() / sv.min();
        let r = resolvent_residual(&t, &split, &inv1, &inv2, &full).unwrap();
        let ratio = r / (1e-10 * cond);
        worst_ratio = worst_ratio.max(ratio);
        failures += usize::from(!(ratio <= 1.0));
    }
    Outcome {
        pass: failures == 0,
        detail: format!("100 matrices, worst residual / (1e-10 cond) = {worst_ratio:.2e}, {failures} over"),
    }
}

fn translation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for d in [1usize, 2] {
        let ds = cubic_spec(d, c(0.7, -0.2));
        for _ in 0..20 {
            let omega: Vec<f64> = (0..d).map(|_| rng.gen_range(1.0..2.0)).collect();
            let y = random_vector(&mut rng, d, 1, 0.4);
            let op = assemble_linearization(&y, &ds, &omega, 16).unwrap();
            let q: Vec<i32> = (0..d).map(|_| rng.gen_range(-8..=8)).collect();
            let sigma = rng.gen_range(-1.0..1.0);
            let r = check_translation(&op, &q, &IndexBox::cube(d, 8), sigma).unwrap();
            worst = worst.max(r);
        }
    }
    Outcome { pass: worst <= 1e-12, detail: format!("40 cases at N=8 (d=1,2), max entrywise residual {worst:.2e}") }
}

fn linearization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ds = cubic_spec(1, c(1.0, 0.5));
    let hs = [1e-4, 1e-5, 1e-6];
    let mut slopes = Vec::new();
    let mut worst_c: f64 = 0.0;
    for _ in 0..20 {
        let y = random_vector(&mut rng, 1, 2, 0.5);
        let v = random_vector(&mut rng, 1, 2, 0.5);
        let w0 = evaluate_w(&y, &ds.nonlinearity, ds.degree_cap).unwrap();
        let sv = assemble_linearization(&y, &ds, &[1.37], 16).unwrap().apply_s(&v);
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let yh = y.axpy(c(h, 0.0), &v);
                let wh = evaluate_w(&yh, &ds.nonlinearity, ds.degree_cap).unwrap();
                wh.sub(&w0).scale(c(1.0 / h, 0.0)).sub(&sv).norm_l2()
            })
            .collect();
        for (e, h) in errs.iter().zip(hs) {
            worst_c = worst_c.max(e / h);
        }
        for w in errs.windows(2) {
            slopes.push((w[0] / w[1]).log10());
        }
    }
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        pass: lo >= 0.9 && hi <= 1.1,
        detail: format!("20 pairs, observed order in [{lo:.3}, {hi:.3}], error <= {worst_c:.2e} h"),
    }
}

fn singleton() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n0 = 4;
    let gamma = 1e-3;
    let (mut freqs, mut tried, mut scans) = (0, 0, 0);
    let mut failures = Vec::new();
    while freqs < 100 && tried < 1000 {
        tried += 1;
        let d = 1 + freqs % 2;
        let lambdas = [1.0, 2f64.sqrt()];
        let omega: Vec<f64> = (0..d).map(|_| rng.gen_range(1.0..2.0)).collect();
        if !check_melnikov(&omega, &lambdas, gamma, 32).passed {
            continue;
        }
        freqs += 1;
        // Desk analogue of the ε₁ conditions: the spectral cap, and a tenth of
        // the measured Melnikov minimum over 0 < |k| ≤ 2N₀ in place of the
        // worst-case γ(10N₀)^{-10d}.
        let spectral = 0.01 * 1f64.min(lambdas[0]).min(lambdas[1] - lambdas[0]);
        let local = check_melnikov(&omega, &lambdas, gamma, 2 * n0).min_gap;
        let eps1 = spectral.min(local / 10.0);
        let op = LatticeOperator::diagonal(&lambdas, &omega, 1.0, 1e-3, n0);
        let region = IndexBox::cube(d, n0);
        let sites = region.sites(2);
        for trial in 0..6 {
            scans += 1;
            let (sigma, planted) = if trial < 3 {
                (rng.gen_range(-0.5..0.5), None)
            } else {
                let m = sites[rng.gen_range(0..sites.len())].clone();
                let kw: f64 = m.k.iter().zip(&omega).map(|(k, w)| *k as f64 * w).sum();
                let s = -(kw + m.mu as f64 * lambdas[m.j - 1]) + rng.gen_range(-0.5..0.5) * eps1;
                (s, Some(m))
            };
            let found = singular_sites_of(&op, sigma, eps1, &region);
            let ok = found.len() <= 1 && planted.as_ref().is_none_or(|m| found == [m.clone()]);
            if !ok {
                failures.push(format!("omega {omega:?} sigma {sigma:.4}: {} sites", found.len()));
            }
        }
    }
    Outcome {
        pass: freqs == 100 && failures.is_empty(),
        detail: format!(
            "{freqs} Melnikov-passing frequencies, {scans} scans of Lambda_0, {} with more than one singular site{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    }
}

fn manufactured_recovery() -> Outcome {
    let cfg = config("canonical.toml");
    let ds = diagonalize(&cfg.problem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut y_star = FourierVector::zeros(1, 1);
    for _ in 0..4 {
        let k: i32 = rng.gen_range(-3..=3);
        let a = c(rng.gen_range(-0.07..0.07), rng.gen_range(-0.07..0.07)) * (-(k.abs() as f64).sqrt()).exp();
        y_star.set(LatticeIndex::new(-1, 1, vec![k]), a);
        y_star.set(LatticeIndex::new(1, 1, vec![-k]), a.conj());
    }
    let decay = y_star.decay_norm(cfg.solver.c);
    let mut errors = Vec::new();
    for omega in sample_box(&[1.0], &[2.0], 400, 61) {
        if errors.len() == 40 {
            break;
        }
        let g = manufacture_forcing(&ds, &y_star, &omega).unwrap();
        let (report, y) = run(&ds.with_forcing(g), &omega, &cfg.solver);
        if let (true, Ok(y)) = (report.accepted(), y) {
            errors.push(y.sub(&y_star).norm_l2());
        }
    }
    let good = errors.iter().filter(|e| **e <= 1e-9).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: errors.len() == 40 && y_star.len() <= 8 && decay <= 0.1 && good * 100 >= 95 * errors.len(),
        detail: format!(
            "{} modes, decay norm {decay:.3}; {good}/{} accepted frequencies within 1e-9 (worst {worst:.2e})",
            y_star.len(),
            errors.len()
        ),
    }
}

fn superlinear_contraction() -> Outcome {
    let cfg = config("canonical.toml");
    let ds = diagonalize(&cfg.problem).unwrap();
    let omega = cfg.omega();
    let (report, y) = run(&ds, &omega, &cfg.solver);
    let y = match y {
        Ok(y) => y,
        Err(e) => return Outcome { pass: false, detail: format!("solve failed: {e}") },
    };
    let order = convergence_order(&report.pre_floor_history());
    let grid = default_grid(ds.lambdas[0], cfg.run.seed);
    let res = dde_residual(&y, &omega, &cfg.problem, &ds, &grid).unwrap();
    let bound = 1e-9 + res.quadrature_tail;
    let order_ok = matches!(order, Ok(p) if p >= 1.5);
    Outcome {
        pass: order_ok && res.sup_residual <= bound,
        detail: format!(
            "{:?} after {} stages, order {}, dde residual {:.2e} (bound {bound:.2e})",
            report.status,
            report.steps.len(),
            order.map(|p| format!("{p:.3}")).unwrap_or_else(|e| e.to_string()),
            res.sup_residual
        ),
    }
}

fn excision_scaling() -> Outcome {
    let lambdas = [1.0];
    let screen = |gamma: f64| {
        move |w: &[f64]| (!check_melnikov(w, &lambdas, gamma, 20).passed).then(|| "melnikov".to_string())
    };
    let gamma = 0.02;
    let a = estimate_bad_measure(&[1.0], &[2.0], screen(gamma), 2000, 808, 1, 0.1);
    let b = estimate_bad_measure(&[1.0], &[2.0], screen(2.0 * gamma), 2000, 809, 1, 0.1);
    let gap = b.bad_fraction - 2.0 * a.bad_fraction;
    let sigma = (b.std_error.powi(2) + 4.0 * a.std_error.powi(2)).sqrt();
    Outcome {
        pass: a.bad_fraction > 0.0 && gap.abs() <= 3.0 * sigma,
        detail: format!(
            "gamma {gamma}: {:.4}, gamma {}: {:.4}; |f(2g) - 2 f(g)| = {:.4} vs 3 sigma = {:.4}",
            a.bad_fraction,
            2.0 * gamma,
            b.bad_fraction,
            gap.abs(),
            3.0 * sigma
        ),
    }
}

fn sweep_acceptance() -> Outcome {
    let cfg = config("sweep.toml");
    let (_, reports) = sweep_reports(&cfg, 200).unwrap();
    let s = summarize(&reports, cfg.solver.eta);
    let f = s.acceptance_fraction;
    Outcome {
        pass: s.samples == 200 && f >= 0.9 && (f - SWEEP_GOLDEN).abs() <= 0.05,
        detail: format!("{}/{} accepted ({f:.3}, golden {SWEEP_GOLDEN} +/- 0.05)", s.accepted, s.samples),
    }
}

fn config_chain() -> Outcome {
    let mut wrong = Vec::new();
    for d in 1..=10 {
        if let Err(e) = SolverConfig::proof_fidelity(d).validate(d) {
            wrong.push(format!("d={d} rejected: {e}"));
        }
    }
    let base = SolverConfig::proof_fidelity(1);
    let negatives: [(&str, SolverConfig); 10] = [
        ("M^c far from 1", SolverConfig { c: 0.1, ..base.clone() }),
        ("cons0 c <= 2/C2", SolverConfig { c: 4e-4, m: 10, ..base.clone() }),
        ("cons0 small C2", SolverConfig { c2: 1000.0, ..base.clone() }),
        ("cons1 C6 <= 1", SolverConfig { c6: 0.9, ..base.clone() }),
        ("cons1 C6 >= (1-c)C5", SolverConfig { c6: 10.0, ..base.clone() }),
        ("cons1 small C5", SolverConfig { c5: 4.0, ..base.clone() }),
        ("cons2 small C3", SolverConfig { c3: 12.0, ..base.clone() }),
        ("cons2 small C1", SolverConfig { c1: 150.0, ..base.clone() }),
        ("cons3 C1 vs 2dC3", SolverConfig { c1: 2000.0, c3: 1000.0, ..base.clone() }),
        ("cons3 small C1", SolverConfig { c1: 30.0, c3: 1e6, c5: 1.2, c6: 1.1, ..base.clone() }),
    ];
    for (name, cfg) in &negatives {
        if cfg.validate(1).is_ok() {
            wrong.push(format!("{name} accepted"));
        }
    }
    Outcome {
        pass: wrong.is_empty(),
        detail: if wrong.is_empty() {
            "10 positive accepted, 10 negative rejected".into()
        } else {
            wrong.join("; ")
        },
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 oracle equivalence", Duration::from_secs(10), oracle_equivalence),
        ("2 resolvent identity", Duration::from_secs(2), resolvent_identity),
        ("3 translation identity", Duration::from_secs(2), translation_identity),
        ("4 linearization", Duration::from_secs(2), linearization),
        ("5 singleton", Duration::from_secs(5), singleton),
        ("6 manufactured recovery", Duration::from_secs(60), manufactured_recovery),
        ("7 superlinear contraction", Duration::from_secs(30), superlinear_contraction),
        ("8 excision scaling", Duration::from_secs(10), excision_scaling),
        ("9 sweep acceptance", Duration::from_secs(300), sweep_acceptance),
        ("10 config chain", Duration::from_secs(1), config_chain),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= limit;
        failed += usize::from(!pass);
        println!(
            "[{}] {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
