//! Frequency excision: first-order fits of the Schur scalar `h`, the
//! rejection rule on `p(σ₁) = σ₁ + Re a₀`, the separation check and seeded
//! estimates of the excised measure.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::lattice::{dot, sup_norm, IndexBox, LatticeIndex, LatticeOperator};
use crate::multiscale::dense_inverse;
use crate::smalldivisor::{satisfies_separation, SeparationParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialConstraint {
    /// `Re a₀` of the fitted model `h ≈ α(σ₁ + a₀)`.
    pub a0: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
    pub center_site: LatticeIndex,
    pub scale: i32,
    pub threshold: f64,
    /// Root-mean-square misfit of the linear model.
    pub fit_residual: f64,
}

impl PolynomialConstraint {
    pub fn p(&self, sigma1: f64) -> f64 {
        sigma1 + self.a0
    }
}

/// Complex least-squares fit `h ≈ α σ₁ + β` over `(σ₁, h)` samples, which
/// should already be divided by the phase `e^{i(⟨k*,ω⟩+σ)τ}` of `m*`.
pub fn fit_polynomial(
    samples: &[(f64, Complex64)],
    center_site: LatticeIndex,
    scale: i32,
    threshold: f64,
) -> Result<PolynomialConstraint> {
    if samples.len() < 5 {
        return Err(QpError::FitIllConditioned(format!("{} samples, need 5", samples.len())));
    }
    let nf = samples.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    let (mut h0, mut h1) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (s, h) in samples {
        s1 += s;
        s2 += s * s;
        h0 += h;
        h1 += h * s;
    }
    let spread = s2 / nf - (s1 / nf).powi(2);
    let scale_s = samples.iter().map(|(s, _)| s.abs()).fold(0.0, f64::max).max(1e-300);
    if spread <= 1e-20 * scale_s * scale_s {
        return Err(QpError::FitIllConditioned("degenerate σ₁ window".into()));
    }
    let m = Matrix2::new(s2, s1, s1, nf).map(|x| Complex64::new(x, 0.0));
    let rhs = Vector2::new(h1, h0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| QpError::FitIllConditioned("singular normal equations".into()))?;
    let (alpha, beta) = (sol[0], sol[1]);
    let h_scale = samples.iter().map(|(_, h)| h.norm()).fold(0.0, f64::max);
    let width = spread.sqrt();
    if alpha.norm() * width <= 1e-12 * h_scale.max(1e-300) {
        return Err(QpError::FitIllConditioned("h is nearly constant on the window".into()));
    }
    let fit_residual = (samples
        .iter()
        .map(|(s, h)| (h - (alpha * *s + beta)).norm_sqr())
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(PolynomialConstraint {
        a0: (beta / alpha).re,
        alpha,
        beta,
        center_site,
        scale,
        threshold,
        fit_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcisionWitness {
    pub site: LatticeIndex,
    pub sigma1: f64,
    pub p: f64,
    pub threshold: f64,
}

/// `σ₁ = σ₁⁰ + ⟨k,ω⟩` for all `|k|∞ ≤ big_n`.
pub fn sigma1_scan(sigma1: f64, omega: &[f64], big_n: i32) -> Vec<f64> {
    IndexBox::cube(omega.len(), big_n)
        .points()
        .iter()
        .map(|k| sigma1 + dot(k, omega))
        .collect()
}

/// Rejects when some constraint has `|p(σ₁)| ≤ threshold` at a scanned `σ₁`.
pub fn apply_excision(constraints: &[(PolynomialConstraint, Vec<f64>)]) -> std::result::Result<(), ExcisionWitness> {
    for (c, sigmas) in constraints {
        for &s in sigmas {
            let p = c.p(s);
            if p.abs() <= c.threshold {
                return Err(ExcisionWitness {
                    site: c.center_site.clone(),
                    sigma1: s,
                    p,
                    threshold: c.threshold,
                });
            }
        }
    }
    Ok(())
}

/// Whether `(T^{σ₁}_{N'})⁻¹` and `(T^{σ₂}_{N'})⁻¹` do not both fail the
/// separation property, by inverting both.
pub fn check_separation(
    op: &LatticeOperator,
    sigma1: f64,
    sigma2: f64,
    k: &[i32],
    n_prime: i32,
    params: &SeparationParams,
) -> Result<bool> {
    let kw = dot(k, &op.omega);
    if ((sigma1 - sigma2) - kw).abs() > 1e-12 * sigma1.abs().max(sigma2.abs()).max(1.0) {
        return Err(QpError::PreconditionViolated(format!(
            "σ₁ − σ₂ = {} but ⟨k,ω⟩ = {kw}",
            sigma1 - sigma2
        )));
    }
    let kn = sup_norm(k) as f64;
    let upper = (n_prime as f64).powf(params.c3);
    if kn <= 4.0 * n_prime as f64 || kn >= upper {
        return Err(QpError::PreconditionViolated(format!(
            "|k| = {kn} outside (4N', N'^C3) = ({}, {upper})",
            4 * n_prime
        )));
    }
    let sites = IndexBox::cube(op.d, n_prime).sites(op.n);
    let fails = |sigma: f64| match dense_inverse(&op.dense(&sites, sigma)) {
        Ok(inv) => !satisfies_separation(&inv, &sites, n_prime, params),
        Err(_) => true,
    };
    Ok(!(fails(sigma1) && fails(sigma2)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcisionRecord {
    pub stage: u32,
    pub seed: u64,
    pub accepted: Vec<Vec<f64>>,
    pub rejected: Vec<(Vec<f64>, String)>,
    pub bad_fraction: f64,
    /// Binomial standard error of `bad_fraction`.
    pub std_error: f64,
    /// `η / (50 · 4^{j-1})`.
    pub budget: f64,
    pub within_budget: bool,
}

pub fn stage_budget(eta: f64, stage: u32) -> f64 {
    eta / (50.0 * 4f64.powi(stage as i32 - 1))
}

/// Seeded low-discrepancy samples of the box: an additive Kronecker sequence
/// with a random shift drawn from the seed.
pub fn sample_box(lo: &[f64], hi: &[f64], n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = lo.len();
    // Generalized golden ratio: the positive root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=d).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    (0..n_samples)
        .map(|i| {
            (0..d)
                .map(|a| {
                    let u = (shift[a] + (i as f64 + 1.0) * alpha[a]).fract();
                    lo[a] + (hi[a] - lo[a]) * u
                })
                .collect()
        })
        .collect()
}

/// Screens seeded samples of the frequency box. `screen` returns a reason
/// when a frequency is rejected.
pub fn estimate_bad_measure<F>(
    lo: &[f64],
    hi: &[f64],
    screen: F,
    n_samples: usize,
    seed: u64,
    stage: u32,
    eta: f64,
) -> ExcisionRecord
where
    F: Fn(&[f64]) -> Option<String> + Sync,
{
    let samples = sample_box(lo, hi, n_samples, seed);
    let verdicts: Vec<Option<String>> = samples.par_iter().map(|w| screen(w)).collect();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (w, v) in samples.into_iter().zip(verdicts) {
        match v {
            None => accepted.push(w),
            Some(reason) => rejected.push((w, reason)),
        }
    }
    let total = (accepted.len() + rejected.len()).max(1) as f64;
    let bad_fraction = rejected.len() as f64 / total;
    let budget = stage_budget(eta, stage.max(1));
    ExcisionRecord {
        stage,
        seed,
        std_error: (bad_fraction * (1.0 - bad_fraction) / total).sqrt(),
        within_budget: bad_fraction <= budget,
        bad_fraction,
        budget,
        accepted,
        rejected,
    }
}
