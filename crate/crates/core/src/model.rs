//! Problem definition, hypothesis checks, diagonalization of `A` and
//! reconstruction of time-domain solutions.
//!
//! Coordinates: `x = V z` with `z = (y_1..y_n, ȳ_1..ȳ_n)` and
//! `V = [v_1..v_n, v̄_1..v̄_n]`, `A v_j = iλ_j v_j`. Then
//! `-i y' = Λ y + ε f̃(y(t-τ), ȳ(t-τ)) + ε g̃(ωt)` with
//! `f̃_j(z) = -i Σ_i (V⁻¹)_{ji} f_i(V z)` and `g̃_j = -i (V⁻¹ g)_j`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::lattice::{diag_entry, dot, evaluate_w, FourierVector, LatticeIndex, LatticeNonlinearity};
use crate::poly::Polynomial;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `b · x_{1..n}^α x_{n+1..2n}^β`, with `b` a `2n`-vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearTerm {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub coeff: Vec<Complex64>,
}

/// `ĝ(k) e^{i⟨k,θ⟩}` with `ĝ(k)` a `2n`-vector in the original coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingTerm {
    pub k: Vec<i32>,
    pub coeff: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    pub d: usize,
    /// Row-major `2n × 2n`.
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub nonlinearity: Vec<NonlinearTerm>,
    #[serde(default)]
    pub forcing: Vec<ForcingTerm>,
    pub tau: f64,
    pub epsilon: f64,
    pub freq_lo: Vec<f64>,
    pub freq_hi: Vec<f64>,
    #[serde(default = "default_max_degree")]
    pub max_degree: u32,
    /// Hard cap on the support radius of any convolution product.
    #[serde(default = "default_degree_cap")]
    pub degree_cap: i32,
    /// Relative tolerance for the spectral hypothesis checks.
    #[serde(default = "default_spectral_tol")]
    pub spectral_tol: f64,
}

fn default_max_degree() -> u32 {
    5
}

fn default_degree_cap() -> i32 {
    1 << 16
}

fn default_spectral_tol() -> f64 {
    1e-9
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |s: String| Err(QpError::Config(s));
        let n2 = 2 * self.n;
        if self.n == 0 || self.d == 0 {
            return cfg("n and d must be positive".into());
        }
        if self.a.len() != n2 || self.a.iter().any(|r| r.len() != n2) {
            return cfg(format!("A must be {n2}x{n2}"));
        }
        if self.a.iter().flatten().any(|x| !x.is_finite()) {
            return cfg("A has non-finite entries".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return cfg("tau must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return cfg("epsilon must be positive".into());
        }
        if self.freq_lo.len() != self.d || self.freq_hi.len() != self.d {
            return cfg("frequency box must have d bounds".into());
        }
        if self.freq_lo.iter().zip(&self.freq_hi).any(|(l, h)| !(l < h)) {
            return cfg("frequency box must have positive volume".into());
        }
        if self.degree_cap < 1 {
            return cfg("degree_cap must be at least 1".into());
        }
        for t in &self.nonlinearity {
            if t.alpha.len() != self.n || t.beta.len() != self.n || t.coeff.len() != n2 {
                return cfg("nonlinear term has wrong arity".into());
            }
            let deg: u32 = t.alpha.iter().chain(&t.beta).sum();
            if deg == 0 {
                return cfg("nonlinear terms need total degree at least 1".into());
            }
            if deg > self.max_degree {
                return cfg(format!("term degree {deg} exceeds max_degree {}", self.max_degree));
            }
            if t.coeff.iter().any(|c| c.im != 0.0 || !c.re.is_finite()) {
                return cfg("nonlinearity must have real coefficients".into());
            }
        }
        let g = self.forcing_map()?;
        for (k, v) in &g {
            let neg: Vec<i32> = k.iter().map(|x| -x).collect();
            let partner = g.get(&neg);
            let scale = v.iter().map(|c| c.norm()).fold(1e-300, f64::max);
            let defect = match partner {
                Some(w) => v
                    .iter()
                    .zip(w)
                    .map(|(a, b)| (a - b.conj()).norm())
                    .fold(0.0, f64::max),
                None => scale,
            };
            if defect > 1e-12 * scale.max(1.0) {
                return Err(QpError::RealityViolation { residue: defect });
            }
        }
        Ok(())
    }

    /// Forcing coefficients summed per `k`.
    pub fn forcing_map(&self) -> Result<BTreeMap<Vec<i32>, Vec<Complex64>>> {
        let n2 = 2 * self.n;
        let mut g: BTreeMap<Vec<i32>, Vec<Complex64>> = BTreeMap::new();
        for t in &self.forcing {
            if t.k.len() != self.d || t.coeff.len() != n2 {
                return Err(QpError::Config("forcing term has wrong arity".into()));
            }
            let e = g.entry(t.k.clone()).or_insert_with(|| vec![Complex64::new(0.0, 0.0); n2]);
            for (a, b) in e.iter_mut().zip(&t.coeff) {
                *a += b;
            }
        }
        Ok(g)
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n2 = 2 * self.n;
        DMatrix::from_fn(n2, n2, |r, c| self.a[r][c])
    }

    /// The nonlinearity in original coordinates, one polynomial per row.
    pub fn f_polys(&self) -> Vec<Polynomial> {
        let n2 = 2 * self.n;
        let mut polys = vec![Polynomial::zero(n2); n2];
        for t in &self.nonlinearity {
            let e: Vec<u32> = t.alpha.iter().chain(&t.beta).copied().collect();
            for (i, p) in polys.iter_mut().enumerate() {
                if t.coeff[i] != Complex64::new(0.0, 0.0) {
                    p.add_term(e.clone(), t.coeff[i]);
                }
            }
        }
        polys
    }

    /// Evaluates `f(x)` and `g(θ)` in original coordinates.
    pub fn eval_f(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.f_polys().iter().map(|p| p.eval(x)).collect()
    }

    pub fn eval_g(&self, theta: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * self.n];
        for t in &self.forcing {
            let ph = Complex64::from_polar(1.0, dot(&t.k, theta));
            for (o, c) in out.iter_mut().zip(&t.coeff) {
                *o += c * ph;
            }
        }
        out
    }
}

/// The problem in eigencoordinates, ready for the lattice.
#[derive(Clone, Debug)]
pub struct DiagonalizedSpec {
    pub n: usize,
    pub d: usize,
    pub lambdas: Vec<f64>,
    pub v: DMatrix<Complex64>,
    pub v_inv: DMatrix<Complex64>,
    pub cond: f64,
    /// `‖V⁻¹AV − diag(iΛ, −iΛ)‖ / ‖A‖`.
    pub diag_residual: f64,
    /// Polynomials `f̃_j` in `(y, ȳ)`, `j = 1..n`.
    pub f_diag: Vec<Polynomial>,
    pub nonlinearity: LatticeNonlinearity,
    /// Unphased lattice forcing `ĝ(m)`; `ĝ(+1,j,k) = conj ĝ(-1,j,-k)` for real data.
    pub forcing: FourierVector,
    pub tau: f64,
    pub epsilon: f64,
    pub degree_cap: i32,
}

impl DiagonalizedSpec {
    /// Builds a spec directly in eigencoordinates (`V = I`), for lattice-level
    /// work where no original matrix is involved.
    pub fn from_parts(
        lambdas: Vec<f64>,
        d: usize,
        f_diag: Vec<Polynomial>,
        forcing: FourierVector,
        tau: f64,
        epsilon: f64,
        degree_cap: i32,
    ) -> Self {
        let n = lambdas.len();
        assert_eq!(f_diag.len(), n);
        let id = DMatrix::identity(2 * n, 2 * n);
        Self {
            n,
            d,
            nonlinearity: LatticeNonlinearity::from_diag(&f_diag),
            lambdas,
            v: id.clone(),
            v_inv: id,
            cond: 1.0,
            diag_residual: 0.0,
            f_diag,
            forcing,
            tau,
            epsilon,
            degree_cap,
        }
    }

    pub fn with_forcing(&self, forcing: FourierVector) -> Self {
        let mut out = self.clone();
        out.forcing = forcing;
        out
    }

    /// Smallest spectral separation `min{1, λ_j, |λ_j − λ_j'|}`.
    pub fn spectral_gap(&self) -> f64 {
        let mut g: f64 = 1.0;
        for (i, a) in self.lambdas.iter().enumerate() {
            g = g.min(*a);
            for b in &self.lambdas[i + 1..] {
                g = g.min((a - b).abs());
            }
        }
        g
    }
}

fn null_vector(m: &DMatrix<Complex64>) -> Result<DVector<Complex64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.ok_or(QpError::SingularEigenbasis { cond: f64::INFINITY })?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    Ok(DVector::from_iterator(m.ncols(), vt.row(idx).iter().map(|c| c.conj())))
}

/// Unit norm, first entry that is not negligible made real positive.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let norm = v.norm();
    *v /= Complex64::new(norm, 0.0);
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some(first) = v.iter().find(|c| c.norm() > 1e-8 * max).copied() {
        let rot = first.conj() / first.norm();
        *v *= rot;
    }
}

fn cond_number(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn diagonalize(spec: &ProblemSpec) -> Result<DiagonalizedSpec> {
    spec.validate()?;
    let n = spec.n;
    let n2 = 2 * n;
    let a = spec.a_matrix();
    let norm_a = a.norm().max(f64::MIN_POSITIVE);
    let tol = spec.spectral_tol * norm_a;
    let eig = a.complex_eigenvalues();
    if let Some(bad) = eig.iter().find(|z| z.re.abs() > tol) {
        return Err(QpError::EigenvalueRealPart { real: bad.re, tol });
    }
    let mut lambdas: Vec<f64> = eig.iter().filter(|z| z.im > tol).map(|z| z.im).collect();
    lambdas.sort_by(f64::total_cmp);
    if lambdas.len() != n {
        let mut ims: Vec<f64> = eig.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        let (a0, b0) = ims
            .windows(2)
            .map(|w| (w[0], w[1]))
            .min_by(|x, y| (x.1 - x.0).total_cmp(&(y.1 - y.0)))
            .unwrap_or((0.0, 0.0));
        return Err(QpError::NonSimpleSpectrum { a: a0, b: b0, tol });
    }
    for w in lambdas.windows(2) {
        if w[1] - w[0] < tol {
            return Err(QpError::NonSimpleSpectrum { a: w[0], b: w[1], tol });
        }
    }
    let ac: DMatrix<Complex64> = a.map(|x| Complex64::new(x, 0.0));
    let mut v = DMatrix::<Complex64>::zeros(n2, n2);
    for (j, lam) in lambdas.iter().enumerate() {
        let shifted = &ac - DMatrix::<Complex64>::identity(n2, n2) * (I * *lam);
        let mut vj = null_vector(&shifted)?;
        normalize_phase(&mut vj);
        for r in 0..n2 {
            v[(r, j)] = vj[r];
            v[(r, n + j)] = vj[r].conj();
        }
    }
    let cond = cond_number(&v);
    if !cond.is_finite() || cond > 1e12 {
        return Err(QpError::SingularEigenbasis { cond });
    }
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or(QpError::SingularEigenbasis { cond })?;
    let mut target = DMatrix::<Complex64>::zeros(n2, n2);
    for (j, lam) in lambdas.iter().enumerate() {
        target[(j, j)] = I * *lam;
        target[(n + j, n + j)] = -I * *lam;
    }
    let diag_residual = (&v_inv * &ac * &v - target).norm() / norm_a;

    let forms: Vec<Polynomial> = (0..n2)
        .map(|i| Polynomial::linear(&v.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let composed: Vec<Polynomial> = spec.f_polys().iter().map(|p| p.compose(&forms)).collect();
    let mut f_diag = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = Polynomial::zero(n2);
        for (i, gi) in composed.iter().enumerate() {
            let w = -I * v_inv[(j, i)];
            if w != Complex64::new(0.0, 0.0) {
                acc = acc.add(&gi.scale(w));
            }
        }
        f_diag.push(acc);
    }

    let mut forcing = FourierVector::zeros(n, spec.d);
    let gmap = spec.forcing_map()?;
    let mut lower: BTreeMap<Vec<i32>, Vec<Complex64>> = BTreeMap::new();
    for (k, coeff) in &gmap {
        let w = &v_inv * DVector::from_column_slice(coeff);
        lower.insert(k.clone(), (0..n).map(|j| -I * w[j]).collect());
    }
    for (k, vals) in &lower {
        let neg: Vec<i32> = k.iter().map(|x| -x).collect();
        for j in 0..n {
            forcing.set(LatticeIndex::new(-1, j + 1, k.clone()), vals[j]);
            forcing.set(LatticeIndex::new(1, j + 1, neg.clone()), vals[j].conj());
        }
    }

    Ok(DiagonalizedSpec {
        n,
        d: spec.d,
        nonlinearity: LatticeNonlinearity::from_diag(&f_diag),
        lambdas,
        v,
        v_inv,
        cond,
        diag_residual,
        f_diag,
        forcing,
        tau: spec.tau,
        epsilon: spec.epsilon,
        degree_cap: spec.degree_cap,
    })
}

/// Lattice forcing that makes `y_star` an exact solution at `omega`:
/// `ĝ(m) = -e^{-i⟨k,ω⟩τ} (D y* + ε W[y*])(m) / ε`.
pub fn manufacture_forcing(spec: &DiagonalizedSpec, y_star: &FourierVector, omega: &[f64]) -> Result<FourierVector> {
    let w = evaluate_w(y_star, &spec.nonlinearity, spec.degree_cap)?;
    let mut rhs = w.scale(Complex64::new(spec.epsilon, 0.0));
    for (m, v) in y_star.iter() {
        rhs.add_at(m.clone(), diag_entry(m, omega, 0.0, spec.tau, &spec.lambdas) * v);
    }
    let mut out = FourierVector::zeros(spec.n, spec.d);
    for (m, v) in rhs.iter() {
        let phase = Complex64::from_polar(1.0, -dot(&m.k, omega) * spec.tau);
        out.set(m.clone(), -phase * v / spec.epsilon);
    }
    Ok(out)
}

/// `z(t)` for each component: `Σ_k y(m) e^{i⟨k,ω⟩t}`.
pub fn eval_components(y: &FourierVector, omega: &[f64], t: f64) -> Vec<Complex64> {
    let mut z = vec![Complex64::new(0.0, 0.0); 2 * y.n()];
    for (m, v) in y.iter() {
        z[m.component(y.n())] += v * Complex64::from_polar(1.0, dot(&m.k, omega) * t);
    }
    z
}

/// `x(t) = V z(t)` without the reality check.
pub fn reconstruct_complex(
    y: &FourierVector,
    omega: &[f64],
    v: &DMatrix<Complex64>,
    t_grid: &[f64],
) -> Vec<Vec<Complex64>> {
    t_grid
        .iter()
        .map(|&t| {
            let z = DVector::from_vec(eval_components(y, omega, t));
            (v * z).iter().copied().collect()
        })
        .collect()
}

/// Imaginary residue allowed in a reconstructed real solution.
pub const REALITY_TOL: f64 = 1e-9;

pub fn reconstruct_solution(
    y: &FourierVector,
    omega: &[f64],
    v: &DMatrix<Complex64>,
    t_grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let xc = reconstruct_complex(y, omega, v, t_grid);
    let scale = xc.iter().flatten().map(|c| c.norm()).fold(1.0, f64::max);
    let residue = xc.iter().flatten().map(|c| c.im.abs()).fold(0.0, f64::max);
    if residue > REALITY_TOL * scale {
        return Err(QpError::RealityViolation { residue });
    }
    Ok(xc.into_iter().map(|r| r.into_iter().map(|c| c.re).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rotation_spec(a: Vec<Vec<f64>>) -> ProblemSpec {
        let n = a.len() / 2;
        ProblemSpec {
            n,
            d: 1,
            a,
            nonlinearity: vec![],
            forcing: vec![],
            tau: 1.0,
            epsilon: 1e-3,
            freq_lo: vec![1.0],
            freq_hi: vec![2.0],
            max_degree: 3,
            degree_cap: 256,
            spectral_tol: 1e-9,
        }
    }

    #[test]
    fn rotation_generator() {
        let ds = diagonalize(&rotation_spec(vec![vec![0.0, -1.0], vec![1.0, 0.0]])).unwrap();
        assert!((ds.lambdas[0] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ds.v[(0, 0)] - Complex64::new(s, 0.0)).norm() < 1e-14);
        assert!((ds.v[(1, 0)] - Complex64::new(0.0, -s)).norm() < 1e-14);
        assert!(ds.diag_residual < 1e-10);
    }

    #[test]
    fn two_blocks() {
        let a = vec![
            vec![0.0, 0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0, -2.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
        ];
        let ds = diagonalize(&rotation_spec(a)).unwrap();
        assert!((ds.lambdas[0] - 1.0).abs() < 1e-12);
        assert!((ds.lambdas[1] - 2.0).abs() < 1e-12);
        assert!(ds.diag_residual < 1e-10);
    }

    #[test]
    fn damped_rotation_rejected() {
        let e = diagonalize(&rotation_spec(vec![vec![0.0, -1.0], vec![1.0, 0.5]])).unwrap_err();
        assert!(matches!(e, QpError::EigenvalueRealPart { .. }));
    }

    #[test]
    fn repeated_frequency_rejected() {
        let a = vec![
            vec![0.0, 0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0, -1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ];
        let e = diagonalize(&rotation_spec(a)).unwrap_err();
        assert!(matches!(e, QpError::NonSimpleSpectrum { .. }));
    }

    #[test]
    fn forcing_reality_is_checked() {
        let mut spec = rotation_spec(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        spec.forcing.push(ForcingTerm {
            k: vec![1],
            coeff: vec![Complex64::new(1.0, 0.5), Complex64::new(0.0, 0.0)],
        });
        assert!(matches!(spec.validate(), Err(QpError::RealityViolation { .. })));
        spec.forcing.push(ForcingTerm {
            k: vec![-1],
            coeff: vec![Complex64::new(1.0, -0.5), Complex64::new(0.0, 0.0)],
        });
        spec.validate().unwrap();
    }

    #[test]
    fn single_mode_reconstructs_cosine() {
        let ds = diagonalize(&rotation_spec(vec![vec![0.0, -1.0], vec![1.0, 0.0]])).unwrap();
        let c = Complex64::new(0.3, -0.2);
        let mut y = FourierVector::zeros(1, 1);
        y.set(LatticeIndex::new(-1, 1, vec![1]), c);
        y.set(LatticeIndex::new(1, 1, vec![-1]), c.conj());
        let om = [1.7];
        let grid = [0.0, 0.4, 1.3];
        let x = reconstruct_solution(&y, &om, &ds.v, &grid).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (row, t) in x.iter().zip(grid) {
            // x1 = 2 Re(c e^{iωt}) / √2, x2 = 2 Re(-i c e^{iωt}) / √2
            let e = c * Complex64::from_polar(1.0, om[0] * t);
            assert!((row[0] - 2.0 * s * e.re).abs() < 1e-14);
            assert!((row[1] - 2.0 * s * (-I * e).re).abs() < 1e-14);
        }
        let mut bad = y.clone();
        bad.set(LatticeIndex::new(1, 1, vec![-1]), c);
        assert!(reconstruct_solution(&bad, &om, &ds.v, &grid).is_err());
        let zero = reconstruct_solution(&FourierVector::zeros(1, 1), &om, &ds.v, &grid).unwrap();
        assert!(zero.iter().flatten().all(|v| *v == 0.0));
    }
}
