//! Lattice indices, Fourier vectors and the operators `D^σ`, `S`, `T^σ`.
//!
//! A site is `m = (μ, j, k)` with `μ = ±1`, `1 ≤ j ≤ n`, `k ∈ ℤ^d`. The
//! `μ = -1` block carries the Fourier coefficients of `y_j`, the `μ = +1`
//! block those of `ȳ_j`. Component index `μ = -1 → j-1`, `μ = +1 → n+j-1`
//! matches the variable order `(y_1..y_n, ȳ_1..ȳ_n)` of the polynomials.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::model::DiagonalizedSpec;
use crate::poly::Polynomial;
use crate::series::DenseSeries;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn sup_norm(k: &[i32]) -> i32 {
    k.iter().map(|x| x.abs()).max().unwrap_or(0)
}

pub fn dot(k: &[i32], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(a, b)| *a as f64 * b).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticeIndex {
    pub mu: i8,
    pub j: usize,
    pub k: Vec<i32>,
}

impl LatticeIndex {
    pub fn new(mu: i8, j: usize, k: Vec<i32>) -> Self {
        debug_assert!(mu == 1 || mu == -1);
        debug_assert!(j >= 1);
        Self { mu, j, k }
    }

    pub fn component(&self, n: usize) -> usize {
        if self.mu < 0 {
            self.j - 1
        } else {
            n + self.j - 1
        }
    }

    pub fn from_component(comp: usize, n: usize, k: Vec<i32>) -> Self {
        if comp < n {
            Self::new(-1, comp + 1, k)
        } else {
            Self::new(1, comp - n + 1, k)
        }
    }

    pub fn shifted(&self, q: &[i32]) -> Self {
        Self::new(self.mu, self.j, self.k.iter().zip(q).map(|(a, b)| a + b).collect())
    }
}

/// Axis-aligned box `lo ≤ k ≤ hi` (inclusive) in `ℤ^d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: Vec<i32>,
    pub hi: Vec<i32>,
}

impl IndexBox {
    pub fn new(lo: Vec<i32>, hi: Vec<i32>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn cube(d: usize, radius: i32) -> Self {
        Self::new(vec![-radius; d], vec![radius; d])
    }

    pub fn centered(center: &[i32], radius: i32) -> Self {
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    pub fn contains(&self, k: &[i32]) -> bool {
        k.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn contains_box(&self, other: &IndexBox) -> bool {
        other.is_empty() || (self.contains(&other.lo) && self.contains(&other.hi))
    }

    pub fn intersect(&self, other: &IndexBox) -> IndexBox {
        IndexBox::new(
            self.lo.iter().zip(&other.lo).map(|(a, b)| *a.max(b)).collect(),
            self.hi.iter().zip(&other.hi).map(|(a, b)| *a.min(b)).collect(),
        )
    }

    pub fn hull(&self, other: &IndexBox) -> IndexBox {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        IndexBox::new(
            self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect(),
            self.hi.iter().zip(&other.hi).map(|(a, b)| *a.max(b)).collect(),
        )
    }

    pub fn expand(&self, r: i32) -> IndexBox {
        IndexBox::new(
            self.lo.iter().map(|x| x - r).collect(),
            self.hi.iter().map(|x| x + r).collect(),
        )
    }

    pub fn translate(&self, q: &[i32]) -> IndexBox {
        IndexBox::new(
            self.lo.iter().zip(q).map(|(a, b)| a + b).collect(),
            self.hi.iter().zip(q).map(|(a, b)| a + b).collect(),
        )
    }

    /// Largest side extent `max_i (hi_i - lo_i)`; 0 for a point, -1 if empty.
    pub fn width(&self) -> i32 {
        if self.is_empty() {
            return -1;
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .max()
            .unwrap_or(0)
    }

    pub fn num_points(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .product()
    }

    /// Lattice points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<i32>> {
        let mut out = Vec::with_capacity(self.num_points());
        if self.is_empty() {
            return out;
        }
        let mut k = self.lo.clone();
        loop {
            out.push(k.clone());
            let mut i = k.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if k[i] < self.hi[i] {
                    k[i] += 1;
                    break;
                }
                k[i] = self.lo[i];
            }
        }
    }

    /// All sites over the box, ordered by `k` then component.
    pub fn sites(&self, n: usize) -> Vec<LatticeIndex> {
        let mut out = Vec::with_capacity(2 * n * self.num_points());
        for k in self.points() {
            for comp in 0..2 * n {
                out.push(LatticeIndex::from_component(comp, n, k.clone()));
            }
        }
        out
    }

    /// Sup-distance from `k` to the complement of the box (0 on the faces).
    pub fn depth(&self, k: &[i32]) -> i32 {
        k.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| (x - l).min(h - x))
            .min()
            .unwrap_or(0)
    }
}

/// Finitely supported map `𝓛 → ℂ`. Exact zeros are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierVector {
    n: usize,
    d: usize,
    entries: BTreeMap<LatticeIndex, Complex64>,
}

impl FourierVector {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            entries: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, m: &LatticeIndex) -> Complex64 {
        self.entries.get(m).copied().unwrap_or(ZERO)
    }

    pub fn set(&mut self, m: LatticeIndex, v: Complex64) {
        debug_assert_eq!(m.k.len(), self.d);
        if v == ZERO {
            self.entries.remove(&m);
        } else {
            self.entries.insert(m, v);
        }
    }

    pub fn add_at(&mut self, m: LatticeIndex, v: Complex64) {
        let cur = self.get(&m);
        self.set(m, cur + v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LatticeIndex, &Complex64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: Complex64, other: &FourierVector) -> FourierVector {
        let mut out = self.clone();
        for (m, v) in &other.entries {
            out.add_at(m.clone(), alpha * v);
        }
        out
    }

    pub fn add(&self, other: &FourierVector) -> FourierVector {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &FourierVector) -> FourierVector {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    pub fn scale(&self, alpha: Complex64) -> FourierVector {
        let mut out = FourierVector::zeros(self.n, self.d);
        for (m, v) in &self.entries {
            out.set(m.clone(), alpha * v);
        }
        out
    }

    pub fn norm_l2(&self) -> f64 {
        self.entries.values().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.entries.values().map(|v| v.norm()).sum()
    }

    pub fn norm_sup(&self) -> f64 {
        self.entries.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `sup_m |y(m)| e^{|k|^c}`.
    pub fn decay_norm(&self, c: f64) -> f64 {
        self.entries
            .iter()
            .map(|(m, v)| v.norm() * (sup_norm(&m.k) as f64).powf(c).exp())
            .fold(0.0, f64::max)
    }

    pub fn support_radius(&self) -> i32 {
        self.entries.keys().map(|m| sup_norm(&m.k)).max().unwrap_or(0)
    }

    /// `Γ_N y`.
    pub fn truncate(&self, radius: i32) -> FourierVector {
        let mut out = FourierVector::zeros(self.n, self.d);
        for (m, v) in &self.entries {
            if sup_norm(&m.k) <= radius {
                out.entries.insert(m.clone(), *v);
            }
        }
        out
    }

    /// The Fourier series of one component.
    pub fn component_series(&self, comp: usize) -> DenseSeries {
        let mut s = DenseSeries::zeros(self.d, 0);
        for (m, v) in &self.entries {
            if m.component(self.n) == comp {
                s.set(&m.k, *v);
            }
        }
        s
    }

    pub fn from_series(n: usize, series: &[DenseSeries]) -> FourierVector {
        assert_eq!(series.len(), 2 * n);
        let d = series[0].dim();
        let mut out = FourierVector::zeros(n, d);
        for (comp, s) in series.iter().enumerate() {
            for (k, v) in s.nonzero() {
                out.set(LatticeIndex::from_component(comp, n, k), v);
            }
        }
        out
    }

    pub fn values_on(&self, sites: &[LatticeIndex]) -> Vec<Complex64> {
        sites.iter().map(|m| self.get(m)).collect()
    }

    pub fn from_values(n: usize, d: usize, sites: &[LatticeIndex], values: &[Complex64]) -> Self {
        let mut out = FourierVector::zeros(n, d);
        for (m, v) in sites.iter().zip(values) {
            out.set(m.clone(), *v);
        }
        out
    }

    /// Line format: a `#` header with `n` and `d`, then `mu j k1 .. kd re im`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# qpdelay fourier-vector n={} d={}\n", self.n, self.d);
        for (m, v) in &self.entries {
            let _ = write!(s, "{} {}", m.mu, m.j);
            for k in &m.k {
                let _ = write!(s, " {k}");
            }
            let _ = writeln!(s, " {:.17e} {:.17e}", v.re, v.im);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<FourierVector> {
        let mut header: Option<(usize, usize)> = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut n = None;
                let mut d = None;
                for tok in rest.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("n=") {
                        n = v.parse().ok();
                    } else if let Some(v) = tok.strip_prefix("d=") {
                        d = v.parse().ok();
                    }
                }
                if let (Some(n), Some(d)) = (n, d) {
                    header = Some((n, d));
                }
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| QpError::Config(format!("line {}: {what}", lineno + 1));
            if toks.len() < 5 {
                return Err(bad("expected `mu j k.. re im`"));
            }
            let mu: i8 = toks[0].parse().map_err(|_| bad("bad mu"))?;
            if mu != 1 && mu != -1 {
                return Err(bad("mu must be 1 or -1"));
            }
            let j: usize = toks[1].parse().map_err(|_| bad("bad j"))?;
            if j == 0 {
                return Err(bad("j starts at 1"));
            }
            let nk = toks.len() - 4;
            let mut k = Vec::with_capacity(nk);
            for t in &toks[2..2 + nk] {
                k.push(t.parse::<i32>().map_err(|_| bad("bad k"))?);
            }
            let re: f64 = toks[2 + nk].parse().map_err(|_| bad("bad re"))?;
            let im: f64 = toks[3 + nk].parse().map_err(|_| bad("bad im"))?;
            rows.push((LatticeIndex::new(mu, j, k), Complex64::new(re, im)));
        }
        let (n, d) = match header {
            Some(h) => h,
            None => {
                let d = rows.first().map(|r| r.0.k.len()).unwrap_or(1);
                let n = rows.iter().map(|r| r.0.j).max().unwrap_or(1);
                (n, d)
            }
        };
        let mut out = FourierVector::zeros(n, d);
        for (m, v) in rows {
            if m.k.len() != d || m.j > n {
                return Err(QpError::Config(format!("entry {m:?} inconsistent with n={n} d={d}")));
            }
            out.add_at(m, v);
        }
        Ok(out)
    }
}

/// `D^σ(m) = (μ(⟨k,ω⟩+σ) + λ_j) e^{i(⟨k,ω⟩+σ)τ}`.
pub fn diag_entry(m: &LatticeIndex, omega: &[f64], sigma: f64, tau: f64, lambdas: &[f64]) -> Complex64 {
    let phase = dot(&m.k, omega) + sigma;
    let modulus = m.mu as f64 * phase + lambdas[m.j - 1];
    Complex64::from_polar(1.0, phase * tau) * modulus
}

pub fn assemble_diagonal(
    omega: &[f64],
    sigma: f64,
    tau: f64,
    lambdas: &[f64],
    radius: i32,
) -> BTreeMap<LatticeIndex, Complex64> {
    let n = lambdas.len();
    IndexBox::cube(omega.len(), radius)
        .sites(n)
        .into_iter()
        .map(|m| {
            let v = diag_entry(&m, omega, sigma, tau, lambdas);
            (m, v)
        })
        .collect()
}

/// The lattice form of the nonlinearity: one polynomial per component in
/// the `2n` variables `(y, ȳ)`, plus all first partial derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeNonlinearity {
    n: usize,
    polys: Vec<Polynomial>,
    derivs: Vec<Polynomial>,
}

impl LatticeNonlinearity {
    /// `f_diag[j]` is the polynomial for component `(-1, j+1)`; the `+1`
    /// block is its conjugate with the variable blocks swapped.
    pub fn from_diag(f_diag: &[Polynomial]) -> Self {
        let n = f_diag.len();
        let mut polys: Vec<Polynomial> = f_diag.to_vec();
        for p in f_diag {
            polys.push(p.conj_swapped(n));
        }
        let mut derivs = Vec::with_capacity(4 * n * n);
        for p in &polys {
            for b in 0..2 * n {
                derivs.push(p.derivative(b));
            }
        }
        Self { n, polys, derivs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn poly(&self, comp: usize) -> &Polynomial {
        &self.polys[comp]
    }

    pub fn derivative(&self, a: usize, b: usize) -> &Polynomial {
        &self.derivs[a * 2 * self.n + b]
    }

    pub fn degree(&self) -> u32 {
        self.polys.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.polys.iter().all(|p| p.is_zero())
    }
}

fn component_series_all(y: &FourierVector) -> Vec<DenseSeries> {
    (0..2 * y.n()).map(|c| y.component_series(c)).collect()
}

fn overflow(y: &FourierVector, deg: u32, cap: i32) -> QpError {
    QpError::DegreeOverflow {
        radius: y.support_radius() * deg as i32,
        cap,
    }
}

/// `W[y]`: the Fourier coefficients of the lattice polynomials along `y`,
/// by exact convolution.
pub fn evaluate_w(y: &FourierVector, nl: &LatticeNonlinearity, cap: i32) -> Result<FourierVector> {
    let z = component_series_all(y);
    let mut out = Vec::with_capacity(2 * nl.n);
    for p in &nl.polys {
        out.push(p.eval_series(&z, cap).ok_or_else(|| overflow(y, nl.degree(), cap))?);
    }
    Ok(FourierVector::from_series(nl.n, &out))
}

/// `F[y] = D y + ε W[y] + ε g`, with `g(m) = e^{i⟨k,ω⟩τ} ĝ(m)`.
pub fn evaluate_f(y: &FourierVector, omega: &[f64], spec: &DiagonalizedSpec) -> Result<FourierVector> {
    let eps = Complex64::new(spec.epsilon, 0.0);
    let w = evaluate_w(y, &spec.nonlinearity, spec.degree_cap)?;
    let mut out = w.scale(eps);
    for (m, v) in y.iter() {
        out.add_at(m.clone(), diag_entry(m, omega, 0.0, spec.tau, &spec.lambdas) * v);
    }
    for (m, v) in spec.forcing.iter() {
        let phase = Complex64::from_polar(1.0, dot(&m.k, omega) * spec.tau);
        out.add_at(m.clone(), eps * phase * v);
    }
    Ok(out)
}

/// `T^σ = D^σ + εS` with `S` stored as one Toeplitz kernel per pair of
/// components, so translation invariance of `S` holds by construction.
#[derive(Clone, Debug)]
pub struct LatticeOperator {
    pub n: usize,
    pub d: usize,
    pub lambdas: Vec<f64>,
    pub omega: Vec<f64>,
    pub tau: f64,
    pub epsilon: f64,
    /// Truncation radius the operator was assembled for.
    pub range: i32,
    kernel: Vec<DenseSeries>,
}

impl LatticeOperator {
    /// `ε = 0` or `S = 0`: only the diagonal.
    pub fn diagonal(lambdas: &[f64], omega: &[f64], tau: f64, epsilon: f64, range: i32) -> Self {
        let n = lambdas.len();
        let d = omega.len();
        Self {
            n,
            d,
            lambdas: lambdas.to_vec(),
            omega: omega.to_vec(),
            tau,
            epsilon,
            range,
            kernel: vec![DenseSeries::zeros(d, 0); 4 * n * n],
        }
    }

    /// Builds an operator from explicit kernels, indexed `a * 2n + b`.
    pub fn with_kernel(
        lambdas: &[f64],
        omega: &[f64],
        tau: f64,
        epsilon: f64,
        range: i32,
        kernel: Vec<DenseSeries>,
    ) -> Self {
        let mut op = Self::diagonal(lambdas, omega, tau, epsilon, range);
        assert_eq!(kernel.len(), 4 * op.n * op.n);
        op.kernel = kernel;
        op
    }

    pub fn kernel(&self, a: usize, b: usize) -> &DenseSeries {
        &self.kernel[a * 2 * self.n + b]
    }

    pub fn kernel_radius(&self) -> i32 {
        self.kernel.iter().map(|s| s.support_radius()).max().unwrap_or(0)
    }

    /// Smallest `C` with `|S(m,m')| ≤ C e^{-|k-k'|^c}` over all entries.
    pub fn kernel_decay_constant(&self, c: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for s in &self.kernel {
            for (q, v) in s.nonzero() {
                worst = worst.max(v.norm() * (sup_norm(&q) as f64).powf(c).exp());
            }
        }
        worst
    }

    /// Schur-test bound on the operator norm of `S` (row sums of the
    /// largest kernel entries, maximized over rows).
    pub fn kernel_norm_bound(&self) -> f64 {
        let two_n = 2 * self.n;
        let mut best: f64 = 0.0;
        for a in 0..two_n {
            let row: f64 = (0..two_n)
                .map(|b| self.kernel(a, b).nonzero().iter().map(|(_, v)| v.norm()).sum::<f64>())
                .sum();
            best = best.max(row);
        }
        for b in 0..two_n {
            let col: f64 = (0..two_n)
                .map(|a| self.kernel(a, b).nonzero().iter().map(|(_, v)| v.norm()).sum::<f64>())
                .sum();
            best = best.max(col);
        }
        best
    }

    /// Copy with kernel entries of `|εS| ≤ abs_tol` dropped and each kernel
    /// shrunk to its remaining support.
    pub fn pruned(&self, abs_tol: f64) -> Self {
        let eps = self.epsilon.abs();
        let kernel = self
            .kernel
            .iter()
            .map(|s| {
                let keep: Vec<(Vec<i32>, Complex64)> =
                    s.nonzero().into_iter().filter(|(_, v)| v.norm() * eps > abs_tol).collect();
                let r = keep.iter().map(|(q, _)| sup_norm(q)).max().unwrap_or(0);
                let mut out = DenseSeries::zeros(self.d, r);
                for (q, v) in keep {
                    out.set(&q, v);
                }
                out
            })
            .collect();
        Self { kernel, ..self.clone() }
    }

    pub fn diag(&self, m: &LatticeIndex, sigma: f64) -> Complex64 {
        diag_entry(m, &self.omega, sigma, self.tau, &self.lambdas)
    }

    /// `S(m, m')`.
    pub fn s_entry(&self, m: &LatticeIndex, m2: &LatticeIndex) -> Complex64 {
        let q: Vec<i32> = m.k.iter().zip(&m2.k).map(|(a, b)| a - b).collect();
        self.kernel(m.component(self.n), m2.component(self.n)).get(&q)
    }

    /// `T^σ(m, m')`.
    pub fn entry(&self, m: &LatticeIndex, m2: &LatticeIndex, sigma: f64) -> Complex64 {
        let off = self.s_entry(m, m2) * self.epsilon;
        if m == m2 {
            self.diag(m, sigma) + off
        } else {
            off
        }
    }

    /// Dense restriction `T^σ|_{sites}`.
    pub fn dense(&self, sites: &[LatticeIndex], sigma: f64) -> DMatrix<Complex64> {
        DMatrix::from_fn(sites.len(), sites.len(), |r, c| self.entry(&sites[r], &sites[c], sigma))
    }

    /// Dense coupling block `T^σ(rows, cols)` between disjoint site sets.
    pub fn block(&self, rows: &[LatticeIndex], cols: &[LatticeIndex], sigma: f64) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.entry(&rows[r], &cols[c], sigma))
    }

    /// `S x` on the full lattice.
    pub fn apply_s(&self, x: &FourierVector) -> FourierVector {
        let z = component_series_all(x);
        let two_n = 2 * self.n;
        let mut out = Vec::with_capacity(two_n);
        for a in 0..two_n {
            let mut acc = DenseSeries::zeros(self.d, 0);
            for (b, zb) in z.iter().enumerate() {
                let k = self.kernel(a, b);
                if k.is_zero() || zb.is_zero() {
                    continue;
                }
                let prod = k.convolve(zb, i32::MAX / 4).expect("unbounded cap");
                acc.add_scaled(&prod, Complex64::new(1.0, 0.0));
            }
            out.push(acc);
        }
        FourierVector::from_series(self.n, &out)
    }

    /// `T^σ x` on the full lattice.
    pub fn apply(&self, x: &FourierVector, sigma: f64) -> FourierVector {
        let mut out = self.apply_s(x).scale(Complex64::new(self.epsilon, 0.0));
        for (m, v) in x.iter() {
            out.add_at(m.clone(), self.diag(m, sigma) * v);
        }
        out
    }
}

/// `S = W'[y]`: kernel `(a, b, q)` is the `q`-th Fourier coefficient of
/// `∂_b P_a` along `y`.
pub fn assemble_linearization(
    y: &FourierVector,
    spec: &DiagonalizedSpec,
    omega: &[f64],
    range: i32,
) -> Result<LatticeOperator> {
    let nl = &spec.nonlinearity;
    let z = component_series_all(y);
    let two_n = 2 * nl.n;
    let mut kernel = Vec::with_capacity(two_n * two_n);
    for a in 0..two_n {
        for b in 0..two_n {
            let s = nl
                .derivative(a, b)
                .eval_series(&z, spec.degree_cap)
                .ok_or_else(|| overflow(y, nl.degree().saturating_sub(1), spec.degree_cap))?;
            kernel.push(s);
        }
    }
    Ok(LatticeOperator::with_kernel(
        &spec.lambdas,
        omega,
        spec.tau,
        spec.epsilon,
        range,
        kernel,
    ))
}

/// Largest entrywise gap in `T^σ|_{q+Λ}(k+q, k'+q) = T^{σ+⟨q,ω⟩}|_Λ(k, k')`.
pub fn check_translation(op: &LatticeOperator, q: &[i32], lambda: &IndexBox, sigma: f64) -> Result<f64> {
    if !lambda.contains(&vec![0; op.d]) {
        return Err(QpError::PreconditionViolated("Λ must contain 0".into()));
    }
    let shifted = lambda.translate(q);
    let range = IndexBox::cube(op.d, op.range);
    if !range.contains_box(&shifted) || !range.contains_box(lambda) {
        return Err(QpError::OutOfRange(format!(
            "q + Λ = {shifted:?} leaves [-{}, {}]^d",
            op.range, op.range
        )));
    }
    let sites = lambda.sites(op.n);
    let sigma_q = sigma + dot(q, &op.omega);
    let mut worst: f64 = 0.0;
    for m in &sites {
        let mq = m.shifted(q);
        for m2 in &sites {
            let a = op.entry(&mq, &m2.shifted(q), sigma);
            let b = op.entry(m, m2, sigma_q);
            worst = worst.max((a - b).norm());
        }
    }
    Ok(worst)
}
