//! Inversion of `T^σ` restricted to boxes: Neumann series on regular
//! blocks, the Schur complement around a single singular site, and pasting
//! local inverses into a global one through the pointwise resolvent identity.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::excision::{fit_polynomial, PolynomialConstraint};
use crate::lattice::{dot, FourierVector, IndexBox, LatticeIndex, LatticeOperator};
use crate::smalldivisor::{phi, ClusterDecomposition};

type C64 = Complex64;

/// `sqrt(‖M‖₁ ‖M‖∞)`, an upper bound on the spectral norm.
pub fn norm_bound(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let rows = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let cols = (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    (rows * cols).sqrt()
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// LU inverse; the oracle every other route is checked against.
pub fn dense_inverse(t: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if t.nrows() != t.ncols() {
        return Err(QpError::DimensionMismatch(format!("{}x{} is not square", t.nrows(), t.ncols())));
    }
    let inv = t.clone().lu().try_inverse().ok_or(QpError::SingularMatrix)?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QpError::SingularMatrix);
    }
    Ok(inv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannStats {
    /// `‖offdiag‖ / min|diag|`.
    pub factor: f64,
    pub terms: usize,
    pub tail: f64,
}

const NEUMANN_TOL: f64 = 1e-14;
const NEUMANN_MAX_TERMS: usize = 200;

/// `T⁻¹ = Σ_l (−D⁻¹E)^l D⁻¹` for `T = D + E`, summed by doubling. Requires
/// every `|D(m)| ≥ floor` and `‖E‖/floor < 1/4`.
pub fn neumann_inverse(t: &DMatrix<C64>, floor: f64) -> Result<(DMatrix<C64>, NeumannStats)> {
    let n = t.nrows();
    if n != t.ncols() {
        return Err(QpError::DimensionMismatch(format!("{}x{} is not square", n, t.ncols())));
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), NeumannStats { factor: 0.0, terms: 0, tail: 0.0 }));
    }
    let diag: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    if diag.iter().any(|d| d.norm() < floor * (1.0 - 1e-12)) {
        return Err(QpError::PreconditionViolated(format!("diagonal entry below floor {floor:.3e}")));
    }
    let mut off = t.clone();
    for i in 0..n {
        off[(i, i)] = C64::new(0.0, 0.0);
    }
    let factor = norm_bound(&off) / floor;
    if factor >= 0.25 {
        return Err(QpError::NotDiagonallyDominant { factor });
    }
    // P = −D⁻¹E, S_m = I + P + … + P^{m−1}; S_{2m} = S_m + P^m S_m.
    let mut p = off;
    for i in 0..n {
        let s = -diag[i].inv();
        for j in 0..n {
            p[(i, j)] *= s;
        }
    }
    let mut sum = DMatrix::<C64>::identity(n, n) + &p;
    let mut terms = 2;
    let mut tail = max_abs(&p);
    loop {
        if tail <= NEUMANN_TOL * max_abs(&sum).max(1.0) || tail == 0.0 {
            break;
        }
        if terms >= NEUMANN_MAX_TERMS {
            return Err(QpError::NoConvergence { tail });
        }
        p = &p * &p;
        sum = &sum + &p * &sum;
        terms *= 2;
        tail = max_abs(&p);
    }
    for j in 0..n {
        let s = diag[j].inv();
        for i in 0..n {
            sum[(i, j)] *= s;
        }
    }
    Ok((sum, NeumannStats { factor, terms, tail }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InverseMethod {
    Neumann,
    /// Neumann precondition failed; LU on a block without singular sites.
    DenseFallback,
    Dense,
    Schur,
    Paste,
}

/// Neumann when the block is diagonally dominant, LU otherwise.
pub fn regular_inverse(t: &DMatrix<C64>) -> Result<(DMatrix<C64>, InverseMethod)> {
    let floor = (0..t.nrows()).map(|i| t[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    match neumann_inverse(t, floor) {
        Ok((m, _)) => Ok((m, InverseMethod::Neumann)),
        Err(QpError::NotDiagonallyDominant { .. }) | Err(QpError::NoConvergence { .. }) => {
            Ok((dense_inverse(t)?, InverseMethod::DenseFallback))
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchurData {
    pub h: C64,
    pub sigma1: f64,
    /// `h − T(m*, m*)`, the part of `h` coming from `Q G₁ P`.
    pub correction: C64,
    pub norm_bound: f64,
    /// `‖G₁‖ + (1 + ‖G₁‖‖P‖)(1 + ‖Q‖‖G₁‖)/|h|`, as the geometric mean of
    /// its 1-norm and ∞-norm versions.
    pub block_bound: f64,
}

/// Inverse of `t` from `g1 = (t restricted to all indices but star)⁻¹` and
/// the scalar `h = t(*,*) − Q g1 P`.
pub fn schur_inverse(
    t: &DMatrix<C64>,
    star: usize,
    g1: &DMatrix<C64>,
    sigma1: f64,
    threshold: f64,
) -> Result<(DMatrix<C64>, SchurData)> {
    let n = t.nrows();
    if star >= n || g1.nrows() != n - 1 || g1.ncols() != n - 1 {
        return Err(QpError::DimensionMismatch(format!(
            "star {star} with {}x{} and g1 {}x{}",
            n,
            t.ncols(),
            g1.nrows(),
            g1.ncols()
        )));
    }
    let rest: Vec<usize> = (0..n).filter(|&i| i != star).collect();
    let p = DVector::from_iterator(n - 1, rest.iter().map(|&i| t[(i, star)]));
    let q = DVector::from_iterator(n - 1, rest.iter().map(|&j| t[(star, j)]));
    let g1p = g1 * &p;
    let qg1 = g1.transpose() * &q;
    let correction = -(q.transpose() * &g1p)[(0, 0)];
    let h = t[(star, star)] + correction;
    if h.norm() < threshold {
        return Err(QpError::SchurPivotTiny { h: h.norm(), threshold });
    }
    let hinv = h.inv();
    let mut out = DMatrix::zeros(n, n);
    for (a, &i) in rest.iter().enumerate() {
        for (b, &j) in rest.iter().enumerate() {
            out[(i, j)] = g1[(a, b)] + g1p[a] * qg1[b] * hinv;
        }
        out[(i, star)] = -g1p[a] * hinv;
        out[(star, i)] = -qg1[a] * hinv;
    }
    out[(star, star)] = hinv;
    // The block formula bounds the 1- and ∞-norms separately.
    let col_norm = |m: &DMatrix<C64>| {
        (0..m.ncols()).map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    };
    let row_norm = |m: &DMatrix<C64>| {
        (0..m.nrows()).map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    };
    let p_sum: f64 = p.iter().map(|z| z.norm()).sum();
    let p_max = p.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let q_sum: f64 = q.iter().map(|z| z.norm()).sum();
    let q_max = q.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let bound = |g: f64, pn: f64, qn: f64| g + (1.0 + g * pn) * (1.0 + qn * g) / h.norm();
    let b1 = bound(col_norm(g1), p_sum, q_max);
    let binf = bound(row_norm(g1), p_max, q_sum);
    let data = SchurData {
        h,
        sigma1,
        correction,
        norm_bound: norm_bound(&out),
        block_bound: (b1 * binf).sqrt(),
    };
    Ok((out, data))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalInverse {
    pub sites: Vec<LatticeIndex>,
    pub matrix: DMatrix<C64>,
    pub norm_bound: f64,
    pub method: InverseMethod,
}

impl LocalInverse {
    pub fn new(sites: Vec<LatticeIndex>, matrix: DMatrix<C64>, method: InverseMethod) -> Self {
        let nb = norm_bound(&matrix);
        Self { sites, matrix, norm_bound: nb, method }
    }
}

/// `‖T⁻¹ − (R − R(T − T₁ − T₂)T⁻¹)‖_max` with `R = T₁⁻¹ ⊕ T₂⁻¹` for the
/// split given by `in_first`.
pub fn resolvent_residual(
    t: &DMatrix<C64>,
    in_first: &[bool],
    inv1: &DMatrix<C64>,
    inv2: &DMatrix<C64>,
    inv_full: &DMatrix<C64>,
) -> Result<f64> {
    let n = t.nrows();
    let i1: Vec<usize> = (0..n).filter(|&i| in_first[i]).collect();
    let i2: Vec<usize> = (0..n).filter(|&i| !in_first[i]).collect();
    if inv1.nrows() != i1.len() || inv2.nrows() != i2.len() {
        return Err(QpError::DimensionMismatch("split sizes".into()));
    }
    let mut r = DMatrix::zeros(n, n);
    for (a, &i) in i1.iter().enumerate() {
        for (b, &j) in i1.iter().enumerate() {
            r[(i, j)] = inv1[(a, b)];
        }
    }
    for (a, &i) in i2.iter().enumerate() {
        for (b, &j) in i2.iter().enumerate() {
            r[(i, j)] = inv2[(a, b)];
        }
    }
    let mut coupling = t.clone();
    for i in 0..n {
        for j in 0..n {
            if in_first[i] == in_first[j] {
                coupling[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    let rhs = &r - &r * coupling * inv_full;
    Ok(max_abs(&(inv_full - rhs)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub passed: bool,
    /// Largest `|M(m,m')| e^{ρ|k−k'|^c}` over pairs past the threshold.
    pub worst_ratio: f64,
    pub worst_distance: i32,
}

/// Checks `|M(m,m')| ≤ e^{−ρ|k−k'|^c}` whenever `|k−k'| ≥ threshold`.
pub fn certify_decay(inv: &LocalInverse, rho: f64, c: f64, threshold: f64) -> DecayCertificate {
    let mut worst_ratio: f64 = 0.0;
    let mut worst_distance = 0;
    for (i, a) in inv.sites.iter().enumerate() {
        for (j, b) in inv.sites.iter().enumerate() {
            let dist = a.k.iter().zip(&b.k).map(|(x, y)| (x - y).abs()).max().unwrap_or(0);
            if (dist as f64) < threshold {
                continue;
            }
            let ratio = inv.matrix[(i, j)].norm() * (rho * (dist as f64).powf(c)).exp();
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst_distance = dist;
            }
        }
    }
    DecayCertificate { passed: worst_ratio <= 1.0, worst_ratio, worst_distance }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub bbox: IndexBox,
    pub inverse: LocalInverse,
}

/// Depth of `k` in `patch`, where faces lying on the boundary of `region`
/// do not count.
fn clipped_depth(patch: &IndexBox, region: &IndexBox, k: &[i32]) -> i32 {
    let mut depth = i32::MAX;
    for i in 0..k.len() {
        if patch.lo[i] > region.lo[i] {
            depth = depth.min(k[i] - patch.lo[i]);
        }
        if patch.hi[i] < region.hi[i] {
            depth = depth.min(patch.hi[i] - k[i]);
        }
    }
    depth
}

/// For each site, the patch containing it most deeply. Fails with
/// `CoveringGap` when the best depth is below `min_depth`.
pub fn assign_patches(
    sites: &[LatticeIndex],
    patches: &[Patch],
    region: &IndexBox,
    min_depth: i32,
) -> Result<Vec<usize>> {
    let lookups: Vec<HashMap<&LatticeIndex, usize>> = patches
        .iter()
        .map(|p| p.inverse.sites.iter().enumerate().map(|(i, m)| (m, i)).collect())
        .collect();
    sites
        .iter()
        .map(|m| {
            let mut best: Option<(i32, usize)> = None;
            for (a, p) in patches.iter().enumerate() {
                if !p.bbox.contains(&m.k) || !lookups[a].contains_key(m) {
                    continue;
                }
                let dep = clipped_depth(&p.bbox, region, &m.k);
                if best.is_none_or(|(d, _)| dep > d) {
                    best = Some((dep, a));
                }
            }
            match best {
                Some((dep, a)) if dep >= min_depth => Ok(a),
                _ => Err(QpError::CoveringGap(m.k.clone())),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteReport {
    pub sweeps: usize,
    pub increment: f64,
    /// Largest entry of any patch inverse.
    pub patch_bound: f64,
    /// Largest entry of the result, or the solution sup norm in vector mode.
    pub result_bound: f64,
    /// `‖T x − b‖∞ / ‖b‖∞` in vector mode.
    pub residual: f64,
}

/// Options of the pasting fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Minimal depth of each site in its assigned patch.
    pub min_depth: i32,
}

impl Default for PasteOptions {
    fn default() -> Self {
        Self { tol: 1e-15, max_sweeps: 400, min_depth: 0 }
    }
}

struct PatchCoupling {
    /// Positions in the global site list of the rows assigned to this patch.
    rows: Vec<usize>,
    /// Row positions inside the patch for `rows`.
    local_rows: Vec<usize>,
    /// `B(m, m'') = −Σ_{m'∈α} G_α(m,m') T(m',m'')` for `m''` outside `α`.
    outside: Vec<usize>,
    b: DMatrix<C64>,
    /// Patch positions in the global site list.
    patch_pos: Vec<usize>,
}

fn couplings(
    op: &LatticeOperator,
    sigma: f64,
    sites: &[LatticeIndex],
    patches: &[Patch],
    assignment: &[usize],
) -> Result<Vec<PatchCoupling>> {
    let index: HashMap<&LatticeIndex, usize> = sites.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let reach = op.kernel_radius();
    patches
        .par_iter()
        .enumerate()
        .map(|(a, p)| {
            let patch_pos: Vec<usize> = p
                .inverse
                .sites
                .iter()
                .map(|m| {
                    index
                        .get(m)
                        .copied()
                        .ok_or_else(|| QpError::DimensionMismatch("patch site outside region".into()))
                })
                .collect::<Result<_>>()?;
            let local: HashMap<usize, usize> = patch_pos.iter().enumerate().map(|(i, &g)| (g, i)).collect();
            let rows: Vec<usize> = (0..sites.len()).filter(|&i| assignment[i] == a).collect();
            let local_rows: Vec<usize> = rows.iter().map(|g| local[g]).collect();
            let near = p.bbox.expand(reach);
            let outside: Vec<usize> = (0..sites.len())
                .filter(|g| !local.contains_key(g) && near.contains(&sites[*g].k))
                .collect();
            let out_sites: Vec<LatticeIndex> = outside.iter().map(|&g| sites[g].clone()).collect();
            let t_cross = op.block(&p.inverse.sites, &out_sites, sigma);
            let g_rows = DMatrix::from_fn(rows.len(), patch_pos.len(), |r, c| p.inverse.matrix[(local_rows[r], c)]);
            let b = -(g_rows * t_cross);
            Ok(PatchCoupling { rows, local_rows, outside, b, patch_pos })
        })
        .collect()
}

/// Dense pasting: the fixed point `G = A + BG` of the pointwise resolvent
/// identity, with `A(m,·) = G_{α(m)}(m,·)`. Certifies `max|G| ≤ 2 max|G_α|`.
pub fn paste_inverse(
    op: &LatticeOperator,
    sigma: f64,
    sites: &[LatticeIndex],
    region: &IndexBox,
    patches: &[Patch],
    opts: &PasteOptions,
) -> Result<(DMatrix<C64>, PasteReport)> {
    let assignment = assign_patches(sites, patches, region, opts.min_depth)?;
    let cps = couplings(op, sigma, sites, patches, &assignment)?;
    let n = sites.len();
    let mut a_mat = DMatrix::<C64>::zeros(n, n);
    for (cp, p) in cps.iter().zip(patches) {
        for (&g, &l) in cp.rows.iter().zip(&cp.local_rows) {
            for (c, &gc) in cp.patch_pos.iter().enumerate() {
                a_mat[(g, gc)] = p.inverse.matrix[(l, c)];
            }
        }
    }
    let patch_bound = patches.iter().map(|p| max_abs(&p.inverse.matrix)).fold(0.0, f64::max);
    let mut g = a_mat.clone();
    let mut sweeps = 0;
    let mut increment = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut next = a_mat.clone();
        for cp in &cps {
            if cp.outside.is_empty() {
                continue;
            }
            let g_out = DMatrix::from_fn(cp.outside.len(), n, |r, c| g[(cp.outside[r], c)]);
            let upd = &cp.b * g_out;
            for (r, &row) in cp.rows.iter().enumerate() {
                for c in 0..n {
                    next[(row, c)] += upd[(r, c)];
                }
            }
        }
        increment = max_abs(&(&next - &g));
        g = next;
        let scale = max_abs(&g);
        if !scale.is_finite() {
            return Err(QpError::BoundBlown("pasting fixed point diverged".into()));
        }
        if increment <= opts.tol * scale.max(1e-300) {
            break;
        }
    }
    let result_bound = max_abs(&g);
    if increment > opts.tol.max(1e-12) * result_bound.max(1e-300) {
        return Err(QpError::NoConvergence { tail: increment });
    }
    if result_bound > 2.0 * patch_bound {
        return Err(QpError::BoundBlown(format!(
            "max entry {result_bound:.3e} exceeds 2 × {patch_bound:.3e}"
        )));
    }
    Ok((g, PasteReport { sweeps, increment, patch_bound, result_bound, residual: 0.0 }))
}

/// Vector pasting: solves `T x = b` on `sites` by iterating
/// `x(m) = [G_α (b − T(α, αᶜ) x)](m)` with `α` the patch assigned to `m`.
pub fn paste_solve(
    op: &LatticeOperator,
    sigma: f64,
    sites: &[LatticeIndex],
    patches: &[Patch],
    assignment: &[usize],
    rhs: &[C64],
    opts: &PasteOptions,
) -> Result<(Vec<C64>, PasteReport)> {
    let cps = couplings(op, sigma, sites, patches, assignment)?;
    let n = sites.len();
    let mut base = vec![C64::new(0.0, 0.0); n];
    for (cp, p) in cps.iter().zip(patches) {
        let b_loc = DVector::from_iterator(cp.patch_pos.len(), cp.patch_pos.iter().map(|&g| rhs[g]));
        let x_loc = &p.inverse.matrix * b_loc;
        for (&g, &l) in cp.rows.iter().zip(&cp.local_rows) {
            base[g] = x_loc[l];
        }
    }
    let patch_bound = patches.iter().map(|p| max_abs(&p.inverse.matrix)).fold(0.0, f64::max);
    let sup = |v: &[C64]| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut x = base.clone();
    let mut sweeps = 0;
    let mut increment = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut next = base.clone();
        for cp in &cps {
            if cp.outside.is_empty() {
                continue;
            }
            let x_out = DVector::from_iterator(cp.outside.len(), cp.outside.iter().map(|&g| x[g]));
            let upd = &cp.b * x_out;
            for (r, &row) in cp.rows.iter().enumerate() {
                next[row] += upd[r];
            }
        }
        increment = next.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        x = next;
        let scale = sup(&x);
        if !scale.is_finite() {
            return Err(QpError::BoundBlown("pasting fixed point diverged".into()));
        }
        if increment <= opts.tol * scale.max(1e-300) {
            break;
        }
    }
    let result_bound = sup(&x);
    if increment > opts.tol.max(1e-12) * result_bound.max(1e-300) {
        return Err(QpError::NoConvergence { tail: increment });
    }
    let tx = apply_on(op, sigma, sites, &x);
    let bn = sup(rhs).max(1e-300);
    let residual = tx.iter().zip(rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / bn;
    Ok((x, PasteReport { sweeps, increment, patch_bound, result_bound, residual }))
}

/// `(T|_{sites} x)` for a vector given on `sites`.
pub fn apply_on(op: &LatticeOperator, sigma: f64, sites: &[LatticeIndex], x: &[C64]) -> Vec<C64> {
    let fv = FourierVector::from_values(op.n, op.d, sites, x);
    op.apply(&fv, sigma).values_on(sites)
}

/// Parameters of box inversion and the covering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseParams {
    pub epsilon1: f64,
    pub c1: f64,
    pub eta: f64,
    pub n0: i32,
    pub c5: f64,
    /// Samples of `h` on the `σ₁` window.
    pub fit_samples: usize,
    pub paste: PasteOptions,
}

impl InverseParams {
    /// `η Φ(N)^{−1/2}`.
    pub fn threshold(&self, scale: i32) -> f64 {
        self.eta * phi(scale, self.c1).powf(-0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularRecord {
    pub site: LatticeIndex,
    pub sigma1: f64,
    pub schur: SchurData,
    pub constraint: PolynomialConstraint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxInverse {
    pub inverse: LocalInverse,
    pub singular: Option<SingularRecord>,
}

/// `σ₁ = σ + ⟨k*,ω⟩ + μ*λ_{j*}`, so that `D^σ(m*) = μ* σ₁ e^{i(⟨k*,ω⟩+σ)τ}`.
pub fn sigma1_of(op: &LatticeOperator, m: &LatticeIndex, sigma: f64) -> f64 {
    sigma + dot(&m.k, &op.omega) + m.mu as f64 * op.lambdas[m.j - 1]
}

/// `T^{σ'}` on `sites` from `T^σ`: only the diagonal depends on `σ`.
fn with_diagonal(t: &DMatrix<C64>, op: &LatticeOperator, sites: &[LatticeIndex], sigma: f64) -> DMatrix<C64> {
    let mut out = t.clone();
    for (i, m) in sites.iter().enumerate() {
        out[(i, i)] = op.diag(m, sigma) + op.epsilon * op.s_entry(m, m);
    }
    out
}

/// `h(σ')` divided by the phase of `m*` and multiplied by `μ*`, so that it
/// is close to `σ₁' + a₀`.
fn normalized_h(
    op: &LatticeOperator,
    t: &DMatrix<C64>,
    sites: &[LatticeIndex],
    star: usize,
    sigma: f64,
) -> Result<C64> {
    let ts = with_diagonal(t, op, sites, sigma);
    let rest: Vec<usize> = (0..sites.len()).filter(|&i| i != star).collect();
    let t1 = ts.select_rows(&rest).select_columns(&rest);
    let (g1, _) = regular_inverse(&t1)?;
    let p = DVector::from_iterator(rest.len(), rest.iter().map(|&i| ts[(i, star)]));
    let q = DVector::from_iterator(rest.len(), rest.iter().map(|&j| ts[(star, j)]));
    let h = ts[(star, star)] - (q.transpose() * (g1 * p))[(0, 0)];
    let m = &sites[star];
    let phase = C64::from_polar(1.0, (dot(&m.k, &op.omega) + sigma) * op.tau);
    Ok(h / phase * m.mu as f64)
}

/// Inverts `T^σ` on the sites of `region` at scale `scale`. Blocks without
/// singular sites go through Neumann (LU if not dominant); a single singular
/// site goes through the Schur complement together with a fitted constraint.
pub fn invert_box(
    op: &LatticeOperator,
    sigma: f64,
    region: &IndexBox,
    scale: i32,
    params: &InverseParams,
) -> Result<BoxInverse> {
    let sites = region.sites(op.n);
    let t = op.dense(&sites, sigma);
    let singular: Vec<usize> = (0..sites.len())
        .filter(|&i| op.diag(&sites[i], sigma).norm() < params.epsilon1)
        .collect();
    match singular.len() {
        0 => {
            let (m, method) = regular_inverse(&t)?;
            Ok(BoxInverse { inverse: LocalInverse::new(sites, m, method), singular: None })
        }
        1 => {
            let star = singular[0];
            let threshold = params.threshold(scale);
            let m_star = sites[star].clone();
            let s1 = sigma1_of(op, &m_star, sigma);
            let ns = params.fit_samples.max(5);
            let half = params.epsilon1 / 2.0;
            let samples: Vec<(f64, C64)> = (0..ns)
                .map(|i| {
                    let ds = -half + 2.0 * half * i as f64 / (ns - 1) as f64;
                    normalized_h(op, &t, &sites, star, sigma + ds).map(|h| (s1 + ds, h))
                })
                .collect::<Result<_>>()?;
            let constraint = fit_polynomial(&samples, m_star.clone(), scale, threshold)?;
            let p = constraint.p(s1);
            if p.abs() <= threshold {
                return Err(QpError::Excised(format!(
                    "|p(σ₁)| = {:.3e} ≤ {threshold:.3e} at site {:?}",
                    p.abs(),
                    m_star
                )));
            }
            let rest: Vec<usize> = (0..sites.len()).filter(|&i| i != star).collect();
            let t1 = t.select_rows(&rest).select_columns(&rest);
            let (g1, _) = regular_inverse(&t1)?;
            let (inv, schur) = schur_inverse(&t, star, &g1, s1, threshold)?;
            Ok(BoxInverse {
                inverse: LocalInverse::new(sites, inv, InverseMethod::Schur),
                singular: Some(SingularRecord { site: m_star, sigma1: s1, schur, constraint }),
            })
        }
        count => Err(QpError::MultipleSingularSites { count }),
    }
}

/// `K = max(N₀, ⌊N^{1/C₅}⌋)`.
pub fn covering_scale(big_n: i32, n0: i32, c5: f64) -> i32 {
    let k = ((big_n.max(1) as f64).powf(1.0 / c5) + 1e-9).floor() as i32;
    k.max(n0).max(1)
}

/// The central patch `[−10K, 10K]^d ∩ box` plus radius-`2K` patches centred
/// on `Kℤ^d` points with `|c| > 5K`, all clipped to `[−N, N]^d`.
pub fn covering_patch_boxes(d: usize, big_n: i32, k: i32) -> Vec<IndexBox> {
    let big = IndexBox::cube(d, big_n);
    let central = IndexBox::cube(d, (10 * k).min(big_n));
    let mut out = vec![central.clone()];
    if central == big {
        return out;
    }
    let reach = big_n / k + 1;
    for c in IndexBox::cube(d, reach).points() {
        let center: Vec<i32> = c.iter().map(|x| x * k).collect();
        let norm = center.iter().map(|x| x.abs()).max().unwrap_or(0);
        if norm <= 5 * k {
            continue;
        }
        let b = IndexBox::centered(&center, 2 * k).intersect(&big);
        if b.is_empty() || central.contains_box(&b) {
            continue;
        }
        out.push(b);
    }
    out
}

/// Global inverse on `[−N, N]^d` assembled from a covering by patches.
#[derive(Clone, Debug)]
pub struct CoveringInverse {
    pub big_n: i32,
    pub k: i32,
    pub sigma: f64,
    pub region: IndexBox,
    pub sites: Vec<LatticeIndex>,
    pub patches: Vec<Patch>,
    pub assignment: Vec<usize>,
    pub singular: Vec<SingularRecord>,
}

pub fn build_covering(op: &LatticeOperator, sigma: f64, big_n: i32, params: &InverseParams) -> Result<CoveringInverse> {
    let d = op.d;
    let k = covering_scale(big_n, params.n0, params.c5);
    let region = IndexBox::cube(d, big_n);
    let boxes = covering_patch_boxes(d, big_n, k);
    let inverted: Vec<(IndexBox, BoxInverse)> = boxes
        .into_par_iter()
        .map(|b| {
            let scale = (b.width() / 2).max(1);
            invert_box(op, sigma, &b, scale, params).map(|inv| (b, inv))
        })
        .collect::<Result<_>>()?;
    let mut singular: Vec<SingularRecord> = Vec::new();
    let mut patches = Vec::with_capacity(inverted.len());
    for (b, inv) in inverted {
        if let Some(s) = inv.singular {
            if !singular.iter().any(|x| x.site == s.site) {
                singular.push(s);
            }
        }
        patches.push(Patch { bbox: b, inverse: inv.inverse });
    }
    let sites = region.sites(op.n);
    let min_depth = if patches.len() == 1 { 0 } else { k };
    let assignment = assign_patches(&sites, &patches, &region, min_depth)?;
    Ok(CoveringInverse { big_n, k, sigma, region, sites, patches, assignment, singular })
}

impl CoveringInverse {
    /// Solves `T_N x = b` for `b` supported in the box.
    pub fn solve(&self, op: &LatticeOperator, rhs: &FourierVector, opts: &PasteOptions) -> Result<(FourierVector, PasteReport)> {
        if rhs.support_radius() > self.big_n {
            return Err(QpError::OutOfRange(format!(
                "right-hand side radius {} exceeds N = {}",
                rhs.support_radius(),
                self.big_n
            )));
        }
        let b = rhs.values_on(&self.sites);
        let (x, report) = if self.patches.len() == 1 {
            let v = &self.patches[0].inverse.matrix * DVector::from_vec(b.clone());
            let x: Vec<C64> = v.iter().copied().collect();
            let tx = apply_on(op, self.sigma, &self.sites, &x);
            let bn = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
            let residual = tx.iter().zip(&b).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max) / bn;
            let pb = max_abs(&self.patches[0].inverse.matrix);
            let rb = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            (x, PasteReport { sweeps: 0, increment: 0.0, patch_bound: pb, result_bound: rb, residual })
        } else {
            paste_solve(op, self.sigma, &self.sites, &self.patches, &self.assignment, &b, opts)?
        };
        Ok((FourierVector::from_values(op.n, op.d, &self.sites, &x), report))
    }

    /// The full inverse matrix over `self.sites`, by dense pasting.
    pub fn dense(&self, op: &LatticeOperator, opts: &PasteOptions) -> Result<(DMatrix<C64>, PasteReport)> {
        if self.patches.len() == 1 {
            let m = self.patches[0].inverse.matrix.clone();
            let b = max_abs(&m);
            return Ok((m, PasteReport { sweeps: 0, increment: 0.0, patch_bound: b, result_bound: b, residual: 0.0 }));
        }
        let mut o = opts.clone();
        o.min_depth = self.k;
        paste_inverse(op, self.sigma, &self.sites, &self.region, &self.patches, &o)
    }
}

#[derive(Clone, Debug)]
pub struct ClusterInverse {
    pub sites: Vec<LatticeIndex>,
    pub inverse: LocalInverse,
    pub schur: Option<SchurData>,
    pub report: PasteReport,
}

/// Inverse on `[−N, N]^d` following a cluster decomposition: patches over
/// each shell `Ω_{1,s}` pasted on `Ω₁`, then the Schur complement at `Ω₂`.
pub fn cluster_inverse(
    op: &LatticeOperator,
    sigma: f64,
    dec: &ClusterDecomposition,
    params: &InverseParams,
) -> Result<ClusterInverse> {
    let big = IndexBox::cube(op.d, dec.big_n);
    let all_sites = big.sites(op.n);
    let omega1: Vec<LatticeIndex> = all_sites
        .iter()
        .filter(|m| Some(*m) != dec.omega2.as_ref())
        .cloned()
        .collect();
    let mut boxes: Vec<(IndexBox, i32)> = Vec::new();
    let r = dec.r();
    if let Some(l0) = dec.lambdas_nested.first().cloned().flatten() {
        boxes.push((l0, dec.scales[0]));
    }
    for s in 1..=r {
        let radius = dec.scales[s - 1];
        let stride = (radius / 2).max(1);
        let mut centers: Vec<Vec<i32>> = Vec::new();
        for k in big.points() {
            if dec.shell_of(&k) != s {
                continue;
            }
            let snapped: Vec<i32> = k.iter().map(|x| (*x as f64 / stride as f64).round() as i32 * stride).collect();
            let c = if big.contains(&snapped) && dec.shell_of(&snapped) == s { snapped } else { k };
            centers.push(c);
        }
        centers.sort();
        centers.dedup();
        for c in centers {
            boxes.push((IndexBox::centered(&c, radius).intersect(&big), radius));
        }
    }
    let omega2 = dec.omega2.clone();
    let patches: Vec<Patch> = boxes
        .into_par_iter()
        .map(|(b, _scale)| {
            let sites: Vec<LatticeIndex> = b.sites(op.n).into_iter().filter(|m| Some(m) != omega2.as_ref()).collect();
            let t = op.dense(&sites, sigma);
            let (m, method) = regular_inverse(&t)?;
            Ok(Patch { bbox: b, inverse: LocalInverse::new(sites, m, method) })
        })
        .collect::<Result<_>>()?;
    let (g1, report) = if patches.len() == 1 && patches[0].inverse.sites.len() == omega1.len() {
        let m = patches[0].inverse.matrix.clone();
        let b = max_abs(&m);
        let rep = PasteReport { sweeps: 0, increment: 0.0, patch_bound: b, result_bound: b, residual: 0.0 };
        (m, rep)
    } else {
        let mut opts = params.paste.clone();
        opts.min_depth = 0;
        paste_inverse(op, sigma, &omega1, &big, &patches, &opts)?
    };
    match &dec.omega2 {
        None => Ok(ClusterInverse {
            sites: omega1.clone(),
            inverse: LocalInverse::new(omega1, g1, InverseMethod::Paste),
            schur: None,
            report,
        }),
        Some(m_star) => {
            let t = op.dense(&all_sites, sigma);
            let star = all_sites.iter().position(|m| m == m_star).expect("Ω₂ lies in the box");
            let s1 = sigma1_of(op, m_star, sigma);
            let (inv, schur) = schur_inverse(&t, star, &g1, s1, params.threshold(dec.big_n))?;
            Ok(ClusterInverse {
                sites: all_sites.clone(),
                inverse: LocalInverse::new(all_sites, inv, InverseMethod::Schur),
                schur: Some(schur),
                report,
            })
        }
    }
}

/// `(T_old + ΔT)⁻¹ = Σ_s (−G ΔT)^s G` for `G = T_old⁻¹`, provided
/// `‖ΔT‖ ‖G‖ < 1/2`.
pub fn refresh_inverse(old: &LocalInverse, t_new: &DMatrix<C64>, t_old: &DMatrix<C64>) -> Result<LocalInverse> {
    let delta = t_new - t_old;
    let factor = norm_bound(&delta) * norm_bound(&old.matrix);
    if factor >= 0.5 {
        return Err(QpError::PerturbationTooLarge { factor });
    }
    if factor == 0.0 {
        return Ok(old.clone());
    }
    let n = old.matrix.nrows();
    let p = -(&old.matrix * &delta);
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = DMatrix::<C64>::identity(n, n);
    for _ in 0..NEUMANN_MAX_TERMS {
        term = &p * &term;
        sum += &term;
        if max_abs(&term) <= NEUMANN_TOL * max_abs(&sum) {
            let m = sum * &old.matrix;
            return Ok(LocalInverse::new(old.sites.clone(), m, old.method));
        }
    }
    Err(QpError::NoConvergence { tail: max_abs(&term) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::DenseSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rel_err(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        max_abs(&(a - b)) / max_abs(b)
    }

    /// Rotation with a nearest-neighbour kernel on every component pair.
    fn banded_op(omega: f64, eps: f64, range: i32) -> LatticeOperator {
        let mut kernel = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                let mut s = DenseSeries::zeros(1, 1);
                s.set(&[0], c(0.3, 0.1 * (a + b) as f64));
                s.set(&[1], c(0.2, -0.05));
                s.set(&[-1], c(0.2, 0.05));
                kernel.push(s);
            }
        }
        LatticeOperator::with_kernel(&[1.0], &[omega], 1.0, eps, range, kernel)
    }

    fn params() -> InverseParams {
        InverseParams {
            epsilon1: 0.01,
            c1: 8.0,
            eta: 0.1,
            n0: 4,
            c5: 3.0,
            fit_samples: 7,
            paste: PasteOptions::default(),
        }
    }

    #[test]
    fn neumann_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let t = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c(2.0 + i as f64, 0.5)
            } else {
                c(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02))
            }
        });
        let floor = (0..n).map(|i| t[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        let (inv, stats) = neumann_inverse(&t, floor).unwrap();
        assert!(stats.factor < 0.25);
        assert!(rel_err(&inv, &dense_inverse(&t).unwrap()) < 1e-13);
    }

    #[test]
    fn neumann_rejects_weak_diagonal() {
        let t = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(1.0, 0.0)]);
        assert!(matches!(neumann_inverse(&t, 1.0), Err(QpError::NotDiagonallyDominant { .. })));
        let (_, m) = regular_inverse(&t).unwrap();
        assert_eq!(m, InverseMethod::DenseFallback);
    }

    #[test]
    fn schur_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let mut t = DMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)));
        for i in 0..n {
            t[(i, i)] += c(3.0, 0.0);
        }
        t[(4, 4)] = c(0.001, 0.0);
        let rest: Vec<usize> = (0..n).filter(|&i| i != 4).collect();
        let g1 = dense_inverse(&t.select_rows(&rest).select_columns(&rest)).unwrap();
        let (inv, data) = schur_inverse(&t, 4, &g1, 0.0, 1e-8).unwrap();
        assert!(rel_err(&inv, &dense_inverse(&t).unwrap()) < 1e-12);
        assert!(data.norm_bound <= data.block_bound * (1.0 + 1e-12));
        assert!(matches!(
            schur_inverse(&t, 4, &g1, 0.0, 1e3),
            Err(QpError::SchurPivotTiny { .. })
        ));
    }

    #[test]
    fn resolvent_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let t = DMatrix::from_fn(n, n, |i, j| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) + if i == j { c(4.0, 0.0) } else { c(0.0, 0.0) }
        });
        let split: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let i1: Vec<usize> = (0..n).filter(|&i| split[i]).collect();
        let i2: Vec<usize> = (0..n).filter(|&i| !split[i]).collect();
        let inv1 = dense_inverse(&t.select_rows(&i1).select_columns(&i1)).unwrap();
        let inv2 = dense_inverse(&t.select_rows(&i2).select_columns(&i2)).unwrap();
        let full = dense_inverse(&t).unwrap();
        assert!(resolvent_residual(&t, &split, &inv1, &inv2, &full).unwrap() < 1e-13);
    }

    #[test]
    fn covering_reaches_every_site() {
        for big_n in [8, 30, 64, 100] {
            let k = covering_scale(big_n, 4, 3.0);
            let boxes = covering_patch_boxes(1, big_n, k);
            let region = IndexBox::cube(1, big_n);
            for x in -big_n..=big_n {
                let best = boxes.iter().filter(|b| b.contains(&[x])).map(|b| clipped_depth(b, &region, &[x])).max();
                assert!(best.unwrap() >= k, "N={big_n} x={x}");
            }
        }
        assert_eq!(covering_scale(64, 4, 3.0), 4);
        assert_eq!(covering_scale(1000, 4, 3.0), 10);
    }

    #[test]
    fn covering_solve_matches_lu() {
        let op = banded_op(1.37, 0.05, 64);
        let cov = build_covering(&op, 0.0, 60, &params()).unwrap();
        assert!(cov.patches.len() > 1);
        let mut rhs = FourierVector::zeros(1, 1);
        for (i, m) in cov.sites.iter().enumerate() {
            rhs.set(m.clone(), c((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
        }
        let (x, rep) = cov.solve(&op, &rhs, &PasteOptions::default()).unwrap();
        let oracle = dense_inverse(&op.dense(&cov.sites, 0.0)).unwrap() * DVector::from_vec(rhs.values_on(&cov.sites));
        let got = DVector::from_vec(x.values_on(&cov.sites));
        assert!((got - &oracle).camax() / oracle.camax() < 1e-10);
        assert!(rep.residual < 1e-12);
        let (g, _) = cov.dense(&op, &PasteOptions::default()).unwrap();
        assert!(rel_err(&g, &dense_inverse(&op.dense(&cov.sites, 0.0)).unwrap()) < 1e-10);
    }

    #[test]
    fn singular_box_goes_through_schur() {
        // Only D(+1, 1, −1) = σ − ω + 1 ≈ 1e-3 is small; its conjugate partner
        // D(−1, 1, 1) = 1 − ω − σ is not.
        let op = banded_op(1.02, 0.001, 8);
        let sigma = 0.021;
        let out = invert_box(&op, sigma, &IndexBox::cube(1, 4), 4, &params()).unwrap();
        let rec = out.singular.expect("one singular site");
        assert_eq!((rec.site.mu, rec.site.k.clone()), (1, vec![-1]));
        let sites = IndexBox::cube(1, 4).sites(1);
        let oracle = dense_inverse(&op.dense(&sites, sigma)).unwrap();
        assert!(rel_err(&out.inverse.matrix, &oracle) < 1e-10);
        assert!(rec.constraint.fit_residual < 1e-6);
        // The fitted root matches the correction to the divisor.
        assert!((rec.constraint.alpha - c(1.0, 0.0)).norm() < 0.1);
    }

    #[test]
    fn refresh_agrees_with_direct() {
        let op = banded_op(1.37, 0.05, 8);
        let sites = IndexBox::cube(1, 6).sites(1);
        let t_old = op.dense(&sites, 0.0);
        let old = LocalInverse::new(sites.clone(), dense_inverse(&t_old).unwrap(), InverseMethod::Dense);
        let t_new = op.dense(&sites, 0.01);
        let fresh = refresh_inverse(&old, &t_new, &t_old).unwrap();
        assert!(rel_err(&fresh.matrix, &dense_inverse(&t_new).unwrap()) < 1e-12);
        assert_eq!(refresh_inverse(&old, &t_old, &t_old).unwrap(), old);
        assert!(matches!(
            refresh_inverse(&old, &op.dense(&sites, 0.5), &t_old),
            Err(QpError::PerturbationTooLarge { .. })
        ));
    }

    #[test]
    fn decay_certificate_on_diagonal() {
        let sites = IndexBox::cube(1, 3).sites(1);
        let m = DMatrix::from_fn(sites.len(), sites.len(), |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let inv = LocalInverse::new(sites, m, InverseMethod::Dense);
        assert!(certify_decay(&inv, 1.0, 0.5, 1.0).passed);
    }
}
