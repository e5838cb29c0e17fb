//! Melnikov checks, singular sites and the nested singular clusters.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::lattice::{dot, sup_norm, IndexBox, LatticeIndex, LatticeOperator};
use crate::multiscale::{dense_inverse, norm_bound};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovViolation {
    pub k: Vec<i32>,
    pub mu: i8,
    pub j: usize,
    pub mu2: i8,
    pub j2: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovReport {
    pub gamma: f64,
    pub k_max: i32,
    pub violations: Vec<MelnikovViolation>,
    pub passed: bool,
    /// `min |⟨k,ω⟩ + μλ_j + μ'λ_j'|` over the scan.
    pub min_gap: f64,
    /// `min |⟨k,ω⟩ + μλ_j + μ'λ_j'| · |k|^{10d}` over the scan.
    pub min_scaled_gap: f64,
}

/// Exhaustive scan of `|⟨k,ω⟩ + μλ_j + μ'λ_j'| ≥ γ/|k|^{10d}` over
/// `0 < |k|∞ ≤ k_max` and all signs and index pairs.
pub fn check_melnikov(omega: &[f64], lambdas: &[f64], gamma: f64, k_max: i32) -> MelnikovReport {
    let d = omega.len();
    let n = lambdas.len();
    let points: Vec<Vec<i32>> = IndexBox::cube(d, k_max)
        .points()
        .into_iter()
        .filter(|k| sup_norm(k) > 0)
        .collect();
    let per_k: Vec<(Vec<MelnikovViolation>, f64, f64)> = points
        .par_iter()
        .map(|k| {
            let kw = dot(k, omega);
            let weight = (sup_norm(k) as f64).powi(10 * d as i32);
            let bound = gamma / weight;
            let mut v = Vec::new();
            let mut min_gap = f64::INFINITY;
            for mu in [-1i8, 1] {
                for j in 1..=n {
                    for mu2 in [-1i8, 1] {
                        for j2 in 1..=n {
                            let value = kw + mu as f64 * lambdas[j - 1] + mu2 as f64 * lambdas[j2 - 1];
                            min_gap = min_gap.min(value.abs());
                            if value.abs() < bound {
                                v.push(MelnikovViolation {
                                    k: k.clone(),
                                    mu,
                                    j,
                                    mu2,
                                    j2,
                                    value,
                                });
                            }
                        }
                    }
                }
            }
            (v, min_gap, min_gap * weight)
        })
        .collect();
    let mut violations = Vec::new();
    let mut min_gap = f64::INFINITY;
    let mut min_scaled_gap = f64::INFINITY;
    for (v, g, s) in per_k {
        violations.extend(v);
        min_gap = min_gap.min(g);
        min_scaled_gap = min_scaled_gap.min(s);
    }
    MelnikovReport {
        gamma,
        k_max,
        passed: violations.is_empty(),
        violations,
        min_gap,
        min_scaled_gap,
    }
}

/// Sites of `box` with `|D^σ(m)| < ε₁`, in lexicographic order.
pub fn find_singular_sites(
    diagonal: &BTreeMap<LatticeIndex, Complex64>,
    epsilon1: f64,
    region: &IndexBox,
) -> Vec<LatticeIndex> {
    diagonal
        .iter()
        .filter(|(m, v)| region.contains(&m.k) && v.norm() < epsilon1)
        .map(|(m, _)| m.clone())
        .collect()
}

/// Same scan evaluated directly from an operator.
pub fn singular_sites_of(op: &LatticeOperator, sigma: f64, epsilon1: f64, region: &IndexBox) -> Vec<LatticeIndex> {
    let mut out: Vec<LatticeIndex> = region
        .sites(op.n)
        .into_iter()
        .filter(|m| op.diag(m, sigma).norm() < epsilon1)
        .collect();
    out.sort();
    out
}

/// `N_s = N₀^{C₃^s}` while below `big_n`, then `big_n` itself.
pub fn scale_schedule(n0: i32, c3: f64, big_n: i32) -> Vec<i32> {
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        let ns = (n0 as f64).powf(c3.powi(s)).round() as i64;
        if ns >= big_n as i64 || (s > 0 && ns <= *out.last().unwrap() as i64) {
            break;
        }
        out.push(ns as i32);
        s += 1;
    }
    out.push(big_n);
    out
}

/// `ρ_N = (log N / log N₀)^{-1/log₁₀ C₃}`; equals `10^{-s}` on the schedule.
pub fn rho(n: i32, n0: i32, c3: f64) -> f64 {
    if n <= n0 {
        return 1.0;
    }
    ((n as f64).ln() / (n0 as f64).ln()).powf(-1.0 / c3.log10())
}

/// `Φ(N) = N^{C₁}`.
pub fn phi(n: i32, c1: f64) -> f64 {
    (n.max(1) as f64).powf(c1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    pub n0: i32,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl SeparationParams {
    /// `(ρ_N^{-1} log N)^{C₂}`.
    pub fn decay_threshold(&self, n: i32) -> f64 {
        let r = rho(n, self.n0, self.c3);
        ((n.max(2) as f64).ln() / r).powf(self.c2)
    }
}

/// Whether a computed local inverse over `sites` at scale `n_prime` has
/// `‖M‖ ≤ Φ(N')` and `|M(m,m')| ≤ e^{-ρ|k-k'|^c/10}` past the threshold.
pub fn satisfies_separation(
    inverse: &DMatrix<Complex64>,
    sites: &[LatticeIndex],
    n_prime: i32,
    params: &SeparationParams,
) -> bool {
    if norm_bound(inverse) > phi(n_prime, params.c1) {
        return false;
    }
    let r = rho(n_prime, params.n0, params.c3);
    let threshold = params.decay_threshold(n_prime);
    for (i, a) in sites.iter().enumerate() {
        for (j, b) in sites.iter().enumerate() {
            let dist: i32 = a.k.iter().zip(&b.k).map(|(x, y)| (x - y).abs()).max().unwrap_or(0);
            let dist = dist as f64;
            if dist >= threshold && inverse[(i, j)].norm() > (-r * dist.powf(params.c) / 10.0).exp() {
                return false;
            }
        }
    }
    true
}

/// Fail predicate backed by the dense inverse: `true` when the local
/// inverse over `region` fails the separation property at `scale`.
pub fn dense_fail_predicate<'a>(
    op: &'a LatticeOperator,
    sigma: f64,
    params: &'a SeparationParams,
) -> impl Fn(&IndexBox, i32) -> bool + Sync + 'a {
    move |region: &IndexBox, scale: i32| {
        let sites = region.sites(op.n);
        match dense_inverse(&op.dense(&sites, sigma)) {
            Ok(inv) => !satisfies_separation(&inv, &sites, scale, params),
            Err(_) => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub d: usize,
    pub big_n: i32,
    /// `N₀ < N₁ < … < N_r = N`.
    pub scales: Vec<i32>,
    /// Hull of failing centers per scale `s < r`, before enlargement.
    pub failing: Vec<Option<IndexBox>>,
    /// `Λ_s` after enlargement; `None` below the lowest failing scale.
    pub lambdas_nested: Vec<Option<IndexBox>>,
    pub omega2: Option<LatticeIndex>,
    pub rho: Vec<f64>,
}

impl ClusterDecomposition {
    pub fn r(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn lowest_level(&self) -> Option<usize> {
        self.lambdas_nested.iter().position(|l| l.is_some())
    }

    /// Shell index of `k`: the smallest `s` with `k ∈ Λ_s`, else `r`.
    pub fn shell_of(&self, k: &[i32]) -> usize {
        for (s, l) in self.lambdas_nested.iter().enumerate() {
            if let Some(b) = l {
                if b.contains(k) {
                    return s;
                }
            }
        }
        self.r()
    }

    /// The shells `Ω_{1,s}`, `s = 0..=r`; together with `Ω₂` they partition
    /// `{±1} × {1..n} × [-N,N]^d`.
    pub fn shells(&self, n: usize) -> Vec<Vec<LatticeIndex>> {
        let mut out = vec![Vec::new(); self.r() + 1];
        for m in IndexBox::cube(self.d, self.big_n).sites(n) {
            if Some(&m) == self.omega2.as_ref() {
                continue;
            }
            let s = self.shell_of(&m.k);
            out[s].push(m);
        }
        out
    }

    /// Re-checks nesting, enlargement and the size bounds.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let big = IndexBox::cube(self.d, self.big_n);
        let mut prev: Option<&IndexBox> = None;
        for (s, l) in self.lambdas_nested.iter().enumerate() {
            let Some(b) = l else {
                if prev.is_some() {
                    return Err(format!("gap in chain at level {s}"));
                }
                continue;
            };
            if !big.contains_box(b) {
                return Err(format!("Λ_{s} leaves the box"));
            }
            if s >= 1 && b.width() > 12 * self.scales[s] {
                return Err(format!("Λ_{s} wider than 12 N_{s}"));
            }
            if let Some(p) = prev {
                let need = p.expand(2 * self.scales[s]).intersect(&big);
                if !b.contains_box(&need) {
                    return Err(format!("Λ_{s} misses the enlargement of Λ_{}", s - 1));
                }
            }
            prev = Some(b);
        }
        if let (Some(m), Some(Some(l0))) = (&self.omega2, self.lambdas_nested.first()) {
            let need = IndexBox::centered(&m.k, self.scales[0]).intersect(&big);
            if !l0.contains_box(&need) {
                return Err("Λ₀ does not contain k* ⊕ N₀".into());
            }
        }
        Ok(())
    }
}

fn failing_centers<F>(region: &IndexBox, big: &IndexBox, scale: i32, fail: &F) -> Vec<Vec<i32>>
where
    F: Fn(&IndexBox, i32) -> bool + Sync,
{
    let stride = (scale / 2).max(1);
    let coarse: Vec<Vec<i32>> = region
        .points()
        .into_iter()
        .filter(|k| k.iter().zip(&region.lo).all(|(x, l)| (x - l) % stride == 0) || k == &region.hi)
        .collect();
    let test = |k: &Vec<i32>| fail(&IndexBox::centered(k, scale).intersect(big), scale);
    let coarse_fail: Vec<Vec<i32>> = coarse.par_iter().filter(|k| test(k)).cloned().collect();
    if coarse_fail.is_empty() {
        return Vec::new();
    }
    let mut candidates: Vec<Vec<i32>> = Vec::new();
    for c in &coarse_fail {
        for k in IndexBox::centered(c, stride).intersect(region).points() {
            candidates.push(k);
        }
    }
    candidates.sort();
    candidates.dedup();
    candidates.par_iter().filter(|k| test(k)).cloned().collect()
}

fn hull_of(points: &[Vec<i32>]) -> IndexBox {
    let d = points[0].len();
    let mut lo = points[0].clone();
    let mut hi = points[0].clone();
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    IndexBox::new(lo, hi)
}

/// Builds `Λ₀ ⊂ … ⊂ Λ_{r-1}` top-down from the failing centers of each
/// scale, then enlarges bottom-up and locates `Ω₂` inside `Λ₀`.
pub fn build_clusters<F>(
    op: &LatticeOperator,
    sigma: f64,
    schedule: &[i32],
    fail: F,
    epsilon1: f64,
    n0: i32,
    c3: f64,
) -> Result<ClusterDecomposition>
where
    F: Fn(&IndexBox, i32) -> bool + Sync,
{
    if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QpError::PreconditionViolated("schedule must be strictly increasing".into()));
    }
    let d = op.d;
    let r = schedule.len() - 1;
    let big_n = schedule[r];
    let big = IndexBox::cube(d, big_n);
    let mut failing: Vec<Option<IndexBox>> = vec![None; r];
    let mut region = big.clone();
    for s in (0..r).rev() {
        let ns = schedule[s];
        let centers = failing_centers(&region, &big, ns, &fail);
        if centers.is_empty() {
            break;
        }
        let hull = hull_of(&centers);
        if hull.width() > 8 * ns {
            return Err(QpError::ClusterTooWide {
                width: hull.width(),
                limit: 8 * ns,
            });
        }
        failing[s] = Some(hull.clone());
        region = hull;
    }
    let mut lambdas: Vec<Option<IndexBox>> = vec![None; r];
    let mut omega2 = None;
    if let Some(lowest) = failing.iter().position(|f| f.is_some()) {
        let mut base = failing[lowest].clone().expect("lowest level present");
        if lowest == 0 {
            let sites = singular_sites_of(op, sigma, epsilon1, &base);
            if sites.len() > 1 {
                return Err(QpError::MultipleSingularSites { count: sites.len() });
            }
            if let Some(m) = sites.into_iter().next() {
                base = base.hull(&IndexBox::centered(&m.k, schedule[0]).intersect(&big));
                omega2 = Some(m);
            }
        }
        lambdas[lowest] = Some(base);
        for s in lowest + 1..r {
            let prev = lambdas[s - 1].clone().expect("chain is contiguous");
            let enlarged = prev.expand(2 * schedule[s]).intersect(&big);
            let l = match &failing[s] {
                Some(f) => f.hull(&enlarged),
                None => enlarged,
            };
            if l.width() > 12 * schedule[s] {
                return Err(QpError::ClusterTooWide {
                    width: l.width(),
                    limit: 12 * schedule[s],
                });
            }
            lambdas[s] = Some(l);
        }
    }
    let rho = schedule.iter().map(|&ns| rho(ns, n0, c3)).collect();
    Ok(ClusterDecomposition {
        d,
        big_n,
        scales: schedule.to_vec(),
        failing,
        lambdas_nested: lambdas,
        omega2,
        rho,
    })
}
