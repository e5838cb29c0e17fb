//! Checks that do not go through the solver: the delay equation residual in
//! the time domain, conjugate symmetry of lattice vectors and the measured
//! order of convergence.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::lattice::{dot, evaluate_f, sup_norm, FourierVector, LatticeIndex};
use crate::model::{reconstruct_solution, DiagonalizedSpec, ProblemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub grid: Vec<f64>,
    pub sup_residual: f64,
    pub per_component: Vec<f64>,
    /// `‖V‖∞ ‖F[y]‖₁` over the modes outside the support of `y`: the part
    /// of the residual no coefficient of `y` can act on.
    pub quadrature_tail: f64,
    /// `‖F[y]‖₂` on the lattice.
    pub lattice_residual: f64,
}

/// 512 uniform points on `[0, 6π/λ₁]` and 64 seeded random points, sorted.
pub fn default_grid(lambda1: f64, seed: u64) -> Vec<f64> {
    let t_max = 6.0 * std::f64::consts::PI / lambda1;
    let mut grid: Vec<f64> = (0..512).map(|i| t_max * i as f64 / 511.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.extend((0..64).map(|_| rng.gen::<f64>() * t_max));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// `ż(t)` for each component, differentiated termwise.
fn eval_derivative(y: &FourierVector, omega: &[f64], t: f64) -> Vec<Complex64> {
    let mut z = vec![Complex64::new(0.0, 0.0); 2 * y.n()];
    for (m, v) in y.iter() {
        let kw = dot(&m.k, omega);
        z[m.component(y.n())] += Complex64::new(0.0, kw) * v * Complex64::from_polar(1.0, kw * t);
    }
    z
}

/// `r(t) = ẋ(t) − A x(t) − ε f(x(t−τ)) − ε g(ωt)` on `grid`, with `x = V z`
/// and every term evaluated from the Fourier sums.
pub fn dde_residual(
    y: &FourierVector,
    omega: &[f64],
    spec: &ProblemSpec,
    ds: &DiagonalizedSpec,
    grid: &[f64],
) -> Result<ResidualReport> {
    if grid.is_empty() {
        return Err(QpError::PreconditionViolated("empty time grid".into()));
    }
    let n2 = 2 * spec.n;
    let delayed: Vec<f64> = grid.iter().map(|t| t - spec.tau).collect();
    let x = reconstruct_solution(y, omega, &ds.v, grid)?;
    let x_del = reconstruct_solution(y, omega, &ds.v, &delayed)?;
    let a = spec.a_matrix();
    let eps = spec.epsilon;
    let rows: Vec<Vec<f64>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let zdot = DVector::from_vec(eval_derivative(y, omega, t));
            let xdot = &ds.v * zdot;
            let xd: Vec<Complex64> = x_del[i].iter().map(|v| Complex64::new(*v, 0.0)).collect();
            let f = spec.eval_f(&xd);
            let theta: Vec<f64> = omega.iter().map(|w| w * t).collect();
            let g = spec.eval_g(&theta);
            (0..n2)
                .map(|r| {
                    let ax: f64 = (0..n2).map(|c| a[(r, c)] * x[i][c]).sum();
                    (xdot[r] - ax - eps * f[r] - eps * g[r]).norm()
                })
                .collect()
        })
        .collect();
    let mut per_component = vec![0.0f64; n2];
    for row in &rows {
        for (p, v) in per_component.iter_mut().zip(row) {
            *p = p.max(*v);
        }
    }
    let f = evaluate_f(y, omega, ds)?;
    let radius = y.support_radius();
    let outside: f64 = f
        .iter()
        .filter(|(m, _)| y.is_empty() || sup_norm(&m.k) > radius)
        .map(|(_, v)| v.norm())
        .sum();
    let v_norm = (0..n2)
        .map(|r| ds.v.row(r).iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(ResidualReport {
        grid: grid.to_vec(),
        sup_residual: per_component.iter().copied().fold(0.0, f64::max),
        per_component,
        quadrature_tail: v_norm * outside,
        lattice_residual: f.norm_l2(),
    })
}

/// `max_m |y(+1,j,k) − conj(y(−1,j,−k))|`.
pub fn conjugate_symmetry_defect(y: &FourierVector) -> f64 {
    let mut worst: f64 = 0.0;
    for (m, v) in y.iter() {
        let neg: Vec<i32> = m.k.iter().map(|x| -x).collect();
        let partner = y.get(&LatticeIndex::new(-m.mu, m.j, neg));
        worst = worst.max((v - partner.conj()).norm());
    }
    worst
}

/// Least-squares slope of `log r_{j+1}` against `log r_j` over the leading
/// strictly decreasing positive run of `history`.
pub fn convergence_order(history: &[f64]) -> Result<f64> {
    let mut run = 0;
    while run < history.len()
        && history[run] > 0.0
        && history[run].is_finite()
        && (run == 0 || history[run] < history[run - 1])
    {
        run += 1;
    }
    if run < 4 {
        return Err(QpError::TooShortHistory { len: run });
    }
    let logs: Vec<f64> = history[..run].iter().map(|r| r.ln()).collect();
    let xs = &logs[..run - 1];
    let ys = &logs[1..];
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_constructed_sequences() {
        let quad: Vec<f64> = (0..6).map(|j| 0.5f64.powi(1 << j)).collect();
        assert!((convergence_order(&quad).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<f64> = (1..8).map(|j| 0.5f64.powi(j)).collect();
        assert!((convergence_order(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(convergence_order(&[1.0, 0.5, 0.1]), Err(QpError::TooShortHistory { len: 3 }));
        assert_eq!(convergence_order(&[1.0, 0.5, 0.6, 0.1]), Err(QpError::TooShortHistory { len: 2 }));
    }

    #[test]
    fn symmetry_defect_examples() {
        let mut y = FourierVector::zeros(1, 1);
        assert_eq!(conjugate_symmetry_defect(&y), 0.0);
        y.set(LatticeIndex::new(-1, 1, vec![2]), Complex64::new(0.3, 0.4));
        y.set(LatticeIndex::new(1, 1, vec![-2]), Complex64::new(0.3, -0.4));
        assert!(conjugate_symmetry_defect(&y) < 1e-15);
        y.add_at(LatticeIndex::new(1, 1, vec![-2]), Complex64::new(1e-3, 0.0));
        assert!((conjugate_symmetry_defect(&y) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn grid_covers_three_periods() {
        let g = default_grid(1.0, 1);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.last().unwrap() - g[0] >= 6.0 * std::f64::consts::PI - 1e-12);
        assert_eq!(default_grid(1.0, 1), g);
    }
}
