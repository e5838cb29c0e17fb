//! Newton iteration with scale-dependent truncation: stage start, the
//! truncated Newton step, the error split and the solve driver.

use log::{info, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::excision::{apply_excision, sigma1_scan};
use crate::lattice::{assemble_linearization, evaluate_f, FourierVector, LatticeOperator};
use crate::model::{diagonalize, DiagonalizedSpec, ProblemSpec};
use crate::multiscale::{build_covering, InverseMethod, InverseParams, PasteOptions, PasteReport, SingularRecord};
use crate::smalldivisor::{check_melnikov, MelnikovReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Desk,
    ProofFidelity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mode: Mode,
    pub m: u32,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Singular-site threshold; derived from the spectrum when absent.
    pub epsilon1: Option<f64>,
    pub n0: i32,
    pub j_max: u32,
    pub tol_residual: f64,
    /// `κ` in `(M^{j₀})^c ≥ κ log(1/ε)`.
    pub kappa: f64,
    /// Desk-mode cap on `j₀`.
    pub j0_cap: u32,
    /// Radius of the Melnikov scan at solve start.
    pub melnikov_k_max: i32,
    pub fit_samples: usize,
    pub paste_tol: f64,
    pub paste_max_sweeps: usize,
    /// Kernel entries of the linearization below this are dropped.
    pub kernel_prune: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainViolation {
    pub name: String,
    pub detail: String,
}

impl SolverConfig {
    pub fn desk() -> Self {
        Self {
            mode: Mode::Desk,
            m: 2,
            c: 0.5,
            c1: 8.0,
            c2: 5.0,
            c3: 2.0,
            c4: 1.0,
            c5: 3.0,
            c6: 2.0,
            gamma: 1e-3,
            eta: 0.1,
            epsilon1: None,
            n0: 4,
            j_max: 12,
            tol_residual: 1e-11,
            kappa: 1.0,
            j0_cap: 4,
            melnikov_k_max: 32,
            fit_samples: 7,
            paste_tol: 1e-15,
            paste_max_sweeps: 400,
            kernel_prune: 1e-20,
        }
    }

    /// The constant set satisfying the full chain, with `C₁ = 10⁴ d`.
    pub fn proof_fidelity(d: usize) -> Self {
        Self {
            mode: Mode::ProofFidelity,
            m: 100,
            c: 1e-3,
            c1: 1e4 * d as f64,
            c2: 4e3,
            c3: 100.0,
            c5: 10.0,
            c6: 5.0,
            ..Self::desk()
        }
    }

    /// The constraint chain on `(M, c, C₁, C₂, C₃, C₅, C₆)`; empty when
    /// every link holds.
    pub fn chain_violations(&self, d: usize) -> Vec<ChainViolation> {
        let mut out = Vec::new();
        let mut bad = |name: &str, detail: String| out.push(ChainViolation { name: name.into(), detail });
        let dd = d as f64;
        let mc = (self.m as f64).powf(self.c);
        let mc_tol = match self.mode {
            Mode::ProofFidelity => 0.05,
            Mode::Desk => 0.5,
        };
        if (mc - 1.0).abs() > mc_tol {
            bad("M^c", format!("M^c = {mc:.4} is not within {mc_tol} of 1"));
        }
        if self.c <= 2.0 / self.c2 {
            bad("cons0", format!("c = {} ≤ 2/C₂ = {}", self.c, 2.0 / self.c2));
        }
        let lhs1 = (1.0 - self.c) * self.c5;
        if !(lhs1 > self.c6 && self.c6 > 1.0) {
            bad("cons1", format!("(1−c)C₅ = {lhs1}, C₆ = {}", self.c6));
        }
        let lhs2 = 1.0 - 12.0 / self.c3;
        let rhs2 = (2.0 * (dd + 4.0) * self.c5 + 2.0 * (dd + 5.0)) / self.c1;
        if lhs2 <= rhs2 {
            bad("cons2", format!("1 − 12/C₃ = {lhs2} ≤ {rhs2}"));
        }
        let lhs3 = self.c1 - 2.0 * dd * self.c3 - 24.0 * self.c1 / self.c3;
        if lhs3 <= 15.0 {
            bad("cons3", format!("C₁ − 2dC₃ − 24C₁/C₃ = {lhs3} ≤ 15"));
        }
        out
    }

    /// Range checks, then the chain: fatal in proof-fidelity mode, warnings
    /// in desk mode. Returns the warnings.
    pub fn validate(&self, d: usize) -> Result<Vec<ChainViolation>> {
        let fail = |msg: String| Err(QpError::Config(msg));
        if self.m < 2 {
            return fail(format!("M = {} must be at least 2", self.m));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return fail(format!("c = {} must lie in (0, 1)", self.c));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return fail(format!("eta = {} must lie in (0, 1)", self.eta));
        }
        for (name, v) in [
            ("C1", self.c1),
            ("C2", self.c2),
            ("C3", self.c3),
            ("C4", self.c4),
            ("C5", self.c5),
            ("C6", self.c6),
            ("kappa", self.kappa),
            ("tol_residual", self.tol_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        if self.gamma < 0.0 {
            return fail(format!("gamma = {} must be non-negative", self.gamma));
        }
        if let Some(e) = self.epsilon1 {
            if !(e > 0.0) {
                return fail(format!("epsilon1 = {e} must be positive"));
            }
        }
        if self.n0 < 1 {
            return fail(format!("N0 = {} must be positive", self.n0));
        }
        if self.fit_samples < 5 {
            return fail(format!("fit_samples = {} must be at least 5", self.fit_samples));
        }
        let v = self.chain_violations(d);
        match self.mode {
            Mode::ProofFidelity if !v.is_empty() => {
                let list: Vec<String> = v.iter().map(|x| format!("{}: {}", x.name, x.detail)).collect();
                fail(format!("constant chain violated: {}", list.join("; ")))
            }
            _ => {
                for x in &v {
                    warn!("desk constants violate {}: {}", x.name, x.detail);
                }
                Ok(v)
            }
        }
    }

    /// `0.01 · min(1, λ_min, spectral gap)` unless set explicitly.
    pub fn resolved_epsilon1(&self, lambdas: &[f64]) -> f64 {
        if let Some(e) = self.epsilon1 {
            return e;
        }
        let mut scale: f64 = 1.0;
        for l in lambdas {
            scale = scale.min(*l);
        }
        for w in lambdas.windows(2) {
            scale = scale.min(w[1] - w[0]);
        }
        0.01 * scale
    }

    pub fn inverse_params(&self, lambdas: &[f64]) -> InverseParams {
        InverseParams {
            epsilon1: self.resolved_epsilon1(lambdas),
            c1: self.c1,
            eta: self.eta,
            n0: self.n0,
            c5: self.c5,
            fit_samples: self.fit_samples,
            paste: PasteOptions { tol: self.paste_tol, max_sweeps: self.paste_max_sweeps, min_depth: 0 },
        }
    }
}

/// Smallest `j₀` with `(M^{j₀})^c ≥ κ log(1/ε)`, before any desk clamp.
pub fn init_stage_unclamped(epsilon: f64, config: &SolverConfig) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(QpError::PreconditionViolated(format!("ε = {epsilon} must lie in (0, 1)")));
    }
    let target = config.kappa * (1.0 / epsilon).ln();
    if target <= 1.0 {
        return Ok(0);
    }
    let j = target.ln() / (config.c * (config.m as f64).ln());
    // Guard against j landing a rounding error above an integer.
    Ok((j - 1e-9).ceil().max(0.0) as u64)
}

/// `j₀`, clamped to `j0_cap` in desk mode.
pub fn init_stage(epsilon: f64, config: &SolverConfig) -> Result<u64> {
    let j0 = init_stage_unclamped(epsilon, config)?;
    if config.mode == Mode::Desk && j0 > config.j0_cap as u64 {
        warn!("j0 = {j0} clamped to {}", config.j0_cap);
        return Ok(config.j0_cap as u64);
    }
    Ok(j0)
}

/// `M^j`, or `None` past `i32`.
pub fn stage_radius(m: u32, j: u64) -> Option<i32> {
    let r = (m as u64).checked_pow(j.try_into().ok()?)?;
    i32::try_from(r).ok().filter(|r| *r <= i32::MAX / 16)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonState {
    pub j: u64,
    pub y: FourierVector,
    pub omega: Vec<f64>,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
    pub support_bound: i32,
    pub accepted: bool,
}

impl NewtonState {
    pub fn initial(ds: &DiagonalizedSpec, omega: &[f64], j0: u64, config: &SolverConfig) -> Result<Self> {
        let y = FourierVector::zeros(ds.n, ds.d);
        let f = evaluate_f(&y, omega, ds)?;
        let support_bound = stage_radius(config.m, j0)
            .ok_or_else(|| QpError::Config(format!("M^j0 = {}^{j0} is not representable", config.m)))?;
        Ok(Self {
            j: j0,
            y,
            omega: omega.to_vec(),
            residual_norm: f.norm_l2(),
            residual_history: vec![f.norm_l2()],
            support_bound,
            accepted: false,
        })
    }
}

/// The four pieces of `F[y_{j+1}]`, as norms, and the size of the defect of
/// their vector sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSplit {
    /// `‖(1 − Γ_R) F[y_j]‖`.
    pub tail: f64,
    /// `‖Γ_R F[y_j] + T_N Δ‖`.
    pub solve: f64,
    /// `‖(T − T_N) Δ‖`.
    pub coupling: f64,
    /// `‖F[y_j + Δ] − F[y_j] − T Δ‖`.
    pub taylor: f64,
    /// `‖F[y_{j+1}] − (sum of the four vectors)‖`.
    pub defect: f64,
}

/// Splits `F[y + Δ]` given `F[y]`, the linearization `T` at `y`, the
/// truncation radius `r` of the right-hand side and the box radius `big_n`.
pub fn error_split(
    f_before: &FourierVector,
    t: &LatticeOperator,
    delta: &FourierVector,
    f_after: &FourierVector,
    r: i32,
    big_n: i32,
) -> ErrorSplit {
    let gamma_f = f_before.truncate(r);
    let tail = f_before.sub(&gamma_f);
    let td = t.apply(delta, 0.0);
    let td_n = td.truncate(big_n);
    let solve = gamma_f.add(&td_n);
    let coupling = td.sub(&td_n);
    let taylor = f_after.sub(f_before).sub(&td);
    let total = tail.add(&solve).add(&coupling).add(&taylor);
    ErrorSplit {
        tail: tail.norm_l2(),
        solve: solve.norm_l2(),
        coupling: coupling.norm_l2(),
        taylor: taylor.norm_l2(),
        defect: total.sub(f_after).norm_l2(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub j: u64,
    pub big_n: i32,
    pub rhs_radius: i32,
    pub residual_before: f64,
    pub residual_after: f64,
    pub delta_norm: f64,
    /// `max |Δ(m)| e^{|k|^c}`, the measured decay constant of the step.
    pub delta_decay_constant: f64,
    pub split: ErrorSplit,
    pub paste: PasteReport,
    pub patches: usize,
    pub dense_fallbacks: usize,
    pub singular: Vec<SingularRecord>,
}

/// `y_{j+1} = y_j − (T_N)⁻¹ Γ_R F[y_j]` with `N = M^{j+1}` and
/// `R = min(10 M^j, N)`.
pub fn newton_step(state: &NewtonState, ds: &DiagonalizedSpec, config: &SolverConfig) -> Result<(NewtonState, StepReport)> {
    let omega = &state.omega;
    let big_n = stage_radius(config.m, state.j + 1)
        .ok_or_else(|| QpError::Config(format!("stage {} radius overflows", state.j + 1)))?;
    let r = (10 * state.support_bound).min(big_n);
    let f_before = evaluate_f(&state.y, omega, ds)?;
    let t_full = assemble_linearization(&state.y, ds, omega, big_n)?;
    let t = t_full.pruned(config.kernel_prune);
    let params = config.inverse_params(&ds.lambdas);
    let cov = build_covering(&t, 0.0, big_n, &params)?;
    let rhs = f_before.truncate(r).scale(Complex64::new(-1.0, 0.0));
    let (delta, paste) = cov.solve(&t, &rhs, &params.paste)?;
    if paste.residual > 1e-8 {
        return Err(QpError::BoundBlown(format!("pasted solve residual {:.3e}", paste.residual)));
    }
    let y_next = state.y.add(&delta);
    if y_next.support_radius() > big_n {
        return Err(QpError::PreconditionViolated(format!(
            "support {} exceeds M^(j+1) = {big_n}",
            y_next.support_radius()
        )));
    }
    let f_after = evaluate_f(&y_next, omega, ds)?;
    let split = error_split(&f_before, &t_full, &delta, &f_after, r, big_n);
    let delta_decay_constant = delta
        .iter()
        .map(|(m, v)| v.norm() * (crate::lattice::sup_norm(&m.k) as f64).powf(config.c).exp())
        .fold(0.0, f64::max);
    let residual_after = f_after.norm_l2();
    let mut history = state.residual_history.clone();
    history.push(residual_after);
    let report = StepReport {
        j: state.j,
        big_n,
        rhs_radius: r,
        residual_before: f_before.norm_l2(),
        residual_after,
        delta_norm: delta.norm_l2(),
        delta_decay_constant,
        split,
        paste,
        patches: cov.patches.len(),
        dense_fallbacks: cov
            .patches
            .iter()
            .filter(|p| p.inverse.method == InverseMethod::DenseFallback)
            .count(),
        singular: cov.singular.clone(),
    };
    let next = NewtonState {
        j: state.j + 1,
        y: y_next,
        omega: omega.clone(),
        residual_norm: residual_after,
        residual_history: history,
        support_bound: big_n,
        accepted: false,
    };
    Ok((next, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Stopped because the discarded tail dominates the residual.
    TruncationFloor,
    MaxStages,
    Excised,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub omega: Vec<f64>,
    pub status: RunStatus,
    pub j0: u64,
    pub j0_unclamped: u64,
    pub epsilon1: f64,
    pub melnikov: MelnikovReport,
    pub steps: Vec<StepReport>,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    /// `C` in `r_{j+1} ≤ C r_j^{3/2}` over consecutive pre-floor stages.
    pub contraction_constant: Option<f64>,
    pub delta_norm_sum: f64,
    pub chain_warnings: Vec<ChainViolation>,
    pub failure: Option<String>,
}

impl RunReport {
    fn new(omega: &[f64], melnikov: MelnikovReport) -> Self {
        Self {
            omega: omega.to_vec(),
            status: RunStatus::Failed,
            j0: 0,
            j0_unclamped: 0,
            epsilon1: 0.0,
            melnikov,
            steps: Vec::new(),
            residual_history: Vec::new(),
            final_residual: f64::NAN,
            contraction_constant: None,
            delta_norm_sum: 0.0,
            chain_warnings: Vec::new(),
            failure: None,
        }
    }

    pub fn accepted(&self) -> bool {
        matches!(self.status, RunStatus::Converged | RunStatus::TruncationFloor)
    }

    /// Residuals before the truncation floor took over.
    pub fn pre_floor_history(&self) -> Vec<f64> {
        let mut out = vec![];
        if let Some(first) = self.residual_history.first() {
            out.push(*first);
        }
        for s in &self.steps {
            if s.split.tail > 0.5 * s.residual_after.max(f64::MIN_POSITIVE) {
                break;
            }
            out.push(s.residual_after);
        }
        out
    }
}

fn status_for(e: &QpError) -> RunStatus {
    if e.is_excision_trigger() {
        RunStatus::Excised
    } else if matches!(e, QpError::Divergence(_)) {
        RunStatus::Diverged
    } else {
        RunStatus::Failed
    }
}

/// Runs the iteration on a diagonalized problem. The report is returned in
/// every case; the solution only on acceptance.
pub fn run(ds: &DiagonalizedSpec, omega: &[f64], config: &SolverConfig) -> (RunReport, Result<FourierVector>) {
    let melnikov = check_melnikov(omega, &ds.lambdas, config.gamma, config.melnikov_k_max);
    let mut report = RunReport::new(omega, melnikov);
    let result = run_inner(ds, omega, config, &mut report);
    match &result {
        Ok(_) => {}
        Err(e) => {
            if report.status != RunStatus::MaxStages {
                report.status = status_for(e);
            }
            report.failure = Some(e.to_string());
        }
    }
    (report, result)
}

fn run_inner(ds: &DiagonalizedSpec, omega: &[f64], config: &SolverConfig, report: &mut RunReport) -> Result<FourierVector> {
    if omega.len() != ds.d {
        return Err(QpError::DimensionMismatch(format!("ω has {} entries, d = {}", omega.len(), ds.d)));
    }
    report.chain_warnings = config.validate(ds.d)?;
    report.epsilon1 = config.resolved_epsilon1(&ds.lambdas);
    if !report.melnikov.passed {
        let v = &report.melnikov.violations[0];
        return Err(QpError::Excised(format!("Melnikov condition fails at {v:?}")));
    }
    report.j0_unclamped = init_stage_unclamped(ds.epsilon, config)?;
    let j0 = init_stage(ds.epsilon, config)?;
    report.j0 = j0;
    if stage_radius(config.m, j0 + 1).is_none() {
        return Err(QpError::Config(format!(
            "j0 = {j0} gives M^(j0+1) beyond any computable box; use desk mode"
        )));
    }
    let mut state = NewtonState::initial(ds, omega, j0, config)?;
    report.residual_history = state.residual_history.clone();
    let mut increases = 0;
    loop {
        if state.residual_norm <= config.tol_residual {
            report.status = RunStatus::Converged;
            break;
        }
        if state.j >= config.j_max as u64 {
            report.status = RunStatus::MaxStages;
            break;
        }
        let (next, step) = newton_step(&state, ds, config)?;
        let constraints: Vec<_> = step
            .singular
            .iter()
            .map(|s| (s.constraint.clone(), sigma1_scan(s.sigma1, omega, step.big_n)))
            .collect();
        if let Err(w) = apply_excision(&constraints) {
            return Err(QpError::Excised(format!(
                "|p(σ₁)| = {:.3e} ≤ {:.3e} at σ₁ = {:.6} for site {:?}",
                w.p.abs(),
                w.threshold,
                w.sigma1,
                w.site
            )));
        }
        info!(
            "stage {} N = {} residual {:.3e} -> {:.3e}",
            step.j, step.big_n, step.residual_before, step.residual_after
        );
        let floor = step.split.tail > 0.5 * step.residual_after && step.residual_after > config.tol_residual;
        if next.residual_norm > state.residual_norm {
            increases += 1;
        } else {
            increases = 0;
        }
        report.delta_norm_sum += step.delta_norm;
        report.steps.push(step);
        report.residual_history = next.residual_history.clone();
        state = next;
        if increases >= 2 {
            return Err(QpError::Divergence(format!(
                "residual grew two stages running: {:?}",
                &state.residual_history[state.residual_history.len() - 3..]
            )));
        }
        if floor {
            report.status = RunStatus::TruncationFloor;
            break;
        }
    }
    report.final_residual = state.residual_norm;
    let pre = report.pre_floor_history();
    report.contraction_constant = pre
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| w[1] / w[0].powf(1.5))
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
    if report.status == RunStatus::MaxStages {
        return Err(QpError::NoConvergence { tail: state.residual_norm });
    }
    state.accepted = true;
    Ok(state.y)
}

/// Diagonalizes and solves.
pub fn solve(spec: &ProblemSpec, omega: &[f64], config: &SolverConfig) -> Result<(FourierVector, RunReport)> {
    let ds = diagonalize(spec)?;
    let (report, y) = run(&ds, omega, config);
    y.map(|y| (y, report))
}

/// `‖F_{ω+h e_i}[y] − F_ω[y]‖ / h` for each direction `i`: a finite
/// difference probe of the frequency dependence of the residual map.
pub fn omega_lipschitz_probe(ds: &DiagonalizedSpec, y: &FourierVector, omega: &[f64], h: f64) -> Result<Vec<f64>> {
    let base = evaluate_f(y, omega, ds)?;
    (0..omega.len())
        .map(|i| {
            let mut w = omega.to_vec();
            w[i] += h;
            Ok(evaluate_f(y, &w, ds)?.sub(&base).norm_l2() / h)
        })
        .collect()
}
