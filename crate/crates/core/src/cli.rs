//! Command-line front end. Exit codes: 0 success, 1 configuration or I/O
//! error, 2 excised frequency, 3 divergence or no convergence, 4 a
//! verification check failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::config::{parse_mode, parse_vector, RunConfig};
use crate::error::{QpError, Result};
use crate::excision::{estimate_bad_measure, sample_box, ExcisionRecord};
use crate::lattice::{assemble_linearization, FourierVector, IndexBox, LatticeOperator};
use crate::model::{diagonalize, DiagonalizedSpec};
use crate::multiscale::{build_covering, cluster_inverse, dense_inverse, LocalInverse, InverseMethod};
use crate::newton::{init_stage, run, stage_radius, RunReport, RunStatus, SolverConfig};
use crate::smalldivisor::{
    build_clusters, check_melnikov, dense_fail_predicate, scale_schedule, SeparationParams,
};
use crate::verification::{conjugate_symmetry_defect, convergence_order, dde_residual, default_grid, ResidualReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_EXCISED: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "qpdelay", version, about = "Quasi-periodic solutions of delayed perturbation equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated frequency vector.
    #[arg(long, global = true, allow_hyphen_values = true)]
    omega: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// desk or proof_fidelity.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
enum Command {
    /// Solve at one frequency.
    Solve,
    /// Time-domain check of a stored solution.
    Verify {
        #[arg(long)]
        solution: PathBuf,
    },
    /// Seeded estimate of the excised measure per stage.
    Excise,
    /// Melnikov maps, singular sites, clusters and inverse decay as CSV.
    Explore,
    /// Solve over seeded frequencies of the box.
    Sweep {
        #[arg(long)]
        samples: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify { .. } => "verify",
            Command::Excise => "excise",
            Command::Explore => "explore",
            Command::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    artifact_paths: Vec<String>,
    /// Wall-clock seconds per phase; the only non-deterministic field.
    timings: BTreeMap<String, f64>,
    resolved_config: &'a RunConfig,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), timings: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), content)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| QpError::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), t0.elapsed().as_secs_f64());
        out
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, seed: u64) -> Result<()> {
        let mut paths = self.written.clone();
        paths.push("manifest.json".into());
        let manifest = Manifest {
            command,
            config_hash: cfg.digest(),
            seed,
            artifact_paths: paths,
            timings: std::mem::take(&mut self.timings),
            resolved_config: cfg,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| QpError::Io(e.to_string()))?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter("QPDELAY_LOG");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses arguments and runs a command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// File, then environment, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| QpError::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(m) = &cli.mode {
        cfg.set_mode(parse_mode(m)?);
    }
    if let Some(w) = &cli.omega {
        cfg.run.omega = Some(parse_vector(w)?);
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
        cfg.sweep.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.sweep.jobs = Some(j);
    }
    if let Some(w) = &cfg.run.omega {
        if w.len() != cfg.problem.d {
            return Err(QpError::Config(format!("omega has {} entries, d = {}", w.len(), cfg.problem.d)));
        }
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Err(e) = cfg.solver.validate(cfg.problem.d) {
        eprintln!("error: {e}");
        return Ok(EXIT_CONFIG);
    }
    let mut art = Artifacts::new(&cli.out)?;
    let code = match &cli.command {
        Command::Solve => cmd_solve(&cfg, &mut art)?,
        Command::Verify { solution } => cmd_verify(&cfg, solution, &mut art)?,
        Command::Excise => cmd_excise(&cfg, &mut art)?,
        Command::Explore => cmd_explore(&cfg, &mut art)?,
        Command::Sweep { samples } => cmd_sweep(&cfg, samples.unwrap_or(cfg.sweep.samples), &mut art)?,
    };
    let seed = match cli.command {
        Command::Sweep { .. } | Command::Excise => cfg.sweep.seed,
        _ => cfg.run.seed,
    };
    art.finish(cli.command.name(), &cfg, seed)?;
    Ok(code)
}

fn exit_for(status: RunStatus) -> i32 {
    match status {
        RunStatus::Converged | RunStatus::TruncationFloor => EXIT_OK,
        RunStatus::Excised => EXIT_EXCISED,
        RunStatus::Diverged | RunStatus::MaxStages => EXIT_DIVERGED,
        RunStatus::Failed => EXIT_CONFIG,
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.17e}")
}

/// `stage,N,rhs_radius,residual_before,residual_after,delta_norm,tail,solve,coupling,taylor`.
pub fn residual_csv(report: &RunReport) -> String {
    let mut s = String::from("stage,N,rhs_radius,residual_before,residual_after,delta_norm,tail,solve,coupling,taylor\n");
    for st in &report.steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            st.j + 1,
            st.big_n,
            st.rhs_radius,
            fmt_f(st.residual_before),
            fmt_f(st.residual_after),
            fmt_f(st.delta_norm),
            fmt_f(st.split.tail),
            fmt_f(st.split.solve),
            fmt_f(st.split.coupling),
            fmt_f(st.split.taylor)
        );
    }
    s
}

/// Plain-text summary of a run.
pub fn report_text(report: &RunReport, residual: Option<&ResidualReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "omega: {:?}", report.omega);
    let _ = writeln!(s, "status: {:?}", report.status);
    let _ = writeln!(s, "j0: {} (unclamped {})", report.j0, report.j0_unclamped);
    let _ = writeln!(s, "epsilon1: {:e}", report.epsilon1);
    let _ = writeln!(
        s,
        "melnikov: passed={} violations={} min_gap={:e}",
        report.melnikov.passed,
        report.melnikov.violations.len(),
        report.melnikov.min_gap
    );
    for st in &report.steps {
        let _ = writeln!(
            s,
            "stage {:>2}  N={:>5}  residual {:.3e} -> {:.3e}  |delta| {:.3e}  patches {}  singular {}",
            st.j + 1,
            st.big_n,
            st.residual_before,
            st.residual_after,
            st.delta_norm,
            st.patches,
            st.singular.len()
        );
    }
    let _ = writeln!(s, "final residual: {:e}", report.final_residual);
    if let Some(c) = report.contraction_constant {
        let _ = writeln!(s, "contraction constant (3/2 power): {c:e}");
    }
    if let Ok(order) = convergence_order(&report.pre_floor_history()) {
        let _ = writeln!(s, "convergence order: {order:.4}");
    }
    if let Some(r) = residual {
        let _ = writeln!(s, "dde residual: {:e} (tail {:e})", r.sup_residual, r.quadrature_tail);
    }
    if let Some(f) = &report.failure {
        let _ = writeln!(s, "failure: {f}");
    }
    s
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    run: &'a RunReport,
    residual: Option<&'a ResidualReport>,
    symmetry_defect: Option<f64>,
}

fn cmd_solve(cfg: &RunConfig, art: &mut Artifacts) -> Result<i32> {
    let omega = cfg.omega();
    let ds = match art.time("diagonalize", || diagonalize(&cfg.problem)) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let (report, y) = art.time("newton", || run(&ds, &omega, &cfg.solver));
    let mut residual = None;
    let mut defect = None;
    if let Ok(y) = &y {
        art.write("solution.txt", &y.to_text())?;
        let grid = default_grid(ds.lambdas[0], cfg.run.seed);
        residual = Some(art.time("verify", || dde_residual(y, &omega, &cfg.problem, &ds, &grid))?);
        defect = Some(conjugate_symmetry_defect(y));
    }
    art.write("residuals.csv", &residual_csv(&report))?;
    art.write("report.txt", &report_text(&report, residual.as_ref()))?;
    art.json("report.json", &SolveOutput { run: &report, residual: residual.as_ref(), symmetry_defect: defect })?;
    print!("{}", report_text(&report, residual.as_ref()));
    Ok(exit_for(report.status))
}

fn cmd_verify(cfg: &RunConfig, solution: &Path, art: &mut Artifacts) -> Result<i32> {
    let text = std::fs::read_to_string(solution)?;
    let y = FourierVector::from_text(&text)?;
    let ds = diagonalize(&cfg.problem)?;
    let omega = cfg.omega();
    #[derive(Serialize)]
    struct VerifyOutput<'a> {
        residual: Option<&'a ResidualReport>,
        symmetry_defect: f64,
        bound: f64,
        pass: bool,
    }
    // A candidate that is not the lattice form of a real function has no
    // time-domain residual to speak of.
    let defect = conjugate_symmetry_defect(&y);
    if defect > 1e-10 {
        art.json("verify.json", &VerifyOutput { residual: None, symmetry_defect: defect, bound: 1e-10, pass: false })?;
        println!("symmetry defect {defect:e} exceeds 1e-10: FAIL");
        return Ok(EXIT_CHECK_FAILED);
    }
    let grid = default_grid(ds.lambdas[0], cfg.run.seed);
    let rep = dde_residual(&y, &omega, &cfg.problem, &ds, &grid)?;
    let bound = 10.0 * cfg.solver.tol_residual + rep.quadrature_tail;
    let pass = rep.sup_residual <= bound;
    art.json("verify.json", &VerifyOutput { residual: Some(&rep), symmetry_defect: defect, bound, pass })?;
    println!(
        "dde residual {:e} (bound {:e}), lattice residual {:e}, symmetry defect {:e}: {}",
        rep.sup_residual,
        bound,
        rep.lattice_residual,
        defect,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Rejection reason for `omega` at stage `j`: Melnikov up to `M^j` (capped)
/// or an excision trigger while inverting the linearization at `y = 0`.
pub fn stage_screen(ds: &DiagonalizedSpec, solver: &SolverConfig, omega: &[f64], j: u64) -> Option<String> {
    let big_n = stage_radius(solver.m, j)?;
    let mel = check_melnikov(omega, &ds.lambdas, solver.gamma, big_n.min(solver.melnikov_k_max));
    if !mel.passed {
        return Some("melnikov".into());
    }
    let y0 = FourierVector::zeros(ds.n, ds.d);
    let op = assemble_linearization(&y0, ds, omega, big_n).ok()?.pruned(solver.kernel_prune);
    match build_covering(&op, 0.0, big_n, &solver.inverse_params(&ds.lambdas)) {
        Ok(_) => None,
        Err(e) if e.is_excision_trigger() => Some(format!("inverse: {e}")),
        Err(e) => Some(format!("error: {e}")),
    }
}

/// `stage,N,fraction,std_error,budget,verdict`.
pub fn excise_csv(rows: &[(u64, i32, ExcisionRecord)]) -> String {
    let mut s = String::from("stage,N,fraction,std_error,budget,verdict\n");
    for (j, n, r) in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            j,
            n,
            fmt_f(r.bad_fraction),
            fmt_f(r.std_error),
            fmt_f(r.budget),
            if r.within_budget { "pass" } else { "warn" }
        );
    }
    s
}

fn cmd_excise(cfg: &RunConfig, art: &mut Artifacts) -> Result<i32> {
    let ds = diagonalize(&cfg.problem)?;
    let j0 = init_stage(cfg.problem.epsilon, &cfg.solver)?;
    let mut rows = Vec::new();
    for s in 1..=cfg.sweep.excise_stages as u64 {
        let j = j0 + s;
        let Some(n) = stage_radius(cfg.solver.m, j) else { break };
        let rec = art.time(&format!("stage_{j}"), || {
            estimate_bad_measure(
                &cfg.problem.freq_lo,
                &cfg.problem.freq_hi,
                |w| stage_screen(&ds, &cfg.solver, w, j),
                cfg.sweep.excise_samples,
                cfg.sweep.seed,
                s as u32,
                cfg.solver.eta,
            )
        });
        rows.push((j, n, rec));
    }
    let table = excise_csv(&rows);
    art.write("excise.csv", &table)?;
    print!("{table}");
    Ok(EXIT_OK)
}

/// `k_1..k_d,mu,j,mu2,j2,value,bound`.
fn melnikov_csv(d: usize, cfg: &RunConfig, ds: &DiagonalizedSpec, omega: &[f64]) -> String {
    let rep = check_melnikov(omega, &ds.lambdas, cfg.solver.gamma, cfg.solver.melnikov_k_max);
    let mut s = String::new();
    for i in 1..=d {
        let _ = write!(s, "k_{i},");
    }
    s.push_str("mu,j,mu2,j2,value,bound\n");
    for v in &rep.violations {
        for k in &v.k {
            let _ = write!(s, "{k},");
        }
        let kn = crate::lattice::sup_norm(&v.k).max(1) as f64;
        let bound = cfg.solver.gamma * kn.powf(-10.0 * d as f64);
        let _ = writeln!(s, "{},{},{},{},{},{}", v.mu, v.j, v.mu2, v.j2, fmt_f(v.value), fmt_f(bound));
    }
    s
}

fn box_cols(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
}

/// Header of `decay.csv`.
pub const DECAY_HEADER: &str = "distance,log10_max_entry";

fn cmd_explore(cfg: &RunConfig, art: &mut Artifacts) -> Result<i32> {
    let d = cfg.problem.d;
    let omega = cfg.omega();
    let ds = diagonalize(&cfg.problem)?;
    art.write("melnikov.csv", &melnikov_csv(d, cfg, &ds, &omega))?;
    let big_n = cfg.run.explore_n;
    let sigma = cfg.run.sigma;
    let y0 = FourierVector::zeros(ds.n, d);
    let op = assemble_linearization(&y0, &ds, &omega, big_n)?;
    let sched = scale_schedule(cfg.solver.n0, cfg.solver.c3, big_n);
    let sep = SeparationParams {
        n0: cfg.solver.n0,
        c: cfg.solver.c,
        c1: cfg.solver.c1,
        c2: cfg.solver.c2,
        c3: cfg.solver.c3,
    };
    let eps1 = cfg.solver.resolved_epsilon1(&ds.lambdas);
    let dec = art.time("clusters", || {
        build_clusters(&op, sigma, &sched, dense_fail_predicate(&op, sigma, &sep), eps1, cfg.solver.n0, cfg.solver.c3)
    });
    let mut singular = format!("mu,j,{},abs_diag\n", box_cols("k", d));
    let mut clusters = format!("level,scale,kind,{},{}\n", box_cols("lo", d), box_cols("hi", d));
    let inverse = match &dec {
        Ok(dec) => {
            if let Some(m) = &dec.omega2 {
                let ks: Vec<String> = m.k.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(singular, "{},{},{},{}", m.mu, m.j, ks.join(","), fmt_f(op.diag(m, sigma).norm()));
            }
            let mut emit = |level: usize, kind: &str, b: &IndexBox| {
                let lo: Vec<String> = b.lo.iter().map(|x| x.to_string()).collect();
                let hi: Vec<String> = b.hi.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(clusters, "{},{},{},{},{}", level, dec.scales[level], kind, lo.join(","), hi.join(","));
            };
            for (s, f) in dec.failing.iter().enumerate() {
                if let Some(b) = f {
                    emit(s, "failing", b);
                }
            }
            for (s, l) in dec.lambdas_nested.iter().enumerate() {
                if let Some(b) = l {
                    emit(s, "lambda", b);
                }
            }
            cluster_inverse(&op, sigma, dec, &cfg.solver.inverse_params(&ds.lambdas))
                .map(|c| c.inverse)
                .or_else(|_| dense_local(&op, sigma, big_n))
        }
        Err(e) => {
            info!("cluster construction failed: {e}");
            dense_local(&op, sigma, big_n)
        }
    };
    art.write("singular.csv", &singular)?;
    art.write("clusters.csv", &clusters)?;
    let mut decay = format!("{DECAY_HEADER}\n");
    if let Ok(inv) = inverse {
        for (dist, v) in decay_profile(&inv) {
            let _ = writeln!(decay, "{dist},{}", fmt_f(v));
        }
    }
    art.write("decay.csv", &decay)?;
    Ok(EXIT_OK)
}

fn dense_local(op: &LatticeOperator, sigma: f64, big_n: i32) -> Result<LocalInverse> {
    let sites = IndexBox::cube(op.d, big_n).sites(op.n);
    let m = dense_inverse(&op.dense(&sites, sigma))?;
    Ok(LocalInverse::new(sites, m, InverseMethod::Dense))
}

/// `(|k − k'|, log10 max |M(m, m')|)` for each distance present.
pub fn decay_profile(inv: &LocalInverse) -> Vec<(i32, f64)> {
    let mut best: BTreeMap<i32, f64> = BTreeMap::new();
    for (i, a) in inv.sites.iter().enumerate() {
        for (j, b) in inv.sites.iter().enumerate() {
            let dist = a.k.iter().zip(&b.k).map(|(x, y)| (x - y).abs()).max().unwrap_or(0);
            let e = best.entry(dist).or_insert(0.0);
            *e = e.max(inv.matrix[(i, j)].norm());
        }
    }
    best.into_iter().map(|(k, v)| (k, if v > 0.0 { v.log10() } else { f64::NEG_INFINITY })).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub samples: usize,
    pub accepted: usize,
    pub acceptance_fraction: f64,
    pub eta: f64,
    /// `(1 − fraction)/η`, the empirical `C*` in `fraction ≥ 1 − C*η`.
    pub c_star_estimate: f64,
    pub statement: String,
}

/// Runs the solver over seeded samples of the frequency box. Results are
/// in sample order regardless of scheduling.
pub fn sweep_reports(cfg: &RunConfig, samples: usize) -> Result<(Vec<Vec<f64>>, Vec<RunReport>)> {
    let ds = diagonalize(&cfg.problem)?;
    let omegas = sample_box(&cfg.problem.freq_lo, &cfg.problem.freq_hi, samples, cfg.sweep.seed);
    let work = || {
        use rayon::prelude::*;
        omegas.par_iter().map(|w| run(&ds, w, &cfg.solver).0).collect::<Vec<_>>()
    };
    let reports = match cfg.sweep.jobs {
        Some(j) if j > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| QpError::Config(e.to_string()))?
            .install(work),
        _ => work(),
    };
    Ok((omegas, reports))
}

pub fn summarize(reports: &[RunReport], eta: f64) -> SweepSummary {
    let accepted = reports.iter().filter(|r| r.accepted()).count();
    let n = reports.len().max(1);
    let fraction = accepted as f64 / n as f64;
    let c_star = (1.0 - fraction) / eta;
    SweepSummary {
        samples: reports.len(),
        accepted,
        acceptance_fraction: fraction,
        eta,
        c_star_estimate: c_star,
        statement: format!(
            "fraction of U admitting solutions {fraction:.4} >= 1 - C*eta with C* = {c_star:.4}, eta = {eta}"
        ),
    }
}

/// `stage,surviving,fraction`: samples not yet excised after each stage.
pub fn stage_table(reports: &[RunReport]) -> String {
    let mut s = String::from("stage,surviving,fraction\n");
    let last = reports.iter().map(|r| r.j0 + r.steps.len() as u64 + 1).max().unwrap_or(0);
    let first = reports.iter().map(|r| r.j0 + 1).min().unwrap_or(1);
    let n = reports.len().max(1) as f64;
    for j in first..=last {
        let surviving = reports
            .iter()
            .filter(|r| {
                r.accepted() || !matches!(r.status, RunStatus::Excised) || r.j0 + r.steps.len() as u64 + 1 > j
            })
            .count();
        let _ = writeln!(s, "{},{},{}", j, surviving, fmt_f(surviving as f64 / n));
    }
    s
}

fn cmd_sweep(cfg: &RunConfig, samples: usize, art: &mut Artifacts) -> Result<i32> {
    if samples == 0 {
        return Err(QpError::Config("sweep needs at least one sample".into()));
    }
    let (omegas, reports) = art.time("sweep", || sweep_reports(cfg, samples))?;
    let d = cfg.problem.d;
    let mut table = format!("index,{},status,stages,final_residual\n", box_cols("omega", d));
    for (i, (w, r)) in omegas.iter().zip(&reports).enumerate() {
        let ws: Vec<String> = w.iter().map(|x| fmt_f(*x)).collect();
        let status = serde_json::to_string(&r.status).unwrap_or_default().replace('"', "");
        let _ = writeln!(table, "{},{},{},{},{}", i, ws.join(","), status, r.steps.len(), fmt_f(r.final_residual));
    }
    art.write("sweep.csv", &table)?;
    art.write("stages.csv", &stage_table(&reports))?;
    let summary = summarize(&reports, cfg.solver.eta);
    art.json("summary.json", &summary)?;
    println!("{}", summary.statement);
    Ok(EXIT_OK)
}
