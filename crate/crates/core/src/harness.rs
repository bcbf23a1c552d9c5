//! Experiment driver: instance generation, benchmarks, the Lee–Seung
//! oscillation demo, and the JSON reports written by the CLI.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lee_seung_step, oscillation_instance, MuVariant};
use crate::error::{NmfError, Result};
use crate::matrix::DenseMatrix;
use crate::mwu::{c_threshold, solve, MwuConfig, RunTrace, Termination};
use crate::objective::{evaluate, FactorPair};
use crate::stationarity::{
    check_sosp_nmf, check_sosp_snmf, StationarityReport, Tolerances, DEFAULT_CONE_SAMPLES,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    /// `V = W0 H0` with `W0`, `H0` uniform on `[0, 1]`; the optimum is 0.
    RandomRankR,
    /// `V` uniform on `[0, 1]`.
    RandomDense,
    FromFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Mwu,
    LsAlternating,
    LsConcurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub kind: InstanceKind,
    pub seeds: Vec<u64>,
    pub solver: Solver,
    /// Relative error `F_t / F_0` to reach.
    pub target: f64,
    pub max_iters: usize,
}

fn instance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep instance draws independent of the solver's initialization stream.
    rng.set_stream(1);
    rng
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

pub fn generate_instance(
    kind: &InstanceKind,
    n: usize,
    m: usize,
    r: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    if n == 0 || m == 0 || r == 0 {
        return Err(NmfError::Config(format!(
            "instance shape must be positive, got n={n}, m={m}, r={r}"
        )));
    }
    let mut rng = instance_rng(seed);
    match kind {
        InstanceKind::RandomRankR => {
            let w0 = uniform_matrix(n, r, &mut rng);
            let h0 = uniform_matrix(r, m, &mut rng);
            Ok(FactorPair::new(w0, h0)?.product())
        }
        InstanceKind::RandomDense => Ok(uniform_matrix(n, m, &mut rng)),
        InstanceKind::FromFile(path) => DenseMatrix::read_csv(path),
    }
}

/// Strictly positive random starting point for the Lee–Seung baselines.
fn ls_init(n: usize, r: usize, m: usize, seed: u64) -> FactorPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows, cols| DenseMatrix::from_fn(rows, cols, |_, _| 0.05 + rng.random::<f64>());
    let w = draw(n, r);
    let h = draw(r, m);
    FactorPair::new(w, h).expect("shapes agree")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub iterations: usize,
    pub final_relative_error: f64,
    pub reached_target: bool,
}

/// Runs one solver on one instance until `F_t / F_0 < target` or `max_iters`.
pub fn run_to_target(
    v: &DenseMatrix,
    r: usize,
    solver: Solver,
    seed: u64,
    target: f64,
    max_iters: usize,
) -> Result<CellOutcome> {
    match solver {
        Solver::Mwu => {
            let cfg = MwuConfig {
                seed,
                max_iters,
                target_relative_error: Some(target),
                ..MwuConfig::default()
            };
            let trace = solve(v, r, &cfg)?;
            let rel = trace.final_objective() / trace.initial_objective();
            let reached = trace.iterations_to_relative_error(target);
            Ok(CellOutcome {
                iterations: reached.unwrap_or(trace.iterations()),
                final_relative_error: rel,
                reached_target: reached.is_some(),
            })
        }
        Solver::LsAlternating | Solver::LsConcurrent => {
            let variant = if solver == Solver::LsAlternating {
                MuVariant::Alternating
            } else {
                MuVariant::Concurrent
            };
            let mut p = ls_init(v.rows(), r, v.cols(), seed);
            let f0 = evaluate(v, &p)?;
            let mut f = f0;
            let mut iterations = 0;
            while iterations < max_iters && f >= target * f0 {
                p = lee_seung_step(v, &p, variant, 1e-12)?.pair;
                f = evaluate(v, &p)?;
                iterations += 1;
            }
            Ok(CellOutcome {
                iterations,
                final_relative_error: f / f0,
                reached_target: f < target * f0,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub n_list: Vec<usize>,
    pub r_list: Vec<usize>,
    pub seeds: usize,
    pub target: f64,
    pub max_iters: usize,
    pub solver: Solver,
    pub kind: InstanceKind,
}

impl BenchmarkPlan {
    fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.r_list.is_empty() || self.seeds == 0 {
            return Err(NmfError::Config(
                "benchmark needs non-empty n and r lists and at least one seed".into(),
            ));
        }
        if self.n_list.contains(&0) || self.r_list.contains(&0) {
            return Err(NmfError::Config("n and r must be positive".into()));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(NmfError::Config(format!(
                "target must lie in (0, 1), got {}",
                self.target
            )));
        }
        Ok(())
    }

    /// Cells as `ExperimentSpec`s, ordered by `(n, r, seed)`.
    pub fn cells(&self) -> Vec<(ExperimentSpec, u64)> {
        let mut n_list = self.n_list.clone();
        let mut r_list = self.r_list.clone();
        n_list.sort_unstable();
        n_list.dedup();
        r_list.sort_unstable();
        r_list.dedup();
        let seeds: Vec<u64> = (0..self.seeds as u64).collect();
        let mut out = Vec::new();
        for &n in &n_list {
            for &r in &r_list {
                let spec = ExperimentSpec {
                    n,
                    m: n,
                    r,
                    kind: self.kind.clone(),
                    seeds: seeds.clone(),
                    solver: self.solver,
                    target: self.target,
                    max_iters: self.max_iters,
                };
                for &seed in &seeds {
                    out.push((spec.clone(), seed));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub final_relative_error: f64,
    pub reached_target: bool,
}

/// Runs every cell, in parallel, returning rows ordered by `(n, r, seed)`.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<Vec<BenchRow>> {
    plan.validate()?;
    let cells = plan.cells();
    cells
        .par_iter()
        .map(|(spec, seed)| {
            let v = generate_instance(&spec.kind, spec.n, spec.m, spec.r, *seed)?;
            let start = Instant::now();
            let outcome =
                run_to_target(&v, spec.r, spec.solver, *seed, spec.target, spec.max_iters)?;
            Ok(BenchRow {
                n: spec.n,
                r: spec.r,
                seed: *seed,
                iterations: outcome.iterations,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                final_relative_error: outcome.final_relative_error,
                reached_target: outcome.reached_target,
            })
        })
        .collect()
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("n,r,seed,iterations,wall_time_ms,final_relative_error,reached_target\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{:.3},{},{}",
            row.n,
            row.r,
            row.seed,
            row.iterations,
            row.wall_time_ms,
            row.final_relative_error,
            row.reached_target
        )
        .expect("write to String");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationRow {
    pub step: usize,
    pub concurrent: f64,
    pub alternating: f64,
}

/// Both Lee–Seung variants on `V = I_2` from all-ones, one row per step.
pub fn oscillation_demo(steps: usize) -> Result<Vec<OscillationRow>> {
    let (v, init) = oscillation_instance();
    let mut conc = init.clone();
    let mut alt = init;
    let mut rows = Vec::with_capacity(steps);
    for step in 1..=steps {
        conc = lee_seung_step(&v, &conc, MuVariant::Concurrent, 1e-12)?.pair;
        alt = lee_seung_step(&v, &alt, MuVariant::Alternating, 1e-12)?.pair;
        rows.push(OscillationRow {
            step,
            concurrent: evaluate(&v, &conc)?,
            alternating: evaluate(&v, &alt)?,
        });
    }
    Ok(rows)
}

pub fn oscillation_csv(rows: &[OscillationRow]) -> String {
    let mut out = String::from("step,concurrent,alternating\n");
    for row in rows {
        writeln!(out, "{},{},{}", row.step, row.concurrent, row.alternating)
            .expect("write to String");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub records: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `(iteration, objective)` at iterations 0, 1, 2, 4, 8, ... and the last one.
    pub objective_history: Vec<(usize, f64)>,
}

impl TraceSummary {
    pub fn from_trace(trace: &RunTrace) -> Self {
        let last = trace.records.len() - 1;
        let mut idx = vec![0];
        let mut k = 1;
        while k < last {
            idx.push(k);
            k *= 2;
        }
        if last > 0 {
            idx.push(last);
        }
        Self {
            records: trace.records.len(),
            initial_objective: trace.initial_objective(),
            final_objective: trace.final_objective(),
            objective_history: idx
                .into_iter()
                .map(|i| (trace.records[i].iteration, trace.records[i].objective))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaritySection {
    pub nmf: StationarityReport,
    pub snmf: Option<StationarityReport>,
}

/// Checks `p` against NMF, and against S-NMF when `c_total` is given.
pub fn classify(
    v: &DenseMatrix,
    p: &FactorPair,
    c_total: Option<f64>,
    seed: u64,
) -> Result<StationaritySection> {
    let tol = Tolerances::scaled_for(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nmf = check_sosp_nmf(v, p, &tol, DEFAULT_CONE_SAMPLES, &mut rng)?;
    let snmf = match c_total {
        Some(c) => Some(check_sosp_snmf(
            v,
            p,
            c,
            &tol,
            DEFAULT_CONE_SAMPLES,
            &mut rng,
        )?),
        None => None,
    };
    Ok(StationaritySection { nmf, snmf })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizeReport {
    pub schema: u32,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub seed: u64,
    pub c_constant: f64,
    pub c_threshold: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    pub halvings: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub final_objective: f64,
    pub trace: TraceSummary,
    pub stationarity: StationaritySection,
    pub w_path: Option<PathBuf>,
    pub h_path: Option<PathBuf>,
}

/// Solves and classifies the result. Paths are left for the caller to fill.
pub fn factorize(
    v: &DenseMatrix,
    r: usize,
    cfg: &MwuConfig,
) -> Result<(RunTrace, FactorizeReport)> {
    let trace = solve(v, r, cfg)?;
    let p = trace.factors();
    let stationarity = classify(v, &p, Some(trace.c_constant), cfg.seed)?;
    let report = FactorizeReport {
        schema: SCHEMA_VERSION,
        n: v.rows(),
        m: v.cols(),
        r,
        seed: cfg.seed,
        c_constant: trace.c_constant,
        c_threshold: c_threshold(v, r)?,
        epsilon_initial: trace.epsilon_initial,
        epsilon_final: trace
            .records
            .last()
            .map_or(trace.epsilon_initial, |r| r.epsilon),
        halvings: trace.halvings,
        iterations: trace.iterations(),
        termination: trace.termination,
        final_objective: trace.final_objective(),
        trace: TraceSummary::from_trace(&trace),
        stationarity,
        w_path: None,
        h_path: None,
    };
    Ok((trace, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema: u32,
    pub c_constant: Option<f64>,
    pub stationarity: StationaritySection,
}

pub fn check(
    v: &DenseMatrix,
    p: &FactorPair,
    c_total: Option<f64>,
    seed: u64,
) -> Result<CheckReport> {
    Ok(CheckReport {
        schema: SCHEMA_VERSION,
        c_constant: c_total,
        stationarity: classify(v, p, c_total, seed)?,
    })
}
