//! Concurrent multiplicative weight updates on the scaled simplex.
//!
//! The problem is rescaled to `V / C^2` and iterated on the unit simplex
//! `Delta_{nr+rm}`. Every coordinate of `W` and `H` is updated from the same
//! previous iterate, so the entrywise update is embarrassingly parallel.
//! On exit the factors are scaled back by `C`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NmfError, Result};
use crate::matrix::DenseMatrix;
use crate::objective::{evaluate, gradient_from_residual, FactorPair};

/// Smallest step size the safeguard will try before giving up.
pub const EPSILON_FLOOR: f64 = 1e-18;

/// Relative slack allowed on an objective increase before a step is rejected.
pub const MONOTONE_TOL: f64 = 1e-12;

const SCALE_CHECK_EVERY: usize = 100;
const SCALE_CHECK_TOL: f64 = 1e-9;

/// The constant used by the solver when none is given: `4 r (nm)^{1/4} sqrt(||V||_F)`.
pub fn default_c(v: &DenseMatrix, r: usize) -> Result<f64> {
    let c = 2.0 * c_threshold(v, r)?;
    Ok(c)
}

/// `2 r (nm)^{1/4} sqrt(||V||_F)`. Any explicit constant must exceed this.
pub fn c_threshold(v: &DenseMatrix, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(NmfError::Config("rank must be at least 1".into()));
    }
    let norm = v.frobenius_norm();
    if norm == 0.0 {
        return Err(NmfError::Degenerate(
            "V is identically zero; W = 0, H = 0 is already optimal".into(),
        ));
    }
    let nm = (v.rows() * v.cols()) as f64;
    Ok(2.0 * r as f64 * nm.powf(0.25) * norm.sqrt())
}

/// An iterate: nonnegative factors whose entries sum to `total_mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub total_mass: f64,
}

impl SimplexState {
    /// Uniform random point of the unit simplex, laid out in the flattening order.
    pub fn random(n: usize, r: usize, m: usize, seed: u64) -> Self {
        let x = random_simplex_point(n * r + r * m, seed);
        let p = FactorPair::from_flat(n, r, m, &x, false).expect("length matches shapes");
        Self {
            w: p.w,
            h: p.h,
            total_mass: 1.0,
        }
    }

    pub fn from_pair(p: &FactorPair) -> Self {
        Self {
            w: p.w.clone(),
            h: p.h.clone(),
            total_mass: p.mass(),
        }
    }

    pub fn pair(&self) -> FactorPair {
        FactorPair::new(self.w.clone(), self.h.clone()).expect("shapes fixed at construction")
    }

    pub fn mass(&self) -> f64 {
        self.w.sum() + self.h.sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.w.min().min(self.h.min())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            w: self.w.scaled(alpha),
            h: self.h.scaled(alpha),
            total_mass: self.total_mass * alpha,
        }
    }

    /// Largest absolute entry difference.
    pub fn max_change(&self, other: &Self) -> f64 {
        let diff = |a: &DenseMatrix, b: &DenseMatrix| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
        };
        diff(&self.w, &other.w).max(diff(&self.h, &other.h))
    }
}

/// Flat Dirichlet(1, ..., 1) sample via normalized unit exponentials.
pub fn random_simplex_point(dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "simplex dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..dim).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    x
}

/// Gradient and `<x, grad>` at a unit-simplex iterate.
struct StepInputs {
    grad: FactorPair,
    inner: f64,
}

impl StepInputs {
    fn at(v_scaled: &DenseMatrix, s: &SimplexState) -> Result<Self> {
        let p = s.pair();
        let r = v_scaled.sub(&p.product()).map_err(|_| {
            NmfError::Dimension(format!(
                "V is {}x{} but the state is ({}x{}, {}x{})",
                v_scaled.rows(),
                v_scaled.cols(),
                s.w.rows(),
                s.w.cols(),
                s.h.rows(),
                s.h.cols()
            ))
        })?;
        let grad = gradient_from_residual(&r, &p)?;
        let inner = s.w.dot(&grad.w)? + s.h.dot(&grad.h)?;
        Ok(Self { grad, inner })
    }

    fn max_grad(&self) -> f64 {
        self.grad.max_abs()
    }

    /// Multiplicative update with normalizer `Z = 1 - eps <x, grad>`.
    fn apply(&self, s: &SimplexState, eps: f64, parallel: bool) -> Result<SimplexState> {
        let z = 1.0 - eps * self.inner;
        if z.is_nan() || z <= 0.0 {
            return Err(NmfError::StepTooLarge(format!(
                "normalizer Z = {z:e} at epsilon {eps:e}"
            )));
        }
        let worst = self
            .grad
            .w
            .as_slice()
            .iter()
            .chain(self.grad.h.as_slice())
            .fold(f64::NEG_INFINITY, |a, &g| a.max(g));
        let smallest = 1.0 - eps * worst;
        if smallest.is_nan() || smallest <= 0.0 {
            return Err(NmfError::StepTooLarge(format!(
                "multiplier 1 - eps * {worst:e} is not positive at epsilon {eps:e}"
            )));
        }
        let mut w = s.w.clone();
        let mut h = s.h.clone();
        update_block(w.as_mut_slice(), self.grad.w.as_slice(), eps, z, parallel);
        update_block(h.as_mut_slice(), self.grad.h.as_slice(), eps, z, parallel);
        // The sum is reduced sequentially so the result is independent of the thread count.
        let total = w.sum() + h.sum();
        let inv = 1.0 / total;
        w.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        h.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        Ok(SimplexState {
            w,
            h,
            total_mass: 1.0,
        })
    }
}

fn update_block(x: &mut [f64], g: &[f64], eps: f64, z: f64, parallel: bool) {
    let f = |(xi, &gi): (&mut f64, &f64)| *xi = *xi * (1.0 - eps * gi) / z;
    if parallel {
        x.par_iter_mut().zip(g.par_iter()).for_each(f);
    } else {
        x.iter_mut().zip(g.iter()).for_each(f);
    }
}

/// One concurrent update of every coordinate of `(W, H)` from `s`.
///
/// Fails with [`NmfError::StepTooLarge`] if `Z <= 0` or a multiplier
/// `1 - eps * dF/dx` is not positive.
pub fn mwu_step(v_scaled: &DenseMatrix, s: &SimplexState, epsilon: f64) -> Result<SimplexState> {
    StepInputs::at(v_scaled, s)?.apply(s, epsilon, false)
}

/// As [`mwu_step`], applying the multipliers on the current rayon pool.
/// Output is bitwise identical to the sequential step.
pub fn mwu_step_parallel(
    v_scaled: &DenseMatrix,
    s: &SimplexState,
    epsilon: f64,
) -> Result<SimplexState> {
    StepInputs::at(v_scaled, s)?.apply(s, epsilon, true)
}

/// How the step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    /// `epsilon_scale / (2 max_i |dF/dx_i|)` at the initial iterate.
    Auto,
    /// `epsilon_scale / (2 L)` with `L = 2 (||V/C^2||_F + 1) sqrt(nr + rm)`,
    /// a bound on the gradient norm over the whole unit simplex.
    SimplexBound,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwuConfig {
    /// `None` selects [`default_c`].
    pub c_constant: Option<f64>,
    /// Accept an explicit constant at or below [`c_threshold`].
    pub allow_small_c: bool,
    pub epsilon: StepSize,
    pub epsilon_scale: f64,
    pub max_iters: usize,
    /// Stop once the largest entry change of the unit-simplex iterate is at most this.
    pub step_tol: f64,
    /// Stop once the objective (original scale) changes by at most this.
    pub value_tol: f64,
    pub seed: u64,
    pub adaptive_safeguard: bool,
    /// Stop as soon as `F_t / F_0` drops below this.
    pub target_relative_error: Option<f64>,
    /// Worker threads for the entrywise update. `1` runs sequentially.
    pub threads: usize,
    /// Keep every unit-simplex iterate in the trace.
    pub keep_iterates: bool,
}

impl Default for MwuConfig {
    fn default() -> Self {
        Self {
            c_constant: None,
            allow_small_c: false,
            epsilon: StepSize::Auto,
            epsilon_scale: 1.0,
            max_iters: 200_000,
            step_tol: 1e-12,
            value_tol: 1e-14,
            seed: 0,
            adaptive_safeguard: true,
            target_relative_error: None,
            threads: 1,
            keep_iterates: false,
        }
    }
}

impl MwuConfig {
    fn validate(&self) -> Result<()> {
        if let Some(c) = self.c_constant {
            if !(c.is_finite() && c > 0.0) {
                return Err(NmfError::Config(format!("C must be positive, got {c}")));
            }
        }
        if !(self.epsilon_scale.is_finite() && self.epsilon_scale > 0.0) {
            return Err(NmfError::Config("epsilon_scale must be positive".into()));
        }
        if let StepSize::Fixed(e) = self.epsilon {
            if !(e.is_finite() && e > 0.0) {
                return Err(NmfError::Config(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(NmfError::Config("max_iters must be positive".into()));
        }
        if self.step_tol < 0.0 || self.value_tol < 0.0 {
            return Err(NmfError::Config("tolerances must be nonnegative".into()));
        }
        if self.threads == 0 {
            return Err(NmfError::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Resolves the constant `C` for `v` at rank `r`, enforcing the threshold.
    pub fn resolve_c(&self, v: &DenseMatrix, r: usize) -> Result<f64> {
        let threshold = c_threshold(v, r)?;
        match self.c_constant {
            None => default_c(v, r),
            Some(c) if c > threshold || self.allow_small_c => Ok(c),
            Some(c) => Err(NmfError::Config(format!(
                "C = {c} does not exceed 2 r (nm)^(1/4) sqrt(||V||_F) = {threshold}; \
                 pass the override to run anyway"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ConvergedStep,
    ConvergedValue,
    TargetReached,
    MaxIters,
    SafeguardExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `F` against the original `V` at `C` times the iterate.
    pub objective: f64,
    /// Largest entry change of the unit-simplex iterate in this step.
    pub max_change: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub c_constant: f64,
    /// Record 0 is the initial point; record `t` follows accepted step `t`.
    pub records: Vec<TraceRecord>,
    /// Unit-simplex iterates, parallel to `records`, when requested.
    pub iterates: Vec<SimplexState>,
    /// Final iterate scaled back to mass `C`.
    pub final_state: SimplexState,
    pub termination: Termination,
    pub epsilon_initial: f64,
    pub halvings: usize,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn initial_objective(&self) -> f64 {
        self.records[0].objective
    }

    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .expect("trace has an initial record")
            .objective
    }

    pub fn factors(&self) -> FactorPair {
        self.final_state.pair()
    }

    /// First iteration whose objective is below `target * F_0`.
    pub fn iterations_to_relative_error(&self, target: f64) -> Option<usize> {
        let f0 = self.initial_objective();
        self.records
            .iter()
            .find(|r| r.objective < target * f0)
            .map(|r| r.iteration)
    }
}

/// Runs the solver on `V` at rank `r`.
pub fn solve(v: &DenseMatrix, r: usize, cfg: &MwuConfig) -> Result<RunTrace> {
    cfg.validate()?;
    v.ensure_nonnegative()?;
    let c = cfg.resolve_c(v, r)?;
    if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| NmfError::Config(format!("thread pool: {e}")))?;
        pool.install(|| run(v, r, c, cfg, true))
    } else {
        run(v, r, c, cfg, false)
    }
}

fn initial_epsilon(cfg: &MwuConfig, v_scaled: &DenseMatrix, dim: usize, max_grad: f64) -> f64 {
    let bound = || 2.0 * (v_scaled.frobenius_norm() + 1.0) * (dim as f64).sqrt();
    match cfg.epsilon {
        StepSize::Fixed(e) => e,
        StepSize::SimplexBound => cfg.epsilon_scale / (2.0 * bound()),
        StepSize::Auto if max_grad > 0.0 => cfg.epsilon_scale / (2.0 * max_grad),
        StepSize::Auto => cfg.epsilon_scale / (2.0 * bound()),
    }
}

fn run(v: &DenseMatrix, r: usize, c: f64, cfg: &MwuConfig, parallel: bool) -> Result<RunTrace> {
    let (n, m) = v.shape();
    let c2 = c * c;
    let c4 = c2 * c2;
    let v_scaled = v.scaled(1.0 / c2);
    let v_norm_sq = v.frobenius_norm_sq();

    let mut state = SimplexState::random(n, r, m, cfg.seed);
    let mut f_scaled = evaluate(&v_scaled, &state.pair())?;
    let mut inputs = StepInputs::at(&v_scaled, &state)?;
    let mut eps = initial_epsilon(cfg, &v_scaled, n * r + r * m, inputs.max_grad());
    let epsilon_initial = eps;
    let f0 = c4 * f_scaled;

    let mut records = vec![TraceRecord {
        iteration: 0,
        objective: f0,
        max_change: 0.0,
        epsilon: eps,
    }];
    let mut iterates = Vec::new();
    if cfg.keep_iterates {
        iterates.push(state.clone());
    }
    let mut halvings = 0;
    let mut termination = Termination::MaxIters;

    'outer: for iteration in 1..=cfg.max_iters {
        let (next, f_next, change) = loop {
            match inputs.apply(&state, eps, parallel) {
                Ok(next) => {
                    let f_next = evaluate(&v_scaled, &next.pair())?;
                    let change = next.max_change(&state);
                    if !cfg.adaptive_safeguard || f_next <= f_scaled * (1.0 + MONOTONE_TOL) {
                        break (next, f_next, change);
                    }
                    if change <= cfg.step_tol {
                        // Rounding noise at a numerical fixed point.
                        termination = Termination::ConvergedStep;
                        break 'outer;
                    }
                }
                Err(e @ NmfError::StepTooLarge(_)) if !cfg.adaptive_safeguard => return Err(e),
                Err(NmfError::StepTooLarge(_)) => {}
                Err(e) => return Err(e),
            }
            eps *= 0.5;
            halvings += 1;
            if eps < EPSILON_FLOOR {
                termination = Termination::SafeguardExhausted;
                break 'outer;
            }
        };

        let objective = c4 * f_next;
        let previous = records.last().expect("non-empty").objective;
        state = next;
        f_scaled = f_next;
        records.push(TraceRecord {
            iteration,
            objective,
            max_change: change,
            epsilon: eps,
        });
        if cfg.keep_iterates {
            iterates.push(state.clone());
        }

        if iteration % SCALE_CHECK_EVERY == 0 {
            check_scale_identity(v, &state, c, objective, v_norm_sq)?;
        }

        if change <= cfg.step_tol {
            termination = Termination::ConvergedStep;
            break;
        }
        if (objective - previous).abs() <= cfg.value_tol {
            termination = Termination::ConvergedValue;
            break;
        }
        if let Some(target) = cfg.target_relative_error {
            if objective < target * f0 {
                termination = Termination::TargetReached;
                break;
            }
        }
        inputs = StepInputs::at(&v_scaled, &state)?;
    }

    log::debug!(
        "mwu finished after {} iterations: {:?}, {} halvings",
        records.last().map_or(0, |r| r.iteration),
        termination,
        halvings
    );

    Ok(RunTrace {
        c_constant: c,
        records,
        iterates,
        final_state: state.scaled(c),
        termination,
        epsilon_initial,
        halvings,
    })
}

/// `F(V; C W, C H)` must equal `C^4 F(V / C^2; W, H)`.
fn check_scale_identity(
    v: &DenseMatrix,
    s: &SimplexState,
    c: f64,
    scaled_objective: f64,
    v_norm_sq: f64,
) -> Result<()> {
    let direct = evaluate(v, &s.scaled(c).pair())?;
    let floor = 1e-6 * v_norm_sq;
    let scale = direct.max(scaled_objective).max(floor);
    if (direct - scaled_objective).abs() > SCALE_CHECK_TOL * scale {
        return Err(NmfError::Internal(format!(
            "scale identity violated: F(CW, CH) = {direct:e}, C^4 F_scaled = {scaled_objective:e}"
        )));
    }
    Ok(())
}
