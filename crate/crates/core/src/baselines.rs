//! Lee–Seung multiplicative updates, alternating and concurrent.
//!
//! The alternating rule is monotone. Updating both factors from the same
//! iterate is not, and can cycle forever (see [`oscillation_instance`]).

use serde::{Deserialize, Serialize};

use crate::error::{NmfError, Result};
use crate::matrix::{matmul, matmul_at, matmul_bt, DenseMatrix};
use crate::objective::{evaluate, FactorPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuVariant {
    /// `W` first, then `H` from the new `W`.
    Alternating,
    /// Both factors from the previous iterate.
    Concurrent,
    /// Concurrent, with the numerators swapped between `W` and `H`.
    /// Only conformable when `n == m == r`.
    ConcurrentSwapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuConfig {
    pub variant: MuVariant,
    pub max_iters: usize,
    /// Stop when the objective changes by at most this. Negative disables.
    pub value_tol: f64,
    pub zero_division_floor: f64,
}

impl Default for MuConfig {
    fn default() -> Self {
        Self {
            variant: MuVariant::Alternating,
            max_iters: 1000,
            value_tol: -1.0,
            zero_division_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuStep {
    pub pair: FactorPair,
    /// Denominator entries that were raised to the floor.
    pub floored: usize,
}

/// `x * num / max(den, floor)` entrywise.
fn ratio_update(
    x: &DenseMatrix,
    num: &DenseMatrix,
    den: &DenseMatrix,
    floor: f64,
    floored: &mut usize,
) -> DenseMatrix {
    let mut out = x.clone();
    let it = out
        .as_mut_slice()
        .iter_mut()
        .zip(num.as_slice())
        .zip(den.as_slice());
    for ((o, &n), &d) in it {
        let d = if d < floor {
            *floored += 1;
            floor
        } else {
            d
        };
        *o *= n / d;
    }
    out
}

fn update_w(
    v: &DenseMatrix,
    w: &DenseMatrix,
    h: &DenseMatrix,
    floor: f64,
    floored: &mut usize,
) -> Result<DenseMatrix> {
    let num = matmul_bt(v, h)?;
    let den = matmul_bt(&matmul(w, h)?, h)?;
    Ok(ratio_update(w, &num, &den, floor, floored))
}

fn update_h(
    v: &DenseMatrix,
    w: &DenseMatrix,
    h: &DenseMatrix,
    floor: f64,
    floored: &mut usize,
) -> Result<DenseMatrix> {
    let num = matmul_at(w, v)?;
    let den = matmul(&matmul_at(w, w)?, h)?;
    Ok(ratio_update(h, &num, &den, floor, floored))
}

fn check_floor(floor: f64) -> Result<()> {
    if floor.is_nan() || floor <= 0.0 {
        return Err(NmfError::Config(format!(
            "zero_division_floor must be positive, got {floor}"
        )));
    }
    Ok(())
}

pub fn lee_seung_step_alternating(v: &DenseMatrix, p: &FactorPair, floor: f64) -> Result<MuStep> {
    check_floor(floor)?;
    let mut floored = 0;
    let w = update_w(v, &p.w, &p.h, floor, &mut floored)?;
    let h = update_h(v, &w, &p.h, floor, &mut floored)?;
    Ok(MuStep {
        pair: FactorPair::new(w, h)?,
        floored,
    })
}

pub fn lee_seung_step_concurrent(v: &DenseMatrix, p: &FactorPair, floor: f64) -> Result<MuStep> {
    check_floor(floor)?;
    let mut floored = 0;
    let w = update_w(v, &p.w, &p.h, floor, &mut floored)?;
    let h = update_h(v, &p.w, &p.h, floor, &mut floored)?;
    Ok(MuStep {
        pair: FactorPair::new(w, h)?,
        floored,
    })
}

/// `W <- W * (W^T V) / (W^T W H)`, `H <- H * (V H^T) / (W H H^T)`.
pub fn lee_seung_step_swapped(v: &DenseMatrix, p: &FactorPair, floor: f64) -> Result<MuStep> {
    check_floor(floor)?;
    let (n, r, m) = (p.n(), p.r(), p.m());
    if !(n == r && r == m) {
        return Err(NmfError::Dimension(format!(
            "swapped update needs n == m == r, got n={n}, m={m}, r={r}"
        )));
    }
    let mut floored = 0;
    let w_num = matmul_at(&p.w, v)?;
    let w_den = matmul(&matmul_at(&p.w, &p.w)?, &p.h)?;
    let h_num = matmul_bt(v, &p.h)?;
    let h_den = matmul_bt(&matmul(&p.w, &p.h)?, &p.h)?;
    let w = ratio_update(&p.w, &w_num, &w_den, floor, &mut floored);
    let h = ratio_update(&p.h, &h_num, &h_den, floor, &mut floored);
    Ok(MuStep {
        pair: FactorPair::new(w, h)?,
        floored,
    })
}

pub fn lee_seung_step(
    v: &DenseMatrix,
    p: &FactorPair,
    variant: MuVariant,
    floor: f64,
) -> Result<MuStep> {
    match variant {
        MuVariant::Alternating => lee_seung_step_alternating(v, p, floor),
        MuVariant::Concurrent => lee_seung_step_concurrent(v, p, floor),
        MuVariant::ConcurrentSwapped => lee_seung_step_swapped(v, p, floor),
    }
}

#[derive(Debug, Clone)]
pub struct MuTrace {
    /// `objectives[0]` is the starting value; entry `t` follows step `t`.
    pub objectives: Vec<f64>,
    pub final_pair: FactorPair,
    pub floor_events: usize,
}

impl MuTrace {
    pub fn iterations(&self) -> usize {
        self.objectives.len() - 1
    }
}

pub fn run_lee_seung(v: &DenseMatrix, init: &FactorPair, cfg: &MuConfig) -> Result<MuTrace> {
    check_floor(cfg.zero_division_floor)?;
    let mut p = init.clone();
    let mut objectives = vec![evaluate(v, &p)?];
    let mut floor_events = 0;
    for _ in 0..cfg.max_iters {
        let step = lee_seung_step(v, &p, cfg.variant, cfg.zero_division_floor)?;
        floor_events += step.floored;
        p = step.pair;
        let f = evaluate(v, &p)?;
        let prev = *objectives.last().expect("non-empty");
        objectives.push(f);
        if (f - prev).abs() <= cfg.value_tol {
            break;
        }
    }
    Ok(MuTrace {
        objectives,
        final_pair: p,
        floor_events,
    })
}

/// `V = I_2`, `W = H = ones(2, 2)`.
pub fn oscillation_instance() -> (DenseMatrix, FactorPair) {
    let ones = DenseMatrix::filled(2, 2, 1.0);
    (
        DenseMatrix::identity(2),
        FactorPair::new(ones.clone(), ones).expect("2x2 factors"),
    )
}
