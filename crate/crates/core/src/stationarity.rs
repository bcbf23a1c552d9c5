//! First- and second-order stationarity checks for NMF and for the
//! mass-constrained variant (S-NMF: entries of `W` and `H` sum to `C`).
//!
//! Second-order conditions ask for a nonnegative Hessian quadratic form on a
//! polyhedral cone of directions:
//!
//! * coordinates whose partial exceeds the multiplier (`0` for NMF, `c` for
//!   S-NMF) are pinned to zero,
//! * coordinates at zero are sign-constrained to be nonnegative,
//! * the rest are free,
//! * for S-NMF the direction must also sum to zero.
//!
//! Deciding copositivity on that cone is hard in general, so the checks run in
//! two stages. The Hessian restricted to the free linear subspace is certified
//! exactly by its smallest eigenvalue. When sign-constrained coordinates exist
//! the full cone is then probed with deterministic and random directions. A
//! violation is always backed by a concrete witness direction inside the cone.
//! A clean pass is labeled with how it was obtained.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NmfError, Result};
use crate::linalg::{sum_zero_basis, symmetric_eigen, SymMatrix};
use crate::matrix::DenseMatrix;
use crate::objective::{gradient, hessian_quadratic_form, hessian_vector_product, FactorPair};

pub const DEFAULT_CONE_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Entries at or below this count as zero.
    pub zero_tol: f64,
    /// Slack on partial-derivative (in)equalities.
    pub grad_tol: f64,
    /// Curvature below `-eig_tol` (per unit squared direction norm) is a violation.
    pub eig_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            zero_tol: 1e-8,
            grad_tol: 1e-6,
            eig_tol: 1e-8,
        }
    }
}

impl Tolerances {
    /// Defaults multiplied by `max(1, ||V||_F)`.
    pub fn scaled_for(v: &DenseMatrix) -> Self {
        Self::default().scaled(v.frobenius_norm().max(1.0))
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            zero_tol: self.zero_tol * factor,
            grad_tol: self.grad_tol * factor,
            eig_tol: self.eig_tol * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Problem {
    #[serde(rename = "NMF")]
    Nmf,
    #[serde(rename = "S-NMF")]
    SNmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "NotFOSP")]
    NotFosp,
    #[serde(rename = "FOSP-only")]
    FospOnly,
    #[serde(rename = "SOSP-candidate")]
    SospCandidate,
    #[serde(rename = "SOSP-violated")]
    SospViolated,
}

impl Classification {
    pub fn is_fosp(self) -> bool {
        !matches!(self, Classification::NotFosp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    W,
    H,
}

/// A single coordinate: `W[i, j]` or `H[i, j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub block: Block,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderViolation {
    pub entry: Entry,
    pub value: f64,
    pub partial: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub direction: FactorPair,
    pub quadratic_form: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificationMode {
    /// The cone is a linear subspace and was certified by its smallest eigenvalue.
    SubspaceEigen,
    /// The free subspace was certified; the rest of the cone was probed with this many directions.
    ConeSampled(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub problem: Problem,
    pub classification: Classification,
    /// Common value of the partials on the support (S-NMF only).
    pub multiplier_c: Option<f64>,
    /// Entries judged to be zero.
    pub active_set: Vec<Entry>,
    pub first_order_violation: Option<FirstOrderViolation>,
    pub witness: Option<Witness>,
    /// Smallest eigenvalue of the Hessian on the free subspace, if non-empty.
    pub min_free_eigenvalue: Option<f64>,
    pub tolerances: Tolerances,
    pub certification_mode: Option<CertificationMode>,
}

fn entry_of(p: &FactorPair, idx: usize) -> Entry {
    let nr = p.n() * p.r();
    if idx < nr {
        Entry {
            block: Block::W,
            i: idx % p.n(),
            j: idx / p.n(),
        }
    } else {
        let rem = idx - nr;
        Entry {
            block: Block::H,
            i: rem % p.r(),
            j: rem / p.r(),
        }
    }
}

fn check_feasible_shape(v: &DenseMatrix, p: &FactorPair, tol: &Tolerances) -> Result<()> {
    if v.rows() != p.n() || v.cols() != p.m() {
        return Err(NmfError::Dimension(format!(
            "V is {}x{} but W*H is {}x{}",
            v.rows(),
            v.cols(),
            p.n(),
            p.m()
        )));
    }
    let x = p.to_flat();
    if let Some(idx) = x.iter().position(|&e| e < -tol.zero_tol) {
        let e = entry_of(p, idx);
        return Err(NmfError::Negative {
            row: e.i,
            col: e.j,
            value: x[idx],
        });
    }
    Ok(())
}

/// Shared first-order test against a multiplier `c`.
fn first_order(
    problem: Problem,
    p: &FactorPair,
    x: &[f64],
    g: &[f64],
    c: f64,
    tol: &Tolerances,
) -> StationarityReport {
    let mut active_set = Vec::new();
    let mut violation = None;
    for (idx, (&xi, &gi)) in x.iter().zip(g).enumerate() {
        if xi > tol.zero_tol {
            if violation.is_none() && (gi - c).abs() > tol.grad_tol {
                violation = Some(FirstOrderViolation {
                    entry: entry_of(p, idx),
                    value: xi,
                    partial: gi,
                    reason: format!(
                        "positive entry with partial {gi:e} differing from {c:e} by more than {:e}",
                        tol.grad_tol
                    ),
                });
            }
        } else {
            active_set.push(entry_of(p, idx));
            if violation.is_none() && gi < c - tol.grad_tol {
                violation = Some(FirstOrderViolation {
                    entry: entry_of(p, idx),
                    value: xi,
                    partial: gi,
                    reason: format!(
                        "zero entry with partial {gi:e} below {c:e} by more than {:e}",
                        tol.grad_tol
                    ),
                });
            }
        }
    }
    StationarityReport {
        problem,
        classification: if violation.is_some() {
            Classification::NotFosp
        } else {
            Classification::FospOnly
        },
        multiplier_c: match problem {
            Problem::Nmf => None,
            Problem::SNmf => Some(c),
        },
        active_set,
        first_order_violation: violation,
        witness: None,
        min_free_eigenvalue: None,
        tolerances: *tol,
        certification_mode: None,
    }
}

/// First-order (KKT) conditions of unconstrained NMF.
pub fn check_fosp_nmf(
    v: &DenseMatrix,
    p: &FactorPair,
    tol: &Tolerances,
) -> Result<StationarityReport> {
    check_feasible_shape(v, p, tol)?;
    let g = gradient(v, p)?.to_flat();
    Ok(first_order(Problem::Nmf, p, &p.to_flat(), &g, 0.0, tol))
}

/// Mass-weighted mean of the partials over entries above `zero_tol`.
pub fn estimate_multiplier(x: &[f64], g: &[f64], zero_tol: f64) -> Option<f64> {
    let (num, den) = x
        .iter()
        .zip(g)
        .filter(|(&xi, _)| xi > zero_tol)
        .fold((0.0, 0.0), |(num, den), (&xi, &gi)| {
            (num + xi * gi, den + xi)
        });
    (den > 0.0).then(|| num / den)
}

fn check_mass(p: &FactorPair, c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(NmfError::Config(format!("C must be positive, got {c}")));
    }
    let mass = p.mass();
    if (mass - c).abs() > 1e-8 * c {
        return Err(NmfError::Config(format!(
            "entries of W and H sum to {mass}, expected C = {c}"
        )));
    }
    Ok(())
}

/// First-order conditions of S-NMF with total mass `c_total`.
pub fn check_fosp_snmf(
    v: &DenseMatrix,
    p: &FactorPair,
    c_total: f64,
    tol: &Tolerances,
) -> Result<StationarityReport> {
    check_feasible_shape(v, p, tol)?;
    check_mass(p, c_total)?;
    let x = p.to_flat();
    let g = gradient(v, p)?.to_flat();
    let c = estimate_multiplier(&x, &g, tol.zero_tol).ok_or_else(|| {
        NmfError::Degenerate("no entry above zero_tol to define the multiplier".into())
    })?;
    Ok(first_order(Problem::SNmf, p, &x, &g, c, tol))
}

/// Second-order conditions of unconstrained NMF.
pub fn check_sosp_nmf<R: Rng + ?Sized>(
    v: &DenseMatrix,
    p: &FactorPair,
    tol: &Tolerances,
    samples: usize,
    rng: &mut R,
) -> Result<StationarityReport> {
    let report = check_fosp_nmf(v, p, tol)?;
    if !report.classification.is_fosp() {
        return Ok(report);
    }
    second_order(v, p, 0.0, false, report, samples, rng)
}

/// Second-order conditions of S-NMF: same cone plus `sum(direction) = 0`.
pub fn check_sosp_snmf<R: Rng + ?Sized>(
    v: &DenseMatrix,
    p: &FactorPair,
    c_total: f64,
    tol: &Tolerances,
    samples: usize,
    rng: &mut R,
) -> Result<StationarityReport> {
    let report = check_fosp_snmf(v, p, c_total, tol)?;
    if !report.classification.is_fosp() {
        return Ok(report);
    }
    let c = report.multiplier_c.expect("S-NMF reports carry c");
    second_order(v, p, c, true, report, samples, rng)
}

/// Coordinates of the direction cone, as indices into the flattened vector.
struct Cone {
    /// Unpinned coordinates: `free` followed by `constrained`.
    unpinned: Vec<usize>,
    n_free: usize,
    sum_zero: bool,
}

impl Cone {
    fn n_constrained(&self) -> usize {
        self.unpinned.len() - self.n_free
    }

    /// Lifts a vector over the unpinned coordinates to a full direction.
    fn lift(&self, p: &FactorPair, local: &[f64]) -> FactorPair {
        let mut flat = vec![0.0; p.dim()];
        for (&idx, &val) in self.unpinned.iter().zip(local) {
            flat[idx] = val;
        }
        FactorPair::from_flat(p.n(), p.r(), p.m(), &flat, true).expect("shape preserved")
    }
}

/// Hessian restricted to `coords`, one Hessian-vector product per coordinate.
fn restricted_hessian(v: &DenseMatrix, p: &FactorPair, coords: &[usize]) -> Result<SymMatrix> {
    let k = coords.len();
    let mut out = SymMatrix::zeros(k);
    let mut unit = vec![0.0; p.dim()];
    for (col, &idx) in coords.iter().enumerate() {
        unit[idx] = 1.0;
        let e = FactorPair::from_flat(p.n(), p.r(), p.m(), &unit, true)?;
        unit[idx] = 0.0;
        let hv = hessian_vector_product(v, p, &e)?.to_flat();
        for (row, &jdx) in coords.iter().enumerate() {
            out.set(row, col, hv[jdx]);
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            let s = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

/// Minimizer of the form over the free part, holding the constrained part fixed.
struct FreeSolver {
    /// Basis of the free directions, each of length `n_free`.
    basis: Vec<Vec<f64>>,
    /// Eigenpairs of the Hessian in that basis.
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl FreeSolver {
    /// Sets the free part of `d` (length = unpinned) to minimize `d^T M d`,
    /// keeping its constrained part and, for S-NMF, the zero total.
    fn complete(&self, m: &SymMatrix, cone: &Cone, d: &mut [f64], eig_tol: f64) {
        let f = cone.n_free;
        if f == 0 {
            return;
        }
        // Particular solution: spread the mass deficit evenly over the free part.
        let base = if cone.sum_zero {
            -d[f..].iter().sum::<f64>() / f as f64
        } else {
            0.0
        };
        d[..f].fill(base);
        let md = m.mul_vec(d);
        // Gradient of the form along each basis direction is 2 * b_i.
        let b: Vec<f64> = self
            .basis
            .iter()
            .map(|q| q.iter().zip(&md[..f]).map(|(x, y)| x * y).sum())
            .collect();
        let mut y = vec![0.0; self.basis.len()];
        for (lambda, u) in self.values.iter().zip(&self.vectors) {
            if *lambda > eig_tol {
                let coef = -u.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>() / lambda;
                for (yi, ui) in y.iter_mut().zip(u) {
                    *yi += coef * ui;
                }
            }
        }
        for (q, yi) in self.basis.iter().zip(&y) {
            for (di, qi) in d[..f].iter_mut().zip(q) {
                *di += yi * qi;
            }
        }
    }
}

fn normalized_form(m: &SymMatrix, d: &[f64]) -> Option<f64> {
    let nn: f64 = d.iter().map(|x| x * x).sum();
    (nn > 0.0).then(|| m.form(d) / nn)
}

#[allow(clippy::too_many_arguments)]
fn second_order<R: Rng + ?Sized>(
    v: &DenseMatrix,
    p: &FactorPair,
    c: f64,
    sum_zero: bool,
    mut report: StationarityReport,
    samples: usize,
    rng: &mut R,
) -> Result<StationarityReport> {
    let tol = report.tolerances;
    let x = p.to_flat();
    let g = gradient(v, p)?.to_flat();

    let mut free = Vec::new();
    let mut constrained = Vec::new();
    for (idx, (&xi, &gi)) in x.iter().zip(&g).enumerate() {
        if gi - c > tol.grad_tol {
            continue;
        }
        if xi > tol.zero_tol {
            free.push(idx);
        } else {
            constrained.push(idx);
        }
    }
    let cone = Cone {
        n_free: free.len(),
        unpinned: free.into_iter().chain(constrained).collect(),
        sum_zero,
    };
    let m = restricted_hessian(v, p, &cone.unpinned)?;

    // Stage 1: the free subspace.
    let f = cone.n_free;
    let basis: Vec<Vec<f64>> = if sum_zero {
        sum_zero_basis(f)
    } else {
        (0..f)
            .map(|i| {
                let mut e = vec![0.0; f];
                e[i] = 1.0;
                e
            })
            .collect()
    };
    let mut m_free = SymMatrix::zeros(f);
    for i in 0..f {
        for j in 0..f {
            m_free.set(i, j, m.get(i, j));
        }
    }
    let projected = m_free.congruence(&basis);
    let eig = symmetric_eigen(&projected);
    report.min_free_eigenvalue = eig.values.first().copied();

    let witness_from = |local: &[f64]| -> Result<Witness> {
        let direction = cone.lift(p, local);
        let quadratic_form = hessian_quadratic_form(v, p, &direction)?;
        Ok(Witness {
            direction,
            quadratic_form,
        })
    };

    if let Some(&lambda) = eig.values.first() {
        if lambda < -tol.eig_tol {
            let y = &eig.vectors[0];
            let mut local = vec![0.0; cone.unpinned.len()];
            for (q, yi) in basis.iter().zip(y) {
                for (li, qi) in local[..f].iter_mut().zip(q) {
                    *li += yi * qi;
                }
            }
            report.classification = Classification::SospViolated;
            report.witness = Some(witness_from(&local)?);
            report.certification_mode = Some(CertificationMode::SubspaceEigen);
            return Ok(report);
        }
    }

    // With no sign-constrained coordinates, or with nothing to balance them
    // against under the zero-sum constraint, the cone is the free subspace.
    if cone.n_constrained() == 0 || (sum_zero && f == 0) {
        report.classification = Classification::SospCandidate;
        report.certification_mode = Some(CertificationMode::SubspaceEigen);
        return Ok(report);
    }

    // Stage 2: probe the cone.
    let solver = FreeSolver {
        basis,
        values: eig.values,
        vectors: eig.vectors,
    };
    let k = cone.unpinned.len();
    let nc = cone.n_constrained();
    let mut probes: Vec<Vec<f64>> = Vec::with_capacity(nc + 1 + samples);
    probes.push((0..k).map(|i| if i < f { 0.0 } else { 1.0 }).collect());
    for j in 0..nc {
        let mut d = vec![0.0; k];
        d[f + j] = 1.0;
        probes.push(d);
    }
    let deterministic = probes.len();
    for _ in 0..samples {
        let d: Vec<f64> = (0..k)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if i < f {
                    z
                } else {
                    z.abs()
                }
            })
            .collect();
        probes.push(d);
    }

    for (n_probe, raw) in probes.into_iter().enumerate() {
        let mut candidates = Vec::with_capacity(2);
        let mut as_is = raw.clone();
        if sum_zero {
            let total: f64 = as_is.iter().sum();
            let shift = total / f as f64;
            as_is[..f].iter_mut().for_each(|v| *v -= shift);
        }
        candidates.push(as_is);
        let mut completed = raw;
        solver.complete(&m, &cone, &mut completed, tol.eig_tol);
        candidates.push(completed);
        for d in candidates {
            if let Some(q) = normalized_form(&m, &d) {
                if q < -tol.eig_tol {
                    report.classification = Classification::SospViolated;
                    report.witness = Some(witness_from(&d)?);
                    // Random samples drawn before the witness turned up.
                    let sampled = (n_probe + 1).saturating_sub(deterministic);
                    report.certification_mode = Some(CertificationMode::ConeSampled(sampled));
                    return Ok(report);
                }
            }
        }
    }
    report.classification = Classification::SospCandidate;
    report.certification_mode = Some(CertificationMode::ConeSampled(samples));
    Ok(report)
}

/// For each `k`: does column `k` of `W` carry the same mass as row `k` of `H`?
pub fn column_balance_check(p: &FactorPair, tol: f64) -> Vec<bool> {
    (0..p.r())
        .map(|k| (column_mass(&p.w, k) - row_mass(&p.h, k)).abs() <= tol)
        .collect()
}

fn column_mass(w: &DenseMatrix, k: usize) -> f64 {
    (0..w.rows()).map(|i| w[(i, k)]).sum()
}

fn row_mass(h: &DenseMatrix, k: usize) -> f64 {
    h.row(k).iter().sum()
}

/// Rescales every column of `W` and matching row of `H` to equal mass,
/// keeping the product `WH` unchanged.
pub fn balance_columns(p: &FactorPair) -> Result<FactorPair> {
    let mut w = p.w.clone();
    let mut h = p.h.clone();
    for k in 0..p.r() {
        let a = column_mass(&p.w, k);
        let b = row_mass(&p.h, k);
        match (a == 0.0, b == 0.0) {
            (true, true) => continue,
            (false, false) => {}
            _ => {
                return Err(NmfError::Degenerate(format!(
                    "column {k} of W has mass {a} but row {k} of H has mass {b}; \
                     both must be zero or both nonzero"
                )))
            }
        }
        let s = (b / a).sqrt();
        for i in 0..p.n() {
            w[(i, k)] *= s;
        }
        for j in 0..p.m() {
            h[(k, j)] /= s;
        }
    }
    FactorPair::new(w, h)
}

/// Maps a nonnegative pair to one with the same product and total mass `c_total`.
///
/// Columns are balanced first, then `(t W, H / t)` with `t` the larger root of
/// `t |W| + |H| / t = c_total`.
pub fn rescale_to_simplex(p: &FactorPair, c_total: f64) -> Result<FactorPair> {
    if !(c_total.is_finite() && c_total > 0.0) {
        return Err(NmfError::Config(format!(
            "C must be positive, got {c_total}"
        )));
    }
    p.w.ensure_nonnegative()?;
    p.h.ensure_nonnegative()?;
    let balanced = balance_columns(p)?;
    let a = balanced.w.sum();
    let b = balanced.h.sum();
    if a == 0.0 || b == 0.0 {
        return Err(NmfError::Degenerate(
            "W H = 0: no scaling reaches a positive mass".into(),
        ));
    }
    let disc = c_total * c_total - 4.0 * a * b;
    if disc < 0.0 {
        return Err(NmfError::Config(format!(
            "balanced mass {} exceeds C = {c_total}; choose C above 2 r (nm)^(1/4) sqrt(||V||_F)",
            2.0 * (a * b).sqrt()
        )));
    }
    let t = (c_total + disc.sqrt()) / (2.0 * a);
    FactorPair::new(balanced.w.scaled(t), balanced.h.scaled(1.0 / t))
}
