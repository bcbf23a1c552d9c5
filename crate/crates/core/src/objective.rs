//! The factorization objective `F(W, H) = ||V - WH||_F^2` and its derivatives.
//!
//! Vectors over the variables use a single flattening order everywhere:
//! `vec(W)` first, then `vec(H)`, each column-major within its block. So
//! `W[i, k]` sits at `k * n + i` and `H[k, j]` at `n * r + j * r + k`.
//!
//! The Hessian is only ever applied, never stored.

use serde::{Deserialize, Serialize};

use crate::error::{NmfError, Result};
use crate::matrix::{matmul, matmul_at, matmul_bt, DenseMatrix};

/// A pair `(W, H)` with `W: n x r`, `H: r x m`.
///
/// Feasible points are unsigned. Gradients, Hessian-vector products and
/// test directions are marked `signed` and may hold negative entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPair {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    #[serde(default)]
    pub signed: bool,
}

impl FactorPair {
    pub fn new(w: DenseMatrix, h: DenseMatrix) -> Result<Self> {
        Self::build(w, h, false)
    }

    pub fn direction(w: DenseMatrix, h: DenseMatrix) -> Result<Self> {
        Self::build(w, h, true)
    }

    fn build(w: DenseMatrix, h: DenseMatrix, signed: bool) -> Result<Self> {
        if w.cols() != h.rows() {
            return Err(NmfError::Dimension(format!(
                "inner dimensions differ: W is {}x{}, H is {}x{}",
                w.rows(),
                w.cols(),
                h.rows(),
                h.cols()
            )));
        }
        Ok(Self { w, h, signed })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: DenseMatrix::zeros(self.n(), self.r()),
            h: DenseMatrix::zeros(self.r(), self.m()),
            signed: true,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.h.cols()
    }

    /// Number of variables, `nr + rm`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.n() * self.r() + self.r() * self.m()
    }

    /// Sum of all entries of both factors.
    pub fn mass(&self) -> f64 {
        self.w.sum() + self.h.sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w.shape() == other.w.shape() && self.h.shape() == other.h.shape()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(NmfError::Dimension(format!(
                "factor pairs differ in shape: ({}x{}, {}x{}) vs ({}x{}, {}x{})",
                self.n(),
                self.r(),
                self.r(),
                self.m(),
                other.n(),
                other.r(),
                other.r(),
                other.m()
            )));
        }
        Ok(())
    }

    pub fn product(&self) -> DenseMatrix {
        matmul(&self.w, &self.h).expect("inner dimensions checked at construction")
    }

    /// Position of `W[i, k]` in the flattened vector.
    #[inline]
    pub fn w_index(&self, i: usize, k: usize) -> usize {
        k * self.n() + i
    }

    /// Position of `H[k, j]` in the flattened vector.
    #[inline]
    pub fn h_index(&self, k: usize, j: usize) -> usize {
        self.n() * self.r() + j * self.r() + k
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let (n, r, m) = (self.n(), self.r(), self.m());
        let mut out = Vec::with_capacity(self.dim());
        for k in 0..r {
            out.extend((0..n).map(|i| self.w[(i, k)]));
        }
        for j in 0..m {
            out.extend((0..r).map(|k| self.h[(k, j)]));
        }
        out
    }

    pub fn from_flat(n: usize, r: usize, m: usize, flat: &[f64], signed: bool) -> Result<Self> {
        if flat.len() != n * r + r * m {
            return Err(NmfError::Dimension(format!(
                "flat vector of length {} cannot hold shapes {n}x{r} and {r}x{m}",
                flat.len()
            )));
        }
        let mut w = DenseMatrix::zeros(n, r);
        let mut h = DenseMatrix::zeros(r, m);
        for k in 0..r {
            for i in 0..n {
                w[(i, k)] = flat[k * n + i];
            }
        }
        let off = n * r;
        for j in 0..m {
            for k in 0..r {
                h[(k, j)] = flat[off + j * r + k];
            }
        }
        Ok(Self { w, h, signed })
    }

    /// `self + t * d`.
    pub fn axpy(&self, t: f64, d: &Self) -> Result<Self> {
        self.check_same_shape(d)?;
        Ok(Self {
            w: self.w.add(&d.w.scaled(t))?,
            h: self.h.add(&d.h.scaled(t))?,
            signed: self.signed || d.signed,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            w: self.w.scaled(alpha),
            h: self.h.scaled(alpha),
            signed: self.signed || alpha < 0.0,
        }
    }

    /// Inner product of the flattened vectors, summed W block first.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.w.dot(&other.w)? + self.h.dot(&other.h)?)
    }

    pub fn max_abs(&self) -> f64 {
        self.w.max_abs().max(self.h.max_abs())
    }

    pub fn min_entry(&self) -> f64 {
        self.w.min().min(self.h.min())
    }
}

fn check_problem(v: &DenseMatrix, p: &FactorPair) -> Result<()> {
    if v.rows() != p.n() || v.cols() != p.m() {
        return Err(NmfError::Dimension(format!(
            "V is {}x{} but W*H is {}x{}",
            v.rows(),
            v.cols(),
            p.n(),
            p.m()
        )));
    }
    Ok(())
}

/// `V - WH`.
pub fn residual(v: &DenseMatrix, p: &FactorPair) -> Result<DenseMatrix> {
    check_problem(v, p)?;
    v.sub(&p.product())
}

/// `||V - WH||_F^2`.
pub fn evaluate(v: &DenseMatrix, p: &FactorPair) -> Result<f64> {
    Ok(residual(v, p)?.frobenius_norm_sq())
}

/// `(-2 (V - WH) H^T, -2 W^T (V - WH))`.
pub fn gradient(v: &DenseMatrix, p: &FactorPair) -> Result<FactorPair> {
    let r = residual(v, p)?;
    gradient_from_residual(&r, p)
}

pub(crate) fn gradient_from_residual(r: &DenseMatrix, p: &FactorPair) -> Result<FactorPair> {
    let gw = matmul_bt(r, &p.h)?.scaled(-2.0);
    let gh = matmul_at(&p.w, r)?.scaled(-2.0);
    FactorPair::direction(gw, gh)
}

/// `nabla^2 F(p) d`, returned in factor-pair shape.
///
/// With `R = V - WH` and `S = dW H + W dH`:
/// the W block is `2 S H^T - 2 R dH^T`, the H block is `2 W^T S - 2 dW^T R`.
pub fn hessian_vector_product(
    v: &DenseMatrix,
    p: &FactorPair,
    d: &FactorPair,
) -> Result<FactorPair> {
    check_problem(v, p)?;
    p.check_same_shape(d)?;
    let r = v.sub(&p.product())?;
    let s = matmul(&d.w, &p.h)?.add(&matmul(&p.w, &d.h)?)?;
    let hw = matmul_bt(&s, &p.h)?
        .scaled(2.0)
        .sub(&matmul_bt(&r, &d.h)?.scaled(2.0))?;
    let hh = matmul_at(&p.w, &s)?
        .scaled(2.0)
        .sub(&matmul_at(&d.w, &r)?.scaled(2.0))?;
    FactorPair::direction(hw, hh)
}

/// `d^T nabla^2 F(p) d`.
pub fn hessian_quadratic_form(v: &DenseMatrix, p: &FactorPair, d: &FactorPair) -> Result<f64> {
    hessian_vector_product(v, p, d)?.dot(d)
}

/// Direction keeping column `k` of `W`, negating row `k` of `H`, zero elsewhere.
///
/// The Hessian at `p` maps it to `-grad_W F` on column `k` of the W block,
/// `+grad_H F` on row `k` of the H block, and zero everywhere else.
/// `column` is zero-based.
pub fn special_direction(p: &FactorPair, column: usize) -> Result<FactorPair> {
    if column >= p.r() {
        return Err(NmfError::Dimension(format!(
            "column index {column} out of range for rank {}",
            p.r()
        )));
    }
    let mut d = p.zeros_like();
    for i in 0..p.n() {
        d.w[(i, column)] = p.w[(i, column)];
    }
    for j in 0..p.m() {
        d.h[(column, j)] = -p.h[(column, j)];
    }
    Ok(d)
}
