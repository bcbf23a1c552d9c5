//! Small dense symmetric eigensolver used by the second-order checks.

/// Square symmetric matrix stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct SymMatrix {
    pub n: usize,
    pub a: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    /// `x^T A x`.
    pub fn form(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let ri: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            total += x[i] * ri;
        }
        total
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `B^T A B` for `B` given as `k` columns of length `n`.
    pub fn congruence(&self, basis: &[Vec<f64>]) -> SymMatrix {
        let k = basis.len();
        let ab: Vec<Vec<f64>> = basis.iter().map(|b| self.mul_vec(b)).collect();
        let mut out = SymMatrix::zeros(k);
        for (i, bi) in basis.iter().enumerate() {
            for (j, abj) in ab.iter().enumerate().skip(i) {
                let v: f64 = bi.iter().zip(abj).map(|(x, y)| x * y).sum();
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

/// Eigenpairs of a symmetric matrix, ascending by eigenvalue.
#[derive(Debug, Clone)]
pub(crate) struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[i]` belongs to `values[i]`, unit 2-norm.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub(crate) fn symmetric_eigen(m: &SymMatrix) -> Eigen {
    let n = m.n;
    let mut a = m.a.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    Eigen {
        values: order.iter().map(|&i| a[i * n + i]).collect(),
        vectors: order
            .iter()
            .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
            .collect(),
    }
}

/// Orthonormal basis (as `f - 1` vectors) of `{x in R^f : sum x = 0}`.
///
/// Columns 2..f of the Householder reflector sending `1/sqrt(f)` to `e_1`.
pub(crate) fn sum_zero_basis(f: usize) -> Vec<Vec<f64>> {
    if f < 2 {
        return Vec::new();
    }
    let q = 1.0 / (f as f64).sqrt();
    let mut u = vec![q; f];
    u[0] -= 1.0;
    let uu: f64 = u.iter().map(|x| x * x).sum();
    (1..f)
        .map(|col| {
            (0..f)
                .map(|row| {
                    let id = if row == col { 1.0 } else { 0.0 };
                    id - 2.0 * u[row] * u[col] / uu
                })
                .collect()
        })
        .collect()
}
