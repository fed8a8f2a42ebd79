//! Dense row-major matrices and the handful of kernels the solvers share.
//!
//! Every reduction sums left to right so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

pub const DEFAULT_SVD_TOL: f64 = 1e-10;
pub const DEFAULT_SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vector {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn scaled(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm2(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Euclidean distance between equal-length slices.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "axpy of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `m · v` with `v` of length `m.cols()`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if v.len() != m.cols {
        return Err(Error::shape(format!(
            "matvec of {}x{} matrix with length-{} vector",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    Ok(m.row_iter().map(|r| dot_unchecked(r, v)).collect())
}

/// Row-vector product `vᵀ · m` with `v` of length `m.rows()`.
pub fn vecmat(v: &[f64], m: &Matrix) -> Result<Vector> {
    if v.len() != m.rows {
        return Err(Error::shape(format!(
            "length-{} row vector times {}x{} matrix",
            v.len(),
            m.rows,
            m.cols
        )));
    }
    Ok(vecmat_unchecked(v, m))
}

pub(crate) fn vecmat_unchecked(v: &[f64], m: &Matrix) -> Vector {
    let mut out = vec![0.0; m.cols];
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(m.row(r)) {
            *o += vr * w;
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let row = vecmat_unchecked(a.row(r), b);
        out.data[r * b.cols..(r + 1) * b.cols].copy_from_slice(&row);
    }
    Ok(out)
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// Starts from the normalized all-ones vector. Once converged, the iteration
/// is restarted a single time from the result with `1e-8` added to its first
/// coordinate, so a start vector orthogonal to the top singular direction
/// cannot lock onto a smaller singular value.
pub fn largest_singular_value(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::invalid("singular value of an empty matrix"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = m.cols;
    let start = vec![1.0 / (n as f64).sqrt(); n];
    let first = power_iterate(m, start, tol, max_iter)?;
    let Some((lambda, v)) = first else {
        // all-ones lies in the null space; perturb and restart
        let mut start = vec![1.0; n];
        start[0] += 1e-8;
        return match power_iterate(m, normalized(start), tol, max_iter)? {
            Some((lambda, _)) => Ok(lambda.max(0.0).sqrt()),
            None => Ok(0.0),
        };
    };
    let mut restart = v;
    restart[0] += 1e-8;
    let lambda = match power_iterate(m, normalized(restart), tol, max_iter)? {
        Some((second, _)) => lambda.max(second),
        None => lambda,
    };
    Ok(lambda.max(0.0).sqrt())
}

fn normalized(mut v: Vector) -> Vector {
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Returns `None` when the iterate falls into the null space of `m`.
fn power_iterate(
    m: &Matrix,
    mut v: Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Option<(f64, Vector)>> {
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mv = matvec(m, &v)?;
        let w = vecmat_unchecked(&mv, m);
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(None);
        }
        let lambda = dot_unchecked(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda {
            return Ok(Some((lambda, v)));
        }
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Err(Error::NonConvergence {
        solver: "power iteration",
        iterations: max_iter,
        residual,
        last_iterate: v,
    })
}

/// Euclidean projection onto the probability simplex `{a : a >= 0, sum(a) = 1}`
/// by the sort-and-threshold rule.
pub fn project_to_simplex(v: &[f64]) -> Vector {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
/// Returns `None` if a pivot drops below `rel_pivot` times the largest
/// diagonal entry.
pub(crate) fn cholesky_solve(a: &Matrix, b: &[f64], rel_pivot: f64) -> Option<Vector> {
    let n = a.rows;
    debug_assert_eq!(a.cols, n);
    debug_assert_eq!(b.len(), n);
    let max_diag = (0..n).map(|i| a.get(i, i)).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) {
        return if n == 0 { Some(Vec::new()) } else { None };
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= rel_pivot * max_diag {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}
