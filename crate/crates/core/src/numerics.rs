//! Dense `f64` kernels shared by every other module.
//!
//! Matrices are row-major. Products go through `matrixmultiply::dgemm`; the
//! angle, projection and singular-value primitives are written out here.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

/// Norm below which a vector is treated as degenerate (angle/projection undefined).
pub const DEGENERATE_NORM: f64 = 1e-30;

/// Iteration cap for power iteration.
pub const POWER_MAX_ITERS: usize = 10_000;

/// Relative tolerance on the Rayleigh-quotient change between power iterations.
pub const POWER_TOL: f64 = 1e-12;

const POWER_SEED: u64 = 0x05ee_d0f5_ba11;

/// Owned, non-empty vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            contract!("vector must have at least one entry");
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            contract!("vector entry {i} is not finite");
        }
        Ok(Self(entries))
    }

    /// Wraps entries produced by an internal computation without re-validating them.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for Vec64 {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    /// Builds a matrix from row-major entries, checking the shape and that every entry is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            contract!("matrix dimensions must be positive, got {rows}x{cols}");
        }
        if data.len() != rows * cols {
            contract!("{} entries cannot fill a {rows}x{cols} matrix", data.len());
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            contract!("matrix entry {i} is not finite");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            contract!("ragged rows");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: f64, other: &Mat64) -> Result<()> {
        if self.shape() != other.shape() {
            contract!("shape mismatch: {:?} vs {:?}", self.shape(), other.shape());
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += c * y;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// New matrix holding the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                contract!("row index {i} out of range for {} rows", self.rows);
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            contract!("matvec: {} columns vs vector of {}", self.cols, x.len());
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            contract!("t_matvec: {} rows vs vector of {}", self.rows, y.len());
        }
        let mut out = vec![0.0; self.cols];
        for (r, &c) in self.row_iter().zip(y) {
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(r) {
                    *o += c * v;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Mat64) -> Result<Mat64> {
        gemm(self, false, other, true)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Mat64) -> Result<Mat64> {
        gemm(self, true, other, false)
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Mat64, b: &Mat64) -> Result<Mat64> {
    gemm(a, false, b, false)
}

/// Left-to-right product of a non-empty chain of matrices.
pub fn matmul_chain(ms: &[Mat64]) -> Result<Mat64> {
    let (first, rest) = ms
        .split_first()
        .ok_or_else(|| Error::Contract("matmul_chain needs at least one matrix".into()))?;
    rest.iter()
        .try_fold(first.clone(), |acc, m| matmul(&acc, m))
}

fn gemm(a: &Mat64, ta: bool, b: &Mat64, tb: bool) -> Result<Mat64> {
    // Logical shapes after the optional transposes.
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if k != kb {
        contract!("matmul: inner dimensions differ ({m}x{k} times {kb}x{n})");
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    let mut c = Mat64::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    // SAFETY: strides describe views that lie inside `a.data`, `b.data` and `c.data`,
    // whose lengths are rows·cols for the shapes checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

/// Inner product, accumulated in four independent lanes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a / ‖a‖`, or `None` when the norm is below [`DEGENERATE_NORM`].
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    (n >= DEGENERATE_NORM).then(|| a.iter().map(|x| x / n).collect())
}

/// Folded angle in degrees between two unit vectors.
///
/// Uses `a = 2·atan2(‖û−v̂‖, ‖û+v̂‖)`, which equals `arccos⟨û,v̂⟩` but keeps full
/// precision at 0° and 180°, then folds `a > 90°` to `180° − a`.
pub(crate) fn folded_angle_unit(u: &[f64], v: &[f64]) -> f64 {
    angle_from_sq_distance(u, v, sq_distance(u, v, -1.0))
}

/// Folded angles between `u` and each of four unit vectors, sharing loads of `u`.
pub(crate) fn folded_angle_unit4(u: &[f64], vs: [&[f64]; 4]) -> [f64; 4] {
    let n = u.len();
    debug_assert!(vs.iter().all(|v| v.len() == n));
    let mut acc = [[0.0f64; 4]; 4];
    let main = n - n % 4;
    let mut i = 0;
    while i < main {
        let x = &u[i..i + 4];
        for (k, v) in vs.iter().enumerate() {
            let y = &v[i..i + 4];
            for l in 0..4 {
                let d = x[l] - y[l];
                acc[k][l] += d * d;
            }
        }
        i += 4;
    }
    let mut out = [0.0; 4];
    for (k, v) in vs.iter().enumerate() {
        let mut tail = 0.0;
        for j in main..n {
            let d = u[j] - v[j];
            tail += d * d;
        }
        let a = &acc[k];
        let d2 = (a[0] + a[1]) + (a[2] + a[3]) + tail;
        out[k] = angle_from_sq_distance(u, v, d2);
    }
    out
}

fn angle_from_sq_distance(u: &[f64], v: &[f64], d2: f64) -> f64 {
    // For unit vectors ‖û−v̂‖² + ‖û+v̂‖² = 4; the complement is only accurate
    // while it is the larger of the two.
    let s2 = if d2 <= 2.0 {
        (4.0 - d2).max(0.0)
    } else {
        sq_distance(u, v, 1.0)
    };
    let (d, s) = (d2.sqrt(), s2.sqrt());
    (2.0 * d.min(s).atan2(d.max(s))).to_degrees()
}

/// `‖u + sign·v‖²` in eight independent lanes.
fn sq_distance(u: &[f64], v: &[f64], sign: f64) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = [0.0f64; 8];
    let cu = u.chunks_exact(8);
    let cv = v.chunks_exact(8);
    let mut tail = 0.0;
    for (x, y) in cu.remainder().iter().zip(cv.remainder()) {
        let d = x + sign * y;
        tail += d * d;
    }
    for (x, y) in cu.zip(cv) {
        for l in 0..8 {
            let d = x[l] + sign * y[l];
            acc[l] += d * d;
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Angle between `u` and `v` in degrees, folded into `[0, 90]`.
///
/// Returns `Ok(None)` when either norm is below [`DEGENERATE_NORM`].
pub fn folded_angle_degrees(u: &[f64], v: &[f64]) -> Result<Option<f64>> {
    if u.len() != v.len() {
        contract!(
            "angle between vectors of length {} and {}",
            u.len(),
            v.len()
        );
    }
    let (Some(u), Some(v)) = (normalized(u), normalized(v)) else {
        return Ok(None);
    };
    Ok(Some(folded_angle_unit(&u, &v)))
}

/// Least-squares scalar `⟨u,v⟩/⟨v,v⟩` minimizing `‖u − αv‖`.
///
/// Returns `Ok(None)` when `‖v‖` is below [`DEGENERATE_NORM`].
pub fn projection_scalar(u: &[f64], v: &[f64]) -> Result<Option<f64>> {
    if u.len() != v.len() {
        contract!(
            "projection between vectors of length {} and {}",
            u.len(),
            v.len()
        );
    }
    let vv = dot(v, v);
    if vv.sqrt() < DEGENERATE_NORM {
        return Ok(None);
    }
    Ok(Some(dot(u, v) / vv))
}

/// Largest singular value of `m` and its right singular vector.
///
/// Power iteration on `mᵀm`. Stops once the Rayleigh quotient moves by at most
/// `POWER_TOL · max(λ, scale)`; `scale` lets a deflated call measure
/// convergence against the already-extracted leading eigenvalue.
fn dominant_singular(m: &Mat64, scale: f64) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let start: Vec<f64> = (0..m.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = normalized(&start).expect("random start vector is non-zero");
    let mut prev: Option<f64> = None;
    for _ in 0..POWER_MAX_ITERS {
        let y = m.matvec(&x)?;
        let lambda = dot(&y, &y);
        let z = m.t_matvec(&y)?;
        let Some(next) = normalized(&z) else {
            return Ok((lambda.sqrt(), x));
        };
        if let Some(p) = prev {
            if (lambda - p).abs() <= POWER_TOL * lambda.max(scale) {
                return Ok((lambda.sqrt(), next));
            }
        }
        prev = Some(lambda);
        x = next;
    }
    Err(Error::Convergence {
        iterations: POWER_MAX_ITERS,
    })
}

/// Two largest singular values `(σ1, σ2)` with `σ1 ≥ σ2 ≥ 0`.
///
/// `σ1` comes from power iteration on `mᵀm`; `σ2` from the same iteration on the
/// explicitly deflated matrix `m − (m v₁) v₁ᵀ`. Deflating the matrix rather than
/// the Gram operator keeps `σ2` of an exactly rank-1 input at roundoff level
/// relative to `σ1` instead of at its square root. A single-row matrix has
/// `σ2 = 0`.
pub fn top_two_singular_values(m: &Mat64) -> Result<(f64, f64)> {
    if m.rows == 0 || m.cols == 0 {
        contract!("singular values of an empty matrix");
    }
    let (s1, v1) = dominant_singular(m, 0.0)?;
    if m.rows == 1 || s1 == 0.0 {
        return Ok((s1, 0.0));
    }
    let mv = m.matvec(&v1)?;
    let mut deflated = m.clone();
    for (i, row) in deflated.data.chunks_exact_mut(m.cols).enumerate() {
        for (x, v) in row.iter_mut().zip(&v1) {
            *x -= mv[i] * v;
        }
    }
    let (s2, _) = dominant_singular(&deflated, s1 * s1)?;
    Ok((s1, s2.min(s1)))
}
