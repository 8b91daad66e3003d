//! Dense row-major matrices.
//!
//! Storage is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks). Every product accumulates each output element as one
//! sequential left-to-right sum in `f64` and rounds once on store, so the
//! result never depends on how output rows are split across threads.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Element type of a [`Matrix`].
///
/// Arithmetic is routed through `f64`; for `f32` storage a single operation
/// evaluated in `f64` and rounded once is identical to the native `f32`
/// operation.
pub trait Scalar:
    Copy + Default + PartialEq + PartialOrd + fmt::Debug + Send + Sync + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Pointwise binary operation for [`Matrix::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Hadamard,
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T: Scalar = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("new", (rows, cols), (data.len(), 1)));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::ZERO)
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("from_rows", (rows.len(), cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.data[i * self.cols + j]);
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// Sum of all entries, accumulated left to right in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v.to_f64())
    }

    /// Per-column sums, each accumulated down the rows in `f64`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v.to_f64();
            }
        }
        acc
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn elementwise(&self, other: &Self, op: ElementwiseOp) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape("elementwise", self.shape(), other.shape()));
        }
        let f = match op {
            ElementwiseOp::Add => |a: f64, b: f64| a + b,
            ElementwiseOp::Sub => |a: f64, b: f64| a - b,
            ElementwiseOp::Hadamard => |a: f64, b: f64| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| T::from_f64(f(a.to_f64(), b.to_f64())))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElementwiseOp::Hadamard)
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                self.shape(),
                (1, bias.len()),
            ));
        }
        for i in 0..self.rows {
            for (v, b) in self.row_mut(i).iter_mut().zip(bias) {
                *v = T::from_f64(v.to_f64() + b.to_f64());
            }
        }
        Ok(())
    }

    /// Horizontal concatenation, `self` columns first.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("hcat", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }

    /// Gathers the given rows in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
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

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

static MAX_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the number of threads used by matrix products (`0` means one per
/// available core). Without the `std` feature products are always serial.
pub fn set_max_threads(n: usize) {
    MAX_THREADS.store(n, Ordering::Relaxed);
}

pub fn max_threads() -> usize {
    MAX_THREADS.load(Ordering::Relaxed)
}

const NR: usize = 16;
const MR: usize = 4;
// Below this many multiply-adds a product stays on the calling thread.
#[cfg(feature = "std")]
const PARALLEL_WORK: usize = 1 << 20;

/// `B` (logical k×n) repacked into `f64` column panels of width `NR`,
/// zero-padded on the right.
struct Packed {
    k: usize,
    n: usize,
    panels: Vec<f64>,
}

impl Packed {
    fn pack<T: Scalar>(b: &Matrix<T>, transposed: bool) -> Packed {
        let (k, n) = if transposed {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        let n_panels = n.div_ceil(NR);
        let mut panels = vec![0.0f64; n_panels * k * NR];
        for p in 0..n_panels {
            let base = p * k * NR;
            let width = NR.min(n - p * NR);
            for t in 0..k {
                let dst = &mut panels[base + t * NR..base + t * NR + width];
                for (c, d) in dst.iter_mut().enumerate() {
                    let j = p * NR + c;
                    *d = if transposed {
                        b.data[j * b.cols + t]
                    } else {
                        b.data[t * b.cols + j]
                    }
                    .to_f64();
                }
            }
        }
        Packed { k, n, panels }
    }

    #[inline]
    fn panel(&self, p: usize) -> &[f64] {
        &self.panels[p * self.k * NR..(p + 1) * self.k * NR]
    }
}

#[inline(always)]
fn kernel_rows<T: Scalar, const R: usize>(a: [&[T]; R], panel: &[f64], k: usize) -> [[f64; NR]; R] {
    let mut acc = [[0.0f64; NR]; R];
    for t in 0..k {
        let b: &[f64; NR] = panel[t * NR..t * NR + NR].try_into().unwrap();
        for r in 0..R {
            let av = a[r][t].to_f64();
            for c in 0..NR {
                acc[r][c] += av * b[c];
            }
        }
    }
    acc
}

/// Computes rows `[row0, row0 + out.len()/n)` of `a · B` into `out`.
fn product_rows<T: Scalar>(a: &Matrix<T>, b: &Packed, row0: usize, out: &mut [T]) {
    let (k, n) = (b.k, b.n);
    let rows = out.len().checked_div(n).unwrap_or(0);
    let n_panels = n.div_ceil(NR);
    let mut i = 0;
    while i < rows {
        let take = if rows - i >= MR { MR } else { 1 };
        for p in 0..n_panels {
            let panel = b.panel(p);
            let width = NR.min(n - p * NR);
            if take == MR {
                let ar = [
                    a.row(row0 + i),
                    a.row(row0 + i + 1),
                    a.row(row0 + i + 2),
                    a.row(row0 + i + 3),
                ];
                let acc = kernel_rows::<T, MR>(ar, panel, k);
                for (r, acc_r) in acc.iter().enumerate() {
                    let dst = &mut out[(i + r) * n + p * NR..(i + r) * n + p * NR + width];
                    for (d, v) in dst.iter_mut().zip(acc_r) {
                        *d = T::from_f64(*v);
                    }
                }
            } else {
                let acc = kernel_rows::<T, 1>([a.row(row0 + i)], panel, k);
                let dst = &mut out[i * n + p * NR..i * n + p * NR + width];
                for (d, v) in dst.iter_mut().zip(&acc[0]) {
                    *d = T::from_f64(*v);
                }
            }
        }
        i += take;
    }
}

fn product<T: Scalar>(a: &Matrix<T>, b: &Packed) -> Matrix<T> {
    let (m, n) = (a.rows, b.n);
    let mut out = vec![T::ZERO; m * n];
    if m == 0 || n == 0 {
        return Matrix {
            rows: m,
            cols: n,
            data: out,
        };
    }
    #[cfg(feature = "std")]
    {
        let threads = match max_threads() {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            t => t,
        };
        let threads = threads.min(m.div_ceil(MR));
        if threads > 1 && m * n * b.k >= PARALLEL_WORK {
            let rows_per = m.div_ceil(threads).div_ceil(MR) * MR;
            std::thread::scope(|s| {
                for (c, chunk) in out.chunks_mut(rows_per * n).enumerate() {
                    s.spawn(move || product_rows(a, b, c * rows_per, chunk));
                }
            });
            return Matrix {
                rows: m,
                cols: n,
                data: out,
            };
        }
    }
    product_rows(a, b, 0, &mut out);
    Matrix {
        rows: m,
        cols: n,
        data: out,
    }
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    Ok(product(a, &Packed::pack(b, false)))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    Ok(product(a, &Packed::pack(b, true)))
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    Ok(product(&a.transpose(), &Packed::pack(b, false)))
}
