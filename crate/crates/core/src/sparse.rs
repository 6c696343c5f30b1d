//! Compressed sparse row matrices and a conjugate gradient solver for real
//! symmetric or complex Hermitian positive definite systems.

use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite (encountered p^H A p = {0:e})")]
    NotPositiveDefinite(f64),
    #[error("dimension mismatch: matrix is {rows}x{rows}, vector has {len} entries")]
    Dimension { rows: usize, len: usize },
}

/// Field over which the solver works.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
{
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn norm_sqr(self) -> f64;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
}

impl Scalar for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Assembles an `n x n` matrix from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => T::default(),
        }
    }

    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = T::default();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    /// `self + s * other`, both with the same dimension.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        let mut trip = Vec::with_capacity(self.vals.len() + other.vals.len());
        for m in [(1.0, self), (s, other)] {
            for r in 0..m.1.n {
                for k in m.1.row_ptr[r]..m.1.row_ptr[r + 1] {
                    trip.push((r, m.1.cols[k], m.1.vals[k] * m.0));
                }
            }
        }
        Self::from_triplets(self.n, trip)
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).re()).collect()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::default(), |acc, (&x, &y)| acc + x.conj() * y)
}

fn norm<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Approximate inverse applied inside [`conjugate_gradient`].
pub trait Preconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]);
}

/// Diagonal (Jacobi) preconditioner.
pub struct Jacobi(Vec<f64>);

impl Jacobi {
    pub fn new<T: Scalar>(a: &CsrMatrix<T>) -> Self {
        Self(
            a.diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        )
    }
}

impl<T: Scalar> Preconditioner<T> for Jacobi {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for ((zi, &ri), &d) in z.iter_mut().zip(r).zip(&self.0) {
            *zi = ri * d;
        }
    }
}

/// Preconditioned conjugate gradient. Stops when `|b - A x| <= rel_tol * |b|`.
pub fn conjugate_gradient<T: Scalar, P: Preconditioner<T>>(
    a: &CsrMatrix<T>,
    b: &[T],
    precond: &P,
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<T>, SolveError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolveError::Dimension {
            rows: n,
            len: b.len(),
        });
    }
    let bnorm = norm(b);
    let mut x = vec![T::default(); n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z = vec![T::default(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![T::default(); n];
    let mut rz = dot(&r, &z).re();
    for it in 0..max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap).re();
        if !(pap > 0.0) {
            return Err(SolveError::NotPositiveDefinite(pap));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] = r[i] - ap[i] * alpha;
        }
        let res = norm(&r) / bnorm;
        if res <= rel_tol {
            return Ok(x);
        }
        if it + 1 == max_iter {
            return Err(SolveError::NotConverged {
                iterations: max_iter,
                residual: res,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z).re();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Sparse `L D L^H` factorization stored in envelope (skyline) form under a
/// reverse Cuthill-McKee ordering. Exact for Hermitian positive definite
/// matrices; used as a preconditioner so that CG converges in a step or two.
pub struct EnvelopeLdl<T> {
    perm: Vec<usize>,
    first: Vec<usize>,
    rows: Vec<Vec<T>>,
    diag: Vec<f64>,
}

impl<T: Scalar> EnvelopeLdl<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self, SolveError> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // lower triangle of the permuted matrix, row by row
        let mut first = vec![0usize; n];
        let mut entries: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
        for (i, &old) in perm.iter().enumerate() {
            let mut f = i;
            for k in a.row_ptr[old]..a.row_ptr[old + 1] {
                let j = inv[a.cols[k]];
                if j <= i {
                    f = f.min(j);
                    entries[i].push((j, a.vals[k]));
                }
            }
            first[i] = f;
        }
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            let mut row = vec![T::default(); i - fi];
            let mut aii = 0.0;
            for &(j, v) in &entries[i] {
                if j == i {
                    aii += v.re();
                } else {
                    row[j - fi] += v;
                }
            }
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut acc = row[j - fi];
                let rj = &rows[j];
                for k in lo..j {
                    acc = acc - row[k - fi] * rj[k - fj].conj() * diag[k];
                }
                row[j - fi] = acc * (1.0 / diag[j]);
            }
            let mut d = aii;
            for k in fi..i {
                d -= row[k - fi].norm_sqr() * diag[k];
            }
            if !(d > 0.0) {
                return Err(SolveError::NotPositiveDefinite(d));
            }
            diag[i] = d;
            rows.push(row);
        }
        Ok(Self {
            perm,
            first,
            rows,
            diag,
        })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        let mut y: Vec<T> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let mut acc = y[i];
            for (k, &l) in self.rows[i].iter().enumerate() {
                acc = acc - l * y[fi + k];
            }
            y[i] = acc;
        }
        for i in 0..n {
            y[i] = y[i] * (1.0 / self.diag[i]);
        }
        for i in (0..n).rev() {
            let xi = y[i];
            let fi = self.first[i];
            for (k, &l) in self.rows[i].iter().enumerate() {
                y[fi + k] = y[fi + k] - l.conj() * xi;
            }
        }
        let mut x = vec![T::default(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

impl<T: Scalar> Preconditioner<T> for EnvelopeLdl<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(&self.solve(r));
    }
}

/// Bandwidth-reducing ordering of the matrix graph (all components).
fn reverse_cuthill_mckee<T: Scalar>(a: &CsrMatrix<T>) -> Vec<usize> {
    let n = a.dim();
    let adj = |i: usize| a.cols[a.row_ptr[i]..a.row_ptr[i + 1]].iter().copied().filter(move |&j| j != i);
    let degree: Vec<usize> = (0..n).map(|i| adj(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj(v).filter(|&j| !visited[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            for j in next {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}
