//! Weyl quantization on a truncated Fourier basis, dense Hermitian eigensolver and the
//! matrix oracle used to cross-check the symbol algebra.
//!
//! Entry `(m + q, m)` of a quantized symbol is `Σ_{atoms with mode q} a e^{iħp<ω, m + q/2>}`.
//! Modes are ordered lexicographically with `m_1` varying slowest.

use std::fmt::Write as _;

use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moyal::OperatorSymbol;
use crate::scalar::{fmt_g17, Cplx, Real};
use crate::symbols::{AtomicSymbol, Context};

/// Truncated lattice `{m ∈ Z^l : |m|_∞ ≤ M}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeBox {
    pub l: usize,
    pub m: usize,
}

impl ModeBox {
    pub fn new(l: usize, m: usize) -> Self {
        assert!(l >= 1 && m >= 1, "mode box needs l >= 1 and M >= 1");
        Self { l, m }
    }

    pub fn side(&self) -> usize {
        2 * self.m + 1
    }

    pub fn dim(&self) -> usize {
        self.side().pow(self.l as u32)
    }

    /// Row index of `m`, or `None` outside the box.
    pub fn index(&self, m: &[i32]) -> Option<usize> {
        let side = self.side() as i64;
        let mut idx = 0i64;
        for &v in m {
            let shifted = v as i64 + self.m as i64;
            if shifted < 0 || shifted >= side {
                return None;
            }
            idx = idx * side + shifted;
        }
        Some(idx as usize)
    }

    /// Lattice point of a row index.
    pub fn mode(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let mut out = vec![0; self.l];
        for k in (0..self.l).rev() {
            out[k] = (idx % side) as i32 - self.m as i32;
            idx /= side;
        }
        out
    }

    pub fn modes(&self) -> impl Iterator<Item = Vec<i32>> + '_ {
        (0..self.dim()).map(|i| self.mode(i))
    }

    /// True when `|m|_∞ ≤ M − margin`.
    pub fn is_interior(&self, m: &[i32], margin: usize) -> bool {
        let lim = self.m as i64 - margin as i64;
        m.iter().all(|&v| (v.abs() as i64) <= lim)
    }
}

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    pub n: usize,
    pub data: Vec<Cplx<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Cplx::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n);
        for i in 0..n {
            a.data[i * n + i] = Cplx::new(T::one(), T::zero());
        }
        a
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut a = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            a.data[i * d.len() + i] = Cplx::new(*v, T::zero());
        }
        a
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Cplx<T> {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Cplx<T>) {
        self.data[r * self.n + c] = v;
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        assert_eq!(n, other.n, "matmul dimension mismatch");
        let mut out = Self::zeros(n);
        out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.is_zero() {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in row.iter_mut().zip(brow) {
                    *o += a * *b;
                }
            }
        });
        out
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect() }
    }

    pub fn scale(&self, c: Cplx<T>) -> Self {
        Self { n: self.n, data: self.data.iter().map(|a| *a * c).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, a| m.max(a.norm()))
    }

    /// Max-norm of the Hermitian defect `A − A*`.
    pub fn hermitian_defect(&self) -> T {
        let n = self.n;
        let mut worst = T::zero();
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> T {
        let n = self.n;
        (0..n).map(|c| (0..n).map(|r| self.get(r, c).norm()).sum::<T>()).fold(T::zero(), |m, v| m.max(v))
    }

    /// Largest entrywise difference over rows and columns whose modes are interior.
    pub fn interior_diff(&self, other: &Self, bx: &ModeBox, margin: usize) -> T {
        let interior: Vec<usize> = (0..bx.dim()).filter(|&i| bx.is_interior(&bx.mode(i), margin)).collect();
        let mut worst = T::zero();
        for &r in &interior {
            for &c in &interior {
                worst = worst.max((self.get(r, c) - other.get(r, c)).norm());
            }
        }
        worst
    }

    /// Column `c` as a vector.
    pub fn column(&self, c: usize) -> Vec<Cplx<T>> {
        (0..self.n).map(|r| self.get(r, c)).collect()
    }

    pub fn mul_vec(&self, v: &[Cplx<T>]) -> Vec<Cplx<T>> {
        (0..self.n)
            .map(|r| self.data[r * self.n..(r + 1) * self.n].iter().zip(v).fold(Cplx::zero(), |s, (a, b)| s + *a * *b))
            .collect()
    }
}

/// A quantized symbol on a mode box.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix<T> {
    pub bx: ModeBox,
    pub mat: CMatrix<T>,
    pub hermitian: bool,
}

impl<T: Real> OperatorMatrix<T> {
    /// Wraps a matrix, setting the Hermitian flag from the `10⁻¹²` relative defect test.
    pub fn new(bx: ModeBox, mat: CMatrix<T>) -> Self {
        let scale = mat.max_abs();
        let hermitian = mat.hermitian_defect() <= T::lit(1e-12) * scale.max(T::min_positive_value());
        Self { bx, mat, hermitian }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.bx != other.bx {
            return Err(Error::BoxMismatch);
        }
        Ok(Self::new(self.bx.clone(), self.mat.add(&other.mat)))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self::new(self.bx.clone(), self.mat.scale(Cplx::new(c, T::zero())))
    }
}

/// Weyl quantization of an atomic symbol.
pub fn quantize<T: Real>(s: &AtomicSymbol<T>, bx: &ModeBox, ctx: &Context<T>) -> OperatorMatrix<T> {
    let n = bx.dim();
    let mut mat = CMatrix::zeros(n);
    let h = ctx.hbar;
    let half = T::lit(0.5);
    let modes = s.modes();
    mat.data.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let mr = bx.mode(r);
        for (q, atoms) in &modes {
            let mc: Vec<i32> = mr.iter().zip(q.iter()).map(|(a, b)| a - b).collect();
            let Some(c) = bx.index(&mc) else { continue };
            // Weyl centre (m_r + m_c)/2 = m_c + q/2.
            let centre: Vec<T> = mr.iter().zip(&mc).map(|(a, b)| T::lit((a + b) as f64) * half).collect();
            let t = h * ctx.omega_dot_real(&centre);
            let mut v = Cplx::zero();
            for (p, a) in atoms {
                v += *a * Cplx::from_polar(T::one(), crate::symbols::freq_value::<T>(p) * t);
            }
            row[c] += v;
        }
    });
    OperatorMatrix::new(bx.clone(), mat)
}

/// Diagonal matrix of `L_ω`: `ħ<ω, m>`.
pub fn quantize_linear<T: Real>(bx: &ModeBox, ctx: &Context<T>) -> OperatorMatrix<T> {
    let d: Vec<T> = bx.modes().map(|m| ctx.hbar * ctx.omega_dot(&m)).collect();
    OperatorMatrix::new(bx.clone(), CMatrix::from_diag(&d))
}

/// Quantization of `c·L_ω + S`.
pub fn quantize_operator<T: Real>(s: &OperatorSymbol<T>, bx: &ModeBox, ctx: &Context<T>) -> OperatorMatrix<T> {
    let mut a = quantize(&s.atomic, bx, ctx);
    if s.linear != T::zero() {
        for (i, m) in bx.modes().enumerate() {
            let v = a.mat.get(i, i) + Cplx::new(s.linear * ctx.hbar * ctx.omega_dot(&m), T::zero());
            a.mat.set(i, i, v);
        }
    }
    OperatorMatrix::new(bx.clone(), a.mat)
}

/// `quantize(L_ω) + ε quantize(V)`.
pub fn hamiltonian_matrix<T: Real>(v: &AtomicSymbol<T>, eps: T, bx: &ModeBox, ctx: &Context<T>) -> OperatorMatrix<T> {
    quantize_operator(&OperatorSymbol { linear: T::one(), atomic: v.scale_real(eps) }, bx, ctx)
}

/// `(AB − BA)/(iħ)`.
pub fn commutator_over_ihbar<T: Real>(a: &OperatorMatrix<T>, b: &OperatorMatrix<T>, ctx: &Context<T>) -> Result<OperatorMatrix<T>> {
    if a.bx != b.bx {
        return Err(Error::BoxMismatch);
    }
    let ab = a.mat.matmul(&b.mat);
    let ba = b.mat.matmul(&a.mat);
    let f = Cplx::new(T::zero(), -T::one() / ctx.hbar);
    Ok(OperatorMatrix::new(a.bx.clone(), ab.sub(&ba).scale(f)))
}

/// `‖S‖_ρ`, which dominates the operator norm of every truncation of `Ŝ`.
pub fn operator_norm_bound<T: Real>(s: &AtomicSymbol<T>, rho: T) -> T {
    s.weighted_norm(rho)
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigen<T> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// Column `j` is the eigenvector of `values[j]`.
    pub vectors: CMatrix<T>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps visit pairs `(p, q)` with `p < q` in row-major order; each rotation is a phase
/// change on column `q` followed by a real Givens rotation, so the result is bitwise
/// reproducible. Rotations are skipped below `ε_mach·10⁻³·max|A|`.
pub fn eigensolve<T: Real>(a: &OperatorMatrix<T>) -> Result<Eigen<T>> {
    if !a.hermitian {
        return Err(Error::NotHermitian { defect: a.mat.hermitian_defect().as_f64() });
    }
    jacobi(&a.mat)
}

pub fn jacobi<T: Real>(a0: &CMatrix<T>) -> Result<Eigen<T>> {
    const MAX_SWEEPS: usize = 60;
    let n = a0.n;
    let mut a = a0.clone();
    // Symmetrize exactly so rounding in the input cannot break Hermiticity.
    for r in 0..n {
        let d = a.get(r, r).re;
        a.set(r, r, Cplx::new(d, T::zero()));
        for c in r + 1..n {
            let v = (a.get(r, c) + a.get(c, r).conj()) * T::lit(0.5);
            a.set(r, c, v);
            a.set(c, r, v.conj());
        }
    }
    let mut v = CMatrix::identity(n);
    let thresh = T::epsilon() * T::lit(1e-3) * a.max_abs().max(T::min_positive_value());
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.data[p * n + q];
                let mag = apq.norm();
                if mag <= thresh {
                    continue;
                }
                rotated = true;
                let phase = apq / mag; // e^{iφ}
                let app = a.data[p * n + p].re;
                let aqq = a.data[q * n + q].re;
                let theta = (aqq - app) / (T::lit(2.0) * mag);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                let ph_c = phase.conj(); // e^{-iφ}
                // Columns: a_kp' = c a_kp − s e^{-iφ} a_kq ; a_kq' = s a_kp + c e^{-iφ} a_kq.
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a.data[k * n + p];
                    let akq = a.data[k * n + q] * ph_c;
                    let nkp = akp * c - akq * s;
                    let nkq = akp * s + akq * c;
                    a.data[k * n + p] = nkp;
                    a.data[k * n + q] = nkq;
                    a.data[p * n + k] = nkp.conj();
                    a.data[q * n + k] = nkq.conj();
                }
                a.data[p * n + p] = Cplx::new(app - t * mag, T::zero());
                a.data[q * n + q] = Cplx::new(aqq + t * mag, T::zero());
                a.data[p * n + q] = Cplx::zero();
                a.data[q * n + p] = Cplx::zero();
                for k in 0..n {
                    let vkp = v.data[k * n + p];
                    let vkq = v.data[k * n + q] * ph_c;
                    v.data[k * n + p] = vkp * c - vkq * s;
                    v.data[k * n + q] = vkp * s + vkq * c;
                }
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
    }
    let diag: Vec<T> = (0..n).map(|i| a.data[i * n + i].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = CMatrix::zeros(n);
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            vectors.data[r * n + newc] = v.data[r * n + oldc];
        }
    }
    Ok(Eigen { values, vectors, sweeps })
}

/// Spectral norm via the eigenvalues of `A*A`.
pub fn spectral_norm<T: Real>(a: &CMatrix<T>) -> Result<T> {
    let ata = a.adjoint().matmul(a);
    let e = jacobi(&ata)?;
    Ok(e.values.last().copied().unwrap_or(T::zero()).max(T::zero()).sqrt())
}

/// `exp(X)` by scaling and squaring with a Taylor kernel.
pub fn expm<T: Real>(x: &CMatrix<T>) -> CMatrix<T> {
    let n = x.n;
    let norm = x.norm1();
    let mut s = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > T::lit(0.5) {
        scaled_norm = scaled_norm / T::lit(2.0);
        s += 1;
    }
    let xs = x.scale(Cplx::new(T::lit(0.5).powi(s as i32), T::zero()));
    let mut result = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&xs).scale(Cplx::new(T::one() / T::lit(k as f64), T::zero()));
        result = result.add(&term);
        if term.max_abs() <= T::epsilon() * T::lit(1e-2) {
            break;
        }
    }
    for _ in 0..s {
        result = result.matmul(&result);
    }
    result
}

/// Text dump: header lines then one `re im` pair per entry, row-major.
pub fn matrix_dump<T: Real>(a: &OperatorMatrix<T>, ctx: &Context<T>) -> String {
    let n = a.mat.n;
    let mut s = String::new();
    let _ = writeln!(s, "# l {}", a.bx.l);
    let _ = writeln!(s, "# M {}", a.bx.m);
    let _ = writeln!(s, "# hbar {}", fmt_g17(ctx.hbar.as_f64()));
    let _ = writeln!(s, "# ordering lexicographic, m_1 slowest, entries row-major as re im");
    let _ = writeln!(s, "# dim {n}");
    for r in 0..n {
        for c in 0..n {
            let v = a.mat.get(r, c);
            let _ = writeln!(s, "{} {}", fmt_g17(v.re.as_f64()), fmt_g17(v.im.as_f64()));
        }
    }
    s
}

/// Eigenvalue CSV `index,m_1,...,m_l,lambda`, labelling each eigenvalue by the basis
/// vector of largest overlap.
pub fn eigen_csv<T: Real>(e: &Eigen<T>, bx: &ModeBox) -> String {
    let mut s = String::from("index");
    for k in 1..=bx.l {
        let _ = write!(s, ",m_{k}");
    }
    s.push_str(",lambda\n");
    for (j, lam) in e.values.iter().enumerate() {
        let (best, _) = (0..e.vectors.n)
            .map(|r| (r, e.vectors.get(r, j).norm_sqr()))
            .fold((0, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
        let _ = write!(s, "{j}");
        for v in bx.mode(best) {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", fmt_g17(lam.as_f64()));
    }
    s
}
