//! Atomic Fourier representation of symbols `F(t, x) = Σ a e^{i(p t + q·x)}` with
//! `t = <ω, ξ>`, together with the weighted norms used by every estimate.
//!
//! Dual frequencies `p` are exact rationals, so sums produced by products never
//! drift and equal keys always merge.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::estimates::DiophantineCertificate;
use crate::scalar::{fmt_g17, Cplx, Real};

/// Exact dual frequency of `t = <ω, ξ>`.
pub type Freq = Ratio<i64>;

/// Torus mode `q ∈ Z^l`.
pub type Mode = SmallVec<[i32; 4]>;

/// Largest denominator accepted when reading a decimal `p`.
pub const MAX_FREQ_DENOM: i64 = 1_000_000;

/// Converts a decimal frequency to an exact rational with a small denominator.
pub fn freq_from_f64(x: f64) -> Result<Freq> {
    if !x.is_finite() {
        return Err(Error::Parse(format!("non-finite frequency {x}")));
    }
    let tol = 4.0 * f64::EPSILON * x.abs().max(1.0);
    // Continued-fraction convergents.
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let ai = a as i64;
        let h2 = ai.checked_mul(h1).and_then(|v| v.checked_add(h0));
        let k2 = ai.checked_mul(k1).and_then(|v| v.checked_add(k0));
        let (Some(h2), Some(k2)) = (h2, k2) else { break };
        if k2 > MAX_FREQ_DENOM {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (h1 as f64 / k1 as f64 - x).abs() <= tol {
            return Ok(Ratio::new(h1, k1));
        }
        let frac = r - a;
        if frac == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    Err(Error::Parse(format!(
        "frequency {x} is not a rational with denominator <= {MAX_FREQ_DENOM}"
    )))
}

/// Converts an exact frequency to the scalar type.
#[inline]
pub fn freq_value<T: Real>(p: &Freq) -> T {
    T::lit(*p.numer() as f64) / T::lit(*p.denom() as f64)
}

/// Builds a mode from a slice.
pub fn mode(q: &[i32]) -> Mode {
    Mode::from_slice(q)
}

/// ℓ¹ norm of a mode.
pub fn mode_l1(q: &[i32]) -> u64 {
    q.iter().map(|&v| v.unsigned_abs() as u64).sum()
}

/// Problem data every ℏ- or ω-dependent operation reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Context<T> {
    pub l: usize,
    pub omega: Vec<T>,
    pub hbar: T,
    pub gamma: T,
    pub tau: T,
    pub rho: T,
    pub certificate: Option<DiophantineCertificate>,
}

impl<T: Real> Context<T> {
    pub fn new(omega: Vec<T>, hbar: T, gamma: T, tau: T, rho: T) -> Result<Self> {
        let l = omega.len();
        if l < 2 {
            return Err(Error::InvalidContext(format!("dimension l = {l} must be >= 2")));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidContext("omega must be finite".into()));
        }
        if !(hbar > T::zero() && hbar <= T::one()) {
            return Err(Error::InvalidContext(format!("hbar = {hbar} must lie in (0, 1]")));
        }
        if !(gamma > T::zero()) {
            return Err(Error::InvalidContext(format!("gamma = {gamma} must be positive")));
        }
        if !(tau > T::zero()) {
            return Err(Error::InvalidContext(format!("tau = {tau} must be positive")));
        }
        if !(rho > T::zero()) {
            return Err(Error::InvalidContext(format!("rho = {rho} must be positive")));
        }
        Ok(Self { l, omega, hbar, gamma, tau, rho, certificate: None })
    }

    /// Attaches a certificate; `gamma` and `tau` must be consistent with it.
    pub fn with_certificate(mut self, cert: DiophantineCertificate) -> Result<Self> {
        if cert.omega.len() != self.l
            || cert.omega.iter().zip(&self.omega).any(|(a, b)| (*a - b.as_f64()).abs() > 1e-12)
        {
            return Err(Error::InvalidContext("certificate omega differs from context".into()));
        }
        if (cert.tau - self.tau.as_f64()).abs() > 1e-12 {
            return Err(Error::InvalidContext("certificate tau differs from context".into()));
        }
        if self.gamma.as_f64() < cert.gamma_measured * (1.0 - 1e-12) {
            return Err(Error::InvalidContext(format!(
                "gamma = {} below certified gamma_measured = {}",
                self.gamma, cert.gamma_measured
            )));
        }
        self.certificate = Some(cert);
        Ok(self)
    }

    pub fn with_hbar(&self, hbar: T) -> Result<Self> {
        let mut c = Self::new(self.omega.clone(), hbar, self.gamma, self.tau, self.rho)?;
        c.certificate = self.certificate.clone();
        Ok(c)
    }

    pub fn with_rho(&self, rho: T) -> Result<Self> {
        let mut c = Self::new(self.omega.clone(), self.hbar, self.gamma, self.tau, rho)?;
        c.certificate = self.certificate.clone();
        Ok(c)
    }

    /// `<ω, q>`.
    #[inline]
    pub fn omega_dot(&self, q: &[i32]) -> T {
        let mut s = T::zero();
        for (w, &k) in self.omega.iter().zip(q) {
            s += *w * T::lit(k as f64);
        }
        s
    }

    /// `<ω, v>` for a real vector.
    #[inline]
    pub fn omega_dot_real(&self, v: &[T]) -> T {
        self.omega.iter().zip(v).fold(T::zero(), |s, (w, x)| s + *w * *x)
    }

    /// `Σ |ω_k q_k|`, the scale used for the relative resonance test.
    pub fn omega_abs_dot(&self, q: &[i32]) -> T {
        let mut s = T::zero();
        for (w, &k) in self.omega.iter().zip(q) {
            s += (*w * T::lit(k as f64)).abs();
        }
        s
    }

    /// `max(1, |ω|_∞)`: factor by which bracket bounds stated for `|ω| ≤ 1` must be
    /// inflated for the raw frequency vector.
    pub fn omega_scale(&self) -> T {
        self.omega.iter().fold(T::one(), |m, w| m.max(w.abs()))
    }

    /// `|ω|₁`.
    pub fn omega_l1(&self) -> T {
        self.omega.iter().fold(T::zero(), |s, w| s + w.abs())
    }

    /// Rescales to `|ω|₁ ≤ 1`. Returns the normalized context and `α = max(|ω|₁, 1)`;
    /// the problem `L_ω + εV` equals `α (L_{ω/α} + (ε/α) V)`.
    pub fn normalized(&self) -> (Self, T) {
        let alpha = self.omega_l1().max(T::one());
        let mut c = self.clone();
        c.omega = self.omega.iter().map(|w| *w / alpha).collect();
        c.certificate = None;
        (c, alpha)
    }

    /// True when `|⟨ω,q⟩|` vanishes relative to `Σ|ω_k q_k|`.
    pub fn is_resonant(&self, q: &[i32]) -> bool {
        let scale = self.omega_abs_dot(q);
        self.omega_dot(q).abs() <= T::lit(1e-15) * scale.max(T::min_positive_value())
    }
}

/// A single Fourier atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom<T> {
    pub p: Freq,
    pub q: Mode,
    pub a: Cplx<T>,
}

impl<T: Real> Atom<T> {
    pub fn new(p: Freq, q: &[i32], a: Cplx<T>) -> Self {
        Self { p, q: mode(q), a }
    }

    #[inline]
    pub fn p_value(&self) -> T {
        freq_value(&self.p)
    }

    /// `e^{ρ(|p| + |q|₁)}`.
    #[inline]
    pub fn weight(&self, rho: T) -> T {
        let p: T = freq_value::<T>(&self.p).abs();
        (rho * (p + T::lit(mode_l1(&self.q) as f64))).exp()
    }
}

/// Accumulates atoms keyed by `(q, p)`.
#[derive(Debug)]
pub struct SymbolBuilder<T> {
    map: HashMap<(Mode, Freq), Cplx<T>>,
}

impl<T: Real> Default for SymbolBuilder<T> {
    fn default() -> Self {
        Self { map: HashMap::new() }
    }
}

impl<T: Real> SymbolBuilder<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { map: HashMap::with_capacity(n) }
    }

    #[inline]
    pub fn add(&mut self, p: Freq, q: Mode, a: Cplx<T>) {
        *self.map.entry((q, p)).or_insert_with(Cplx::zero) += a;
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn finish(self, hbar_tag: Option<T>) -> AtomicSymbol<T> {
        let mut atoms: Vec<Atom<T>> = self
            .map
            .into_iter()
            .filter(|(_, a)| !a.is_zero())
            .map(|((q, p), a)| Atom { p, q, a })
            .collect();
        atoms.sort_by(|x, y| (&x.q, &x.p).cmp(&(&y.q, &y.p)));
        AtomicSymbol { atoms, hbar_tag }
    }
}

/// Finite, merged collection of atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicSymbol<T> {
    atoms: Vec<Atom<T>>,
    hbar_tag: Option<T>,
}

impl<T: Real> Default for AtomicSymbol<T> {
    fn default() -> Self {
        Self { atoms: Vec::new(), hbar_tag: None }
    }
}

impl<T: Real> AtomicSymbol<T> {
    /// The zero symbol.
    pub fn zero() -> Self {
        Self::default()
    }

    /// The unit symbol `1`.
    pub fn unit(l: usize) -> Self {
        Self::single(Freq::zero(), &vec![0; l], Cplx::new(T::one(), T::zero()))
    }

    pub fn single(p: Freq, q: &[i32], a: Cplx<T>) -> Self {
        Self::from_atoms(vec![Atom::new(p, q, a)], None)
    }

    /// Merges duplicate keys and drops exact zeros.
    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom<T>>, hbar_tag: Option<T>) -> Self {
        let mut b = SymbolBuilder::new();
        for at in atoms {
            b.add(at.p, at.q, at.a);
        }
        b.finish(hbar_tag)
    }

    /// `2 cos t (cos x₁ + … + cos x_l)`: the standard test potential.
    pub fn canonical(l: usize) -> Self {
        let half = Cplx::new(T::lit(0.5), T::zero());
        let mut atoms = Vec::with_capacity(4 * l);
        for k in 0..l {
            for sp in [-1i64, 1] {
                for sq in [-1i32, 1] {
                    let mut q = vec![0; l];
                    q[k] = sq;
                    atoms.push(Atom::new(Freq::from_integer(sp), &q, half));
                }
            }
        }
        Self::from_atoms(atoms, None)
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn hbar_tag(&self) -> Option<T> {
        self.hbar_tag
    }

    pub fn with_tag(mut self, tag: Option<T>) -> Self {
        self.hbar_tag = tag;
        self
    }

    /// Amplitude stored at `(p, q)`, zero if absent.
    pub fn amplitude(&self, p: &Freq, q: &[i32]) -> Cplx<T> {
        self.atoms
            .binary_search_by(|a| (a.q.as_slice(), &a.p).cmp(&(q, p)))
            .map(|i| self.atoms[i].a)
            .unwrap_or_else(|_| Cplx::zero())
    }

    fn merged_tag(&self, other: &Self) -> Result<Option<T>> {
        match (self.hbar_tag, other.hbar_tag) {
            (Some(a), Some(b)) if a != b => Err(Error::IncompatibleHbarTag(a.as_f64(), b.as_f64())),
            (Some(a), _) => Ok(Some(a)),
            (None, b) => Ok(b),
        }
    }

    /// Keywise sum.
    pub fn merge_add(&self, other: &Self) -> Result<Self> {
        let tag = self.merged_tag(other)?;
        Ok(self.linear_combination(Cplx::new(T::one(), T::zero()), other, Cplx::new(T::one(), T::zero()), tag))
    }

    /// `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        let tag = self.merged_tag(other)?;
        Ok(self.linear_combination(Cplx::new(T::one(), T::zero()), other, Cplx::new(-T::one(), T::zero()), tag))
    }

    /// `α·self + β·other` by a sorted merge.
    fn linear_combination(&self, alpha: Cplx<T>, other: &Self, beta: Cplx<T>, tag: Option<T>) -> Self {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.atoms, &other.atoms);
        while i < a.len() || j < b.len() {
            let ord = if i == a.len() {
                std::cmp::Ordering::Greater
            } else if j == b.len() {
                std::cmp::Ordering::Less
            } else {
                (&a[i].q, &a[i].p).cmp(&(&b[j].q, &b[j].p))
            };
            let at = match ord {
                std::cmp::Ordering::Less => {
                    i += 1;
                    Atom { p: a[i - 1].p, q: a[i - 1].q.clone(), a: a[i - 1].a * alpha }
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    Atom { p: b[j - 1].p, q: b[j - 1].q.clone(), a: b[j - 1].a * beta }
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    Atom { p: a[i - 1].p, q: a[i - 1].q.clone(), a: a[i - 1].a * alpha + b[j - 1].a * beta }
                }
            };
            if !at.a.is_zero() {
                out.push(at);
            }
        }
        Self { atoms: out, hbar_tag: tag }
    }

    /// Multiplies every amplitude by `c`.
    pub fn scale(&self, c: Cplx<T>) -> Self {
        if c.is_zero() {
            return Self { atoms: Vec::new(), hbar_tag: self.hbar_tag };
        }
        Self {
            atoms: self.atoms.iter().map(|a| Atom { p: a.p, q: a.q.clone(), a: a.a * c }).collect(),
            hbar_tag: self.hbar_tag,
        }
    }

    pub fn scale_real(&self, c: T) -> Self {
        self.scale(Cplx::new(c, T::zero()))
    }

    /// Applies `f(atom)` to each amplitude; zero results are dropped.
    pub fn map_amplitudes(&self, mut f: impl FnMut(&Atom<T>) -> Cplx<T>) -> Self {
        let atoms = self
            .atoms
            .iter()
            .filter_map(|a| {
                let v = f(a);
                (!v.is_zero()).then(|| Atom { p: a.p, q: a.q.clone(), a: v })
            })
            .collect();
        Self { atoms, hbar_tag: self.hbar_tag }
    }

    /// `‖S‖_ρ = Σ |a| e^{ρ(|p| + |q|₁)}`.
    pub fn weighted_norm(&self, rho: T) -> T {
        self.atoms.iter().map(|a| a.a.norm() * a.weight(rho)).sum()
    }

    /// `Σ μ_k(pω, q) |a| e^{ρ(|p| + |q|₁)}` with `μ_k = (1 + |pω|² + |q|²)^{k/2}`.
    pub fn weighted_norm_mu(&self, rho: T, k: u32, omega: &[T]) -> T {
        let w2: T = omega.iter().map(|w| *w * *w).sum();
        self.atoms
            .iter()
            .map(|a| a.a.norm() * a.weight(rho) * mu_weight(a, k, w2))
            .sum()
    }

    /// Atoms with `q = 0`.
    pub fn mean_part(&self) -> Self {
        self.filter(|a| a.q.iter().all(|&v| v == 0))
    }

    /// Atoms with `q ≠ 0`.
    pub fn oscillating_part(&self) -> Self {
        self.filter(|a| a.q.iter().any(|&v| v != 0))
    }

    pub fn filter(&self, mut keep: impl FnMut(&Atom<T>) -> bool) -> Self {
        Self { atoms: self.atoms.iter().filter(|a| keep(a)).cloned().collect(), hbar_tag: self.hbar_tag }
    }

    pub fn is_x_independent(&self) -> bool {
        self.atoms.iter().all(|a| a.q.iter().all(|&v| v == 0))
    }

    /// Groups atoms by torus mode, in sorted mode order.
    pub fn modes(&self) -> Vec<(Mode, Vec<(Freq, Cplx<T>)>)> {
        let mut out: Vec<(Mode, Vec<(Freq, Cplx<T>)>)> = Vec::new();
        for a in &self.atoms {
            match out.last_mut() {
                Some((q, v)) if *q == a.q => v.push((a.p, a.a)),
                _ => out.push((a.q.clone(), vec![(a.p, a.a)])),
            }
        }
        out
    }

    pub fn max_q_inf(&self) -> u32 {
        self.atoms.iter().flat_map(|a| a.q.iter().map(|v| v.unsigned_abs())).max().unwrap_or(0)
    }

    pub fn max_q_l1(&self) -> u64 {
        self.atoms.iter().map(|a| mode_l1(&a.q)).max().unwrap_or(0)
    }

    /// Largest violation of `a(−p,−q) = conj a(p,q)`, relative to `Σ|a|`.
    pub fn reality_defect(&self) -> T {
        let total: T = self.atoms.iter().map(|a| a.a.norm()).sum();
        if total == T::zero() {
            return T::zero();
        }
        let mut worst = T::zero();
        for a in &self.atoms {
            let nq: Mode = a.q.iter().map(|v| -v).collect();
            let mirror = self.amplitude(&(-a.p), &nq);
            worst = worst.max((a.a - mirror.conj()).norm());
        }
        worst / total
    }

    pub fn is_real_valued(&self, tol: T) -> bool {
        self.reality_defect() <= tol
    }

    /// Pointwise value `Σ a e^{i(p t + q·x)}`.
    pub fn eval(&self, t: T, x: &[T]) -> Cplx<T> {
        self.atoms.iter().fold(Cplx::zero(), |s, a| {
            let mut ph = a.p_value() * t;
            for (qk, xk) in a.q.iter().zip(x) {
                ph += T::lit(*qk as f64) * *xk;
            }
            s + a.a * Cplx::from_polar(T::one(), ph)
        })
    }

    /// Value of an x-independent symbol at `t`.
    pub fn eval_t(&self, t: T) -> Cplx<T> {
        self.atoms
            .iter()
            .fold(Cplx::zero(), |s, a| s + a.a * Cplx::from_polar(T::one(), a.p_value() * t))
    }

    /// Removes atoms with `|a| e^{ρ(|p|+|q|₁)} < tol`; returns the pruned symbol and the
    /// weighted norm of what was removed.
    pub fn prune(&self, rho: T, tol: T) -> (Self, T) {
        if tol <= T::zero() {
            return (self.clone(), T::zero());
        }
        let mut slack = T::zero();
        let mut kept = Vec::with_capacity(self.len());
        for a in &self.atoms {
            let w = a.a.norm() * a.weight(rho);
            if w < tol {
                slack += w;
            } else {
                kept.push(a.clone());
            }
        }
        (Self { atoms: kept, hbar_tag: self.hbar_tag }, slack)
    }

    /// Fails with `BudgetExceeded` when the atom count is above `budget`.
    pub fn check_budget(&self, budget: usize) -> Result<()> {
        if self.len() > budget {
            Err(Error::BudgetExceeded { atoms: self.len(), budget })
        } else {
            Ok(())
        }
    }

    /// Plain records `(re, im, p, q)` in key order.
    pub fn to_records(&self) -> Vec<AtomRecord> {
        self.atoms
            .iter()
            .map(|a| AtomRecord {
                re: a.a.re.as_f64(),
                im: a.a.im.as_f64(),
                p: a.p.to_f64().unwrap_or(f64::NAN),
                q: a.q.to_vec(),
            })
            .collect()
    }

    pub fn from_records(records: &[AtomRecord], l: usize) -> Result<Self> {
        let mut atoms = Vec::with_capacity(records.len());
        for r in records {
            if r.q.len() != l {
                return Err(Error::Parse(format!("atom has {} lattice entries, expected {l}", r.q.len())));
            }
            if !(r.re.is_finite() && r.im.is_finite()) {
                return Err(Error::Parse("non-finite amplitude".into()));
            }
            atoms.push(Atom::new(freq_from_f64(r.p)?, &r.q, Cplx::new(T::lit(r.re), T::lit(r.im))));
        }
        Ok(Self::from_atoms(atoms, None))
    }

    /// Writes the literal text format: one `re im p q_1 … q_l` record per line.
    pub fn to_literal(&self) -> String {
        let mut s = String::from("# re im p q_1 .. q_l\n");
        for r in self.to_records() {
            let _ = write!(s, "{} {} {}", fmt_g17(r.re), fmt_g17(r.im), fmt_g17(r.p));
            for q in &r.q {
                let _ = write!(s, " {q}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses the literal text format; blank lines and `#` comments are ignored.
    pub fn parse_literal(text: &str, l: usize) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 + l {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    3 + l,
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let q = fields[3..]
                .iter()
                .map(|s| s.parse::<i32>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1))))
                .collect::<Result<Vec<_>>>()?;
            records.push(AtomRecord { re: num(fields[0])?, im: num(fields[1])?, p: num(fields[2])?, q });
        }
        Self::from_records(&records, l)
    }
}

/// Serializable atom record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub re: f64,
    pub im: f64,
    pub p: f64,
    pub q: Vec<i32>,
}

fn mu_weight<T: Real>(a: &Atom<T>, k: u32, omega_sq: T) -> T {
    if k == 0 {
        return T::one();
    }
    let p = a.p_value();
    let q2: T = a.q.iter().map(|v| T::lit((*v as f64) * (*v as f64))).sum();
    (T::one() + p * p * omega_sq + q2).powf(T::lit(k as f64) / T::lit(2.0))
}

/// Finite-difference surrogate of `‖·‖_{ρ,k}` over a uniform ℏ-grid.
///
/// For every grid point the `γ`-th ℏ-derivative of each amplitude is estimated by the
/// `γ`-th divided difference over the most centred window of `γ + 1` samples.
pub fn weighted_norm_k<T: Real>(family: &[(T, AtomicSymbol<T>)], rho: T, k: u32, omega: &[T]) -> Result<T> {
    let n = family.len();
    if n < k as usize + 1 || n == 0 {
        return Err(Error::InsufficientGrid { needed: k as usize + 1, got: n });
    }
    let h = if n > 1 { family[1].0 - family[0].0 } else { T::one() };
    for w in family.windows(2) {
        let step = w[1].0 - w[0].0;
        if (step - h).abs() > T::lit(1e-6) * h.abs() {
            return Err(Error::InvalidContext("hbar grid is not uniform".into()));
        }
    }
    // Union of keys, amplitudes per grid point.
    let mut keys: Vec<(Mode, Freq)> = family
        .iter()
        .flat_map(|(_, s)| s.atoms().iter().map(|a| (a.q.clone(), a.p)))
        .collect();
    keys.sort();
    keys.dedup();
    let w2: T = omega.iter().map(|w| *w * *w).sum();
    let mut best = T::zero();
    for i in 0..n {
        let mut total = T::zero();
        for gamma in 0..=k as usize {
            let start = i.saturating_sub(gamma / 2).min(n - gamma - 1);
            let hpow = h.powi(gamma as i32);
            for (q, p) in &keys {
                let mut diff = Cplx::<T>::zero();
                for j in 0..=gamma {
                    let c = binomial(gamma, j) * if (gamma - j) % 2 == 0 { 1.0 } else { -1.0 };
                    diff += family[start + j].1.amplitude(p, q) * T::lit(c);
                }
                if diff.is_zero() {
                    continue;
                }
                let at = Atom { p: *p, q: q.clone(), a: diff };
                total += diff.norm() / hpow * at.weight(rho) * mu_weight(&at, k - gamma as u32, w2);
            }
        }
        best = best.max(total);
    }
    Ok(best)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Convenience: `|p|` of an exact frequency as `f64`.
pub fn freq_abs_f64(p: &Freq) -> f64 {
    p.abs().to_f64().unwrap_or(f64::NAN)
}
