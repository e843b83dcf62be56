//! Homological equation `{F(L_ω), W}_M + V = N` for atomic `V`.
//!
//! For the identity divisor `F(u) = u` each oscillating atom is divided by `i<ω,q>`
//! (with `{L_ω, W} = −i<ω,q> w`):
//! `w = −i v / <ω,q>`. For `F(u) = u + Σ ε_s N_s(u)` the mode-`q` equation reads
//! `−i<ω,q> (1 + g_c(s)) W_q(s) + V_q(s) = 0`, where
//! `g_c(s) = Σ ε_s c e^{ips} 2i sin(pζ/2)/ζ` and `ζ = ħ<ω,q>`; `(1 + g_c)^{-1}` is
//! expanded in a Neumann series of one-dimensional convolutions in `p`.

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::moyal::{bracket_with_linear, moyal_bracket};
use crate::scalar::{Cplx, Real};
use crate::symbols::{freq_value, mode_l1, Atom, AtomicSymbol, Context, Freq, SymbolBuilder};

/// One accumulated term `ε_s N_s` of the divisor, with the radius data used by `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DivisorTerm<T> {
    pub epsilon: T,
    pub n: AtomicSymbol<T>,
    pub rho: T,
    pub d: T,
}

/// `F(u) = u + Σ ε_s N_s(u)`; empty means the identity divisor.
#[derive(Clone, Debug, PartialEq)]
pub struct DivisorModel<T> {
    pub terms: Vec<DivisorTerm<T>>,
}

impl<T: Real> Default for DivisorModel<T> {
    fn default() -> Self {
        Self { terms: Vec::new() }
    }
}

impl<T: Real> DivisorModel<T> {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn push(&mut self, term: DivisorTerm<T>) -> Result<()> {
        if !term.n.is_x_independent() {
            return Err(Error::InvalidContext("divisor symbols must be x-independent".into()));
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.terms.iter().all(|t| t.n.is_empty() || t.epsilon == T::zero())
    }

    /// `θ = Σ ε_s ‖N_s‖_{ρ_s} / (e d_s)`.
    pub fn theta(&self) -> T {
        let e = T::one().exp();
        self.terms
            .iter()
            .map(|t| t.epsilon.abs() * t.n.weighted_norm(t.rho) / (e * t.d))
            .sum()
    }

    /// `Φ = Σ ε_s N_s` as a single symbol.
    pub fn phi(&self) -> Result<AtomicSymbol<T>> {
        let mut acc = AtomicSymbol::zero();
        for t in &self.terms {
            acc = acc.merge_add(&t.n.scale_real(t.epsilon))?;
        }
        Ok(acc)
    }
}

/// `g(u, ζ) = (Φ(u + ζ) − Φ(u))/ζ`: each atom is multiplied by `(e^{iζp} − 1)/ζ`.
pub fn build_g<T: Real>(div: &DivisorModel<T>, zeta: T, _ctx: &Context<T>) -> Result<AtomicSymbol<T>> {
    if zeta == T::zero() {
        return Err(Error::ZeroShift);
    }
    let phi = div.phi()?;
    Ok(phi.map_amplitudes(|a| {
        let ph = freq_value::<T>(&a.p) * zeta;
        a.a * (Cplx::from_polar(T::one(), ph) - Cplx::new(T::one(), T::zero())) / zeta
    }))
}

/// Result of a homological solve.
#[derive(Clone, Debug)]
pub struct HomologicalSolution<T> {
    pub w: AtomicSymbol<T>,
    pub n: AtomicSymbol<T>,
    /// Bound on `‖{F(L),W}_M + V − N‖` at `rho_in` due to Neumann truncation.
    pub residual_bound: T,
    /// Largest Neumann order used over all modes (0 for the identity divisor).
    pub neumann_order: usize,
    /// Largest per-mode `‖g‖`, bounded by `θ`.
    pub theta_max: T,
}

type Poly<T> = BTreeMap<Freq, Cplx<T>>;

fn poly_mul<T: Real>(a: &Poly<T>, b: &Poly<T>) -> Poly<T> {
    let mut out: Poly<T> = BTreeMap::new();
    for (pa, va) in a {
        for (pb, vb) in b {
            *out.entry(pa + pb).or_insert_with(Cplx::zero) += *va * *vb;
        }
    }
    out.retain(|_, v| !v.is_zero());
    out
}

fn poly_norm<T: Real>(a: &Poly<T>, rho: T) -> T {
    a.iter().map(|(p, v)| v.norm() * (rho * freq_value::<T>(p).abs()).exp()).sum()
}

/// Solves `{F(L_ω), W}_M + V = N` mode by mode.
///
/// `tol` is relative to `‖V‖_{rho_in}`: each Neumann series is truncated once its tail
/// bound `θ_q^{n+1}/(1−θ_q) ‖V_q‖` drops below `tol·‖V‖`.
pub fn solve_homological<T: Real>(
    v: &AtomicSymbol<T>,
    div: &DivisorModel<T>,
    ctx: &Context<T>,
    rho_in: T,
    d: T,
    tol: T,
) -> Result<HomologicalSolution<T>> {
    if !(d > T::zero() && d < rho_in) {
        return Err(Error::InvalidContext(format!("radius loss d = {d} must lie in (0, {rho_in})")));
    }
    let theta = div.theta();
    if theta >= T::one() {
        return Err(Error::NeumannDiverges { theta: theta.as_f64() });
    }
    let n = v.mean_part();
    let tag = v.hbar_tag();
    let identity = div.is_identity();
    let phi = div.phi()?;
    let abs_tol = tol * v.weighted_norm(rho_in);
    let mut builder = SymbolBuilder::new();
    let mut residual_bound = T::zero();
    let mut neumann_order = 0usize;
    let mut theta_max = T::zero();
    for (q, atoms) in v.modes() {
        if q.iter().all(|&k| k == 0) {
            continue;
        }
        if ctx.is_resonant(&q) {
            return Err(Error::ResonantMode { q: q.to_vec() });
        }
        if let Some(cert) = &ctx.certificate {
            if mode_l1(&q) > cert.q_max as u64 {
                return Err(Error::UncertifiedMode { q: q.to_vec(), q_max: cert.q_max });
            }
        }
        let wq = ctx.omega_dot(&q);
        let pre = Cplx::new(T::zero(), -T::one() / wq);
        if identity {
            for (p, a) in atoms {
                builder.add(p, q.clone(), a * pre);
            }
            continue;
        }
        // Centred divisor factor g_c on this mode.
        let zeta = ctx.hbar * wq;
        let mut g: Poly<T> = BTreeMap::new();
        for at in phi.atoms() {
            let pv = freq_value::<T>(&at.p);
            let f = Cplx::new(T::zero(), T::lit(2.0) * (pv * zeta / T::lit(2.0)).sin() / zeta);
            *g.entry(at.p).or_insert_with(Cplx::zero) += at.a * f;
        }
        g.retain(|_, v| !v.is_zero());
        let theta_q = poly_norm(&g, rho_in);
        theta_max = theta_max.max(theta_q);
        if theta_q >= T::one() {
            return Err(Error::NeumannDiverges { theta: theta_q.as_f64() });
        }
        let vq: Poly<T> = atoms.iter().cloned().collect();
        let vq_norm: T = atoms
            .iter()
            .map(|(p, a)| a.norm() * (rho_in * (freq_value::<T>(p).abs() + T::lit(mode_l1(&q) as f64))).exp())
            .sum();
        let neg_g: Poly<T> = g.iter().map(|(p, v)| (*p, -*v)).collect();
        let mut series: Poly<T> = BTreeMap::from([(Freq::zero(), Cplx::new(T::one(), T::zero()))]);
        let mut power = series.clone();
        let mut order = 0usize;
        let mut tail = if theta_q == T::zero() { T::zero() } else { theta_q / (T::one() - theta_q) * vq_norm };
        while tail >= abs_tol && tail > T::zero() && order < 10_000 {
            order += 1;
            power = poly_mul(&power, &neg_g);
            for (p, v) in &power {
                *series.entry(*p).or_insert_with(Cplx::zero) += *v;
            }
            tail = theta_q.powi(order as i32 + 1) / (T::one() - theta_q) * vq_norm;
        }
        neumann_order = neumann_order.max(order);
        residual_bound += tail;
        for (p, val) in poly_mul(&vq, &series) {
            builder.add(p, q.clone(), val * pre);
        }
    }
    let w = builder.finish(tag);
    Ok(HomologicalSolution { w, n, residual_bound, neumann_order, theta_max })
}

/// `‖{F(L_ω), W}_M + V − N‖_{rho_out}`, computed exactly on the symbol side.
pub fn verify_homological<T: Real>(
    sol: &HomologicalSolution<T>,
    v: &AtomicSymbol<T>,
    div: &DivisorModel<T>,
    ctx: &Context<T>,
    rho_out: T,
) -> Result<T> {
    // {L, W} = −{W, L}
    let mut lhs = bracket_with_linear(&sol.w, ctx).scale_real(-T::one());
    for term in &div.terms {
        if term.n.is_empty() || term.epsilon == T::zero() {
            continue;
        }
        let b = moyal_bracket(&term.n, &sol.w, ctx)?.scale_real(term.epsilon);
        lhs = lhs.merge_add(&b)?;
    }
    let res = lhs.merge_add(v)?.sub(&sol.n)?;
    Ok(res.weighted_norm(rho_out))
}

/// Builds the atom `c·e^{ipt}` (q = 0) used for test divisors.
pub fn mean_atom<T: Real>(p: Freq, l: usize, c: Cplx<T>) -> AtomicSymbol<T> {
    AtomicSymbol::from_atoms(vec![Atom::new(p, &vec![0; l], c)], None)
}
