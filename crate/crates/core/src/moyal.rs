//! Star product, Moyal and Poisson brackets, and conjugation series on atomic symbols.
//!
//! For atoms `(p_F, q_F)` and `(p_G, q_G)` the symplectic phase is
//! `Ω = p_F <ω, q_G> − p_G <ω, q_F>`. Products land on `(p_F + p_G, q_F + q_G)` with
//!
//! * star product: `a_F a_G e^{iħΩ/2}`
//! * Moyal bracket: `a_F a_G (2/ħ) sin(ħΩ/2)`, the symbol of `[F̂, Ĝ]/(iħ)`
//! * Poisson bracket: `a_F a_G Ω`, i.e. `∂_x F·∂_ξ G − ∂_ξ F·∂_x G`
//!
//! With these conventions `{F, L_ω} = i<ω,q> a` atom by atom.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};
use crate::symbols::{freq_value, AtomicSymbol, Context, Freq, Mode, SymbolBuilder};

/// `Ω_ω` for a pair of atoms.
#[inline]
pub fn symplectic_phase<T: Real>(p_f: T, wq_f: T, p_g: T, wq_g: T) -> T {
    p_f * wq_g - p_g * wq_f
}

/// Which bracket an algebraic recursion uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bracket<T> {
    /// Moyal bracket at the given ħ.
    Moyal(T),
    /// Poisson bracket (ħ → 0).
    Poisson,
}

impl<T: Real> Bracket<T> {
    pub fn moyal(ctx: &Context<T>) -> Self {
        Bracket::Moyal(ctx.hbar)
    }

    #[inline]
    fn kernel(self, omega: T) -> T {
        match self {
            Bracket::Moyal(h) => T::lit(2.0) / h * (h * omega / T::lit(2.0)).sin(),
            Bracket::Poisson => omega,
        }
    }

    fn tag(self) -> Option<T> {
        match self {
            Bracket::Moyal(h) => Some(h),
            Bracket::Poisson => None,
        }
    }

    /// Applies this bracket to a pair of atomic symbols.
    pub fn apply(self, f: &AtomicSymbol<T>, g: &AtomicSymbol<T>, ctx: &Context<T>) -> Result<AtomicSymbol<T>> {
        if let Bracket::Moyal(h) = self {
            check_tag(f, h)?;
            check_tag(g, h)?;
        }
        // Antisymmetry is exact; summation order would otherwise leave rounding residue.
        if f == g {
            return Ok(AtomicSymbol::zero().with_tag(self.tag()));
        }
        Ok(pairwise(f, g, ctx, self.tag(), |om| Cplx::new(self.kernel(om), T::zero())))
    }
}

fn check_tag<T: Real>(s: &AtomicSymbol<T>, hbar: T) -> Result<()> {
    match s.hbar_tag() {
        Some(t) if t != hbar => Err(Error::IncompatibleHbarTag(t.as_f64(), hbar.as_f64())),
        _ => Ok(()),
    }
}

struct Prepared<T> {
    p: Freq,
    q: Mode,
    a: Cplx<T>,
    pv: T,
    wq: T,
}

fn prepare<T: Real>(s: &AtomicSymbol<T>, ctx: &Context<T>) -> Vec<Prepared<T>> {
    s.atoms()
        .iter()
        .map(|a| Prepared { p: a.p, q: a.q.clone(), a: a.a, pv: freq_value(&a.p), wq: ctx.omega_dot(&a.q) })
        .collect()
}

/// Twisted convolution with an arbitrary phase kernel `k(Ω)`.
pub fn pairwise<T: Real>(
    f: &AtomicSymbol<T>,
    g: &AtomicSymbol<T>,
    ctx: &Context<T>,
    tag: Option<T>,
    kernel: impl Fn(T) -> Cplx<T>,
) -> AtomicSymbol<T> {
    let pf = prepare(f, ctx);
    let pg = prepare(g, ctx);
    let mut b = SymbolBuilder::with_capacity((pf.len() * pg.len() / 2 + 1).min(1 << 16));
    for x in &pf {
        for y in &pg {
            let k = kernel(symplectic_phase(x.pv, x.wq, y.pv, y.wq));
            if k.is_zero() {
                continue;
            }
            let q: Mode = x.q.iter().zip(&y.q).map(|(a, b)| a + b).collect();
            b.add(x.p + y.p, q, x.a * y.a * k);
        }
    }
    b.finish(tag)
}

/// Symbol of `F̂ Ĝ`.
pub fn star_product<T: Real>(f: &AtomicSymbol<T>, g: &AtomicSymbol<T>, ctx: &Context<T>) -> Result<AtomicSymbol<T>> {
    check_tag(f, ctx.hbar)?;
    check_tag(g, ctx.hbar)?;
    let h = ctx.hbar;
    Ok(pairwise(f, g, ctx, Some(h), |om| Cplx::from_polar(T::one(), h * om / T::lit(2.0))))
}

/// Symbol of `[F̂, Ĝ]/(iħ)`.
pub fn moyal_bracket<T: Real>(f: &AtomicSymbol<T>, g: &AtomicSymbol<T>, ctx: &Context<T>) -> Result<AtomicSymbol<T>> {
    Bracket::moyal(ctx).apply(f, g, ctx)
}

/// Classical Poisson bracket `∂_x F·∂_ξ G − ∂_ξ F·∂_x G`.
pub fn poisson_bracket<T: Real>(f: &AtomicSymbol<T>, g: &AtomicSymbol<T>, ctx: &Context<T>) -> AtomicSymbol<T> {
    if f == g {
        return AtomicSymbol::zero();
    }
    pairwise(f, g, ctx, None, |om| Cplx::new(om, T::zero()))
}

/// `{F, L_ω}` (identical for Moyal and Poisson since `L_ω` is linear): `i<ω,q> a`.
pub fn bracket_with_linear<T: Real>(f: &AtomicSymbol<T>, ctx: &Context<T>) -> AtomicSymbol<T> {
    f.map_amplitudes(|a| a.a * Cplx::new(T::zero(), ctx.omega_dot(&a.q)))
}

/// `‖{F,G}_M − {F,G}‖_{ρ/2}` with `ρ = ctx.rho`.
pub fn poisson_limit_residual<T: Real>(f: &AtomicSymbol<T>, g: &AtomicSymbol<T>, ctx: &Context<T>) -> Result<T> {
    let h = ctx.hbar;
    let diff = pairwise(f, g, ctx, None, |om| {
        Cplx::new(T::lit(2.0) / h * (h * om / T::lit(2.0)).sin() - om, T::zero())
    });
    Ok(diff.weighted_norm(ctx.rho / T::lit(2.0)))
}

/// `c·L_ω + S`: an atomic symbol plus a multiple of the linear flow symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSymbol<T> {
    pub linear: T,
    pub atomic: AtomicSymbol<T>,
}

impl<T: Real> OperatorSymbol<T> {
    pub fn atomic(s: AtomicSymbol<T>) -> Self {
        Self { linear: T::zero(), atomic: s }
    }

    /// `L_ω + S`.
    pub fn with_linear(s: AtomicSymbol<T>) -> Self {
        Self { linear: T::one(), atomic: s }
    }

    pub fn linear_only() -> Self {
        Self { linear: T::one(), atomic: AtomicSymbol::zero() }
    }

    /// `{self, W}` under the chosen bracket; always atomic.
    pub fn bracket_with(&self, w: &AtomicSymbol<T>, br: Bracket<T>, ctx: &Context<T>) -> Result<AtomicSymbol<T>> {
        let mut out = br.apply(&self.atomic, w, ctx)?;
        if self.linear != T::zero() {
            // {c L, W} = −c {W, L}
            let lin = bracket_with_linear(w, ctx).scale_real(-self.linear);
            out = out.merge_add(&lin)?;
        }
        Ok(out)
    }

    /// Value at `(t, x)`: `c t + S(t, x)`.
    pub fn eval(&self, t: T, x: &[T]) -> Cplx<T> {
        self.atomic.eval(t, x) + Cplx::new(self.linear * t, T::zero())
    }
}

/// Options for [`adjoint_series`].
#[derive(Clone, Copy, Debug)]
pub struct SeriesSpec<T> {
    /// Largest |t| at which the series will be evaluated.
    pub t_max: T,
    /// Radius at which `W` and `X` are measured.
    pub rho_in: T,
    /// Radius at which the tail bound is stated (`d = rho_in − rho_out`).
    pub rho_out: T,
    /// Absolute target for the tail bound.
    pub tol: T,
    /// Hard cap on the number of brackets.
    pub max_order: usize,
    /// Prune threshold applied to each term (0 disables pruning).
    pub prune_tol: T,
    /// Cap on atoms per term.
    pub atom_budget: usize,
}

impl<T: Real> SeriesSpec<T> {
    pub fn new(t_max: T, rho_in: T, rho_out: T, tol: T) -> Self {
        Self { t_max, rho_in, rho_out, tol, max_order: 64, prune_tol: T::zero(), atom_budget: usize::MAX }
    }
}

/// `Σ_m t^m/m! ad_W^m(X)` with `ad_W(Y) = {Y, W}`, i.e. the symbol of
/// `e^{itŴ/ħ} X̂ e^{−itŴ/ħ}` (Moyal) or of `X∘Φ^t_W` (Poisson).
#[derive(Clone, Debug)]
pub struct AdjointSeries<T> {
    /// Multiple of `L_ω` carried by the `m = 0` term.
    pub linear: T,
    /// `terms[m] = ad_W^m(X)/m!` (atomic part).
    pub terms: Vec<AtomicSymbol<T>>,
    /// Bound on `‖Σ_{m > m*} t^m ad^m(X)/m!‖_{rho_out}` for `|t| ≤ t_max`.
    pub tail_bound: T,
    /// Weighted norm (at `rho_in`) removed by pruning, propagated through the series.
    pub slack: T,
}

impl<T: Real> AdjointSeries<T> {
    /// Truncation order `m*`.
    pub fn order(&self) -> usize {
        self.terms.len().saturating_sub(1)
    }

    /// Atomic part evaluated at `t` (the linear part is `self.linear · L_ω`).
    pub fn at(&self, t: T) -> Result<AtomicSymbol<T>> {
        self.weighted(|m| t.powi(m as i32))
    }

    /// `Σ_m c(m) terms[m]`.
    pub fn weighted(&self, c: impl Fn(usize) -> T) -> Result<AtomicSymbol<T>> {
        let mut acc = AtomicSymbol::zero();
        for (m, term) in self.terms.iter().enumerate() {
            let w = c(m);
            if w != T::zero() && !term.is_empty() {
                acc = acc.merge_add(&term.scale_real(w))?;
            }
        }
        Ok(acc)
    }
}

/// Bound on `Σ_{r>m} √r x^r` by `Σ_{r>m} r x^r`.
fn tail_sum<T: Real>(m: usize, x: T) -> T {
    let m = T::lit(m as f64);
    x.powf(m + T::one()) * ((m + T::one()) - m * x) / ((T::one() - x) * (T::one() - x))
}

/// Builds the conjugation series with tail control from the iterated-bracket bound
/// `(1/r!) ‖ad_W^r X‖_{ρ−d} ≤ √(2πr)/(e d) · (κ‖W‖_ρ/d)^r ‖X‖_ρ`, where
/// `κ = max(1, |ω|_∞)`.
pub fn adjoint_series<T: Real>(
    w: &AtomicSymbol<T>,
    x: &OperatorSymbol<T>,
    spec: &SeriesSpec<T>,
    br: Bracket<T>,
    ctx: &Context<T>,
) -> Result<AdjointSeries<T>> {
    let d = spec.rho_in - spec.rho_out;
    if !(d > T::zero()) {
        return Err(Error::InvalidContext("adjoint series needs rho_out < rho_in".into()));
    }
    let kappa = ctx.omega_scale();
    let wn = kappa * w.weighted_norm(spec.rho_in);
    let ratio = spec.t_max.abs() * wn / d;
    if ratio >= T::one() {
        return Err(Error::SeriesDiverges { ratio: ratio.as_f64() });
    }
    let mut terms = vec![x.atomic.clone()];
    if w.is_empty() {
        return Ok(AdjointSeries { linear: x.linear, terms, tail_bound: T::zero(), slack: T::zero() });
    }
    let e = T::one().exp();
    let c0 = (T::lit(2.0) * T::PI()).sqrt() / (e * d);
    // Effective ‖X‖: the linear part enters through its first bracket.
    let y1_lin = if x.linear != T::zero() {
        bracket_with_linear(w, ctx).scale_real(-x.linear)
    } else {
        AtomicSymbol::zero()
    };
    let x_amp = x.atomic.weighted_norm(spec.rho_in) + y1_lin.weighted_norm(spec.rho_in) * d / wn;
    let tail = |m: usize| c0 * x_amp * tail_sum(m, ratio);
    let growth = T::one() + c0 * ratio / ((T::one() - ratio) * (T::one() - ratio));

    let mut slack = T::zero();
    let mut current = OperatorSymbol { linear: x.linear, atomic: x.atomic.clone() };
    let mut tail_bound = tail(0);
    let tpow = |m: usize| spec.t_max.abs().powi(m as i32);
    for m in 1..=spec.max_order {
        let next = current.bracket_with(w, br, ctx)?.scale_real(T::one() / T::lit(m as f64));
        // Terms are multiplied by t^m, so the cut scales with t_max^{-m}.
        let cut = if spec.prune_tol > T::zero() { spec.prune_tol / tpow(m).max(T::min_positive_value()) } else { T::zero() };
        let (next, pruned) = next.prune(spec.rho_in, cut);
        slack += pruned * tpow(m) * growth;
        next.check_budget(spec.atom_budget)?;
        let done = next.is_empty();
        terms.push(next.clone());
        current = OperatorSymbol::atomic(next);
        if done {
            tail_bound = T::zero();
            break;
        }
        tail_bound = tail(m);
        if m >= 2 && tail_bound < spec.tol {
            break;
        }
    }
    while terms.len() > 1 && terms.last().is_some_and(|t| t.is_empty()) {
        terms.pop();
    }
    Ok(AdjointSeries { linear: x.linear, terms, tail_bound, slack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::Atom;
    use crate::weyl::{commutator_over_ihbar, quantize, ModeBox};

    fn golden_ctx(hbar: f64) -> Context<f64> {
        Context::new(vec![1.0, (1.0 + 5f64.sqrt()) / 2.0], hbar, 2.0, 1.0, 0.5).unwrap()
    }

    fn c(re: f64, im: f64) -> Cplx<f64> {
        Cplx::new(re, im)
    }

    fn fi(n: i64) -> Freq {
        Freq::from_integer(n)
    }

    #[test]
    fn star_unit_and_commuting_atoms() {
        let ctx = golden_ctx(0.1);
        let v = AtomicSymbol::canonical(2);
        let one = AtomicSymbol::unit(2);
        let fv = star_product(&v, &one, &ctx).unwrap();
        assert_eq!(fv.atoms(), v.atoms());
        let a = AtomicSymbol::single(fi(1), &[0, 0], c(2.0, 0.0));
        let b = AtomicSymbol::single(fi(2), &[0, 0], c(0.0, 3.0));
        let ab = star_product(&a, &b, &ctx).unwrap();
        assert_eq!(ab.len(), 1);
        assert_eq!(ab.amplitude(&fi(3), &[0, 0]), c(0.0, 6.0));
    }

    #[test]
    fn star_product_matches_matrix_product() {
        let ctx = golden_ctx(0.1);
        let f = AtomicSymbol::single(fi(1), &[1, 0], c(1.0, 0.0));
        let g = AtomicSymbol::single(fi(0), &[0, 1], c(1.0, 0.0));
        let fg = star_product(&f, &g, &ctx).unwrap();
        let omega = 1.0 * ctx.omega[1];
        assert_eq!(fg.len(), 1);
        let expected = Cplx::from_polar(1.0, 0.1 * omega / 2.0);
        assert!((fg.amplitude(&fi(1), &[1, 1]) - expected).norm() < 1e-15);
        let bx = ModeBox::new(2, 8);
        let prod = quantize(&f, &bx, &ctx).mat.matmul(&quantize(&g, &bx, &ctx).mat);
        let direct = quantize(&fg, &bx, &ctx).mat;
        assert!(prod.interior_diff(&direct, &bx, 2) < 1e-12);
    }

    #[test]
    fn bracket_with_itself_vanishes() {
        let ctx = golden_ctx(0.2);
        let v = AtomicSymbol::canonical(2);
        assert!(moyal_bracket(&v, &v, &ctx).unwrap().is_empty());
        assert!(poisson_bracket(&v, &v, &ctx).is_empty());
    }

    #[test]
    fn linear_bracket_sign_matches_commutator() {
        let ctx = golden_ctx(0.1);
        let f = AtomicSymbol::single(fi(1), &[1, 2], c(0.3, -0.2));
        let fl = bracket_with_linear(&f, &ctx);
        let w = ctx.omega_dot(&[1, 2]);
        assert!((fl.amplitude(&fi(1), &[1, 2]) - c(0.3, -0.2) * c(0.0, w)).norm() < 1e-15);
        let bx = ModeBox::new(2, 6);
        let lhat = crate::weyl::quantize_linear(&bx, &ctx);
        let comm = commutator_over_ihbar(&quantize(&f, &bx, &ctx), &lhat, &ctx).unwrap();
        assert!(comm.mat.interior_diff(&quantize(&fl, &bx, &ctx).mat, &bx, 2) < 1e-12);
    }

    #[test]
    fn moyal_kernel_for_generic_pair() {
        let ctx = golden_ctx(0.2);
        let f = AtomicSymbol::single(Freq::new(3, 2), &[1, -1], c(0.7, 0.1));
        let g = AtomicSymbol::single(fi(-1), &[2, 1], c(-0.4, 0.5));
        let br = moyal_bracket(&f, &g, &ctx).unwrap();
        let om = 1.5 * ctx.omega_dot(&[2, 1]) - (-1.0) * ctx.omega_dot(&[1, -1]);
        let expected = c(0.7, 0.1) * c(-0.4, 0.5) * (2.0 / 0.2 * (0.2 * om / 2.0).sin());
        assert!((br.amplitude(&Freq::new(1, 2), &[3, 0]) - expected).norm() < 1e-14);
        // antisymmetry
        let rev = moyal_bracket(&g, &f, &ctx).unwrap();
        assert!(br.merge_add(&rev).unwrap().weighted_norm(0.0) < 1e-15);
        assert_eq!(br.hbar_tag(), Some(0.2));
    }

    #[test]
    fn poisson_residual_examples() {
        let ctx = golden_ctx(0.2);
        let k = AtomicSymbol::single(fi(0), &[0, 0], c(1.0, 0.0));
        let v = AtomicSymbol::canonical(2);
        assert_eq!(poisson_limit_residual(&k, &v, &ctx).unwrap(), 0.0);
        let w = AtomicSymbol::single(fi(1), &[1, 0], c(1.0, 0.0));
        let g = AtomicSymbol::single(fi(-1), &[0, 1], c(1.0, 0.0));
        let r1 = poisson_limit_residual(&w, &g, &ctx).unwrap();
        let r2 = poisson_limit_residual(&w, &g, &ctx.with_hbar(0.1).unwrap()).unwrap();
        assert!((r2 / r1 - 0.25).abs() < 0.01, "ratio {}", r2 / r1);
    }

    #[test]
    fn tag_mismatch_is_reported() {
        let ctx = golden_ctx(0.1);
        let tagged = AtomicSymbol::<f64>::canonical(2).with_tag(Some(0.2));
        assert!(matches!(moyal_bracket(&tagged, &tagged, &ctx), Err(Error::IncompatibleHbarTag(..))));
    }

    #[test]
    fn adjoint_series_trivial_cases() {
        let ctx = golden_ctx(0.1);
        let v = AtomicSymbol::canonical(2);
        let spec = SeriesSpec::new(0.01, 0.5, 0.25, 1e-12);
        let s = adjoint_series(&AtomicSymbol::zero(), &OperatorSymbol::atomic(v.clone()), &spec, Bracket::moyal(&ctx), &ctx)
            .unwrap();
        assert_eq!(s.terms.len(), 1);
        assert_eq!(s.terms[0], v);
        // x-independent W commutes with L_ω.
        let wx = AtomicSymbol::single(fi(1), &[0, 0], c(0.3, 0.0));
        let s = adjoint_series(&wx, &OperatorSymbol::linear_only(), &spec, Bracket::moyal(&ctx), &ctx).unwrap();
        assert_eq!(s.linear, 1.0);
        assert!(s.terms.iter().all(|t| t.is_empty()));
        assert_eq!(s.tail_bound, 0.0);
    }

    #[test]
    fn adjoint_series_rejects_large_t() {
        let ctx = golden_ctx(0.1);
        let v = AtomicSymbol::canonical(2);
        let spec = SeriesSpec::new(1.0, 0.5, 0.25, 1e-12);
        assert!(matches!(
            adjoint_series(&v, &OperatorSymbol::atomic(v.clone()), &spec, Bracket::moyal(&ctx), &ctx),
            Err(Error::SeriesDiverges { .. })
        ));
    }

    #[test]
    fn mixed_atoms_pairwise_keys() {
        let ctx = golden_ctx(0.1);
        let f = AtomicSymbol::from_atoms(
            vec![Atom::new(fi(1), &[1, 0], c(1.0, 0.0)), Atom::new(fi(-1), &[-1, 0], c(1.0, 0.0))],
            None,
        );
        let g = AtomicSymbol::from_atoms(vec![Atom::new(fi(1), &[0, 1], c(1.0, 0.0))], None);
        let br = poisson_bracket(&f, &g, &ctx);
        assert_eq!(br.len(), 2);
    }

    #[test]
    fn works_in_single_precision() {
        let ctx = Context::<f32>::new(vec![1.0, 1.618_034], 0.1, 2.0, 1.0, 0.5).unwrap();
        let f = AtomicSymbol::<f32>::single(fi(1), &[1, 0], Cplx::new(1.0, 0.0));
        let g = AtomicSymbol::<f32>::single(fi(-1), &[0, 1], Cplx::new(1.0, 0.0));
        let br = moyal_bracket(&f, &g, &ctx).unwrap();
        let om = 1.0f32 * 1.618_034 + 1.0;
        let expected = 2.0 / 0.1 * (0.1 * om / 2.0f32).sin();
        assert!((br.amplitude(&fi(0), &[1, 1]).re - expected).abs() < 1e-5);
    }
}
