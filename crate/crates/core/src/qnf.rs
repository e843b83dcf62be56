//! Order-by-order quantum (or classical) normal form.
//!
//! Conjugating `L_ω + εV` by `e^{iW/ħ}` with `W = Σ_j ε^j W_j` and collecting `ε^s` gives
//! `{L_ω, W_s} + V_s = B_s`, where
//!
//! `V_s = Σ_{r≥2} 1/r! Σ_{j₁+…+j_r=s} ad_{W_{j₁}}⋯ad_{W_{j_r}}(L_ω)
//!      + Σ_{r≥1} 1/r! Σ_{j₁+…+j_r=s−1} ad_{W_{j₁}}⋯ad_{W_{j_r}}(V)`
//!
//! with `ad_W(X) = {X, W}` and `V_1 = V`. Inner sums are memoized over suffixes:
//! `G_r(X, n) = Σ_j ad_{W_j} G_{r−1}(X, n − j)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::homological::{solve_homological, DivisorModel};
use crate::moyal::{bracket_with_linear, Bracket};
use crate::scalar::{Cplx, Real};
use crate::symbols::{AtomRecord, AtomicSymbol, Context};

/// Knobs of the normal-form recursion.
#[derive(Clone, Copy, Debug)]
pub struct QnfOptions<T> {
    /// Prune threshold for every generated term (0 disables pruning).
    pub prune_tol: T,
    /// Cap on atoms in any intermediate symbol.
    pub atom_budget: usize,
}

impl<T: Real> Default for QnfOptions<T> {
    fn default() -> Self {
        Self { prune_tol: T::zero(), atom_budget: 2_000_000 }
    }
}

/// Default schedule: `ρ_1 = ρ`, `d_s = (ρ/2)/(s+1)²`, `ρ_{s+1} = ρ_s − d_s`.
pub fn default_schedule<T: Real>(rho: T, k: usize) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(k);
    let mut r = rho;
    for s in 1..=k {
        let d = rho / T::lit(2.0) / T::lit(((s + 1) * (s + 1)) as f64);
        out.push((r, d));
        r -= d;
    }
    out
}

/// Norms recorded at order `s`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderNorms {
    pub s: usize,
    pub rho_s: f64,
    pub d_s: f64,
    pub norm_v: f64,
    pub norm_b: f64,
    pub norm_w: f64,
    /// `‖W_s‖_{ρ_s−d_s} ≤ γ(τ/d_s)^τ ‖V_s‖_{ρ_s}`.
    pub w_bound_holds: bool,
    pub atoms_v: usize,
}

/// Normal form through order `K`.
#[derive(Clone, Debug)]
pub struct NormalForm<T> {
    pub order: usize,
    /// `b[s-1] = B_s`.
    pub b: Vec<AtomicSymbol<T>>,
    /// `w[s-1] = W_s`.
    pub w: Vec<AtomicSymbol<T>>,
    /// `v[s-1] = V_s`.
    pub v: Vec<AtomicSymbol<T>>,
    pub radius_schedule: Vec<(T, T)>,
    pub norms: Vec<OrderNorms>,
    /// Bracket used: `Some(ħ)` for Moyal, `None` for Poisson.
    pub hbar: Option<T>,
    /// Weighted norm removed by pruning.
    pub slack: T,
    /// `‖V‖_ρ` of the input perturbation.
    pub norm_v_input: T,
}

/// Quantum normal form (Moyal brackets at `ctx.hbar`).
pub fn qnf_construct<T: Real>(
    v: &AtomicSymbol<T>,
    k: usize,
    ctx: &Context<T>,
    schedule: Option<Vec<(T, T)>>,
    opts: &QnfOptions<T>,
) -> Result<NormalForm<T>> {
    normal_form(v, k, ctx, schedule, opts, Bracket::moyal(ctx))
}

/// The same recursion with Poisson brackets (ħ = 0).
pub fn classical_birkhoff<T: Real>(
    v: &AtomicSymbol<T>,
    k: usize,
    ctx: &Context<T>,
    schedule: Option<Vec<(T, T)>>,
    opts: &QnfOptions<T>,
) -> Result<NormalForm<T>> {
    let v = v.clone().with_tag(None);
    normal_form(&v, k, ctx, schedule, opts, Bracket::Poisson)
}

fn factorial(r: usize) -> f64 {
    (1..=r).map(|x| x as f64).product()
}

/// Table `g[r][n] = G_r(X, n)` grown as new `W_j` become available.
struct SuffixTable<T> {
    g: Vec<Vec<Option<AtomicSymbol<T>>>>,
}

impl<T: Real> SuffixTable<T> {
    fn new(kmax: usize) -> Self {
        Self { g: vec![vec![None; kmax + 1]; kmax + 1] }
    }

    /// Fills `G_r(X, n)` given `G_{r−1}(X, m)` for `m < n`; `base` supplies `G_1`.
    fn fill(
        &mut self,
        r: usize,
        n: usize,
        ws: &[AtomicSymbol<T>],
        br: Bracket<T>,
        ctx: &Context<T>,
        opts: &QnfOptions<T>,
        rho: T,
        slack: &mut T,
    ) -> Result<()> {
        if self.g[r][n].is_some() {
            return Ok(());
        }
        let parts: Vec<Result<AtomicSymbol<T>>> = (1..=n + 1 - r)
            .into_par_iter()
            .map(|j| {
                let inner = self.g[r - 1][n - j].as_ref().expect("suffix table filled in order");
                if inner.is_empty() || ws[j - 1].is_empty() {
                    return Ok(AtomicSymbol::zero());
                }
                br.apply(inner, &ws[j - 1], ctx)
            })
            .collect();
        let mut acc = AtomicSymbol::zero();
        for p in parts {
            acc = acc.merge_add(&p?)?;
        }
        let (acc, pruned) = acc.prune(rho, opts.prune_tol);
        *slack += pruned;
        acc.check_budget(opts.atom_budget)?;
        self.g[r][n] = Some(acc);
        Ok(())
    }
}

fn normal_form<T: Real>(
    v: &AtomicSymbol<T>,
    k: usize,
    ctx: &Context<T>,
    schedule: Option<Vec<(T, T)>>,
    opts: &QnfOptions<T>,
    br: Bracket<T>,
) -> Result<NormalForm<T>> {
    if k == 0 {
        return Err(Error::InvalidContext("normal form order must be >= 1".into()));
    }
    if k > 6 {
        return Err(Error::InvalidContext(format!("order K = {k} exceeds the supported maximum 6")));
    }
    let schedule = schedule.unwrap_or_else(|| default_schedule(ctx.rho, k));
    if schedule.len() < k {
        return Err(Error::InvalidContext("radius schedule shorter than K".into()));
    }
    let tag = match br {
        Bracket::Moyal(h) => Some(h),
        Bracket::Poisson => None,
    };
    let v = v.clone().with_tag(v.hbar_tag().or(tag));
    let rho_min = ctx.rho / T::lit(2.0);
    let mut slack = T::zero();
    // G_0(X, 0) = X. For L the first level is tabulated directly: G_1(L, n) = {L, W_n}.
    let mut tab_l = SuffixTable::new(k);
    let mut tab_v = SuffixTable::new(k);
    tab_v.g[0][0] = Some(v.clone());
    for n in 1..=k {
        tab_v.g[0][n] = Some(AtomicSymbol::zero());
        tab_l.g[0][n] = Some(AtomicSymbol::zero());
    }
    let mut ws: Vec<AtomicSymbol<T>> = Vec::with_capacity(k);
    let mut bs = Vec::with_capacity(k);
    let mut vs = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for s in 1..=k {
        let (rho_s, d_s) = schedule[s - 1];
        if !(rho_s - d_s > rho_min) {
            return Err(Error::InvalidContext(format!("radius schedule leaves rho/2 at order {s}")));
        }
        let mut vsum = if s == 1 { v.clone() } else { AtomicSymbol::zero().with_tag(tag) };
        if s >= 2 {
            // L part: r ≥ 2, compositions of s.
            for r in 2..=s {
                tab_l.fill(r, s, &ws, br, ctx, opts, rho_min, &mut slack)?;
                let term = tab_l.g[r][s].as_ref().expect("filled").scale_real(T::lit(1.0 / factorial(r)));
                vsum = vsum.merge_add(&term)?;
            }
            // V part: r ≥ 1, compositions of s − 1.
            for r in 1..s {
                tab_v.fill(r, s - 1, &ws, br, ctx, opts, rho_min, &mut slack)?;
                let term = tab_v.g[r][s - 1].as_ref().expect("filled").scale_real(T::lit(1.0 / factorial(r)));
                vsum = vsum.merge_add(&term)?;
            }
        }
        vsum.check_budget(opts.atom_budget)?;
        let sol = solve_homological(&vsum, &DivisorModel::identity(), ctx, rho_s, d_s, T::zero())?;
        let w_s = sol.w.with_tag(tag);
        let b_s = sol.n.with_tag(tag);
        // G_1(L, s) = {L, W_s} = −{W_s, L}.
        tab_l.g[1][s] = Some(bracket_with_linear(&w_s, ctx).scale_real(-T::one()).with_tag(tag));
        let norm_v = vsum.weighted_norm(rho_s);
        let norm_w = w_s.weighted_norm(rho_s - d_s);
        let w_bound = ctx.gamma * (ctx.tau / d_s).powf(ctx.tau) * norm_v;
        norms.push(OrderNorms {
            s,
            rho_s: rho_s.as_f64(),
            d_s: d_s.as_f64(),
            norm_v: norm_v.as_f64(),
            norm_b: b_s.weighted_norm(rho_s).as_f64(),
            norm_w: norm_w.as_f64(),
            w_bound_holds: norm_w <= w_bound * (T::one() + T::lit(1e-12)),
            atoms_v: vsum.len(),
        });
        ws.push(w_s);
        bs.push(b_s);
        vs.push(vsum);
    }
    Ok(NormalForm {
        order: k,
        b: bs,
        w: ws,
        v: vs,
        radius_schedule: schedule[..k].to_vec(),
        norms,
        hbar: tag,
        slack,
        norm_v_input: v.weighted_norm(ctx.rho),
    })
}

/// `λ_n = ħ<ω,n> + Σ_s ε^s B_s(ħ<ω,n>)`.
pub fn qnf_eigenvalue<T: Real>(nf: &NormalForm<T>, n: &[i32], epsilon: T, ctx: &Context<T>) -> Result<T> {
    let t = ctx.hbar * ctx.omega_dot(n);
    let mut sum = Cplx::new(T::zero(), T::zero());
    let mut scale = t.abs();
    let mut epow = T::one();
    for b in &nf.b {
        epow *= epsilon;
        if epow == T::zero() {
            break;
        }
        sum += b.eval_t(t) * epow;
        scale += epow.abs() * b.atoms().iter().map(|a| a.a.norm()).sum::<T>();
    }
    if sum.im.abs() > T::lit(1e-10) * scale.max(T::min_positive_value()) {
        return Err(Error::NotReal { imag: sum.im.as_f64(), magnitude: scale.as_f64() });
    }
    Ok(t + sum.re)
}

/// Closed-form remainder estimate of the normal form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemainderBound {
    /// `(EK)^{k+1}(k+1)^{(τ+2)(k+1)} ε^{k+1}`.
    pub bound: f64,
    /// `Σ_{s≤k} E^s K^s s^{(τ+2)s} ε^s`.
    pub b_sum_bound: f64,
    /// `K = 8·2^{τ+5} γ τ^τ / ρ^{2+τ}`.
    pub k_const: f64,
    /// `μ_s = 8γτ^τ E/(d_s^τ δ_s²)` with `δ_s = d_s`.
    pub mu_s: Vec<f64>,
    /// False when some `μ_s ≥ 1/2`.
    pub rigorous: bool,
}

impl RemainderBound {
    /// Turns a non-rigorous bound into `HypothesisViolated`.
    pub fn require_rigorous(&self) -> Result<f64> {
        if self.rigorous {
            Ok(self.bound)
        } else {
            let worst = self.mu_s.iter().cloned().fold(0.0, f64::max);
            Err(Error::HypothesisViolated(format!("mu_s = {worst} >= 1/2")))
        }
    }
}

/// Evaluates the normal-form remainder estimate in log space.
pub fn qnf_remainder_bound<T: Real>(nf: &NormalForm<T>, epsilon: f64, ctx: &Context<T>) -> RemainderBound {
    let gamma = ctx.gamma.as_f64();
    let tau = ctx.tau.as_f64();
    let rho = ctx.rho.as_f64();
    let e_norm = nf.norm_v_input.as_f64();
    let gt = gamma * tau.powf(tau);
    let ln_k = 8f64.ln() + (tau + 5.0) * 2f64.ln() + gt.ln() - (2.0 + tau) * rho.ln();
    let k = nf.order as f64;
    let ln_ek = e_norm.ln() + ln_k;
    let bound = if epsilon == 0.0 {
        0.0
    } else {
        ((k + 1.0) * (ln_ek + epsilon.abs().ln()) + (tau + 2.0) * (k + 1.0) * (k + 1.0).ln()).exp()
    };
    let b_sum_bound = if epsilon == 0.0 {
        0.0
    } else {
        (1..=nf.order)
            .map(|s| {
                let s = s as f64;
                (s * (ln_ek + epsilon.abs().ln()) + (tau + 2.0) * s * s.ln()).exp()
            })
            .sum()
    };
    let mu_s: Vec<f64> = nf
        .radius_schedule
        .iter()
        .map(|(_, d)| {
            let d = d.as_f64();
            8.0 * gt * e_norm / (d.powf(tau) * d * d)
        })
        .collect();
    let rigorous = mu_s.iter().all(|m| *m < 0.5);
    RemainderBound { bound, b_sum_bound, k_const: ln_k.exp(), mu_s, rigorous }
}

#[derive(Serialize)]
struct OrderReport {
    s: usize,
    rho_s: f64,
    d_s: f64,
    b: Vec<AtomRecord>,
    w: Vec<AtomRecord>,
    norms: OrderNorms,
}

#[derive(Serialize)]
struct NormalFormReport<'a> {
    order: usize,
    hbar: Option<f64>,
    bracket: &'static str,
    slack: f64,
    norm_v_input: f64,
    remainder: Option<&'a RemainderBound>,
    orders: Vec<OrderReport>,
}

/// Structured JSON report of a normal form.
pub fn normal_form_json<T: Real>(nf: &NormalForm<T>, remainder: Option<&RemainderBound>) -> serde_json::Value {
    let orders = (0..nf.order)
        .map(|i| OrderReport {
            s: i + 1,
            rho_s: nf.radius_schedule[i].0.as_f64(),
            d_s: nf.radius_schedule[i].1.as_f64(),
            b: nf.b[i].to_records(),
            w: nf.w[i].to_records(),
            norms: nf.norms[i].clone(),
        })
        .collect();
    let report = NormalFormReport {
        order: nf.order,
        hbar: nf.hbar.map(|h| h.as_f64()),
        bracket: if nf.hbar.is_some() { "moyal" } else { "poisson" },
        slack: nf.slack.as_f64(),
        norm_v_input: nf.norm_v_input.as_f64(),
        remainder,
        orders,
    };
    serde_json::to_value(report).expect("normal form report serializes")
}
