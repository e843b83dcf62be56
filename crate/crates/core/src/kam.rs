//! Superconvergent KAM iteration on atomic symbols.
//!
//! Step `ℓ` takes `F_ℓ + ε_ℓ V_ℓ` (with `F_ℓ = L_ω + Σ_{s<ℓ} ε_s N_s`), solves
//! `{F_ℓ, W}_M + V_ℓ = N_ℓ` and conjugates by `e^{iε_ℓ Ŵ/ħ}`:
//! `F_ℓ + ε_ℓ N_ℓ + ε_ℓ² V_{ℓ+1}` with
//!
//! `V_{ℓ+1} = Σ_{m≥0} ε^m/((m+1)(m+2)) ad^m R₀/m! + Σ_{m≥0} ε^{m+1}/((m+2)(m+3)) ad^m R₁/m!`,
//!
//! `R₀ = {N,W}_M + {V,W}_M`, `R₁ = {{V,W}_M,W}_M`, `ad X = {X, W}_M`, `ε = ε_ℓ`. This is the
//! Taylor remainder `ε^{-2}∫₀^ε (ε−t) conj_t(R₀ + t R₁) dt` evaluated term by term.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimates::{a_const, constants_at, e_const, StepInputs};
use crate::homological::{solve_homological, DivisorModel, DivisorTerm};
use crate::moyal::{adjoint_series, moyal_bracket, Bracket, OperatorSymbol, SeriesSpec};
use crate::scalar::{fmt_g17, Cplx, Real};
use crate::symbols::{AtomicSymbol, Context};
use crate::weyl::{expm, quantize, CMatrix, ModeBox, OperatorMatrix};

/// Radius bookkeeping: `d_ℓ = min(1, ρ/4)/(ℓ+1)²`, `ρ_{ℓ+1} = ρ_ℓ − d_ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadiusLedger<T> {
    pub rho0: T,
    /// `d[ℓ]` for every step taken or about to be taken.
    pub d: Vec<T>,
    /// `rho[ℓ] = ρ_ℓ`; `rho[0] = ρ`.
    pub rho: Vec<T>,
    /// `delta[ℓ] = Σ_{s<ℓ} d_s`.
    pub delta: Vec<T>,
}

impl<T: Real> RadiusLedger<T> {
    pub fn new(rho0: T) -> Self {
        let mut l = Self { rho0, d: Vec::new(), rho: vec![rho0], delta: vec![T::zero()] };
        l.d.push(Self::schedule(rho0, 0));
        l
    }

    pub fn schedule(rho0: T, ell: usize) -> T {
        let base = T::one().min(rho0 / T::lit(4.0));
        base / T::lit(((ell + 1) * (ell + 1)) as f64)
    }

    /// Records step `ℓ` as taken.
    pub fn advance(&mut self) {
        let ell = self.rho.len() - 1;
        let d = self.d[ell];
        self.rho.push(self.rho[ell] - d);
        self.delta.push(self.delta[ell] + d);
        self.d.push(Self::schedule(self.rho0, ell + 1));
    }
}

/// Norms and constants of one completed step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub ell: usize,
    pub eps_ell: f64,
    /// `‖V_ℓ‖_{ρ_ℓ}`.
    pub norm_v: f64,
    /// `‖W_ℓ‖_{ρ_ℓ−d_ℓ}`.
    pub norm_w: f64,
    /// `‖N_ℓ‖_{ρ_ℓ}`.
    pub norm_n: f64,
    pub theta: f64,
    pub a: f64,
    pub e: f64,
    /// Accumulated truncation budget after this step.
    pub slack: f64,
    /// `‖V_{ℓ+1}‖_{ρ_{ℓ+1}}`.
    pub norm_v_next: f64,
    /// Remainder-series truncation order.
    pub series_order: usize,
}

/// Tuning of a KAM step.
#[derive(Clone, Copy, Debug)]
pub struct KamOptions<T> {
    /// Relative tolerance for Neumann and conjugation series tails.
    pub tol: T,
    /// Atoms whose contribution is below `prune_tol·‖V_ℓ‖_{ρ_ℓ}` are dropped (into slack).
    pub prune_tol: T,
    pub atom_budget: usize,
}

impl<T: Real> Default for KamOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-10), prune_tol: T::lit(1e-14), atom_budget: 2_000_000 }
    }
}

/// One generator of the iteration.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub ell: usize,
    pub eps_ell: T,
    pub w: AtomicSymbol<T>,
    pub n: AtomicSymbol<T>,
}

/// State `F_ℓ + ε_ℓ V_ℓ` of the iteration.
#[derive(Clone, Debug)]
pub struct KamState<T> {
    pub ell: usize,
    pub epsilon: T,
    /// `ε^{2^ℓ}` obtained by repeated squaring.
    pub epsilon_ell: T,
    pub divisor: DivisorModel<T>,
    pub v: AtomicSymbol<T>,
    pub ledger: RadiusLedger<T>,
    pub records: Vec<StepRecord>,
    pub generators: Vec<Generator<T>>,
    pub slack: T,
    /// Set when `ε_ℓ‖V_ℓ‖` fell below the underflow guard.
    pub converged: bool,
}

/// `ε_ℓ‖V_ℓ‖` below this counts as machine zero.
pub const UNDERFLOW_GUARD: f64 = 1e-250;

impl<T: Real> KamState<T> {
    pub fn new(v: &AtomicSymbol<T>, epsilon: T, ctx: &Context<T>) -> Self {
        Self {
            ell: 0,
            epsilon,
            epsilon_ell: epsilon,
            divisor: DivisorModel::identity(),
            v: v.clone().with_tag(Some(ctx.hbar)),
            ledger: RadiusLedger::new(ctx.rho),
            records: Vec::new(),
            generators: Vec::new(),
            slack: T::zero(),
            converged: false,
        }
    }

    pub fn rho_ell(&self) -> T {
        self.ledger.rho[self.ell]
    }

    pub fn d_ell(&self) -> T {
        self.ledger.d[self.ell]
    }

    /// Constants inputs for the current step.
    pub fn step_inputs(&self, ctx: &Context<T>) -> StepInputs {
        StepInputs {
            gamma: ctx.gamma.as_f64(),
            tau: ctx.tau.as_f64(),
            rho: ctx.rho.as_f64(),
            d: self.d_ell().as_f64(),
            delta: self.ledger.delta[self.ell].as_f64(),
            theta: self.divisor.theta().as_f64(),
            epsilon: self.epsilon_ell.as_f64(),
            norm_v: self.v.weighted_norm(self.rho_ell()).as_f64(),
        }
    }

    /// `D_ℓ = L_ω + Σ_{s<ℓ} ε_s N_s` (linear coefficient 1 plus the atomic part).
    pub fn d_symbol(&self) -> Result<OperatorSymbol<T>> {
        Ok(OperatorSymbol::with_linear(self.divisor.phi()?))
    }

    /// Eigenvalue of `D̂_ℓ` on the basis vector `e_n`: `ħ<ω,n> + Σ ε_s N_s(ħ<ω,n>)`.
    pub fn d_eigenvalue(&self, n: &[i32], ctx: &Context<T>) -> Result<T> {
        let t = ctx.hbar * ctx.omega_dot(n);
        let val = self.divisor.phi()?.eval_t(t);
        Ok(t + val.re)
    }
}

/// One KAM step.
pub fn kam_step<T: Real>(state: &KamState<T>, ctx: &Context<T>, opts: &KamOptions<T>) -> Result<KamState<T>> {
    let ell = state.ell;
    let rho = state.rho_ell();
    let d = state.d_ell();
    let eps = state.epsilon_ell;
    let theta = state.divisor.theta();
    if theta >= T::one() {
        return Err(Error::ThetaTooLarge { ell, theta: theta.as_f64() });
    }
    let inputs = state.step_inputs(ctx);
    let a = a_const(&inputs, 0).value();
    let cond = crate::estimates::step_condition(&inputs, 0);
    if !(cond < 1.0) {
        return Err(Error::StepConditionViolated { ell, value: cond });
    }
    let norm_v = state.v.weighted_norm(rho);
    let sol = solve_homological(&state.v, &state.divisor, ctx, rho, d, opts.tol)?;
    let w = sol.w.clone().with_tag(Some(ctx.hbar));
    let n = sol.n.clone().with_tag(Some(ctx.hbar));

    // Remainder V_{ℓ+1}.
    let vw = moyal_bracket(&state.v, &w, ctx)?;
    let r0 = moyal_bracket(&n, &w, ctx)?.merge_add(&vw)?;
    let r1 = moyal_bracket(&vw, &w, ctx)?;
    let rho_next = rho - d;
    let rho_mid = rho - d / T::lit(2.0);
    let abs_tol = opts.tol * norm_v.max(T::min_positive_value());
    let prune_abs = opts.prune_tol * norm_v;
    let spec = SeriesSpec {
        max_order: 64,
        prune_tol: prune_abs,
        atom_budget: opts.atom_budget,
        ..SeriesSpec::new(eps, rho_mid, rho_next, abs_tol)
    };
    let br = Bracket::moyal(ctx);
    let s0 = adjoint_series(&w, &OperatorSymbol::atomic(r0), &spec, br, ctx)?;
    let s1 = adjoint_series(&w, &OperatorSymbol::atomic(r1), &spec, br, ctx)?;
    let v0 = s0.weighted(|m| eps.powi(m as i32) / T::lit(((m + 1) * (m + 2)) as f64))?;
    let v1 = s1.weighted(|m| eps.powi(m as i32 + 1) / T::lit(((m + 2) * (m + 3)) as f64))?;
    let v_next = v0.merge_add(&v1)?.with_tag(Some(ctx.hbar));
    let (v_next, pruned) = v_next.prune(rho_next, prune_abs);
    v_next.check_budget(opts.atom_budget)?;
    let tails = s0.tail_bound / T::lit(2.0) + eps * s1.tail_bound / T::lit(6.0) + s0.slack + s1.slack;
    let slack = state.slack + sol.residual_bound + tails + pruned;

    let e = e_const(&inputs, 0).value();
    let mut next = state.clone();
    next.divisor.push(DivisorTerm { epsilon: eps, n: n.clone(), rho, d })?;
    next.generators.push(Generator { ell, eps_ell: eps, w: w.clone(), n: n.clone() });
    next.records.push(StepRecord {
        ell,
        eps_ell: eps.as_f64(),
        norm_v: norm_v.as_f64(),
        norm_w: w.weighted_norm(rho - d).as_f64(),
        norm_n: n.weighted_norm(rho).as_f64(),
        theta: theta.as_f64(),
        a,
        e,
        slack: slack.as_f64(),
        norm_v_next: v_next.weighted_norm(rho_next).as_f64(),
        series_order: s0.order().max(s1.order()),
    });
    next.v = v_next;
    next.slack = slack;
    next.ell = ell + 1;
    next.epsilon_ell = eps * eps;
    next.ledger.advance();
    let size = next.epsilon_ell.as_f64() * next.v.weighted_norm(next.rho_ell()).as_f64();
    next.converged = next.v.is_empty() || size < UNDERFLOW_GUARD;
    Ok(next)
}

/// Convergence diagnostics of a run.
#[derive(Clone, Debug, Serialize)]
pub struct KamDiagnostics {
    pub records: Vec<StepRecord>,
    /// `(ε_{ℓ+1}‖V_{ℓ+1}‖)/(ε_ℓ‖V_ℓ‖)²` per step.
    pub contraction: Vec<f64>,
    /// `ε_{ℓ+1}‖V_{ℓ+1}‖ ≤ E_ℓ (ε_ℓ‖V_ℓ‖)²` per step.
    pub lemma_holds: Vec<bool>,
    /// Least-squares slope of `ln(ε_ℓ‖V_ℓ‖)` against `2^ℓ`.
    pub superconvergence_slope: Option<f64>,
    pub stopped_early: bool,
}

/// Result of [`kam_run`].
#[derive(Clone, Debug)]
pub struct KamRun<T> {
    pub state: KamState<T>,
    /// `D_n = L_ω + Σ ε_s N_s`.
    pub d_n: OperatorSymbol<T>,
    pub diagnostics: KamDiagnostics,
}

/// Runs up to `steps ≤ 4` KAM steps.
pub fn kam_run<T: Real>(
    v: &AtomicSymbol<T>,
    epsilon: T,
    ctx: &Context<T>,
    steps: usize,
    opts: &KamOptions<T>,
) -> Result<KamRun<T>> {
    if steps > 4 {
        return Err(Error::InvalidContext(format!("kam_steps = {steps} exceeds 4")));
    }
    let mut state = KamState::new(v, epsilon, ctx);
    let mut stopped_early = false;
    for _ in 0..steps {
        if state.converged {
            stopped_early = true;
            break;
        }
        state = kam_step(&state, ctx, opts)?;
    }
    let d_n = state.d_symbol()?;
    let diagnostics = diagnostics(&state, stopped_early);
    Ok(KamRun { state, d_n, diagnostics })
}

fn diagnostics<T: Real>(state: &KamState<T>, stopped_early: bool) -> KamDiagnostics {
    let mut contraction = Vec::new();
    let mut lemma_holds = Vec::new();
    let mut pts = Vec::new();
    for r in &state.records {
        let before = r.eps_ell * r.norm_v;
        let after = r.eps_ell * r.eps_ell * r.norm_v_next;
        contraction.push(after / (before * before));
        lemma_holds.push(after <= r.e * before * before);
        if before > 0.0 {
            pts.push((2f64.powi(r.ell as i32), before.ln()));
        }
    }
    if let Some(last) = state.records.last() {
        let after = last.eps_ell * last.eps_ell * last.norm_v_next;
        if after > 0.0 {
            pts.push((2f64.powi(last.ell as i32 + 1), after.ln()));
        }
    }
    let superconvergence_slope = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    KamDiagnostics { records: state.records.clone(), contraction, lemma_holds, superconvergence_slope, stopped_early }
}

/// Per-step CSV `ell,eps_ell,norm_V,norm_W,norm_N,theta,A,E,slack`.
pub fn kam_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("ell,eps_ell,norm_V,norm_W,norm_N,theta,A,E,slack\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.ell,
            fmt_g17(r.eps_ell),
            fmt_g17(r.norm_v),
            fmt_g17(r.norm_w),
            fmt_g17(r.norm_n),
            fmt_g17(r.theta),
            fmt_g17(r.a),
            fmt_g17(r.e),
            fmt_g17(r.slack)
        );
    }
    s
}

/// `U = e^{iε_{n}Ŵ_{n}/ħ} ⋯ e^{iε_0Ŵ_0/ħ}` for generators listed in step order.
pub fn unitary_product<T: Real>(gens: &[(AtomicSymbol<T>, T)], bx: &ModeBox, ctx: &Context<T>) -> Result<OperatorMatrix<T>> {
    let mut u = CMatrix::identity(bx.dim());
    for (w, eps) in gens {
        let wh = quantize(w, bx, ctx);
        if !wh.hermitian {
            return Err(Error::NotHermitian { defect: wh.mat.hermitian_defect().as_f64() });
        }
        let x = wh.mat.scale(Cplx::new(T::zero(), *eps / ctx.hbar));
        u = expm(&x).matmul(&u);
    }
    Ok(OperatorMatrix::new(bx.clone(), u))
}

/// `U A U*`.
pub fn conjugate<T: Real>(u: &OperatorMatrix<T>, a: &OperatorMatrix<T>) -> Result<OperatorMatrix<T>> {
    if u.bx != a.bx {
        return Err(Error::BoxMismatch);
    }
    Ok(OperatorMatrix::new(a.bx.clone(), u.mat.matmul(&a.mat).matmul(&u.mat.adjoint())))
}

/// Ledger of the current step (k = 0 constants).
pub fn step_ledger<T: Real>(state: &KamState<T>, ctx: &Context<T>) -> crate::estimates::ConstantsLedger {
    constants_at(state.ell, 0, state.step_inputs(ctx))
}
