//! The ħ = 0 track: Hamiltonian flows of atomic symbols and the Egorov comparison
//! between quantum conjugation and classical transport.
//!
//! With `{F, G} = ∂_x F·∂_ξ G − ∂_ξ F·∂_x G` the flow of `W` is `ẋ = ∂_ξ W`,
//! `ξ̇ = −∂_x W`, so `d/dt F∘Φ^t = {F, W}∘Φ^t`.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;

pub use crate::moyal::poisson_bracket;
pub use crate::qnf::classical_birkhoff;

use crate::error::Result;
use crate::moyal::{adjoint_series, Bracket, OperatorSymbol, SeriesSpec};
use crate::scalar::{fmt_g17, Cplx, Real};
use crate::symbols::{AtomicSymbol, Context};

/// Phase-space point `(ξ, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint<T> {
    pub xi: Vec<T>,
    pub x: Vec<T>,
}

/// `(∂_ξ W, ∂_x W)` of `c·L_ω + Σ a e^{i(p<ω,ξ> + q·x)}`, real parts.
pub fn gradient<T: Real>(w: &OperatorSymbol<T>, pt: &PhasePoint<T>, ctx: &Context<T>) -> (Vec<T>, Vec<T>) {
    let t = ctx.omega_dot_real(&pt.xi);
    let l = ctx.l;
    let mut dt = Cplx::new(w.linear, T::zero());
    let mut dx = vec![Cplx::new(T::zero(), T::zero()); l];
    let i = Cplx::new(T::zero(), T::one());
    for a in w.atomic.atoms() {
        let mut phase = a.p_value() * t;
        for (qk, xk) in a.q.iter().zip(&pt.x) {
            phase += T::lit(*qk as f64) * *xk;
        }
        let e = a.a * Cplx::from_polar(T::one(), phase) * i;
        dt += e * a.p_value();
        for (k, qk) in a.q.iter().enumerate() {
            dx[k] += e * T::lit(*qk as f64);
        }
    }
    let dxi = ctx.omega.iter().map(|w| *w * dt.re).collect();
    (dxi, dx.into_iter().map(|z| z.re).collect())
}

fn axpy<T: Real>(a: &[T], h: T, b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + h * *y).collect()
}

fn rk4_step<T: Real>(w: &OperatorSymbol<T>, pt: &PhasePoint<T>, h: T, ctx: &Context<T>) -> PhasePoint<T> {
    // State derivative: (ξ̇, ẋ) = (−∂_x W, ∂_ξ W).
    let f = |p: &PhasePoint<T>| {
        let (gxi, gx) = gradient(w, p, ctx);
        (gx.into_iter().map(|v| -v).collect::<Vec<T>>(), gxi)
    };
    let half = h / T::lit(2.0);
    let (k1x, k1y) = f(pt);
    let p2 = PhasePoint { xi: axpy(&pt.xi, half, &k1x), x: axpy(&pt.x, half, &k1y) };
    let (k2x, k2y) = f(&p2);
    let p3 = PhasePoint { xi: axpy(&pt.xi, half, &k2x), x: axpy(&pt.x, half, &k2y) };
    let (k3x, k3y) = f(&p3);
    let p4 = PhasePoint { xi: axpy(&pt.xi, h, &k3x), x: axpy(&pt.x, h, &k3y) };
    let (k4x, k4y) = f(&p4);
    let six = T::lit(6.0);
    let comb = |y: &[T], a: &[T], b: &[T], c: &[T], d: &[T]| -> Vec<T> {
        (0..y.len()).map(|k| y[k] + h / six * (a[k] + T::lit(2.0) * b[k] + T::lit(2.0) * c[k] + d[k])).collect()
    };
    PhasePoint { xi: comb(&pt.xi, &k1x, &k2x, &k3x, &k4x), x: comb(&pt.x, &k1y, &k2y, &k3y, &k4y) }
}

fn wrap<T: Real>(x: &mut [T]) {
    let tau = T::lit(TAU);
    for v in x {
        *v = *v - tau * (*v / tau).floor();
    }
}

/// Time-`ε` flow of `W₀` by fixed-step RK4; `x` reduced mod 2π.
pub fn hamiltonian_flow<T: Real>(
    w0: &OperatorSymbol<T>,
    start: &PhasePoint<T>,
    epsilon: T,
    steps: usize,
    ctx: &Context<T>,
) -> PhasePoint<T> {
    hamiltonian_trajectory(w0, start, epsilon, steps, ctx).pop().expect("trajectory is nonempty")
}

/// Every RK4 state from `t = 0` to `t = ε` (`steps + 1` points).
pub fn hamiltonian_trajectory<T: Real>(
    w0: &OperatorSymbol<T>,
    start: &PhasePoint<T>,
    epsilon: T,
    steps: usize,
    ctx: &Context<T>,
) -> Vec<PhasePoint<T>> {
    let steps = steps.max(1);
    let h = epsilon / T::lit(steps as f64);
    let mut out = Vec::with_capacity(steps + 1);
    let mut p = start.clone();
    wrap(&mut p.x);
    out.push(p.clone());
    for _ in 0..steps {
        p = rk4_step(w0, &p, h, ctx);
        wrap(&mut p.x);
        out.push(p.clone());
    }
    out
}

/// Trajectory CSV `step,t,xi_1..,x_1..`.
pub fn trajectory_csv<T: Real>(traj: &[PhasePoint<T>], epsilon: T) -> String {
    let mut s = String::from("step,t");
    if let Some(p) = traj.first() {
        for k in 1..=p.xi.len() {
            let _ = write!(s, ",xi_{k}");
        }
        for k in 1..=p.x.len() {
            let _ = write!(s, ",x_{k}");
        }
    }
    s.push('\n');
    let n = traj.len().saturating_sub(1).max(1);
    for (i, p) in traj.iter().enumerate() {
        let t = epsilon.as_f64() * i as f64 / n as f64;
        let _ = write!(s, "{i},{}", fmt_g17(t));
        for v in p.xi.iter().chain(&p.x) {
            let _ = write!(s, ",{}", fmt_g17(v.as_f64()));
        }
        s.push('\n');
    }
    s
}

/// Tensor sample grid: `n^l` points with `x_k = 2π i_k/n` and
/// `ξ_k = lo + (hi − lo) i_{k+1}/(n − 1)` (indices cyclic), so `ξ` and `x` vary jointly.
pub fn sample_grid<T: Real>(l: usize, n: usize, lo: T, hi: T) -> Vec<PhasePoint<T>> {
    let total = n.pow(l as u32);
    (0..total)
        .map(|mut idx| {
            let mut ix = vec![0usize; l];
            for k in (0..l).rev() {
                ix[k] = idx % n;
                idx /= n;
            }
            let x = ix.iter().map(|&i| T::lit(TAU * i as f64 / n as f64)).collect();
            let xi = (0..l)
                .map(|k| {
                    let i = ix[(k + 1) % l];
                    lo + (hi - lo) * T::lit(i as f64 / (n.max(2) - 1) as f64)
                })
                .collect();
            PhasePoint { xi, x }
        })
        .collect()
}

/// Options of [`egorov_residual`].
#[derive(Clone, Copy, Debug)]
pub struct EgorovOptions<T> {
    /// RK4 steps per unit time.
    pub steps_per_unit: usize,
    /// Absolute tail target for the conjugation series.
    pub series_tol: T,
}

impl<T: Real> Default for EgorovOptions<T> {
    fn default() -> Self {
        Self { steps_per_unit: 10_000, series_tol: T::lit(1e-14) }
    }
}

/// `sup_grid |conj_ε(L_ω + A)(ξ,x) − (L_ω + A)(Φ^ε_{W₀}(ξ,x))|`, where `conj_ε` is the
/// Moyal conjugation series at `ctx.hbar` and `W₀` is `W` read as an ħ-independent symbol.
pub fn egorov_residual<T: Real>(
    a: &AtomicSymbol<T>,
    w: &AtomicSymbol<T>,
    epsilon: T,
    ctx: &Context<T>,
    grid: &[PhasePoint<T>],
    opts: &EgorovOptions<T>,
) -> Result<T> {
    if epsilon == T::zero() || w.is_empty() {
        return Ok(T::zero());
    }
    let tag = Some(ctx.hbar);
    let w_q = w.clone().with_tag(tag);
    let x = OperatorSymbol::with_linear(a.clone().with_tag(tag));
    let rho = ctx.rho;
    let mut spec = SeriesSpec::new(epsilon, rho, rho / T::lit(2.0), opts.series_tol);
    spec.prune_tol = opts.series_tol;
    let series = adjoint_series(&w_q, &x, &spec, Bracket::moyal(ctx), ctx)?;
    let b = series.at(epsilon)?;
    let lhs = OperatorSymbol { linear: series.linear, atomic: b };
    let w0 = OperatorSymbol::atomic(w.clone().with_tag(None));
    let x0 = OperatorSymbol::with_linear(a.clone().with_tag(None));
    let steps = ((epsilon.abs().as_f64() * opts.steps_per_unit as f64).ceil() as usize).max(1);
    let worst = grid
        .par_iter()
        .map(|pt| {
            let t = ctx.omega_dot_real(&pt.xi);
            let left = lhs.atomic.eval(t, &pt.x) + Cplx::new(lhs.linear * t, T::zero());
            let moved = hamiltonian_flow(&w0, pt, epsilon, steps, ctx);
            let right = x0.eval(ctx.omega_dot_real(&moved.xi), &moved.x);
            (left - right).norm()
        })
        .reduce(|| T::zero(), |p, q| p.max(q));
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homological::{mean_atom, solve_homological, DivisorModel};
    use crate::moyal::moyal_bracket;
    use crate::symbols::{Atom, Freq};
    use proptest::prelude::*;

    fn golden_ctx(hbar: f64) -> Context<f64> {
        Context::new(vec![1.0, (1.0 + 5f64.sqrt()) / 2.0], hbar, 2.0, 1.0, 0.5).unwrap()
    }

    fn fi(n: i64) -> Freq {
        Freq::from_integer(n)
    }

    #[test]
    fn poisson_self_bracket_and_linear() {
        let ctx = golden_ctx(0.1);
        let f = AtomicSymbol::canonical(2);
        assert!(poisson_bracket(&f, &f, &ctx).is_empty());
        // {F, L_ω} = −<ω,∇_x>F: atom a e^{iq·x} ↦ −i<ω,q> a ... with our ordering
        // {F, L} = ∂_x F·ω = i<ω,q> a, the derivative of F along x-translation by ω.
        let lin = crate::moyal::bracket_with_linear(&f, &ctx);
        for (a, b) in f.atoms().iter().zip(lin.atoms()) {
            assert_eq!(b.a, a.a * Cplx::new(0.0, ctx.omega_dot(&a.q)));
        }
    }

    #[test]
    fn linear_flow_is_translation() {
        let ctx = golden_ctx(0.1);
        let l = OperatorSymbol::<f64>::linear_only();
        let start = PhasePoint { xi: vec![0.3, -0.2], x: vec![1.0, 2.0] };
        let end = hamiltonian_flow(&l, &start, 0.7, 100, &ctx);
        assert_eq!(end.xi, start.xi);
        for k in 0..2 {
            let expected = (start.x[k] + ctx.omega[k] * 0.7).rem_euclid(TAU);
            assert!((end.x[k] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn x_independent_flow_shifts_x() {
        let ctx = golden_ctx(0.1);
        let w = mean_atom(fi(1), 2, Cplx::new(0.5, 0.0)).merge_add(&mean_atom(fi(-1), 2, Cplx::new(0.5, 0.0))).unwrap();
        let op = OperatorSymbol::atomic(w);
        let start = PhasePoint { xi: vec![0.3, -0.2], x: vec![1.0, 2.0] };
        let end = hamiltonian_flow(&op, &start, 0.5, 1000, &ctx);
        assert_eq!(end.xi, start.xi);
        let t = ctx.omega_dot_real(&start.xi);
        for k in 0..2 {
            // ∂_ξ cos(t) = −ω_k sin t.
            let expected = (start.x[k] - 0.5 * ctx.omega[k] * t.sin()).rem_euclid(TAU);
            assert!((end.x[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_conserved() {
        let ctx = golden_ctx(0.1);
        let w = OperatorSymbol::atomic(AtomicSymbol::canonical(2));
        let start = PhasePoint { xi: vec![0.3, -0.2], x: vec![1.0, 2.0] };
        let e0 = w.eval(ctx.omega_dot_real(&start.xi), &start.x).re;
        let end = hamiltonian_flow(&w, &start, 1.0, 10_000, &ctx);
        let e1 = w.eval(ctx.omega_dot_real(&end.xi), &end.x).re;
        assert!((e1 - e0).abs() < 1e-8);
    }

    #[test]
    fn egorov_trivial_cases() {
        let ctx = golden_ctx(0.1);
        let grid = sample_grid(2, 4, -1.0, 1.0);
        let v = AtomicSymbol::canonical(2);
        let w = solve_homological(&v, &DivisorModel::identity(), &ctx, 0.5, 0.1, 0.0).unwrap().w;
        assert_eq!(egorov_residual(&v, &w, 0.0, &ctx, &grid, &EgorovOptions::default()).unwrap(), 0.0);
        let wx = mean_atom(fi(1), 2, Cplx::new(0.5, 0.0)).merge_add(&mean_atom(fi(-1), 2, Cplx::new(0.5, 0.0))).unwrap();
        let r = egorov_residual(&AtomicSymbol::zero(), &wx, 0.01, &ctx, &grid, &EgorovOptions::default()).unwrap();
        assert!(r < 1e-14, "{r}");
    }

    #[test]
    fn grid_and_csv_shape() {
        let g = sample_grid::<f64>(2, 8, -1.0, 1.0);
        assert_eq!(g.len(), 64);
        let ctx = golden_ctx(0.1);
        let traj = hamiltonian_trajectory(&OperatorSymbol::linear_only(), &g[5], 1.0, 4, &ctx);
        let csv = trajectory_csv(&traj, 1.0);
        assert!(csv.starts_with("step,t,xi_1,xi_2,x_1,x_2\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn moyal_converges_to_poisson_quadratically() {
        let f = AtomicSymbol::canonical(2);
        let g = AtomicSymbol::from_atoms(
            vec![Atom::new(fi(2), &[1, 1], Cplx::new(0.3, 0.1)), Atom::new(fi(-1), &[0, 2], Cplx::new(0.2, 0.0))],
            None,
        );
        let mut prev = None;
        for h in [0.2, 0.1, 0.05] {
            let ctx = golden_ctx(h);
            let diff = moyal_bracket(&f, &g, &ctx).unwrap().with_tag(None).sub(&poisson_bracket(&f, &g, &ctx)).unwrap();
            let r = diff.weighted_norm(0.25);
            if let Some(p) = prev {
                let ratio: f64 = r / p;
                assert!((0.2..=0.3).contains(&ratio), "ratio {ratio}");
            }
            prev = Some(r);
        }
    }

    fn arb_symbol() -> impl Strategy<Value = AtomicSymbol<f64>> {
        prop::collection::vec((-2i64..=2, -2i32..=2, -2i32..=2, -1.0f64..1.0, -1.0f64..1.0), 1..4).prop_map(|v| {
            AtomicSymbol::from_atoms(v.into_iter().map(|(p, a, b, re, im)| Atom::new(fi(p), &[a, b], Cplx::new(re, im))), None)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn poisson_jacobi_identity(f in arb_symbol(), g in arb_symbol(), h in arb_symbol()) {
            let ctx = golden_ctx(0.1);
            let pb = |a: &AtomicSymbol<f64>, b: &AtomicSymbol<f64>| poisson_bracket(a, b, &ctx);
            let s = pb(&f, &pb(&g, &h)).merge_add(&pb(&g, &pb(&h, &f))).unwrap().merge_add(&pb(&h, &pb(&f, &g))).unwrap();
            let scale = f.weighted_norm(0.25) * g.weighted_norm(0.25) * h.weighted_norm(0.25);
            prop_assert!(s.weighted_norm(0.25) < 1e-10 * scale.max(1e-300));
        }
    }
}
