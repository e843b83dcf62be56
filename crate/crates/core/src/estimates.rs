//! Diophantine certification of the frequency vector and the ledger of convergence
//! constants (`θ`, `A`, `C`, `E`, `Ψ`, `Π`, `μ`, `ε*`).
//!
//! Constants are carried as natural logarithms so that `e^{24(3+2τ)}`-sized factors stay
//! representable; `LogValue::value` converts back when the result fits in `f64`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::fmt_g17;

/// A positive quantity stored as its natural logarithm (`ln = −∞` encodes zero).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogValue {
    pub ln: f64,
}

impl LogValue {
    pub fn from_ln(ln: f64) -> Self {
        Self { ln }
    }

    pub fn new(x: f64) -> Self {
        Self { ln: x.ln() }
    }

    pub fn zero() -> Self {
        Self { ln: f64::NEG_INFINITY }
    }

    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// `(m, e)` with `value = m·10^e` and `1 ≤ m < 10`.
    pub fn mantissa_exponent(self) -> (f64, i64) {
        if self.ln == f64::NEG_INFINITY {
            return (0.0, 0);
        }
        let l10 = self.log10();
        let e = l10.floor();
        (10f64.powf(l10 - e), e as i64)
    }

    pub fn mul(self, o: Self) -> Self {
        Self { ln: self.ln + o.ln }
    }

    pub fn div(self, o: Self) -> Self {
        Self { ln: self.ln - o.ln }
    }

    pub fn powf(self, k: f64) -> Self {
        if k == 0.0 {
            return Self { ln: 0.0 };
        }
        Self { ln: self.ln * k }
    }

    /// `ln(e^a + e^b)` without overflow.
    pub fn add(self, o: Self) -> Self {
        let (hi, lo) = if self.ln >= o.ln { (self.ln, o.ln) } else { (o.ln, self.ln) };
        if hi == f64::NEG_INFINITY {
            return Self::zero();
        }
        Self { ln: hi + (lo - hi).exp().ln_1p() }
    }
}

/// `x^k` in log form with the convention `0⁰ = 1`.
fn ln_pow(x: f64, k: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * x.ln()
    }
}

/// Finite verification of `|<ω,q>|⁻¹ ≤ γ |q|₁^τ` for `0 < |q|₁ ≤ q_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCertificate {
    pub omega: Vec<f64>,
    pub tau: f64,
    pub gamma_measured: f64,
    pub q_max: usize,
    pub worst_q: Vec<i32>,
}

/// Vectors with `|q|₁ = s` whose first nonzero entry is positive (`q` and `−q` give the
/// same divisor), in lexicographic order.
fn shell(l: usize, s: i32) -> Vec<Vec<i32>> {
    fn rec(l: usize, left: i32, lead: bool, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == l - 1 {
            let mut opts = vec![];
            if left == 0 {
                opts.push(0);
            } else {
                if !lead {
                    opts.push(-left);
                }
                opts.push(left);
            }
            for v in opts {
                cur.push(v);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        let lo = if lead { 0 } else { -left };
        for v in lo..=left {
            cur.push(v);
            rec(l, left - v.abs(), lead && v == 0, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(l, s, true, &mut Vec::with_capacity(l), &mut out);
    out.retain(|q| q.iter().map(|v| v.abs()).sum::<i32>() == s);
    out
}

fn omega_dot(omega: &[f64], q: &[i32]) -> (f64, f64) {
    let mut s = 0.0;
    let mut scale = 0.0;
    for (w, &k) in omega.iter().zip(q) {
        s += w * k as f64;
        scale += (w * k as f64).abs();
    }
    (s, scale)
}

/// Exhaustive scan over `0 < |q|₁ ≤ q_max`, parallel over shells.
///
/// `gamma_measured = max |q|₁^{−τ}/|<ω,q>|`; ties keep the smallest shell, then the
/// lexicographically first vector. A divisor below `10⁻¹⁵·Σ|ω_k q_k|` is a resonance.
pub fn diophantine_certify(omega: &[f64], tau: f64, q_max: usize) -> Result<DiophantineCertificate> {
    if omega.len() < 2 || omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidContext("omega needs at least two finite entries".into()));
    }
    if !(tau > 0.0) || q_max == 0 {
        return Err(Error::InvalidContext("tau must be positive and q_max >= 1".into()));
    }
    let l = omega.len();
    // Per shell: Err(resonant q) or Ok((gamma, q)).
    let per_shell: Vec<std::result::Result<(f64, Vec<i32>), Vec<i32>>> = (1..=q_max as i32)
        .into_par_iter()
        .map(|s| {
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let weight = (s as f64).powf(-tau);
            for q in shell(l, s) {
                let (d, scale) = omega_dot(omega, &q);
                if d.abs() <= 1e-15 * scale {
                    return Err(q);
                }
                let g = weight / d.abs();
                if g > best.0 {
                    best = (g, q);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for r in per_shell {
        match r {
            Err(q) => return Err(Error::ResonantFrequency { worst_q: q }),
            Ok((g, q)) => {
                if g > best.0 {
                    best = (g, q);
                }
            }
        }
    }
    Ok(DiophantineCertificate { omega: omega.to_vec(), tau, gamma_measured: best.0, q_max, worst_q: best.1 })
}

/// `ε*(γ,τ) = 1/(e^{24(3+2τ)} 2^{2τ} ‖V‖_ρ)`; `γ` does not enter the closed form.
pub fn epsilon_star(_gamma: f64, tau: f64, norm_v: f64) -> LogValue {
    epsilon_star_r(_gamma, tau, 0, norm_v)
}

/// `ε*(γ,τ,r) = 1/(e^{24(3+2τ)} (r+2)^{2τ} ‖V‖_ρ)`.
pub fn epsilon_star_r(_gamma: f64, tau: f64, r: u32, norm_v: f64) -> LogValue {
    LogValue::from_ln(-24.0 * (3.0 + 2.0 * tau) - 2.0 * tau * ((r + 2) as f64).ln() - norm_v.ln())
}

/// CSV `k,eps_star_k_log10` for `k = 0..=k_max`.
pub fn eps_star_csv(gamma: f64, tau: f64, norm_v: f64, k_max: u32) -> String {
    let mut s = String::from("k,eps_star_k_log10\n");
    for k in 0..=k_max {
        let _ = writeln!(s, "{k},{}", fmt_g17(epsilon_star_r(gamma, tau, k, norm_v).log10()));
    }
    s
}

/// `μ = e^{8(3+2τ)}`.
pub fn mu(tau: f64) -> LogValue {
    LogValue::from_ln(8.0 * (3.0 + 2.0 * tau))
}

/// `μ_ℓ = μ^{2^ℓ}`.
pub fn mu_ell(tau: f64, ell: u32) -> LogValue {
    mu(tau).powf(2f64.powi(ell as i32))
}

/// Inputs of the step constants at one KAM step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInputs {
    pub gamma: f64,
    pub tau: f64,
    pub rho: f64,
    /// Radius loss `d_ℓ`.
    pub d: f64,
    /// Accumulated loss `δ_ℓ = Σ_{s<ℓ} d_s`.
    pub delta: f64,
    pub theta: f64,
    /// `ε_ℓ`.
    pub epsilon: f64,
    /// `‖V_ℓ‖_{ρ_ℓ}`.
    pub norm_v: f64,
}

/// `Π(k) = [2(k+1)²]^{k+1} k^k / (e^k δ^k)`.
pub fn pi_const(k: u32, delta: f64) -> LogValue {
    let kf = k as f64;
    LogValue::from_ln(
        (kf + 1.0) * (2.0 * (kf + 1.0).powi(2)).ln() + ln_pow(kf, kf) - kf - ln_pow(delta, kf),
    )
}

/// `A = γτ^τ/(e d)^τ · [1 + Π θ^{k+1}/(1−θ)^{k+1}]`.
pub fn a_const(inp: &StepInputs, k: u32) -> LogValue {
    let kf = k as f64;
    let e = std::f64::consts::E;
    let base = LogValue::from_ln(inp.gamma.ln() + ln_pow(inp.tau, inp.tau) - inp.tau * (e * inp.d).ln());
    let p = if inp.theta == 0.0 {
        LogValue::zero()
    } else {
        LogValue::from_ln((kf + 1.0) * (inp.theta.ln() - (1.0 - inp.theta).ln()))
    };
    base.mul(LogValue::from_ln(0.0).add(pi_const(k, inp.delta).mul(p)))
}

/// `Ψ = (k+1)² 4^k/(e d)³ · Π`.
pub fn psi_const(inp: &StepInputs, k: u32) -> LogValue {
    let kf = k as f64;
    let e = std::f64::consts::E;
    LogValue::from_ln(2.0 * (kf + 1.0).ln() + kf * 4f64.ln() - 3.0 * (e * inp.d).ln()).mul(pi_const(k, inp.delta))
}

/// `C = (k+1)² 4^{2k}/(e d)³ · A · [2 + ε(k+1)4^k/(e d)² · A‖V‖]`.
pub fn c_const(inp: &StepInputs, k: u32) -> LogValue {
    let kf = k as f64;
    let e = std::f64::consts::E;
    let a = a_const(inp, k);
    let pre = LogValue::from_ln(2.0 * (kf + 1.0).ln() + 2.0 * kf * 4f64.ln() - 3.0 * (e * inp.d).ln());
    let inner = LogValue::new(2.0).add(
        LogValue::from_ln(
            inp.epsilon.abs().ln() + (kf + 1.0).ln() + kf * 4f64.ln() - 2.0 * (e * inp.d).ln() + inp.norm_v.ln(),
        )
        .mul(a),
    );
    pre.mul(a).mul(inner)
}

/// `E = Ψ A [2 + ε e Ψ A ‖V‖] / (1 − ε A ‖V‖/d)`; infinite when the step condition fails.
pub fn e_const(inp: &StepInputs, k: u32) -> LogValue {
    let a = a_const(inp, k);
    let psi = psi_const(inp, k);
    let step = step_condition(inp, k);
    if step >= 1.0 {
        return LogValue::from_ln(f64::INFINITY);
    }
    let inner = LogValue::new(2.0).add(LogValue::from_ln(inp.epsilon.abs().ln() + 1.0 + inp.norm_v.ln()).mul(psi).mul(a));
    psi.mul(a).mul(inner).div(LogValue::new(1.0 - step))
}

/// `ε A ‖V‖ / d`.
pub fn step_condition(inp: &StepInputs, k: u32) -> f64 {
    LogValue::from_ln(inp.epsilon.abs().ln() + inp.norm_v.ln() - inp.d.ln()).mul(a_const(inp, k)).value()
}

/// `λ(k) = 1 + 8γτ^τ · 2(k+1)²`.
pub fn lambda_k(gamma: f64, tau: f64, k: u32) -> f64 {
    1.0 + 8.0 * gamma * tau.powf(tau) * 2.0 * ((k + 1) as f64).powi(2)
}

/// All constants of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub ell: usize,
    pub k: u32,
    pub inputs: StepInputs,
    pub theta_ell: f64,
    pub a_ell: LogValue,
    pub c_ell: LogValue,
    pub e_ell: LogValue,
    pub psi: LogValue,
    pub pi: LogValue,
    pub mu: LogValue,
    pub mu_ell: LogValue,
    pub eps_star: LogValue,
    pub eps_star_k: LogValue,
    pub step_condition: f64,
    /// `ρ > 1 + 16γτ^τ`.
    pub h3_holds: bool,
    /// `ρ > λ(k)`.
    pub lambda_holds: bool,
    /// `θ ≤ 1/ρ`.
    pub theta_below_inv_rho: bool,
}

/// Evaluates every constant from primitive step data.
pub fn constants_at(ell: usize, k: u32, inp: StepInputs) -> ConstantsLedger {
    let gt = inp.gamma * inp.tau.powf(inp.tau);
    ConstantsLedger {
        ell,
        k,
        inputs: inp,
        theta_ell: inp.theta,
        a_ell: a_const(&inp, k),
        c_ell: c_const(&inp, k),
        e_ell: e_const(&inp, k),
        psi: psi_const(&inp, k),
        pi: pi_const(k, inp.delta),
        mu: mu(inp.tau),
        mu_ell: mu_ell(inp.tau, ell as u32),
        eps_star: epsilon_star(inp.gamma, inp.tau, inp.norm_v),
        eps_star_k: epsilon_star_r(inp.gamma, inp.tau, k, inp.norm_v),
        step_condition: step_condition(&inp, k),
        h3_holds: inp.rho > 1.0 + 16.0 * gt,
        lambda_holds: inp.rho > lambda_k(inp.gamma, inp.tau, k),
        theta_below_inv_rho: inp.theta <= 1.0 / inp.rho,
    }
}

/// Constants of the current step of a KAM state.
pub fn ledger_evaluate(state: &crate::kam::KamState<f64>, ctx: &crate::symbols::Context<f64>, k: u32) -> ConstantsLedger {
    constants_at(state.ell, k, state.step_inputs(ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shells_are_canonical_and_complete() {
        for l in 2..=3 {
            for s in 1..=5 {
                let sh = shell(l, s);
                // Count of |q|₁ = s vectors, halved.
                let mut full = 0;
                let r = s;
                let all: Vec<Vec<i32>> = if l == 2 {
                    (-r..=r).flat_map(|a| (-r..=r).map(move |b| vec![a, b])).collect()
                } else {
                    (-r..=r)
                        .flat_map(|a| (-r..=r).flat_map(move |b| (-r..=r).map(move |c| vec![a, b, c])))
                        .collect()
                };
                for q in &all {
                    if q.iter().map(|v| v.abs()).sum::<i32>() == s {
                        full += 1;
                    }
                }
                assert_eq!(sh.len() * 2, full, "l={l} s={s}");
                for q in &sh {
                    assert!(*q.iter().find(|v| **v != 0).unwrap() > 0);
                }
            }
        }
    }

    #[test]
    fn resonant_omega_rejected() {
        match diophantine_certify(&[1.0, 1.0], 1.0, 10) {
            Err(Error::ResonantFrequency { worst_q }) => assert_eq!(worst_q, vec![1, -1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn golden_and_sqrt2_certified() {
        // Brute force oracle: scan the full square |q_k| ≤ Q.
        let oracle = |omega: [f64; 2], qm: i32| {
            let mut g: f64 = 0.0;
            for a in -qm..=qm {
                for b in -qm..=qm {
                    let n = a.abs() + b.abs();
                    if n == 0 || n > qm {
                        continue;
                    }
                    let d = (omega[0] * a as f64 + omega[1] * b as f64).abs();
                    g = g.max(1.0 / (d * n as f64));
                }
            }
            g
        };
        for omega in [[1.0, (1.0 + 5f64.sqrt()) / 2.0], [1.0, 2f64.sqrt()]] {
            let c = diophantine_certify(&omega, 1.0, 300).unwrap();
            let o = oracle(omega, 300);
            assert!((c.gamma_measured - o).abs() <= 1e-14 * o);
            assert!(c.gamma_measured.is_finite());
        }
    }

    #[test]
    fn epsilon_star_reference_value() {
        let e = epsilon_star(1.0, 1.0, 1.0);
        let expected = -(120.0 * std::f64::consts::E.log10() + 4f64.log10());
        assert!((e.log10() - expected).abs() < 1e-9);
        let half = epsilon_star(1.0, 1.0, 2.0);
        assert!((half.ln - (e.ln - 2f64.ln())).abs() < 1e-12);
        assert_eq!(epsilon_star_r(1.0, 1.0, 0, 3.0), epsilon_star(1.0, 1.0, 3.0));
    }

    #[test]
    fn step_zero_constants() {
        // Empty divisor: θ = 0 and A = γτ^τ/(e d)^τ.
        let inp = StepInputs { gamma: 2.0, tau: 1.0, rho: 0.5, d: 0.125, delta: 0.0, theta: 0.0, epsilon: 1e-3, norm_v: 4.0 };
        let a = a_const(&inp, 0).value();
        assert!((a - 2.0 / (std::f64::consts::E * 0.125)).abs() < 1e-12 * a);
        assert_eq!(pi_const(0, 0.0).value(), 2.0);
        let e = std::f64::consts::E;
        let ed3 = (e * 0.125f64).powi(3);
        let psi = 2.0 / ed3;
        assert!((psi_const(&inp, 0).value() - psi).abs() < 1e-12 * psi);
        let ev = psi * a * (2.0 + 1e-3 * e * psi * a * 4.0) / (1.0 - 1e-3 * a * 4.0 / 0.125);
        assert!((e_const(&inp, 0).value() - ev).abs() < 1e-12 * ev);
        let cv = a / ed3 * (2.0 + 1e-3 / (e * 0.125f64).powi(2) * a * 4.0);
        assert!((c_const(&inp, 0).value() - cv).abs() < 1e-12 * cv);
        let with_theta = StepInputs { theta: 0.25, ..inp };
        let expected = a * (1.0 + 2.0 * 0.25 / 0.75);
        assert!((a_const(&with_theta, 0).value() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn hypothesis_checks() {
        let inp = StepInputs { gamma: 1.0, tau: 1.0, rho: 20.0, d: 1.0, delta: 0.0, theta: 0.01, epsilon: 1e-3, norm_v: 1.0 };
        let l = constants_at(0, 0, inp);
        assert!(l.h3_holds && l.lambda_holds && l.theta_below_inv_rho);
        assert_eq!(lambda_k(1.0, 1.0, 0), 17.0);
        let l = constants_at(0, 1, inp);
        assert!(l.h3_holds && !l.lambda_holds);
    }

    #[test]
    fn log_value_arithmetic() {
        let a = LogValue::new(3.0);
        let b = LogValue::new(5.0);
        assert!((a.add(b).value() - 8.0).abs() < 1e-14);
        assert!((a.mul(b).value() - 15.0).abs() < 1e-13);
        assert_eq!(LogValue::zero().add(LogValue::zero()), LogValue::zero());
        let (m, e) = LogValue::new(2.5e-7).mantissa_exponent();
        assert!((m - 2.5).abs() < 1e-12 && e == -7);
    }

    #[test]
    fn csv_layout() {
        let csv = eps_star_csv(1.0, 1.0, 1.0, 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,eps_star_k_log10");
        assert_eq!(lines.len(), 4);
    }

    proptest! {
        #[test]
        fn eps_star_k_strictly_decreasing(tau in 0.5f64..4.0, nv in 1e-3f64..1e3) {
            for k in 0..6 {
                prop_assert!(epsilon_star_r(1.0, tau, k, nv).ln > epsilon_star_r(1.0, tau, k + 1, nv).ln);
            }
        }

        #[test]
        fn mu_ell_squares(tau in 0.5f64..4.0, ell in 0u32..6) {
            let a = mu_ell(tau, ell).ln * 2.0;
            let b = mu_ell(tau, ell + 1).ln;
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }

        #[test]
        fn constants_nonnegative(theta in 0.0f64..0.9, d in 0.01f64..1.0, k in 0u32..4) {
            let inp = StepInputs { gamma: 1.5, tau: 1.0, rho: 2.0, d, delta: 0.3, theta, epsilon: 1e-6, norm_v: 2.0 };
            let l = constants_at(1, k, inp);
            for v in [l.a_ell, l.c_ell, l.e_ell, l.psi, l.pi] {
                prop_assert!(v.value() >= 0.0);
            }
        }
    }

    #[test]
    fn gamma_nondecreasing_in_q_max() {
        let omega = [1.0, 2f64.sqrt()];
        let mut last = 0.0;
        for q in [5, 20, 80, 200] {
            let g = diophantine_certify(&omega, 1.0, q).unwrap().gamma_measured;
            assert!(g >= last);
            last = g;
        }
    }
}
