//! Diagonalization-oracle checks of the quantization and EBK formulas.

use tqnf::estimates::diophantine_certify;
use tqnf::qnf::{classical_birkhoff, qnf_construct, QnfOptions};
use tqnf::verify::{compare_ebk, compare_qnf, fit_exponent, label_spectrum, LabelOptions};
use tqnf::weyl::{hamiltonian_matrix, ModeBox};
use tqnf::{AtomicSymbol, Context, Ctx, Symbol};

fn ctx(hbar: f64) -> Ctx {
    let omega = vec![1.0, (1.0 + 5f64.sqrt()) / 2.0];
    let cert = diophantine_certify(&omega, 1.0, 1000).unwrap();
    Context::new(omega, hbar, cert.gamma_measured, 1.0, 0.5).unwrap().with_certificate(cert).unwrap()
}

const SWEEP: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

fn qnf_errors(v: &Symbol, k: usize, m: usize, hbar: f64, eps: &[f64]) -> Vec<f64> {
    let c = ctx(hbar);
    let nf = qnf_construct(v, k, &c, None, &QnfOptions::default()).unwrap();
    let bx = ModeBox::new(2, m);
    eps.iter()
        .map(|&e| {
            let spec = label_spectrum(&hamiltonian_matrix(v, e, &bx, &c), &LabelOptions::default()).unwrap();
            compare_qnf(&spec, &nf, e, &c).unwrap().max
        })
        .collect()
}

#[test]
fn first_order_formula_error_is_quadratic() {
    let errs = qnf_errors(&AtomicSymbol::canonical(2), 1, 10, 0.1, &SWEEP);
    let slope = fit_exponent(&SWEEP, &errs).unwrap();
    assert!((1.8..=2.2).contains(&slope), "slope {slope}, errors {errs:?}");
}

#[test]
fn second_order_formula_error_is_cubic_or_better() {
    let errs = qnf_errors(&AtomicSymbol::canonical(2), 2, 10, 0.1, &SWEEP);
    let slope = fit_exponent(&SWEEP, &errs).unwrap();
    assert!(slope >= 2.8, "slope {slope}, errors {errs:?}");
}

#[test]
fn ebk_equals_qnf_at_first_order_and_zero_epsilon() {
    let v = AtomicSymbol::canonical(2);
    let c = ctx(0.1);
    let nf = qnf_construct(&v, 1, &c, None, &QnfOptions::default()).unwrap();
    let cl = classical_birkhoff(&v, 1, &c, None, &QnfOptions::default()).unwrap();
    let bx = ModeBox::new(2, 8);
    for e in [0.0, 1e-3] {
        let spec = label_spectrum(&hamiltonian_matrix(&v, e, &bx, &c), &LabelOptions::default()).unwrap();
        let q = compare_qnf(&spec, &nf, e, &c).unwrap();
        let b = compare_ebk(&spec, &cl, e, &c).unwrap();
        assert_eq!(q, b);
        if e == 0.0 {
            assert_eq!(q.max, 0.0);
        }
    }
}

#[test]
fn truncation_stability() {
    let v = AtomicSymbol::canonical(2);
    let c = ctx(0.1);
    let nf = qnf_construct(&v, 3, &c, None, &QnfOptions::default()).unwrap();
    let e = 1e-3;
    let table = |m: usize| {
        let bx = ModeBox::new(2, m);
        let spec = label_spectrum(&hamiltonian_matrix(&v, e, &bx, &c), &LabelOptions::default()).unwrap();
        compare_qnf(&spec, &nf, e, &c).unwrap()
    };
    let (small, large) = (table(8), table(10));
    let mut shared = 0;
    for r in &small.rows {
        let other = large.rows.iter().find(|o| o.n == r.n).expect("interior modes nest");
        assert!((r.abs_err - other.abs_err).abs() < 1e-10, "{:?}", r.n);
        shared += 1;
    }
    assert!(shared > 0);
}

#[test]
fn qnf_beats_ebk_when_hbar_exceeds_epsilon() {
    let v = AtomicSymbol::canonical(2);
    let bx = ModeBox::new(2, 10);
    for hbar in [0.2, 0.1] {
        let c = ctx(hbar);
        let nf = qnf_construct(&v, 2, &c, None, &QnfOptions::default()).unwrap();
        let cl = classical_birkhoff(&v, 2, &c, None, &QnfOptions::default()).unwrap();
        for e in [1e-2, 1e-3] {
            let spec = label_spectrum(&hamiltonian_matrix(&v, e, &bx, &c), &LabelOptions::default()).unwrap();
            let q = compare_qnf(&spec, &nf, e, &c).unwrap().max;
            let b = compare_ebk(&spec, &cl, e, &c).unwrap().max;
            assert!(q <= b + 1e-12, "hbar {hbar} eps {e}: qnf {q} ebk {b}");
        }
    }
}

/// The ħ-corrections of B_s come from the sine kernel, which is even in ħ, so the EBK
/// error in its ħ-dominated regime scales like ε²ħ² (ratio ≈ 1/4 per halving).
#[test]
fn ebk_error_under_hbar_halving_is_quadratic() {
    let v = AtomicSymbol::canonical(2);
    let e = 1e-3;
    let mut errs = Vec::new();
    for hbar in [0.2, 0.1, 0.05] {
        let c = ctx(hbar);
        let cl = classical_birkhoff(&v, 2, &c, None, &QnfOptions::default()).unwrap();
        let bx = ModeBox::new(2, 10);
        let spec = label_spectrum(&hamiltonian_matrix(&v, e, &bx, &c), &LabelOptions::default()).unwrap();
        errs.push(compare_ebk(&spec, &cl, e, &c).unwrap().max);
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| (0.2..=0.3).contains(r)), "errors {errs:?}, ratios {ratios:?}");
}
