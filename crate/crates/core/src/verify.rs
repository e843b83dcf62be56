//! Ground-truth loop: diagonalize the truncated Hamiltonian, label eigenpairs by lattice
//! points and compare with the normal-form quantization formulas.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qnf::{qnf_eigenvalue, NormalForm};
use crate::scalar::{fmt_g17, Real};
use crate::symbols::Context;
use crate::weyl::{eigensolve, ModeBox, OperatorMatrix};

/// One labelled eigenpair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledEntry {
    pub n: Vec<i32>,
    pub lambda: f64,
    /// `|<e_n, v>|`.
    pub overlap: f64,
    pub interior: bool,
    /// `overlap² ≤ 1/2`: excluded from comparisons.
    pub ambiguous: bool,
}

/// Eigenvalues with lattice labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledSpectrum {
    pub bx: (usize, usize),
    pub entries: Vec<LabeledEntry>,
}

impl LabeledSpectrum {
    /// Accepted interior entries.
    pub fn interior(&self) -> impl Iterator<Item = &LabeledEntry> {
        self.entries.iter().filter(|e| e.interior && !e.ambiguous)
    }

    pub fn ambiguous_count(&self) -> usize {
        self.entries.iter().filter(|e| e.ambiguous).count()
    }

    pub fn get(&self, n: &[i32]) -> Option<&LabeledEntry> {
        self.entries.iter().find(|e| !e.ambiguous && e.n == n)
    }
}

/// Interior test `|n|_∞ ≤ M − q_reach − margin`.
#[derive(Clone, Copy, Debug)]
pub struct LabelOptions {
    /// Largest `|q|_∞` coupled by the operator.
    pub q_reach: usize,
    pub margin: usize,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self { q_reach: 1, margin: 2 }
    }
}

/// Labels every eigenvector by its largest basis component.
pub fn label_spectrum<T: Real>(h: &OperatorMatrix<T>, opts: &LabelOptions) -> Result<LabeledSpectrum> {
    let eig = eigensolve(h)?;
    let bx = &h.bx;
    let n = bx.dim();
    let mut entries: Vec<LabeledEntry> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (best, w) = (0..n)
                .map(|r| (r, eig.vectors.get(r, j).norm_sqr()))
                .fold((0, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            let m = bx.mode(best);
            let linf = m.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
            let interior = linf + opts.q_reach + opts.margin <= bx.m;
            LabeledEntry {
                n: m,
                lambda: eig.values[j].as_f64(),
                overlap: w.sqrt().as_f64(),
                interior,
                ambiguous: w.as_f64() <= 0.5,
            }
        })
        .collect();
    // Keep labels unique: the larger overlap wins.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b].overlap.partial_cmp(&entries[a].overlap).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut seen = std::collections::HashSet::new();
    for i in order {
        if !entries[i].ambiguous && !seen.insert(entries[i].n.clone()) {
            entries[i].ambiguous = true;
        }
    }
    Ok(LabeledSpectrum { bx: (bx.l, bx.m), entries })
}

/// Convenience wrapper with the box taken from the matrix.
pub fn interior_modes(bx: &ModeBox, opts: &LabelOptions) -> Vec<Vec<i32>> {
    bx.modes()
        .filter(|m| m.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0) + opts.q_reach + opts.margin <= bx.m)
        .collect()
}

/// One row of an error table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub n: Vec<i32>,
    pub lambda_matrix: f64,
    pub lambda_formula: f64,
    pub abs_err: f64,
}

/// Per-mode comparison between matrix eigenvalues and a formula.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub max: f64,
    pub median: f64,
}

impl ErrorTable {
    fn from_rows(rows: Vec<ErrorRow>) -> Self {
        let mut errs: Vec<f64> = rows.iter().map(|r| r.abs_err).collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let max = errs.last().copied().unwrap_or(0.0);
        let median = if errs.is_empty() {
            0.0
        } else if errs.len() % 2 == 1 {
            errs[errs.len() / 2]
        } else {
            0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
        };
        Self { rows, max, median }
    }

    /// CSV `n_1..n_l,lambda_matrix,lambda_formula,abs_err`.
    pub fn to_csv(&self, l: usize) -> String {
        let mut s = String::new();
        for k in 1..=l {
            let _ = write!(s, "n_{k},");
        }
        s.push_str("lambda_matrix,lambda_formula,abs_err\n");
        for r in &self.rows {
            for v in &r.n {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_g17(r.lambda_matrix),
                fmt_g17(r.lambda_formula),
                fmt_g17(r.abs_err)
            );
        }
        s
    }
}

/// Compares interior eigenvalues with an arbitrary formula `λ(n)`.
pub fn compare_with(spec: &LabeledSpectrum, formula: impl Fn(&[i32]) -> Result<f64> + Sync) -> Result<ErrorTable> {
    let rows: Vec<Result<ErrorRow>> = spec
        .interior()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|e| {
            let f = formula(&e.n)?;
            Ok(ErrorRow { n: e.n.clone(), lambda_matrix: e.lambda, lambda_formula: f, abs_err: (e.lambda - f).abs() })
        })
        .collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.n.cmp(&b.n));
    Ok(ErrorTable::from_rows(rows))
}

/// `|λ_n^{matrix} − qnf_eigenvalue(nf, n, ε)|` on interior modes.
pub fn compare_qnf<T: Real>(spec: &LabeledSpectrum, nf: &NormalForm<T>, epsilon: T, ctx: &Context<T>) -> Result<ErrorTable> {
    if nf.hbar.is_some_and(|h| h != ctx.hbar) {
        return Err(Error::IncompatibleHbarTag(nf.hbar.map(|h| h.as_f64()).unwrap_or(0.0), ctx.hbar.as_f64()));
    }
    compare_with(spec, |n| qnf_eigenvalue(nf, n, epsilon, ctx).map(|v| v.as_f64()))
}

/// EBK comparison: the classical normal form evaluated at `L_ω(nħ)`.
pub fn compare_ebk<T: Real>(spec: &LabeledSpectrum, nf_classical: &NormalForm<T>, epsilon: T, ctx: &Context<T>) -> Result<ErrorTable> {
    if nf_classical.hbar.is_some() {
        return Err(Error::InvalidContext("EBK comparison needs a classical normal form".into()));
    }
    compare_with(spec, |n| qnf_eigenvalue(nf_classical, n, epsilon, ctx).map(|v| v.as_f64()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Summary of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub params: Vec<f64>,
    pub max_errors: Vec<f64>,
    pub median_errors: Vec<f64>,
    pub exponent: Option<f64>,
}

impl SweepSummary {
    pub fn new(params: Vec<f64>, tables: &[ErrorTable]) -> Self {
        let max_errors: Vec<f64> = tables.iter().map(|t| t.max).collect();
        let median_errors = tables.iter().map(|t| t.median).collect();
        let exponent = fit_exponent(&params, &max_errors);
        Self { params, max_errors, median_errors, exponent }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnf::{classical_birkhoff, qnf_construct, QnfOptions};
    use crate::symbols::AtomicSymbol;
    use crate::weyl::hamiltonian_matrix;

    fn golden_ctx(hbar: f64) -> Context<f64> {
        Context::new(vec![1.0, (1.0 + 5f64.sqrt()) / 2.0], hbar, 2.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn unperturbed_labels_exact() {
        let ctx = golden_ctx(0.1);
        let bx = ModeBox::new(2, 5);
        let h = hamiltonian_matrix(&AtomicSymbol::canonical(2), 0.0, &bx, &ctx);
        let spec = label_spectrum(&h, &LabelOptions::default()).unwrap();
        assert_eq!(spec.entries.len(), bx.dim());
        for e in &spec.entries {
            assert_eq!(e.overlap, 1.0);
            assert_eq!(e.lambda, 0.1 * ctx.omega_dot(&e.n));
            assert_eq!(e.interior, e.n.iter().all(|v| v.abs() <= 2));
        }
        let nf = qnf_construct(&AtomicSymbol::canonical(2), 2, &ctx, None, &QnfOptions::default()).unwrap();
        let t = compare_qnf(&spec, &nf, 0.0, &ctx).unwrap();
        assert_eq!(t.max, 0.0);
        let cl = classical_birkhoff(&AtomicSymbol::canonical(2), 2, &ctx, None, &QnfOptions::default()).unwrap();
        assert_eq!(compare_ebk(&spec, &cl, 0.0, &ctx).unwrap().max, 0.0);
    }

    #[test]
    fn small_eps_overlaps_high() {
        let ctx = golden_ctx(0.1);
        let bx = ModeBox::new(2, 6);
        let h = hamiltonian_matrix(&AtomicSymbol::canonical(2), 1e-3, &bx, &ctx);
        let spec = label_spectrum(&h, &LabelOptions::default()).unwrap();
        assert!(spec.interior().all(|e| e.overlap * e.overlap > 0.99));
        assert_eq!(spec.interior().count(), 49);
    }

    #[test]
    fn large_eps_is_total() {
        let ctx = golden_ctx(0.1);
        let bx = ModeBox::new(2, 4);
        let h = hamiltonian_matrix(&AtomicSymbol::canonical(2), 5.0, &bx, &ctx);
        let spec = label_spectrum(&h, &LabelOptions::default()).unwrap();
        assert_eq!(spec.entries.len(), bx.dim());
        assert!(spec.ambiguous_count() > 0);
        let mut labels: Vec<_> = spec.entries.iter().filter(|e| !e.ambiguous).map(|e| e.n.clone()).collect();
        let before = labels.len();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), before);
    }

    #[test]
    fn exponent_fit() {
        let xs = [1e-3, 5e-4, 2.5e-4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(4)).collect();
        assert!((fit_exponent(&xs, &ys).unwrap() - 4.0).abs() < 1e-10);
        assert_eq!(fit_exponent(&[1.0], &[1.0]), None);
    }

    #[test]
    fn csv_layout() {
        let t = ErrorTable::from_rows(vec![ErrorRow { n: vec![1, -2], lambda_matrix: 0.5, lambda_formula: 0.25, abs_err: 0.25 }]);
        assert_eq!(t.to_csv(2), "n_1,n_2,lambda_matrix,lambda_formula,abs_err\n1,-2,0.5,0.25,0.25\n");
        assert_eq!(t.median, 0.25);
    }
}
