//! The seven batch commands. Sweep outputs are indexed `_{i}_{j}` by hbar and epsilon
//! position in the resolved config.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context as _;
use serde_json::{json, Value};

use tqnf::classical::{egorov_residual, sample_grid, EgorovOptions};
use tqnf::estimates::{diophantine_certify, eps_star_csv, epsilon_star, ledger_evaluate, mu, DiophantineCertificate};
use tqnf::homological::{solve_homological, DivisorModel};
use tqnf::kam::{kam_csv, kam_run, KamOptions, KamState};
use tqnf::moyal::poisson_limit_residual;
use tqnf::qnf::{classical_birkhoff, normal_form_json, qnf_construct, qnf_remainder_bound, QnfOptions};
use tqnf::verify::{compare_ebk, compare_qnf, label_spectrum, LabelOptions, SweepSummary};
use tqnf::weyl::{eigen_csv, eigensolve, hamiltonian_matrix, ModeBox};
use tqnf::{fmt_g17, Context, Ctx, Symbol};

use crate::config::Config;
use crate::{Command, Failure};

/// Writes pretty JSON followed by a newline.
pub fn write_json(dir: &Path, name: &str, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n";
    write_text(dir, name, &text)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn dispatch(cmd: Command, cfg: &Config, out: &Path) -> Result<(), Failure> {
    match cmd {
        Command::Diophantine => diophantine(cfg, out),
        Command::Qnf => qnf(cfg, out),
        Command::Kam => kam(cfg, out),
        Command::Spectrum => spectrum(cfg, out),
        Command::Verify => verify(cfg, out),
        Command::Egorov => egorov(cfg, out),
        Command::Constants => constants(cfg, out),
    }
}

fn certificate(cfg: &Config) -> Result<DiophantineCertificate, Failure> {
    Ok(diophantine_certify(&cfg.omega, cfg.tau, cfg.q_max)?)
}

/// Context for one `ħ`, carrying the measured `γ` and its certificate.
fn context(cfg: &Config, cert: &DiophantineCertificate, hbar: f64) -> Result<Ctx, Failure> {
    Ok(Context::new(cfg.omega.clone(), hbar, cert.gamma_measured, cfg.tau, cfg.rho)?.with_certificate(cert.clone())?)
}

fn qnf_opts(cfg: &Config) -> QnfOptions<f64> {
    QnfOptions { prune_tol: cfg.tol_prune, atom_budget: cfg.atom_budget }
}

fn kam_opts(cfg: &Config) -> KamOptions<f64> {
    KamOptions { tol: cfg.tol_neumann, prune_tol: cfg.tol_prune, atom_budget: cfg.atom_budget }
}

fn report(cfg: &Config, command: &str, body: Value) -> Value {
    json!({ "command": command, "config": cfg, "result": body })
}

fn diophantine(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    write_json(out, "certificate.json", &report(cfg, "diophantine", json!(cert)))
}

fn qnf(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v = cfg.potential_symbol()?;
    let mut runs = Vec::new();
    for &h in &cfg.hbar {
        let ctx = context(cfg, &cert, h)?;
        let nf = qnf_construct(&v, cfg.order_k, &ctx, None, &qnf_opts(cfg))?;
        let per_eps: Vec<Value> = cfg
            .epsilon
            .iter()
            .map(|&e| json!({ "epsilon": e, "remainder": qnf_remainder_bound(&nf, e, &ctx) }))
            .collect();
        runs.push(json!({ "hbar": h, "normal_form": normal_form_json(&nf, None), "remainder_bounds": per_eps }));
    }
    let cl = classical_birkhoff(&v, cfg.order_k, &context(cfg, &cert, cfg.hbar[0])?, None, &qnf_opts(cfg))?;
    let body = json!({ "quantum": runs, "classical": normal_form_json(&cl, None) });
    write_json(out, "qnf.json", &report(cfg, "qnf", body))
}

fn kam(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v = cfg.potential_symbol()?;
    let mut runs = Vec::new();
    for (i, &h) in cfg.hbar.iter().enumerate() {
        let ctx = context(cfg, &cert, h)?;
        for (j, &e) in cfg.epsilon.iter().enumerate() {
            let run = kam_run(&v, e, &ctx, cfg.kam_steps, &kam_opts(cfg))?;
            write_text(out, &format!("kam_{i}_{j}.csv"), &kam_csv(&run.diagnostics.records))?;
            runs.push(json!({
                "hbar": h,
                "epsilon": e,
                "diagnostics": run.diagnostics,
                "d_n": { "linear": run.d_n.linear, "atoms": run.d_n.atomic.to_records() },
                "ledger": ledger_evaluate(&run.state, &ctx, 0),
            }));
        }
    }
    write_json(out, "kam.json", &report(cfg, "kam", json!(runs)))
}

fn spectrum(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v = cfg.potential_symbol()?;
    let bx = ModeBox::new(cfg.l, cfg.mode_box_m);
    for (i, &h) in cfg.hbar.iter().enumerate() {
        let ctx = context(cfg, &cert, h)?;
        for (j, &e) in cfg.epsilon.iter().enumerate() {
            let eig = eigensolve(&hamiltonian_matrix(&v, e, &bx, &ctx))?;
            write_text(out, &format!("spectrum_{i}_{j}.csv"), &eigen_csv(&eig, &bx))?;
        }
    }
    Ok(())
}

fn verify(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v = cfg.potential_symbol()?;
    let bx = ModeBox::new(cfg.l, cfg.mode_box_m);
    let opts = LabelOptions::default();
    let mut summaries = Vec::new();
    for (i, &h) in cfg.hbar.iter().enumerate() {
        let ctx = context(cfg, &cert, h)?;
        let nf = qnf_construct(&v, cfg.order_k, &ctx, None, &qnf_opts(cfg))?;
        let cl = classical_birkhoff(&v, cfg.order_k, &ctx, None, &qnf_opts(cfg))?;
        let (mut qt, mut et, mut ambiguous) = (Vec::new(), Vec::new(), Vec::new());
        for (j, &e) in cfg.epsilon.iter().enumerate() {
            let spec = label_spectrum(&hamiltonian_matrix(&v, e, &bx, &ctx), &opts)?;
            let q = compare_qnf(&spec, &nf, e, &ctx)?;
            let b = compare_ebk(&spec, &cl, e, &ctx)?;
            write_text(out, &format!("verify_qnf_{i}_{j}.csv"), &q.to_csv(cfg.l))?;
            write_text(out, &format!("verify_ebk_{i}_{j}.csv"), &b.to_csv(cfg.l))?;
            ambiguous.push(spec.ambiguous_count());
            qt.push(q);
            et.push(b);
        }
        let eps: Vec<f64> = cfg.epsilon.iter().map(|e| e.abs()).collect();
        summaries.push(json!({
            "hbar": h,
            "qnf": SweepSummary::new(eps.clone(), &qt),
            "ebk": SweepSummary::new(eps, &et),
            "ambiguous": ambiguous,
        }));
    }
    write_json(out, "verify.json", &report(cfg, "verify", json!(summaries)))
}

fn egorov(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v = cfg.potential_symbol()?;
    let grid = sample_grid(cfg.l, 8, -1.0, 1.0);
    let mut csv = String::from("hbar,epsilon,egorov_residual,poisson_limit_residual\n");
    let mut rows = Vec::new();
    for &h in &cfg.hbar {
        let ctx = context(cfg, &cert, h)?;
        let w = solve_homological(&v, &DivisorModel::identity(), &ctx, ctx.rho, ctx.rho / 4.0, cfg.tol_neumann)?.w;
        let pl = poisson_limit_residual(&v, &w, &ctx)?;
        for &e in &cfg.epsilon {
            let r = egorov_residual(&v, &w, e, &ctx, &grid, &EgorovOptions::default())?;
            let _ = writeln!(csv, "{},{},{},{}", fmt_g17(h), fmt_g17(e), fmt_g17(r), fmt_g17(pl));
            rows.push((h, e, r, pl));
        }
    }
    write_text(out, "egorov.csv", &csv)?;
    let ratios = |pick: fn(&(f64, f64, f64, f64)) -> f64| -> Vec<Value> {
        cfg.epsilon
            .iter()
            .map(|&e| {
                let ys: Vec<f64> = rows.iter().filter(|r| r.1 == e).map(pick).collect();
                json!({ "epsilon": e, "ratios": ys.windows(2).map(|w| w[1] / w[0]).collect::<Vec<_>>() })
            })
            .collect()
    };
    let body = json!({ "egorov_ratios": ratios(|r| r.2), "poisson_limit_ratios": ratios(|r| r.3) });
    write_json(out, "egorov.json", &report(cfg, "egorov", body))
}

fn constants(cfg: &Config, out: &Path) -> Result<(), Failure> {
    let cert = certificate(cfg)?;
    let v: Symbol = cfg.potential_symbol()?;
    let norm_v = v.weighted_norm(cfg.rho);
    write_text(out, "constants.csv", &eps_star_csv(cert.gamma_measured, cfg.tau, norm_v, cfg.order_k as u32))?;
    let ctx = context(cfg, &cert, cfg.hbar[0])?;
    let ledgers: Vec<Value> = cfg
        .epsilon
        .iter()
        .map(|&e| json!({ "epsilon": e, "ledger": ledger_evaluate(&KamState::new(&v, e, &ctx), &ctx, 0) }))
        .collect();
    let eps_star = epsilon_star(cert.gamma_measured, cfg.tau, norm_v);
    let body = json!({
        "certificate": cert,
        "norm_v": norm_v,
        "eps_star_log10": eps_star.log10(),
        "mu_log10": mu(cfg.tau).log10(),
        "step_zero": ledgers,
    });
    write_json(out, "constants.json", &report(cfg, "constants", body))
}
