//! Batch commands behind the `conjlab` binary: verification, conjugacy
//! tables and derivative tables, each producing a JSON report and CSV rows.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::catalog::{get_entry, CatalogEntry};
use crate::config::RunConfig;
use crate::conjugacy::Conjugator;
use crate::dichotomy::{c1_default_grid, verify_all, VerificationReport, VerifyGrids};
use crate::error::{Error, Result};
use crate::flows::{first_variation, second_variation};
use crate::linalg::{identity, matrix_rel_error, op_norm};
use crate::smoothness::{self, BoundLedger};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_SOFT: i32 = 1;
pub const EXIT_FATAL: i32 = 2;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Conjugate,
    Differentiate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Conjugate => "conjugate",
            Command::Differentiate => "differentiate",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// One CSV record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub quantity: String,
    pub t: Option<f64>,
    pub tau: Option<f64>,
    pub point: Vec<f64>,
    pub value: Vec<f64>,
    pub residual: Option<f64>,
    pub bound: Option<f64>,
    pub status: String,
}

impl Row {
    fn new(quantity: impl Into<String>) -> Self {
        Self {
            quantity: quantity.into(),
            t: None,
            tau: None,
            point: Vec::new(),
            value: Vec::new(),
            residual: None,
            bound: None,
            status: "ok".into(),
        }
    }

    fn t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    fn tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    fn point(mut self, p: &DVector<f64>) -> Self {
        self.point = p.iter().copied().collect();
        self
    }

    fn value(mut self, v: impl IntoIterator<Item = f64>) -> Self {
        self.value = v.into_iter().collect();
        self
    }

    fn residual(mut self, r: f64) -> Self {
        self.residual = Some(r);
        self
    }

    fn bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    /// Status `ok`/`fail` from `value ≤ bound` on the first value.
    fn check(mut self, pass: bool) -> Self {
        self.status = if pass { "ok" } else { "fail" }.into();
        self
    }

    fn status(mut self, s: impl Into<String>) -> Self {
        self.status = s.into();
        self
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: Command,
    pub exit_code: i32,
    pub report: Value,
    pub rows: Vec<Row>,
}

impl Outcome {
    /// Writes `<command>.json` and `<command>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let io = |e: std::io::Error| Error::Config(format!("cannot write to {}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let json_path = dir.join(format!("{}.json", self.command.name()));
        let csv_path = dir.join(format!("{}.csv", self.command.name()));
        let text = serde_json::to_string_pretty(&self.report)
            .map_err(|e| Error::Config(format!("cannot serialise report: {e}")))?;
        fs::write(&json_path, text).map_err(io)?;
        write_csv(&csv_path, &self.rows)?;
        Ok((json_path, csv_path))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Columns `quantity,t,tau,point_*,value_*,residual,bound,status`, with
/// as many point and value columns as the widest row.
pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let err = |e: csv::Error| Error::Config(format!("cannot write {}: {e}", path.display()));
    let np = rows.iter().map(|r| r.point.len()).max().unwrap_or(0);
    let nv = rows.iter().map(|r| r.value.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["quantity".to_string(), "t".into(), "tau".into()];
    header.extend((0..np).map(|i| format!("point_{i}")));
    header.extend((0..nv).map(|i| format!("value_{i}")));
    header.extend(["residual".into(), "bound".into(), "status".into()]);
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.quantity.clone(), fmt_opt(r.t), fmt_opt(r.tau)];
        rec.extend((0..np).map(|i| r.point.get(i).map(|x| format!("{x:e}")).unwrap_or_default()));
        rec.extend((0..nv).map(|i| r.value.get(i).map(|x| format!("{x:e}")).unwrap_or_default()));
        rec.extend([fmt_opt(r.residual), fmt_opt(r.bound), r.status.clone()]);
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Runs `command`, writing the outputs when an output directory is given
/// on the command line or in the config.
pub fn run(command: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let outcome = match command {
        Command::Verify => cmd_verify(cfg, seed)?,
        Command::Conjugate => cmd_conjugate(cfg, seed, opts.force)?,
        Command::Differentiate => cmd_differentiate(cfg, seed, opts.force)?,
    };
    let dir = opts.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from));
    if let Some(dir) = dir {
        outcome.write(&dir)?;
    }
    Ok(outcome)
}

fn entry_of(cfg: &RunConfig) -> Result<CatalogEntry> {
    get_entry(&cfg.catalog.id, &cfg.catalog.params)
}

fn header(command: Command, cfg: &RunConfig, entry: &CatalogEntry, seed: u64) -> Value {
    json!({
        "command": command.name(),
        "catalog": { "id": entry.id, "alias": entry.alias, "params": entry.params },
        "seed": seed,
        "grids": {
            "t": cfg.grids.t.points(),
            "tau": cfg.grids.tau.points(),
            "box": cfg.grids.state_box,
            "samples": cfg.grids.samples,
        },
        "tolerances": cfg.tol,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn verification(cfg: &RunConfig, entry: &CatalogEntry) -> (VerificationReport, VerifyGrids) {
    let t = cfg.grids.t.points();
    let span = t.iter().fold(10.0_f64, |a, &x| a.max(2.0 * x));
    let grids = VerifyGrids {
        c1: c1_default_grid(span),
        t,
        tau: cfg.grids.tau.points(),
    };
    let report = verify_all(&entry.spec, &entry.sys, &entry.nl, &grids, &cfg.verify_options());
    (report, grids)
}

/// `2` when `𝔮̂ ≥ 1` or unavailable, `1` when another condition fails.
fn verification_exit(report: &VerificationReport) -> i32 {
    match report.q_hat() {
        Some(q) if q < 1.0 => {}
        _ => return EXIT_FATAL,
    }
    if report.passed().values().all(|&p| p) {
        EXIT_PASS
    } else {
        EXIT_SOFT
    }
}

pub fn cmd_verify(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let entry = entry_of(cfg)?;
    let (report, grids) = verification(cfg, &entry);
    let exit_code = verification_exit(&report);
    let vopts = cfg.verify_options();
    let mut rows = Vec::new();
    if let Some(c1) = &report.c1 {
        let b = 1.0 + c1.slack;
        rows.push(Row::new("c1_margin_p").value([c1.margin_p]).bound(b).check(c1.margin_p <= b));
        rows.push(Row::new("c1_margin_q").value([c1.margin_q]).bound(b).check(c1.margin_q <= b));
    }
    if let Some(r) = &report.c2_c3 {
        for row in &r.rows {
            rows.push(Row::new("p").t(row.t).value([row.p]).residual(row.error_bound));
            rows.push(Row::new("q").t(row.t).value([row.q]).residual(row.error_bound));
        }
        rows.push(
            Row::new("p_hat")
                .t(r.argmax_p)
                .value([r.p_hat])
                .residual(r.error_bound)
                .check(r.c2_passed),
        );
        rows.push(
            Row::new("q_hat")
                .t(r.argmax_q)
                .value([r.q_hat])
                .residual(r.error_bound)
                .bound(1.0)
                .check(r.c3_passed),
        );
    }
    if let Some(c5) = &report.c5 {
        for e in &c5.entries {
            let mut row = Row::new("c5").tau(e.tau).check(e.passed);
            if let Some(v) = e.value {
                row = row.value([v]);
            }
            if let Some(b) = e.error_bound {
                row = row.residual(b);
            }
            rows.push(row);
        }
    }
    for c in &report.corollaries {
        for chk in &c.checks {
            let level = match c.level {
                crate::dichotomy::SmoothnessLevel::C1 => "C1",
                crate::dichotomy::SmoothnessLevel::C2 => "C2",
            };
            rows.push(
                Row::new(format!("corollary_{level}: {}", chk.name))
                    .value([chk.lhs])
                    .bound(chk.rhs)
                    .status(if chk.holds { "ok" } else { "not-satisfied" }),
            );
        }
    }
    for (k, msg) in &report.failures {
        rows.push(Row::new(k.clone()).status(format!("error: {msg}")));
    }
    let json = merge(
        header(Command::Verify, cfg, &entry, seed),
        json!({
            "verify_options": vopts,
            "c1_pairs": grids.c1.len(),
            "c1": report.c1,
            "c2_c3": report.c2_c3,
            "p_hat": report.p_hat(),
            "q_hat": report.q_hat(),
            "c5": report.c5,
            "corollaries": report.corollaries,
            "failures": report.failures,
            "passed": report.passed(),
            "expected": entry.expected,
            "predicted_verdicts": entry.verdicts,
            "exit_code": exit_code,
        }),
    );
    Ok(Outcome {
        command: Command::Verify,
        exit_code,
        report: json,
        rows,
    })
}

/// Seeded `(τ, point)` samples with `τ` uniform on the τ-grid's range and
/// the point uniform in the state box.
fn samples(cfg: &RunConfig, dim: usize, seed: u64) -> Result<Vec<(f64, DVector<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taus = cfg.grids.tau.points();
    let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounds = cfg.grids.state_box.bounds(dim)?;
    Ok((0..cfg.grids.samples)
        .map(|_| {
            let tau = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let p = DVector::from_iterator(
                dim,
                bounds.iter().map(|[a, b]| if b > a { rng.gen_range(*a..=*b) } else { *a }),
            );
            (tau, p)
        })
        .collect())
}

/// Verification gate shared by `conjugate` and `differentiate`: returns an
/// early outcome when the run must stop.
fn gate(command: Command, cfg: &RunConfig, entry: &CatalogEntry, seed: u64, force: bool) -> Option<Outcome> {
    let (report, _) = verification(cfg, entry);
    let code = verification_exit(&report);
    if code == EXIT_PASS || (force && code != EXIT_FATAL) {
        return None;
    }
    let reason = if code == EXIT_FATAL {
        "q_hat >= 1: the conjugacy operator is not a contraction"
    } else {
        "verification failed; rerun with --force to proceed"
    };
    Some(Outcome {
        command,
        exit_code: code,
        report: merge(
            header(command, cfg, entry, seed),
            json!({ "aborted": reason, "q_hat": report.q_hat(), "passed": report.passed(), "exit_code": code }),
        ),
        rows: vec![Row::new("gate").status(reason)],
    })
}

fn conjugator(command: Command, cfg: &RunConfig, entry: &CatalogEntry, seed: u64) -> std::result::Result<Conjugator, Outcome> {
    entry.conjugator(cfg.conjugacy_options()).map_err(|e| {
        let code = match e {
            Error::NotContracting { .. } => EXIT_FATAL,
            _ => EXIT_SOFT,
        };
        Outcome {
            command,
            exit_code: code,
            report: merge(
                header(command, cfg, entry, seed),
                json!({ "aborted": e.to_string(), "exit_code": code }),
            ),
            rows: vec![Row::new("conjugator").status(format!("error: {e}"))],
        }
    })
}

pub fn cmd_conjugate(cfg: &RunConfig, seed: u64, force: bool) -> Result<Outcome> {
    let cmd = Command::Conjugate;
    let entry = entry_of(cfg)?;
    if let Some(o) = gate(cmd, cfg, &entry, seed, force) {
        return Ok(o);
    }
    let c = match conjugator(cmd, cfg, &entry, seed) {
        Ok(c) => c,
        Err(o) => return Ok(o),
    };
    let d = entry.dimension();
    let pts = samples(cfg, d, seed)?;
    let t_grid = cfg.grids.t.points();
    let tol = cfg.tol.equivalence;
    let p_hat = c.p_hat();
    let table_points: Vec<&DVector<f64>> = pts.iter().take(5).map(|(_, p)| p).collect();

    let mut rows: Vec<Row> = Vec::new();
    let mut errors = Vec::new();
    let tab: Vec<Result<Vec<Row>>> = t_grid
        .par_iter()
        .flat_map(|&t| table_points.par_iter().map(move |p| (t, *p)))
        .map(|(t, p)| -> Result<Vec<Row>> {
            let h = c.h_map(t, p)?;
            let g = c.g_map(t, p)?;
            let dh = (&h.value - p).norm();
            let dg = (&g.value - p).norm();
            let bound = p_hat.map(|b| b + cfg.tol.verify_quad);
            let ok = |x: f64| bound.is_none_or(|b| x <= b);
            let mut out = vec![
                Row::new("H").t(t).point(p).value(h.value.iter().copied()).residual(h.error_bound),
                Row::new("G").t(t).point(p).value(g.value.iter().copied()).residual(g.error_bound),
                Row::new("H-id").t(t).point(p).value(h.correction.iter().copied()).residual(h.error_bound).check(ok(dh)),
                Row::new("G-id").t(t).point(p).value(g.correction.iter().copied()).residual(g.error_bound).check(ok(dg)),
            ];
            if let Some(b) = bound {
                for r in out.iter_mut().skip(2) {
                    r.bound = Some(b);
                }
            }
            Ok(out)
        })
        .collect();
    for r in tab {
        match r {
            Ok(v) => rows.extend(v),
            Err(e) => errors.push(e.to_string()),
        }
    }

    let equivalence: Vec<Result<_>> = pts
        .par_iter()
        .map(|(tau, p)| c.check_equivalence(*tau, p, p, &t_grid))
        .collect();
    let mut reports = Vec::new();
    let mut worst = [0.0_f64; 4];
    for ((tau, p), r) in pts.iter().zip(equivalence) {
        match r {
            Ok(rep) => {
                for (q, v) in [
                    ("roundtrip_HG", rep.roundtrip_hg),
                    ("roundtrip_GH", rep.roundtrip_gh),
                    ("solution_map_H", rep.h_solution),
                    ("solution_map_G", rep.g_solution),
                ] {
                    rows.push(Row::new(q).tau(*tau).point(p).value([v]).bound(tol).check(v <= tol));
                }
                for (w, v) in worst.iter_mut().zip([rep.roundtrip_hg, rep.roundtrip_gh, rep.h_solution, rep.g_solution]) {
                    *w = w.max(v);
                }
                reports.push(rep);
            }
            Err(e) => {
                rows.push(Row::new("equivalence").tau(*tau).point(p).status(format!("error: {e}")));
                errors.push(e.to_string());
            }
        }
    }
    let passed = errors.is_empty()
        && reports.iter().all(|r| r.passed)
        && rows.iter().all(|r| r.status == "ok");
    let exit_code = if passed { EXIT_PASS } else { EXIT_SOFT };
    let json = merge(
        header(cmd, cfg, &entry, seed),
        json!({
            "conjugacy_options": c.options(),
            "p_hat": p_hat,
            "q_hat": c.q_hat(),
            "warnings": c.warnings(),
            "max_roundtrip_HG": worst[0],
            "max_roundtrip_GH": worst[1],
            "max_solution_map_H": worst[2],
            "max_solution_map_G": worst[3],
            "equivalence": reports,
            "errors": errors,
            "passed": passed,
            "exit_code": exit_code,
        }),
    );
    Ok(Outcome {
        command: cmd,
        exit_code,
        report: json,
        rows,
    })
}

/// Central differences of `f` along each coordinate of `p`, as columns.
pub fn central_difference<F>(p: &DVector<f64>, delta: f64, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let d = p.len();
    let mut cols = Vec::with_capacity(d);
    for j in 0..d {
        let mut a = p.clone();
        let mut b = p.clone();
        a[j] += delta;
        b[j] -= delta;
        cols.push((f(&a)? - f(&b)?) / (2.0 * delta));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, d, |i, j| cols[j][i]))
}

/// Discrepancies of one derivative evaluation against finite differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub tau: f64,
    pub point: Vec<f64>,
    pub dg: Vec<f64>,
    pub dh: Vec<f64>,
    pub dg_fd_error: f64,
    pub dh_fd_error: f64,
    pub identity_defect: f64,
    pub condition_number: f64,
    pub d2w_fd_error: Option<f64>,
    pub d2w_symmetry_defect: Option<f64>,
    pub d2w_certified: Option<bool>,
    /// `max_s ‖∂y/∂η(s)‖ / Ψ_τ(s)` over `s ∈ [τ, τ + 5]`.
    pub gronwall_ratio: f64,
    /// `max_s ‖∂²y/∂η²(s)‖ − π_τ(s)` over the same range.
    pub second_bound_excess: Option<f64>,
}

/// dG, dH (and d2w when available) at `(τ, p)` with their checks.
pub fn check_derivatives(
    c: &Conjugator,
    tau: f64,
    p: &DVector<f64>,
    fd_first: f64,
    fd_second: f64,
) -> Result<DerivativeCheck> {
    let second = c.nonlinearity().has_hessian();
    let b = smoothness::derivative_bundle(c, tau, p, second)?;
    let d = p.len();
    let dg_fd = central_difference(p, fd_first, |e| Ok(c.g_map(tau, e)?.value))?;
    let dh_fd = central_difference(p, fd_first, |e| Ok(c.h_map(tau, e)?.value))?;
    let h = c.h_map(tau, p)?.value;
    let dg_at_h = smoothness::dg(c, tau, &h)?;
    let identity_defect = op_norm(&(&b.dh * dg_at_h - identity(d)));
    let (d2w_fd_error, d2w_symmetry_defect) = match &b.d2w {
        Some(w) => {
            let mut worst = 0.0_f64;
            for k in 0..d {
                let mut a = p.clone();
                let mut m = p.clone();
                a[k] += fd_second;
                m[k] -= fd_second;
                let fd = (smoothness::dw_star(c, tau, &a)?.value - smoothness::dw_star(c, tau, &m)?.value)
                    / (2.0 * fd_second);
                worst = worst.max(matrix_rel_error(&w.slice_last(k), &fd, 1e-12));
            }
            (Some(worst), Some(w.symmetry_defect()))
        }
        None => (None, None),
    };
    let ledger = BoundLedger::new(c.system(), c.nonlinearity());
    let s_grid: Vec<f64> = (0..=50).map(|i| tau + 0.1 * i as f64).collect();
    let opts = &c.options().ode;
    let z = first_variation(c.system(), c.nonlinearity(), tau, p, &s_grid, opts)?;
    let mut gronwall_ratio = 0.0_f64;
    for &s in &s_grid {
        let zs = DMatrix::from_column_slice(d, d, &z.eval(s)?);
        gronwall_ratio = gronwall_ratio.max(op_norm(&zs) / ledger.gronwall_first(s, tau));
    }
    let second_bound_excess = if second {
        let w = second_variation(c.system(), c.nonlinearity(), tau, p, &s_grid, opts)?;
        let mut excess = f64::NEG_INFINITY;
        for &s in &s_grid {
            let ws = crate::linalg::Array3::from_vec(d, w.eval(s)?);
            excess = excess.max(ws.norm() - ledger.pi_tau(s, tau)?);
        }
        Some(excess)
    } else {
        None
    };
    Ok(DerivativeCheck {
        tau,
        point: p.iter().copied().collect(),
        dg_fd_error: matrix_rel_error(&b.dg, &dg_fd, 1e-12),
        dh_fd_error: matrix_rel_error(&b.dh, &dh_fd, 1e-12),
        dg: b.dg.as_slice().to_vec(),
        dh: b.dh.as_slice().to_vec(),
        identity_defect,
        condition_number: b.condition_number,
        d2w_fd_error,
        d2w_symmetry_defect,
        d2w_certified: b.d2w_certified,
        gronwall_ratio,
        second_bound_excess,
    })
}

pub fn cmd_differentiate(cfg: &RunConfig, seed: u64, force: bool) -> Result<Outcome> {
    let cmd = Command::Differentiate;
    let entry = entry_of(cfg)?;
    if let Some(o) = gate(cmd, cfg, &entry, seed, force) {
        return Ok(o);
    }
    let c = match conjugator(cmd, cfg, &entry, seed) {
        Ok(c) => c,
        Err(o) => return Ok(o),
    };
    let pts = samples(cfg, entry.dimension(), seed)?;
    let tol = &cfg.tol;
    let results: Vec<Result<DerivativeCheck>> = pts
        .par_iter()
        .map(|(tau, p)| check_derivatives(&c, *tau, p, tol.fd_step_first, tol.fd_step_second))
        .collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut singular = Vec::new();
    let mut errors = Vec::new();
    let mut soft = false;
    for ((tau, p), r) in pts.iter().zip(results) {
        match r {
            Ok(k) => {
                let first_ok = k.dg_fd_error <= tol.first_derivative && k.dh_fd_error <= tol.first_derivative;
                let id_ok = k.identity_defect <= tol.identity;
                let gr_ok = k.gronwall_ratio <= 1.0 + 1e-9;
                rows.push(Row::new("dG").tau(*tau).point(p).value(k.dg.iter().copied()).residual(k.dg_fd_error).bound(tol.first_derivative).check(k.dg_fd_error <= tol.first_derivative));
                rows.push(Row::new("dH").tau(*tau).point(p).value(k.dh.iter().copied()).residual(k.dh_fd_error).bound(tol.first_derivative).check(k.dh_fd_error <= tol.first_derivative));
                rows.push(Row::new("dH*dG-I").tau(*tau).point(p).value([k.identity_defect]).bound(tol.identity).check(id_ok));
                rows.push(Row::new("gronwall_ratio").tau(*tau).point(p).value([k.gronwall_ratio]).bound(1.0).check(gr_ok));
                let mut ok = first_ok && id_ok && gr_ok;
                if let (Some(e), Some(s)) = (k.d2w_fd_error, k.d2w_symmetry_defect) {
                    let status = if k.d2w_certified == Some(false) { "uncertified" } else { "ok" };
                    let e_ok = e <= tol.second_derivative;
                    let s_ok = s <= tol.symmetry;
                    rows.push(Row::new("d2w_fd_error").tau(*tau).point(p).value([e]).bound(tol.second_derivative).status(if e_ok { status } else { "fail" }));
                    rows.push(Row::new("d2w_symmetry").tau(*tau).point(p).value([s]).bound(tol.symmetry).check(s_ok));
                    ok &= e_ok && s_ok;
                }
                if let Some(x) = k.second_bound_excess {
                    let x_ok = x <= 1e-9;
                    rows.push(Row::new("second_bound_excess").tau(*tau).point(p).value([x]).bound(0.0).check(x_ok));
                    ok &= x_ok;
                }
                soft |= !ok;
                checks.push(k);
            }
            Err(Error::Singular { condition }) => {
                rows.push(Row::new("dH").tau(*tau).point(p).value([condition]).status("singular"));
                singular.push(json!({ "tau": tau, "point": p.as_slice(), "condition": condition }));
            }
            Err(e) => {
                rows.push(Row::new("derivatives").tau(*tau).point(p).status(format!("error: {e}")));
                errors.push(e.to_string());
            }
        }
    }
    let max = |f: &dyn Fn(&DerivativeCheck) -> Option<f64>| {
        checks.iter().filter_map(f).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))))
    };
    let exit_code = if soft || !singular.is_empty() || !errors.is_empty() {
        EXIT_SOFT
    } else {
        EXIT_PASS
    };
    let json = merge(
        header(cmd, cfg, &entry, seed),
        json!({
            "conjugacy_options": c.options(),
            "max_dg_fd_error": max(&|k| Some(k.dg_fd_error)),
            "max_dh_fd_error": max(&|k| Some(k.dh_fd_error)),
            "max_identity_defect": max(&|k| Some(k.identity_defect)),
            "max_d2w_fd_error": max(&|k| k.d2w_fd_error),
            "max_d2w_symmetry_defect": max(&|k| k.d2w_symmetry_defect),
            "max_gronwall_ratio": max(&|k| Some(k.gronwall_ratio)),
            "max_second_bound_excess": max(&|k| k.second_bound_excess),
            "points": checks,
            "singular": singular,
            "errors": errors,
            "exit_code": exit_code,
        }),
    );
    Ok(Outcome {
        command: cmd,
        exit_code,
        report: json,
        rows,
    })
}

/// Config for an entry with default grids, for tests and examples.
pub fn default_config(id: &str, params: &[(&str, f64)]) -> RunConfig {
    RunConfig {
        catalog: crate::config::CatalogConfig {
            id: id.into(),
            params: crate::catalog::params(params),
        },
        grids: Default::default(),
        tol: Default::default(),
        seed: None,
        out: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_pads_columns() {
        let dir = std::env::temp_dir().join(format!("conjlab-csv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.csv");
        let rows = vec![
            Row::new("a").t(1.0).point(&DVector::from_vec(vec![1.0, 2.0])).value([3.0]),
            Row::new("b").value([1.0, 2.0, 3.0]).status("fail"),
        ];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "quantity,t,tau,point_0,point_1,value_0,value_1,value_2,residual,bound,status"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 11);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn central_difference_of_linear_map() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let p = DVector::from_vec(vec![0.3, -0.7]);
        let fd = central_difference(&p, 1e-4, |e| Ok(&m * e)).unwrap();
        assert!((fd - m).norm() < 1e-10);
    }

    #[test]
    fn samples_are_seeded() {
        let cfg = default_config("S2", &[]);
        let a = samples(&cfg, 2, 7).unwrap();
        let b = samples(&cfg, 2, 7).unwrap();
        let c = samples(&cfg, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|(t, p)| (0.0..=3.0).contains(t) && p.iter().all(|x| x.abs() <= 2.0)));
    }

    #[test]
    fn verify_exit_codes() {
        assert_eq!(cmd_verify(&default_config("S1", &[]), 42).unwrap().exit_code, EXIT_PASS);
        assert_eq!(cmd_verify(&default_config("S1", &[("K", 0.5)]), 42).unwrap().exit_code, EXIT_SOFT);
        let fatal = cmd_verify(&default_config("S3", &[("forcing_scale", 30.0)]), 42).unwrap();
        assert_eq!(fatal.exit_code, EXIT_FATAL);
    }
}
