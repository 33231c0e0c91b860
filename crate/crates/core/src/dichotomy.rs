//! Dichotomy data (`P(0)`, `K`, `h`), the Green kernel built from it, and
//! numerical checks of the hypotheses (c1), (c2), (c3), (c5) together with
//! the closed-form corollary inequalities.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::flows::{
    transition_matrix, FundamentalCache, FundamentalSolution, LinearSystemSpec,
    NonlinearitySpec,
};
use crate::linalg::op_norm;
use crate::ode::OdeOptions;
use crate::quadrature::{self, HalfLineIntegral, TailEnvelope, DEFAULT_HORIZON_CAP};

/// Which closed-form corollary family the parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// No closed-form corollary applies.
    General,
    /// `K` constant, `h(t) = e^{-λt}`.
    Exponential,
    /// `K(s) = C e^{ε₁ s}`, `h(t) = e^{-λt}`.
    NonuniformExponential,
}

/// Named constants of the corollary settings. Unused entries stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DichotomyParams {
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub eps0: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
    pub zeta: Option<f64>,
    /// Overrides the system's uniform bound in the inequalities.
    #[serde(rename = "M")]
    pub m: Option<f64>,
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("missing dichotomy parameter `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomySpec {
    pub p0: DMatrix<f64>,
    pub k: Envelope,
    pub h: Envelope,
    pub setting: Setting,
    pub params: DichotomyParams,
}

impl DichotomySpec {
    /// Validates `P0² = P0` and that `h` starts at 1 and is nonincreasing
    /// with values in `(0, 1]` on `[0, 50]`.
    pub fn new(
        p0: DMatrix<f64>,
        k: Envelope,
        h: Envelope,
        setting: Setting,
        params: DichotomyParams,
    ) -> Result<Self> {
        if p0.nrows() != p0.ncols() {
            return Err(Error::Config("P0 must be square".into()));
        }
        let defect = op_norm(&(&p0 * &p0 - &p0));
        if defect > 1e-12 {
            return Err(Error::Config(format!("P0 is not a projector: |P0² - P0| = {defect:e}")));
        }
        if (h.eval(0.0) - 1.0).abs() > 1e-14 {
            return Err(Error::Config(format!("h(0) = {} must equal 1", h.eval(0.0))));
        }
        let mut prev = 1.0;
        for i in 1..=500 {
            let t = 0.1 * i as f64;
            let v = h.eval(t);
            if !(v > 0.0 && v <= prev * (1.0 + 1e-14)) {
                return Err(Error::Config(format!(
                    "h must be positive and nonincreasing; h({t}) = {v} after {prev}"
                )));
            }
            prev = v;
        }
        Ok(Self {
            p0,
            k,
            h,
            setting,
            params,
        })
    }

    /// Exponential dichotomy: `K ≡ k`, `h(t) = e^{-λt}`.
    pub fn exponential(p0: DMatrix<f64>, k: f64, lambda: f64) -> Result<Self> {
        Self::new(
            p0,
            Envelope::constant(k),
            Envelope::exponential(1.0, -lambda),
            Setting::Exponential,
            DichotomyParams {
                c: Some(k),
                lambda: Some(lambda),
                ..Default::default()
            },
        )
    }

    pub fn dimension(&self) -> usize {
        self.p0.nrows()
    }

    pub fn q0(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dimension(), self.dimension()) - &self.p0
    }
}

/// `P(t) = X(t, 0) P0 X(0, t)`.
pub fn projector_at(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    t: f64,
    opts: &OdeOptions,
) -> Result<DMatrix<f64>> {
    if t == 0.0 {
        return Ok(spec.p0.clone());
    }
    let fwd = transition_matrix(sys, t, 0.0, &opts.endpoint())?;
    // X(0, t) = X(t, 0)⁻¹ keeps P(t) a projector to rounding error.
    let back = fwd
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { condition: f64::INFINITY })?;
    Ok(fwd * &spec.p0 * back)
}

/// `𝒢(t, s)`: `X(t,s)P(s)` for `t ≥ s`, `-X(t,s)Q(s)` for `t < s`.
pub fn greens_operator(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    t: f64,
    s: f64,
    opts: &OdeOptions,
) -> Result<DMatrix<f64>> {
    let x = transition_matrix(sys, t, s, &opts.endpoint())?;
    let p = projector_at(spec, sys, s, opts)?;
    if t >= s {
        Ok(x * p)
    } else {
        let d = spec.dimension();
        Ok(-(x * (DMatrix::identity(d, d) - p)))
    }
}

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// Green kernel with a shared tabulated fundamental matrix, for repeated
/// evaluation inside quadratures.
#[derive(Debug)]
pub struct GreenKernel {
    sys: LinearSystemSpec,
    spec: DichotomySpec,
    q0: DMatrix<f64>,
    cache: FundamentalCache,
}

impl GreenKernel {
    pub fn new(sys: &LinearSystemSpec, spec: &DichotomySpec, opts: &OdeOptions) -> Result<Self> {
        if spec.dimension() != sys.dimension() {
            return Err(Error::Config(format!(
                "projector is {0}x{0} but the system has dimension {1}",
                spec.dimension(),
                sys.dimension()
            )));
        }
        Ok(Self {
            sys: sys.clone(),
            spec: spec.clone(),
            q0: spec.q0(),
            cache: FundamentalCache::new(sys.clone(), opts.clone()),
        })
    }

    pub fn system(&self) -> &LinearSystemSpec {
        &self.sys
    }

    pub fn spec(&self) -> &DichotomySpec {
        &self.spec
    }

    pub fn stable_is_trivial(&self) -> bool {
        is_zero(&self.spec.p0)
    }

    pub fn unstable_is_trivial(&self) -> bool {
        is_zero(&self.q0)
    }

    /// Makes sure times up to `horizon` are tabulated.
    pub fn prepare(&self, horizon: f64) -> Result<()> {
        self.cache.covering(horizon).map(|_| ())
    }

    /// `X(t, s)`.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        if t == s {
            let d = self.sys.dimension();
            return Ok(DMatrix::identity(d, d));
        }
        self.cache.covering(t.max(s))?.transition(t, s)
    }

    /// `X(t, 0)`.
    pub fn forward(&self, t: f64) -> Result<DMatrix<f64>> {
        self.cache.covering(t)?.forward(t)
    }

    pub fn projector(&self, t: f64) -> Result<DMatrix<f64>> {
        if t == 0.0 {
            return Ok(self.spec.p0.clone());
        }
        let (fwd, inv) = self.cache.covering(t)?.at(t)?;
        Ok(fwd * &self.spec.p0 * inv)
    }

    pub fn green(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let fs = self.cache.covering(t.max(s))?;
        let fwd = fs.forward(t)?;
        let inv = fs.inverse(s)?;
        if s <= t {
            Ok(fwd * &self.spec.p0 * inv)
        } else {
            Ok(-(fwd * &self.q0 * inv))
        }
    }

    /// `K(s) h(s) / h(t)`, the bound on `‖𝒢(t, s)‖` for `s > t` under (c1).
    pub fn unstable_envelope(&self, t: f64, density: &Envelope) -> Envelope {
        self.spec
            .k
            .mul(&self.spec.h)
            .mul(density)
            .scale(1.0 / self.spec.h.eval(t))
    }

    /// Upper integration limit and certified tail for `∫₀^∞ 𝒢(t, s)·(…) ds`
    /// whose factor is bounded by `density`. With `Q ≡ 0` the integrand
    /// vanishes beyond `t`, so the limit is `t` with zero tail.
    pub fn plan(&self, t: f64, density: &Envelope, tol: f64, cap: f64) -> Result<(f64, f64)> {
        if self.unstable_is_trivial() {
            return Ok((t, 0.0));
        }
        let env = TailEnvelope::new(self.unstable_envelope(t, density), t);
        quadrature::select_horizon(&env, t, tol, cap)
    }

    /// `∫₀^upper g(s) ds` with a panel break at `t`; `g` is skipped below
    /// `t` when `P ≡ 0`.
    pub fn integrate_planned<F>(
        &self,
        t: f64,
        (upper, tail): (f64, f64),
        n: usize,
        g: F,
        tol: f64,
    ) -> Result<HalfLineIntegral>
    where
        F: Fn(f64) -> Result<Vec<f64>>,
    {
        let lower = if self.stable_is_trivial() { t.min(upper) } else { 0.0 };
        let out = quadrature::adaptive(g, lower, upper, &[t], n, tol)?;
        Ok(HalfLineIntegral {
            value: out.value,
            tail_bound: tail,
            quadrature_error: out.error_estimate,
            horizon: upper,
        })
    }

    /// `∫₀^∞ g(s) ds` for an integrand `g` dominated by `‖𝒢(t, s)‖·density(s)`.
    pub fn integrate<F>(
        &self,
        t: f64,
        n: usize,
        density: &Envelope,
        g: F,
        tol: f64,
        cap: f64,
    ) -> Result<HalfLineIntegral>
    where
        F: Fn(f64) -> Result<Vec<f64>>,
    {
        let plan = self.plan(t, density, tol, cap)?;
        self.integrate_planned(t, plan, n, g, tol)
    }

    /// The tabulated fundamental matrix covering `[0, horizon]`.
    pub fn fundamental(&self, horizon: f64) -> Result<Arc<FundamentalSolution>> {
        self.cache.covering(horizon)
    }

    pub fn q0(&self) -> &DMatrix<f64> {
        &self.q0
    }
}

/// `s ↦ ∫₀^s ‖A(r)‖ dr`, tabulated on a lazily extended grid.
#[derive(Debug)]
pub struct NormIntegral {
    sys: LinearSystemSpec,
    table: RwLock<Vec<f64>>,
}

const NORM_CELL: f64 = 0.5;

impl NormIntegral {
    pub fn new(sys: &LinearSystemSpec) -> Self {
        Self {
            sys: sys.clone(),
            table: RwLock::new(vec![0.0]),
        }
    }

    fn piece(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let f = |r: f64| Ok(vec![op_norm(&self.sys.a(r))]);
        match quadrature::adaptive(f, a, b, &[], 1, 1e-13 * (b - a).max(1.0)) {
            Ok(out) => out.value[0],
            // ‖A‖ ≤ M bounds the piece if the norm is too rough to resolve.
            Err(_) => self.sys.uniform_bound() * (b - a),
        }
    }

    fn cumulative(&self, s: f64) -> f64 {
        let cell = (s / NORM_CELL).floor() as usize;
        {
            let table = self.table.read().expect("norm table lock");
            if cell < table.len() {
                let node = cell as f64 * NORM_CELL;
                return table[cell] + self.piece(node, s);
            }
        }
        let mut table = self.table.write().expect("norm table lock");
        while table.len() <= cell {
            let i = table.len() - 1;
            let next = table[i] + self.piece(i as f64 * NORM_CELL, (i + 1) as f64 * NORM_CELL);
            table.push(next);
        }
        table[cell] + self.piece(cell as f64 * NORM_CELL, s)
    }

    /// `∫_a^b ‖A(r)‖ dr` for `0 ≤ a ≤ b`.
    pub fn between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.cumulative(b) - self.cumulative(a)
    }
}

/// `Ψ_τ(s) = exp(∫_τ^s ‖A(r)‖ + 𝔳(r) dr)`.
#[derive(Debug, Clone)]
pub struct GronwallFactor {
    norm: Arc<NormIntegral>,
    v_env: Envelope,
    uniform_bound: f64,
}

impl GronwallFactor {
    pub fn new(sys: &LinearSystemSpec, nl: &NonlinearitySpec) -> Self {
        Self {
            norm: Arc::new(NormIntegral::new(sys)),
            v_env: nl.v_env.clone(),
            uniform_bound: sys.uniform_bound(),
        }
    }

    pub fn exponent(&self, s: f64, tau: f64) -> f64 {
        if s <= tau {
            return 0.0;
        }
        self.norm.between(tau, s) + self.v_env.integral(tau, s)
    }

    pub fn psi(&self, s: f64, tau: f64) -> f64 {
        self.exponent(s, tau).exp()
    }

    /// Single-exponential envelope of `Ψ_τ` on `[τ, ∞)` using `‖A‖ ≤ M`;
    /// `None` when `𝔳` has growing or polynomial terms.
    pub fn envelope(&self, tau: f64) -> Option<Envelope> {
        self.v_env.exp_running_integral_bound(self.uniform_bound, tau)
    }
}

/// Why an improper integral was judged divergent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDiagnostic {
    /// Dominant exponential rate of the majorant (`NaN` if unavailable).
    pub envelope_rate: f64,
    /// Empirical `d/ds log g(s)` between the two probe points.
    pub empirical_log_slope: Option<f64>,
    pub probes: (f64, f64),
    pub message: String,
}

impl GrowthDiagnostic {
    pub fn probe<F: Fn(f64) -> f64>(
        envelope_rate: f64,
        start: f64,
        g: F,
        message: impl Into<String>,
    ) -> Self {
        let probes = (start + 10.0, start + 20.0);
        let (a, b) = (g(probes.0), g(probes.1));
        let slope = if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Some((b.ln() - a.ln()) / (probes.1 - probes.0))
        } else {
            None
        };
        Self {
            envelope_rate,
            empirical_log_slope: slope,
            probes,
            message: message.into(),
        }
    }
}

/// Tolerances shared by the verification routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub quad_tol: f64,
    pub horizon_cap: f64,
    /// Relative slack allowed on the (c1) margin.
    pub c1_slack: f64,
    pub ode: OdeOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quad_tol: 1e-9,
            horizon_cap: DEFAULT_HORIZON_CAP,
            c1_slack: 1e-6,
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Report {
    /// `max ‖X(t,s)P(s)‖ / (K(s)h(t)/h(s))` over pairs with `t ≥ s`.
    pub margin_p: f64,
    /// `max ‖X(t,s)Q(s)‖ / (K(s)h(s)/h(t))` over pairs with `t ≤ s`.
    pub margin_q: f64,
    pub margin: f64,
    pub worst_pair: (f64, f64),
    pub pairs: usize,
    pub slack: f64,
    pub passed: bool,
}

/// `(t, s)` pairs with `|t - s|` log-spaced in `[10⁻³, span]`, anchored at
/// `s = 0, 0.5, …, span`.
pub fn c1_default_grid(span: f64) -> Vec<(f64, f64)> {
    let mut offsets = vec![0.0];
    let n = 10;
    for i in 0..n {
        let x = (1e-3f64).ln() + (span.ln() - (1e-3f64).ln()) * i as f64 / (n - 1) as f64;
        offsets.push(x.exp());
    }
    let mut pairs = Vec::new();
    let anchors = (span / 0.5).round() as usize;
    for j in 0..=anchors {
        let s = 0.5 * j as f64;
        for &o in &offsets {
            pairs.push((s + o, s));
            if o > 0.0 && s - o >= 0.0 {
                pairs.push((s - o, s));
            }
            if o > 0.0 {
                pairs.push((s, s + o));
            }
        }
    }
    pairs
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Checks the dichotomy bounds on the given `(t, s)` pairs.
pub fn verify_c1(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    grid: &[(f64, f64)],
    vopts: &VerifyOptions,
) -> Result<C1Report> {
    if grid.is_empty() {
        return Err(Error::Config("c1 grid is empty".into()));
    }
    let kernel = GreenKernel::new(sys, spec, &vopts.ode)?;
    let top = grid.iter().fold(0.0_f64, |a, &(t, s)| a.max(t).max(s));
    kernel.prepare(top)?;
    let fs = kernel.fundamental(top)?;
    let q0 = spec.q0();
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .par_iter()
        .map(|&(t, s)| -> Result<(f64, f64, f64, f64)> {
            let (phi_t, _) = fs.at(t)?;
            let (_, inv_s) = fs.at(s)?;
            let (k, ht, hs) = (spec.k.eval(s), spec.h.eval(t), spec.h.eval(s));
            let mp = if t >= s {
                ratio(op_norm(&(&phi_t * &spec.p0 * &inv_s)), k * ht / hs)
            } else {
                0.0
            };
            let mq = if t <= s {
                ratio(op_norm(&(&phi_t * &q0 * &inv_s)), k * hs / ht)
            } else {
                0.0
            };
            Ok((t, s, mp, mq))
        })
        .collect::<Result<_>>()?;
    let mut report = C1Report {
        margin_p: 0.0,
        margin_q: 0.0,
        margin: 0.0,
        worst_pair: grid[0],
        pairs: grid.len(),
        slack: vopts.c1_slack,
        passed: false,
    };
    for (t, s, mp, mq) in rows {
        report.margin_p = report.margin_p.max(mp);
        report.margin_q = report.margin_q.max(mq);
        if mp.max(mq) > report.margin {
            report.margin = mp.max(mq);
            report.worst_pair = (t, s);
        }
    }
    report.passed = report.margin <= 1.0 + vopts.c1_slack;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2C3Row {
    pub t: f64,
    pub p: f64,
    pub q: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2C3Report {
    pub p_hat: f64,
    pub q_hat: f64,
    pub argmax_p: f64,
    pub argmax_q: f64,
    /// Largest quadrature-plus-tail error over the grid.
    pub error_bound: f64,
    pub rows: Vec<C2C3Row>,
    pub quad_tol: f64,
    pub c2_passed: bool,
    pub c3_passed: bool,
}

/// 101 points on `[0, 10]`.
pub fn default_t_grid() -> Vec<f64> {
    (0..=100).map(|i| 0.1 * i as f64).collect()
}

/// `𝔭̂ = sup_t ∫₀^∞ ‖𝒢(t,s)‖𝔲(s) ds` and `𝔮̂` likewise with `𝔳`.
pub fn verify_c2_c3(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    t_grid: &[f64],
    vopts: &VerifyOptions,
) -> Result<C2C3Report> {
    if t_grid.is_empty() {
        return Err(Error::Config("t grid is empty".into()));
    }
    let kernel = GreenKernel::new(sys, spec, &vopts.ode)?;
    kernel.prepare(t_grid.iter().fold(10.0_f64, |a, &t| a.max(2.0 * t)))?;
    let density = nl.u_env.add(&nl.v_env);
    let rows: Vec<C2C3Row> = t_grid
        .par_iter()
        .map(|&t| -> Result<C2C3Row> {
            let g = |s: f64| {
                let n = op_norm(&kernel.green(t, s)?);
                Ok(vec![n * nl.u_env.eval(s), n * nl.v_env.eval(s)])
            };
            let out = kernel.integrate(t, 2, &density, g, vopts.quad_tol, vopts.horizon_cap)?;
            Ok(C2C3Row {
                t,
                p: out.value[0],
                q: out.value[1],
                error_bound: out.error_bound(),
            })
        })
        .collect::<Result<_>>()?;
    let mut report = C2C3Report {
        p_hat: f64::NEG_INFINITY,
        q_hat: f64::NEG_INFINITY,
        argmax_p: 0.0,
        argmax_q: 0.0,
        error_bound: 0.0,
        rows: Vec::new(),
        quad_tol: vopts.quad_tol,
        c2_passed: false,
        c3_passed: false,
    };
    for r in &rows {
        if r.p > report.p_hat {
            report.p_hat = r.p;
            report.argmax_p = r.t;
        }
        if r.q > report.q_hat {
            report.q_hat = r.q;
            report.argmax_q = r.t;
        }
        report.error_bound = report.error_bound.max(r.error_bound);
    }
    report.rows = rows;
    report.c2_passed = report.p_hat.is_finite();
    report.c3_passed = report.q_hat.is_finite() && report.q_hat < 1.0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C5Entry {
    pub tau: f64,
    pub value: Option<f64>,
    pub error_bound: Option<f64>,
    pub passed: bool,
    pub diagnostic: Option<GrowthDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C5Report {
    pub entries: Vec<C5Entry>,
    pub quad_tol: f64,
    pub passed: bool,
}

/// Integrates `s ↦ g(s)` over `[τ, ∞)` given a majorant, or explains why
/// the integral could not be certified.
pub(crate) fn certified_from<F>(
    tau: f64,
    majorant: Option<Envelope>,
    g: F,
    vopts: &VerifyOptions,
) -> std::result::Result<HalfLineIntegral, GrowthDiagnostic>
where
    F: Fn(f64) -> f64 + Sync,
{
    let Some(env) = majorant else {
        return Err(GrowthDiagnostic::probe(
            f64::NAN,
            tau,
            &g,
            "no closed-form majorant for the Gronwall factor",
        ));
    };
    if !env.is_integrable() {
        return Err(GrowthDiagnostic::probe(
            env.dominant_rate(),
            tau,
            &g,
            "majorant does not decay",
        ));
    }
    let integrand = |s: f64| Ok(vec![if s < tau { 0.0 } else { g(s) }]);
    let tail = TailEnvelope::new(env.clone(), tau);
    match quadrature::integrate_half_line(integrand, 1, tau, &tail, vopts.quad_tol, vopts.horizon_cap) {
        Ok(out) if out.value[0].is_finite() => Ok(out),
        Ok(_) => Err(GrowthDiagnostic::probe(env.dominant_rate(), tau, &g, "non-finite value")),
        Err(e) => Err(GrowthDiagnostic::probe(env.dominant_rate(), tau, &g, e.to_string())),
    }
}

/// `∫_τ^∞ K(s)h(s)𝔳(s)Ψ_τ(s) ds` for each `τ`.
pub fn verify_c5(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    taus: &[f64],
    vopts: &VerifyOptions,
) -> Result<C5Report> {
    let gronwall = GronwallFactor::new(sys, nl);
    let khv = spec.k.mul(&spec.h).mul(&nl.v_env);
    let entries: Vec<C5Entry> = taus
        .par_iter()
        .map(|&tau| {
            if tau < 0.0 {
                return Err(Error::Domain(format!("tau = {tau} must be >= 0")));
            }
            if khv.is_zero() {
                return Ok(C5Entry {
                    tau,
                    value: Some(0.0),
                    error_bound: Some(0.0),
                    passed: true,
                    diagnostic: None,
                });
            }
            let g = |s: f64| khv.eval(s) * gronwall.psi(s, tau);
            let majorant = gronwall.envelope(tau).map(|psi| khv.mul(&psi));
            Ok(match certified_from(tau, majorant, g, vopts) {
                Ok(out) => C5Entry {
                    tau,
                    value: Some(out.value[0]),
                    error_bound: Some(out.error_bound()),
                    passed: true,
                    diagnostic: None,
                },
                Err(diag) => C5Entry {
                    tau,
                    value: None,
                    error_bound: None,
                    passed: false,
                    diagnostic: Some(diag),
                },
            })
        })
        .collect::<Result<_>>()?;
    let passed = entries.iter().all(|e| e.passed);
    Ok(C5Report {
        entries,
        quad_tol: vopts.quad_tol,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessLevel {
    C1,
    C2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn strict(name: &str, lhs: f64, rhs: f64) -> InequalityCheck {
    InequalityCheck {
        name: name.to_string(),
        lhs,
        rhs,
        holds: lhs < rhs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub setting: Setting,
    pub level: SmoothnessLevel,
    pub checks: Vec<InequalityCheck>,
    pub passed: bool,
}

/// Closed-form sufficient conditions of the exponential and nonuniform
/// exponential settings.
///
/// The exponential setting reads `K = C` and the constant Lipschitz bound
/// `𝔳 = ν`; at `C²` it is treated as the nonuniform case with `ε₁ = 0`.
/// `M` is `params.M` when given, else the system's uniform bound.
pub fn corollary_conditions(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    level: SmoothnessLevel,
) -> Result<CorollaryReport> {
    let p = &spec.params;
    let m = p.m.unwrap_or(sys.uniform_bound());
    let lambda = need(p.lambda, "lambda")?;
    let mut checks = Vec::new();
    match spec.setting {
        Setting::General => {
            return Err(Error::Config(
                "no closed-form corollary for a general dichotomy".into(),
            ))
        }
        Setting::Exponential => {
            let k = need(p.c, "C")?;
            let nu = need(p.nu, "nu")?;
            match level {
                SmoothnessLevel::C1 => {
                    checks.push(strict("2Kv < lambda", 2.0 * k * nu, lambda));
                    checks.push(strict("M + v < lambda", m + nu, lambda));
                }
                SmoothnessLevel::C2 => {
                    let eps2 = need(p.eps2, "eps2")?;
                    checks.push(strict("3M < lambda + eps2", 3.0 * m, lambda + eps2));
                    checks.push(strict("2M < lambda + eps2", 2.0 * m, lambda + eps2));
                    checks.push(strict("M < lambda", m, lambda));
                }
            }
        }
        Setting::NonuniformExponential => {
            let eps0 = need(p.eps0, "eps0")?;
            let eps1 = need(p.eps1, "eps1")?;
            match level {
                SmoothnessLevel::C1 => {
                    let nu = need(p.nu, "nu")?;
                    checks.push(strict("M < lambda", m, lambda));
                    checks.push(strict("nu < lambda - M", nu, lambda - m));
                    checks.push(strict("eps1 - lambda < eps0", eps1 - lambda, eps0));
                }
                SmoothnessLevel::C2 => {
                    let eps2 = need(p.eps2, "eps2")?;
                    checks.push(strict("3M < lambda + eps2", 3.0 * m, lambda + eps2));
                    checks.push(strict(
                        "2M < lambda + eps2 - eps1",
                        2.0 * m,
                        lambda + eps2 - eps1,
                    ));
                    checks.push(strict("M < lambda", m, lambda));
                    checks.push(strict("eps1 - lambda < eps0", eps1 - lambda, eps0));
                }
            }
        }
    }
    let passed = checks.iter().all(|c| c.holds);
    Ok(CorollaryReport {
        setting: spec.setting,
        level,
        checks,
        passed,
    })
}

/// All hypothesis checks for one configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub c1: Option<C1Report>,
    pub c2_c3: Option<C2C3Report>,
    pub c5: Option<C5Report>,
    pub corollaries: Vec<CorollaryReport>,
    /// Errors that prevented a check from producing a value.
    pub failures: BTreeMap<String, String>,
}

impl VerificationReport {
    pub fn p_hat(&self) -> Option<f64> {
        self.c2_c3.as_ref().map(|r| r.p_hat)
    }

    pub fn q_hat(&self) -> Option<f64> {
        self.c2_c3.as_ref().map(|r| r.q_hat)
    }

    /// Pass flag per condition; corollary verdicts are informational and
    /// not included.
    pub fn passed(&self) -> BTreeMap<String, bool> {
        let mut out = BTreeMap::new();
        if let Some(c1) = &self.c1 {
            out.insert("c1".into(), c1.passed);
        }
        if let Some(r) = &self.c2_c3 {
            out.insert("c2".into(), r.c2_passed);
            out.insert("c3".into(), r.c3_passed);
        }
        if let Some(c5) = &self.c5 {
            out.insert("c5".into(), c5.passed);
        }
        for k in self.failures.keys() {
            out.insert(k.clone(), false);
        }
        out
    }
}

/// Grids for [`verify_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyGrids {
    pub c1: Vec<(f64, f64)>,
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Default for VerifyGrids {
    fn default() -> Self {
        Self {
            c1: c1_default_grid(20.0),
            t: default_t_grid(),
            tau: vec![0.0, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

/// Runs (c1), (c2)/(c3), (c5) and the applicable corollary checks; a
/// check that errors is recorded under `failures` instead.
pub fn verify_all(
    spec: &DichotomySpec,
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    grids: &VerifyGrids,
    vopts: &VerifyOptions,
) -> VerificationReport {
    let mut report = VerificationReport::default();
    match verify_c1(spec, sys, &grids.c1, vopts) {
        Ok(r) => report.c1 = Some(r),
        Err(e) => {
            report.failures.insert("c1".into(), e.to_string());
        }
    }
    match verify_c2_c3(spec, sys, nl, &grids.t, vopts) {
        Ok(r) => report.c2_c3 = Some(r),
        Err(e) => {
            report.failures.insert("c2".into(), e.to_string());
            report.failures.insert("c3".into(), e.to_string());
        }
    }
    match verify_c5(spec, sys, nl, &grids.tau, vopts) {
        Ok(r) => report.c5 = Some(r),
        Err(e) => {
            report.failures.insert("c5".into(), e.to_string());
        }
    }
    if spec.setting != Setting::General {
        for level in [SmoothnessLevel::C1, SmoothnessLevel::C2] {
            if let Ok(r) = corollary_conditions(spec, sys, level) {
                report.corollaries.push(r);
            }
        }
    }
    report
}
