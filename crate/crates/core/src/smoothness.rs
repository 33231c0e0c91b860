//! First and second `η`-derivatives of `w*(0; (τ, η))`, the derivative
//! matrices `∂G/∂η` and `∂H/∂ξ = [∂G/∂η(τ, H(τ, ξ))]⁻¹`, and the
//! Gronwall-type bounds on the variational solutions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conjugacy::Conjugator;
use crate::dichotomy::{
    certified_from, DichotomySpec, GronwallFactor, GrowthDiagnostic, VerifyOptions,
};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::flows::{LinearSystemSpec, NonlinearitySpec, VariationOrder, VariationalFlow};
use crate::linalg::{condition_number, Array3};
use crate::quadrature;

/// Condition number of `∂G/∂η` above which `∂H/∂ξ` is refused.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Bounds on `∂y/∂η` and `∂²y/∂η²` for `s ≥ τ`.
#[derive(Debug, Clone)]
pub struct BoundLedger {
    gronwall: GronwallFactor,
    big_v: Option<Envelope>,
}

impl BoundLedger {
    pub fn new(sys: &LinearSystemSpec, nl: &NonlinearitySpec) -> Self {
        Self {
            gronwall: GronwallFactor::new(sys, nl),
            big_v: nl.big_v_env.clone(),
        }
    }

    /// `Ψ_τ(s) = exp(∫_τ^s ‖A(r)‖ + 𝔳(r) dr)`.
    pub fn psi_tau(&self, s: f64, tau: f64) -> f64 {
        self.gronwall.psi(s, tau)
    }

    /// Bound on `‖∂y/∂η(s, τ, η)‖`; equal to `Ψ_τ(s)`.
    pub fn gronwall_first(&self, s: f64, tau: f64) -> f64 {
        self.psi_tau(s, tau)
    }

    /// `π_τ(s) = Ψ_τ(s) ∫_τ^s 𝔙(p) Ψ_τ(p)² dp`, bounding `‖∂²y/∂η²(s, τ, η)‖`.
    pub fn pi_tau(&self, s: f64, tau: f64) -> Result<f64> {
        let big_v = self
            .big_v
            .as_ref()
            .ok_or(Error::Capability("the envelope 𝔙 of ∂²f/∂u²"))?;
        if s <= tau {
            return Ok(0.0);
        }
        let g = |p: f64| Ok(vec![big_v.eval(p) * self.psi_tau(p, tau).powi(2)]);
        let scale = (s - tau) * big_v.eval(tau).max(big_v.eval(s)) * self.psi_tau(s, tau).powi(2);
        let inner = quadrature::adaptive(g, tau, s, &[], 1, 1e-13 * scale.max(1.0))?.value[0];
        Ok(self.psi_tau(s, tau) * inner)
    }

    /// Closed-form majorant of `Ψ_τ` on `[τ, ∞)`.
    pub fn psi_envelope(&self, tau: f64) -> Option<Envelope> {
        self.gronwall.envelope(tau)
    }

    /// Closed-form majorant of `π_τ` on `[τ, ∞)`.
    pub fn pi_envelope(&self, tau: f64) -> Option<Envelope> {
        let psi = self.psi_envelope(tau)?;
        let inner = self.big_v.as_ref()?.mul(&psi).mul(&psi).running_integral_bound(tau);
        Some(psi.mul(&inner))
    }
}

/// `π_τ(s)` in the setting `‖A‖ ≤ M`, `𝔳 ≤ ν`, `𝔙(s) = ζ e^{-ε₂ s}`:
/// `ζ e^{-3τ(M+ν)} / (2(M+ν) − ε₂) · [e^{(3(M+ν)−ε₂)s} − e^{(2(M+ν)−ε₂)τ + (M+ν)s}]`.
pub fn second_derivative_bound_closed(
    m: f64,
    nu: f64,
    zeta: f64,
    eps2: f64,
    s: f64,
    tau: f64,
) -> Result<f64> {
    let a = m + nu;
    let den = 2.0 * a - eps2;
    if den == 0.0 {
        return Err(Error::Config("closed form needs 2(M + nu) != eps2".into()));
    }
    if s < tau {
        return Err(Error::Domain(format!("s = {s} must be >= tau = {tau}")));
    }
    Ok(zeta * (-3.0 * tau * a).exp() / den
        * (((3.0 * a - eps2) * s).exp() - ((2.0 * a - eps2) * tau + a * s).exp()))
}

/// `π_τ(s)` evaluated by quadrature for the given system and envelopes.
pub fn second_derivative_bound(
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    s: f64,
    tau: f64,
) -> Result<f64> {
    BoundLedger::new(sys, nl).pi_tau(s, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderCertificate {
    pub tau: f64,
    pub value: Option<f64>,
    pub error_bound: Option<f64>,
    pub passed: bool,
    pub diagnostic: Option<GrowthDiagnostic>,
}

/// `∫_τ^∞ K(s)h(s){π_τ(s)𝔳(s) + 𝔙(s)Ψ_τ(s)²} ds`; finite means the
/// map `η ↦ w*(0; (τ, η))` is `C²`.
pub fn verify_lemma224_condition(
    sys: &LinearSystemSpec,
    spec: &DichotomySpec,
    nl: &NonlinearitySpec,
    tau: f64,
    vopts: &VerifyOptions,
) -> Result<SecondOrderCertificate> {
    let big_v = nl
        .big_v_env
        .clone()
        .ok_or(Error::Capability("the envelope 𝔙 of ∂²f/∂u²"))?;
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau = {tau} must be >= 0")));
    }
    if nl.v_env.is_zero() && big_v.is_zero() {
        return Ok(SecondOrderCertificate {
            tau,
            value: Some(0.0),
            error_bound: Some(0.0),
            passed: true,
            diagnostic: None,
        });
    }
    let ledger = BoundLedger::new(sys, nl);
    let kh = spec.k.mul(&spec.h);
    let g = |s: f64| {
        let pi = ledger.pi_tau(s, tau).unwrap_or(f64::INFINITY);
        kh.eval(s) * (pi * nl.v_env.eval(s) + big_v.eval(s) * ledger.psi_tau(s, tau).powi(2))
    };
    let majorant = match (ledger.pi_envelope(tau), ledger.psi_envelope(tau)) {
        (Some(pi), Some(psi)) => {
            Some(kh.mul(&pi.mul(&nl.v_env).add(&big_v.mul(&psi).mul(&psi))))
        }
        _ => None,
    };
    Ok(match certified_from(tau, majorant, g, vopts) {
        Ok(out) => SecondOrderCertificate {
            tau,
            value: Some(out.value[0]),
            error_bound: Some(out.error_bound()),
            passed: true,
            diagnostic: None,
        },
        Err(diag) => SecondOrderCertificate {
            tau,
            value: None,
            error_bound: None,
            passed: false,
            diagnostic: Some(diag),
        },
    })
}

/// An evaluated derivative integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeIntegral<T> {
    pub value: T,
    pub quadrature_error: f64,
    pub tail_bound: f64,
    /// False when the tail could not be certified and the integral was
    /// truncated at a fixed horizon.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBundle {
    pub tau: f64,
    pub point: DVector<f64>,
    pub dg: DMatrix<f64>,
    pub dh: DMatrix<f64>,
    pub dw: DMatrix<f64>,
    pub d2w: Option<Array3>,
    /// Condition number of `∂G/∂η` at `H(τ, ξ)`, the matrix inverted for `dh`.
    pub condition_number: f64,
    pub d2w_certified: Option<bool>,
}

/// Upper limit and tail for `∫₀^∞ Q0 X(0,s) (…) ds` with factor bounded by
/// `density`; an uncertifiable tail falls back to a fixed horizon with an
/// infinite tail bound.
struct UnstablePlan {
    upper: f64,
    tail: f64,
    envelope: Option<quadrature::TailEnvelope>,
}

fn unstable_plan(c: &Conjugator, density: Option<Envelope>, tau: f64) -> UnstablePlan {
    let opts = c.options();
    let fallback = UnstablePlan {
        upper: (tau.max(opts.grid_min_horizon) * 4.0).min(opts.horizon_cap),
        tail: f64::INFINITY,
        envelope: None,
    };
    let Some(density) = density else {
        return fallback;
    };
    let env = quadrature::TailEnvelope::new(c.kernel().unstable_envelope(0.0, &density), tau);
    match quadrature::select_horizon(&env, tau, opts.quad_tol, opts.horizon_cap) {
        Ok((upper, tail)) => UnstablePlan {
            upper,
            tail,
            envelope: Some(env),
        },
        Err(_) => fallback,
    }
}

/// Integrates `g` over the planned range. The tolerance is floored at the
/// ODE relative accuracy times a coarse magnitude of the integral, and the
/// horizon is shortened to match, since `g` carries that error anyway.
fn derivative_quadrature<F>(
    c: &Conjugator,
    g: F,
    plan: &UnstablePlan,
    tau: f64,
    n: usize,
) -> Result<(quadrature::QuadOutput, f64)>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let opts = c.options();
    let abs_g = |s: f64| g(s).map(|v| vec![v.iter().map(|x| x.abs()).sum::<f64>()]);
    let coarse = quadrature::adaptive(abs_g, 0.0, plan.upper, &[tau], 1, f64::INFINITY)?.value[0];
    let tol = opts.quad_tol.max(10.0 * opts.ode.rtol * coarse);
    let (upper, tail) = match &plan.envelope {
        Some(env) => quadrature::select_horizon(env, tau, tol, plan.upper)
            .unwrap_or((plan.upper, plan.tail)),
        None => (plan.upper, plan.tail),
    };
    Ok((quadrature::adaptive(g, 0.0, upper, &[tau], n, tol)?, tail))
}

fn variational(
    c: &Conjugator,
    tau: f64,
    eta: &DVector<f64>,
    upper: f64,
    order: VariationOrder,
) -> Result<VariationalFlow> {
    VariationalFlow::new(
        c.system(),
        c.nonlinearity(),
        tau,
        eta,
        (0.0, upper.max(tau)),
        &[],
        order,
        &c.options().ode,
    )
}

/// `∂w*/∂η(0; (τ, η)) = −∫₀^∞ 𝒢(0,s) ∂f/∂u(s, y) ∂y/∂η(s) ds`.
///
/// For `s > 0` the kernel is `−Q0 X(0, s)`, so only the unstable part
/// contributes and the result vanishes when `Q ≡ 0`.
pub fn dw_star(c: &Conjugator, tau: f64, eta: &DVector<f64>) -> Result<DerivativeIntegral<DMatrix<f64>>> {
    let nl = c.nonlinearity();
    let d = c.system().dimension();
    if !nl.has_jacobian() {
        return Err(Error::Capability("the Jacobian ∂f/∂u"));
    }
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau = {tau} must be >= 0")));
    }
    if c.kernel().unstable_is_trivial() {
        return Ok(DerivativeIntegral {
            value: DMatrix::zeros(d, d),
            quadrature_error: 0.0,
            tail_bound: 0.0,
            certified: true,
        });
    }
    let ledger = BoundLedger::new(c.system(), nl);
    let density = ledger.psi_envelope(tau).map(|psi| nl.v_env.mul(&psi).scale(2.0));
    let plan = unstable_plan(c, density, tau);
    let upper = plan.upper;
    let flow = variational(c, tau, eta, upper, VariationOrder::First)?;
    let fs = c.kernel().fundamental(upper.max(tau))?;
    let q0 = c.kernel().q0().clone();
    let g = |s: f64| -> Result<Vec<f64>> {
        let (y, z, _) = flow.state(s)?;
        let m = &q0 * fs.inverse(s)? * nl.df(s, &y)? * z;
        Ok(m.as_slice().to_vec())
    };
    let (out, tail) = derivative_quadrature(c, g, &plan, tau, d * d)?;
    Ok(DerivativeIntegral {
        value: DMatrix::from_column_slice(d, d, &out.value),
        quadrature_error: out.error_estimate,
        tail_bound: tail,
        certified: plan.envelope.is_some(),
    })
}

/// `∂G/∂η(τ, η) = X(τ, 0)[∂y/∂η(0, τ, η) + ∂w*/∂η(0; (τ, η))]`.
pub fn dg(c: &Conjugator, tau: f64, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let dw = dw_star(c, tau, eta)?;
    let flow = variational(c, tau, eta, tau, VariationOrder::First)?;
    let (_, z0, _) = flow.state(0.0)?;
    Ok(c.kernel().forward(tau)? * (z0 + dw.value))
}

/// `∂H/∂ξ(τ, ξ) = [∂G/∂η(τ, H(τ, ξ))]⁻¹`, with the condition number of
/// the inverted matrix.
pub fn dh(c: &Conjugator, tau: f64, xi: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
    let h = c.h_map(tau, xi)?.value;
    let m = dg(c, tau, &h)?;
    let cond = condition_number(&m);
    if !(cond <= SINGULAR_CONDITION) {
        return Err(Error::Singular { condition: cond });
    }
    let inv = m.try_inverse().ok_or(Error::Singular { condition: cond })?;
    Ok((inv, cond))
}

/// `∂²w*/∂η²(0; (τ, η)) = −∫₀^∞ 𝒢(0,s)[∂f/∂u·∂²y/∂η² + ∂²f/∂u²(∂y/∂η, ∂y/∂η)] ds`.
pub fn d2w_star(c: &Conjugator, tau: f64, eta: &DVector<f64>) -> Result<DerivativeIntegral<Array3>> {
    let nl = c.nonlinearity();
    let d = c.system().dimension();
    if !nl.has_hessian() {
        return Err(Error::Capability("the second derivative ∂²f/∂u²"));
    }
    if !nl.has_jacobian() {
        return Err(Error::Capability("the Jacobian ∂f/∂u"));
    }
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau = {tau} must be >= 0")));
    }
    if c.kernel().unstable_is_trivial() {
        return Ok(DerivativeIntegral {
            value: Array3::zeros(d),
            quadrature_error: 0.0,
            tail_bound: 0.0,
            certified: true,
        });
    }
    let ledger = BoundLedger::new(c.system(), nl);
    let density = match (
        ledger.pi_envelope(tau),
        ledger.psi_envelope(tau),
        nl.big_v_env.as_ref(),
    ) {
        (Some(pi), Some(psi), Some(big_v)) => {
            Some(pi.mul(&nl.v_env).add(&big_v.mul(&psi).mul(&psi)))
        }
        _ => None,
    };
    let plan = unstable_plan(c, density, tau);
    let upper = plan.upper;
    let flow = variational(c, tau, eta, upper, VariationOrder::Second)?;
    let fs = c.kernel().fundamental(upper.max(tau))?;
    let q0 = c.kernel().q0().clone();
    let g = |s: f64| -> Result<Vec<f64>> {
        let (y, z, w) = flow.state(s)?;
        let w = w.expect("second-order flow");
        let left = &q0 * fs.inverse(s)?;
        let src = w.left_mul(&nl.df(s, &y)?);
        let hz = nl.d2f(s, &y)?.contract_both(&z);
        let total = Array3::from_vec(
            d,
            src.as_slice().iter().zip(hz.as_slice()).map(|(a, b)| a + b).collect(),
        );
        Ok(total.left_mul(&left).as_slice().to_vec())
    };
    let (out, tail) = derivative_quadrature(c, g, &plan, tau, d * d * d)?;
    Ok(DerivativeIntegral {
        value: Array3::from_vec(d, out.value),
        quadrature_error: out.error_estimate,
        tail_bound: tail,
        certified: plan.envelope.is_some(),
    })
}

/// `dG`, `dw` (and `d2w` when requested) at `(τ, point)` and `dH` at
/// `(τ, point)` read as a `ξ`.
pub fn derivative_bundle(
    c: &Conjugator,
    tau: f64,
    point: &DVector<f64>,
    second: bool,
) -> Result<DerivativeBundle> {
    let dw = dw_star(c, tau, point)?;
    let dg_m = dg(c, tau, point)?;
    let (dh_m, cond) = dh(c, tau, point)?;
    let d2 = if second { Some(d2w_star(c, tau, point)?) } else { None };
    Ok(DerivativeBundle {
        tau,
        point: point.clone(),
        dg: dg_m,
        dh: dh_m,
        dw: dw.value,
        d2w_certified: d2.as_ref().map(|r| r.certified),
        d2w: d2.map(|r| r.value),
        condition_number: cond,
    })
}
