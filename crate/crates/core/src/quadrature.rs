//! Truncated half-line integrals `∫₀^∞ g(s) ds` with certified tails.
//!
//! The finite part uses globally adaptive Gauss–Kronrod (7/15) panels that
//! never straddle the caller's `split` point; the tail `∫_T^∞` is bounded by
//! the closed-form antiderivative of a [`TailEnvelope`], with the horizon
//! `T` doubled from `max(split, 10)` until that bound is below tolerance.

use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Default hard cap on the truncation horizon.
pub const DEFAULT_HORIZON_CAP: f64 = 200.0;
/// Largest initial panel width on either side of the split.
const BASE_PANEL: f64 = 4.0;
const MAX_PANELS: usize = 20_000;

/// Dominating bound for `|g(s)|` on `[start, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEnvelope {
    pub bound: Envelope,
    pub start: f64,
}

impl TailEnvelope {
    pub fn new(bound: Envelope, start: f64) -> Self {
        Self { bound, start }
    }

    /// The integrand vanishes identically beyond `start`.
    pub fn vanishing(start: f64) -> Self {
        Self {
            bound: Envelope::zero(),
            start,
        }
    }

    /// `∫_T^∞ bound`, `None` if the bound is not integrable.
    pub fn tail(&self, t: f64) -> Option<f64> {
        debug_assert!(t >= self.start);
        self.bound.tail(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

/// One 15-point Kronrod panel with the embedded 7-point Gauss estimate.
fn kronrod_panel<F>(f: &F, a: f64, b: f64, n: usize) -> Result<Panel>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; n];
    let mut g = vec![0.0; n];
    let center = f(c)?;
    for i in 0..n {
        k[i] = WGK[7] * center[i];
        g[i] = WG[3] * center[i];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let lo = f(c - dx)?;
        let hi = f(c + dx)?;
        for i in 0..n {
            let s = lo[i] + hi[i];
            k[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut error = 0.0_f64;
    for i in 0..n {
        k[i] *= h;
        g[i] *= h;
        error = error.max((k[i] - g[i]).abs());
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok(Panel {
        a,
        b,
        value: k,
        error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadOutput {
    pub value: Vec<f64>,
    pub error_estimate: f64,
    pub panels: usize,
}

/// Non-adaptive composite Kronrod rule on the panels given by `breaks`.
pub fn kronrod_panels<F>(f: F, breaks: &[f64], n: usize) -> Result<QuadOutput>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let mut value = vec![0.0; n];
    let mut err = 0.0;
    for w in breaks.windows(2) {
        let p = kronrod_panel(&f, w[0], w[1], n)?;
        for (v, x) in value.iter_mut().zip(&p.value) {
            *v += x;
        }
        err += p.error;
    }
    Ok(QuadOutput {
        value,
        error_estimate: err,
        panels: breaks.len().saturating_sub(1),
    })
}

/// Globally adaptive Gauss–Kronrod on `[a, b]` with absolute tolerance.
///
/// `breaks` are interior points no panel may straddle.
pub fn adaptive<F>(f: F, a: f64, b: f64, breaks: &[f64], n: usize, tol: f64) -> Result<QuadOutput>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if b <= a {
        return Ok(QuadOutput {
            value: vec![0.0; n],
            error_estimate: 0.0,
            panels: 0,
        });
    }
    let mut points: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut panels = Vec::new();
    for w in points.windows(2) {
        let pieces = ((w[1] - w[0]) / BASE_PANEL).ceil().max(1.0) as usize;
        let width = (w[1] - w[0]) / pieces as f64;
        for j in 0..pieces {
            let lo = w[0] + j as f64 * width;
            let hi = if j + 1 == pieces { w[1] } else { lo + width };
            panels.push(kronrod_panel(&f, lo, hi, n)?);
        }
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.error).sum();
        if total <= tol {
            break;
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        let too_narrow = (p.b - p.a) <= 1e-13 * (1.0 + p.a.abs().max(p.b.abs()));
        if too_narrow || panels.len() + 2 > MAX_PANELS {
            return Err(Error::Quadrature {
                a,
                b,
                estimate: total,
                tol,
            });
        }
        panels.push(kronrod_panel(&f, p.a, mid, n)?);
        panels.push(kronrod_panel(&f, mid, p.b, n)?);
    }
    // Sum in position order for reproducibility.
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = vec![0.0; n];
    let mut err = 0.0;
    for p in &panels {
        for (v, x) in value.iter_mut().zip(&p.value) {
            *v += x;
        }
        err += p.error;
    }
    Ok(QuadOutput {
        value,
        error_estimate: err,
        panels: panels.len(),
    })
}

/// Smallest doubling horizon `T ≥ max(split, 10, env.start)` whose
/// certified tail is within `tol`.
pub fn select_horizon(env: &TailEnvelope, split: f64, tol: f64, cap: f64) -> Result<(f64, f64)> {
    let mut t = split.max(10.0).max(env.start);
    loop {
        let capped = t >= cap;
        if capped {
            t = cap.max(split).max(env.start);
        }
        let tail = env.tail(t).unwrap_or(f64::INFINITY);
        if tail <= tol {
            return Ok((t, tail));
        }
        if capped {
            return Err(Error::Truncation {
                achieved: tail,
                tol,
                horizon: t,
            });
        }
        t *= 2.0;
    }
}

/// Result of [`integrate_half_line`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfLineIntegral {
    pub value: Vec<f64>,
    /// Certified bound on the neglected `∫_T^∞`.
    pub tail_bound: f64,
    /// Kronrod–Gauss error estimate of the finite part.
    pub quadrature_error: f64,
    pub horizon: f64,
}

impl HalfLineIntegral {
    pub fn error_bound(&self) -> f64 {
        self.tail_bound + self.quadrature_error
    }
}

/// `∫₀^∞ g(s) ds` for an `n`-component integrand.
pub fn integrate_half_line<F>(
    g: F,
    n: usize,
    split: f64,
    env: &TailEnvelope,
    tol: f64,
    cap: f64,
) -> Result<HalfLineIntegral>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (horizon, tail_bound) = select_horizon(env, split, tol, cap)?;
    let out = adaptive(g, 0.0, horizon, &[split], n, tol)?;
    Ok(HalfLineIntegral {
        value: out.value,
        tail_bound,
        quadrature_error: out.error_estimate,
        horizon,
    })
}
