//! Nonnegative scalar envelopes `s ↦ Σ cᵢ sᵏⁱ e^{rᵢ s}`.
//!
//! Dichotomy data (`K`, `h`) and the nonlinearity bounds (`𝔲`, `𝔳`, `𝔙`)
//! are stored in this closed family so that every tail integral the
//! quadrature needs has an exact antiderivative.

use serde::{Deserialize, Serialize};

/// One term `coef · s^power · e^{rate · s}` with `coef ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub coef: f64,
    pub power: u32,
    pub rate: f64,
}

impl ExpTerm {
    pub fn eval(&self, s: f64) -> f64 {
        if self.coef == 0.0 {
            return 0.0;
        }
        self.coef * s.powi(self.power as i32) * (self.rate * s).exp()
    }

    /// `∫_T^∞` for `T ≥ 0`; `None` when the term is not integrable.
    fn tail(&self, t: f64) -> Option<f64> {
        if self.coef == 0.0 {
            return Some(0.0);
        }
        if self.rate >= 0.0 {
            return None;
        }
        let lam = -self.rate;
        let k = self.power as i32;
        // ∫_T^∞ s^k e^{-λs} ds = e^{-λT} Σ_j k!/(k-j)! T^{k-j} / λ^{j+1}
        let mut sum = 0.0;
        let mut falling = 1.0;
        for j in 0..=k {
            sum += falling * t.powi(k - j) / lam.powi(j + 1);
            falling *= (k - j) as f64;
        }
        Some(self.coef * (-lam * t).exp() * sum)
    }

    /// An antiderivative in `s`.
    fn antiderivative(&self, s: f64) -> f64 {
        if self.coef == 0.0 {
            return 0.0;
        }
        let k = self.power as i32;
        if self.rate == 0.0 {
            return self.coef * s.powi(k + 1) / (k + 1) as f64;
        }
        // ∫ s^k e^{rs} = e^{rs} Σ_j (-1)^j k!/(k-j)! s^{k-j} / r^{j+1}
        let r = self.rate;
        let mut sum = 0.0;
        let mut falling = 1.0;
        let mut sign = 1.0;
        for j in 0..=k {
            sum += sign * falling * s.powi(k - j) / r.powi(j + 1);
            falling *= (k - j) as f64;
            sign = -sign;
        }
        self.coef * (r * s).exp() * sum
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Envelope {
    terms: Vec<ExpTerm>,
}

impl Envelope {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::term(c, 0, 0.0)
    }

    /// `c · e^{rate · s}`.
    pub fn exponential(c: f64, rate: f64) -> Self {
        Self::term(c, 0, rate)
    }

    pub fn term(coef: f64, power: u32, rate: f64) -> Self {
        assert!(
            coef >= 0.0 && coef.is_finite() && rate.is_finite(),
            "envelope terms need a finite nonnegative coefficient"
        );
        let mut e = Self::zero();
        if coef > 0.0 {
            e.terms.push(ExpTerm { coef, power, rate });
        }
        e
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(s)).sum()
    }

    fn push_merged(&mut self, t: ExpTerm) {
        if t.coef == 0.0 {
            return;
        }
        if let Some(existing) = self
            .terms
            .iter_mut()
            .find(|e| e.power == t.power && e.rate == t.rate)
        {
            existing.coef += t.coef;
        } else {
            self.terms.push(t);
        }
    }

    pub fn add(&self, other: &Envelope) -> Envelope {
        let mut out = self.clone();
        for t in &other.terms {
            out.push_merged(*t);
        }
        out
    }

    pub fn mul(&self, other: &Envelope) -> Envelope {
        let mut out = Envelope::zero();
        for a in &self.terms {
            for b in &other.terms {
                out.push_merged(ExpTerm {
                    coef: a.coef * b.coef,
                    power: a.power + b.power,
                    rate: a.rate + b.rate,
                });
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Envelope {
        assert!(c >= 0.0, "envelopes can only be scaled by c >= 0");
        let mut out = Envelope::zero();
        for t in &self.terms {
            out.push_merged(ExpTerm {
                coef: t.coef * c,
                ..*t
            });
        }
        out
    }

    /// `∫_T^∞ self`, or `None` if some term does not decay.
    pub fn tail(&self, t: f64) -> Option<f64> {
        self.terms.iter().map(|term| term.tail(t)).sum()
    }

    /// Exact `∫_a^b self`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| match (t.tail(a), t.tail(b)) {
                (Some(ta), Some(tb)) => ta - tb,
                _ => t.antiderivative(b) - t.antiderivative(a),
            })
            .sum()
    }

    pub fn is_integrable(&self) -> bool {
        self.terms.iter().all(|t| t.rate < 0.0)
    }

    /// Largest exponential rate among the terms (`-∞` for the zero envelope).
    pub fn dominant_rate(&self) -> f64 {
        self.terms
            .iter()
            .fold(f64::NEG_INFINITY, |a, t| a.max(t.rate))
    }

    /// Upper envelope of `s ↦ ∫_τ^s self(p) dp` valid for `s ≥ τ ≥ 0`.
    pub fn running_integral_bound(&self, tau: f64) -> Envelope {
        let mut out = Envelope::zero();
        for t in &self.terms {
            if t.rate > 0.0 {
                // d/dp [p^k e^{rp} / r] ≥ p^k e^{rp} for p ≥ 0
                out.push_merged(ExpTerm {
                    coef: t.coef / t.rate,
                    ..*t
                });
            } else if t.rate == 0.0 {
                out.push_merged(ExpTerm {
                    coef: t.coef / (t.power as f64 + 1.0),
                    power: t.power + 1,
                    rate: 0.0,
                });
            } else {
                out.push_merged(ExpTerm {
                    coef: t.tail(tau).unwrap_or(0.0),
                    power: 0,
                    rate: 0.0,
                });
            }
        }
        out
    }

    /// Single-term upper envelope of `s ↦ exp(c (s-τ) + ∫_τ^s self)` for
    /// `s ≥ τ`, available when every term is either a constant or decays.
    pub fn exp_running_integral_bound(&self, extra_rate: f64, tau: f64) -> Option<Envelope> {
        let mut rate = extra_rate;
        let mut log_coef = -extra_rate * tau;
        for t in &self.terms {
            if t.rate < 0.0 {
                log_coef += t.tail(tau)?;
            } else if t.rate == 0.0 && t.power == 0 {
                rate += t.coef;
                log_coef -= t.coef * tau;
            } else {
                return None;
            }
        }
        Some(Envelope::exponential(log_coef.exp(), rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        // composite Simpson
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn tail_matches_numerical_integral() {
        let e = Envelope::term(0.3, 2, -0.7).add(&Envelope::exponential(2.0, -1.5));
        let t = 1.3;
        let num = quad(|s| e.eval(s), t, 80.0, 200_000);
        assert!((e.tail(t).unwrap() - num).abs() < 1e-9);
    }

    #[test]
    fn integral_matches_numerical_integral() {
        let e = Envelope::term(0.3, 2, 0.4)
            .add(&Envelope::constant(0.5))
            .add(&Envelope::term(1.1, 1, -0.9));
        let num = quad(|s| e.eval(s), 0.3, 4.2, 20_000);
        assert!((e.integral(0.3, 4.2) - num).abs() < 1e-10);
    }

    #[test]
    fn nondecaying_terms_have_no_tail() {
        assert!(Envelope::constant(0.1).tail(3.0).is_none());
        assert_eq!(Envelope::zero().tail(3.0), Some(0.0));
    }

    #[test]
    fn product_adds_rates() {
        let p = Envelope::exponential(2.0, -1.0).mul(&Envelope::exponential(0.5, 0.25));
        assert!((p.eval(2.0) - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn running_integral_bound_dominates() {
        let e = Envelope::exponential(0.2, 1.2)
            .add(&Envelope::constant(0.1))
            .add(&Envelope::term(1.0, 1, -2.0));
        let tau = 0.5;
        let bound = e.running_integral_bound(tau);
        for &s in &[0.5, 0.8, 1.5, 4.0] {
            let exact = quad(|p| e.eval(p), tau, s, 2000);
            assert!(bound.eval(s) >= exact - 1e-12, "s={s}");
        }
    }

    #[test]
    fn exp_running_integral_bound_dominates() {
        let v = Envelope::exponential(0.1, -1.0).add(&Envelope::constant(0.05));
        let tau = 0.7;
        let env = v.exp_running_integral_bound(1.0, tau).unwrap();
        for &s in &[0.7, 1.0, 3.0, 9.0] {
            let exact = ((s - tau) + quad(|p| v.eval(p), tau, s, 2000)).exp();
            assert!(env.eval(s) >= exact * (1.0 - 1e-12), "s={s}");
        }
        assert!(Envelope::exponential(0.1, 0.2)
            .exp_running_integral_bound(1.0, 0.0)
            .is_none());
    }
}
