//! The correction terms `w*` and `z*` and the maps
//! `G(t, η) = η + w*(t; (t, η))`, `H(t, ξ) = ξ + z*(t; (t, ξ))`, plus
//! residual checks of the identities they satisfy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dichotomy::{default_t_grid, verify_c2_c3, C2C3Report, GreenKernel, VerifyOptions};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::flows::{solve_nonlinear, LinearSystemSpec, NonlinearitySpec};
use crate::dichotomy::DichotomySpec;
use crate::linalg::op_norm;
use crate::ode::OdeOptions;
use crate::quadrature::{self, TailEnvelope, DEFAULT_HORIZON_CAP};

/// A `d`-vector function sampled on an increasing grid `[0, T]`, with
/// cubic Hermite interpolation from stored node derivatives and a decay
/// extension `φ(s) = φ(T)·E(s)/E(T)` beyond `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    dim: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    extension: Envelope,
}

impl GridFunction {
    pub fn new(
        dim: usize,
        nodes: Vec<f64>,
        values: Vec<f64>,
        derivs: Vec<f64>,
        extension: Envelope,
    ) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("grid nodes must be nonempty and strictly increasing".into()));
        }
        if values.len() != dim * nodes.len() || derivs.len() != values.len() {
            return Err(Error::Domain("grid function data length mismatch".into()));
        }
        Ok(Self {
            dim,
            nodes,
            values,
            derivs,
            extension,
        })
    }

    pub fn zeros(dim: usize, nodes: Vec<f64>, extension: Envelope) -> Result<Self> {
        let n = dim * nodes.len();
        Self::new(dim, nodes, vec![0.0; n], vec![0.0; n], extension)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_value(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("nonempty grid")
    }

    pub fn eval(&self, s: f64) -> DVector<f64> {
        let d = self.dim;
        let last = self.nodes.len() - 1;
        if s >= self.horizon() {
            let end = self.node_value(last);
            if s == self.horizon() {
                return end;
            }
            let e_end = self.extension.eval(self.horizon());
            return if e_end > 0.0 {
                end * (self.extension.eval(s) / e_end)
            } else {
                DVector::zeros(d)
            };
        }
        if s <= self.nodes[0] {
            return self.node_value(0);
        }
        let i = self.nodes.partition_point(|&x| x <= s) - 1;
        let (t0, t1) = (self.nodes[i], self.nodes[i + 1]);
        if s == t0 {
            return self.node_value(i);
        }
        let h = t1 - t0;
        let u = (s - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        DVector::from_fn(d, |k, _| {
            let (a, b) = (i * d + k, (i + 1) * d + k);
            h00 * self.values[a] + h10 * h * self.derivs[a] + h01 * self.values[b] + h11 * h * self.derivs[b]
        })
    }

    /// Max over nodes of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Node-wise sup distance; both functions must share the grid.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.nodes, other.nodes, "grid functions on different grids");
        self.values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Uniform grid on `[0, max(2τ, min_horizon)]` with `τ` inserted.
pub fn working_grid(tau: f64, spacing: f64, min_horizon: f64) -> Vec<f64> {
    let top = (2.0 * tau).max(min_horizon);
    let n = (top / spacing).ceil() as usize;
    let mut nodes: Vec<f64> = (0..=n).map(|i| (i as f64 * spacing).min(top)).collect();
    nodes.dedup();
    if !nodes.iter().any(|&x| x == tau) {
        let at = nodes.partition_point(|&x| x < tau);
        nodes.insert(at, tau);
    }
    // Drop nodes closer than 1e-9 spacing to τ.
    let gap = 1e-9 * spacing;
    nodes.retain(|&x| x == tau || (x - tau).abs() > gap);
    nodes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyOptions {
    pub ode: OdeOptions,
    pub quad_tol: f64,
    pub picard_tol: f64,
    pub max_iterations: usize,
    pub grid_spacing: f64,
    pub grid_min_horizon: f64,
    pub horizon_cap: f64,
    /// Grid for the suprema defining `𝔭̂` and `𝔮̂`.
    pub sup_grid: Vec<f64>,
    /// Pass threshold for identity residuals in [`Conjugator::check_equivalence`].
    pub equivalence_tol: f64,
}

impl Default for ConjugacyOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            quad_tol: 1e-11,
            picard_tol: 1e-10,
            max_iterations: 200,
            grid_spacing: 0.05,
            grid_min_horizon: 10.0,
            horizon_cap: DEFAULT_HORIZON_CAP,
            sup_grid: default_t_grid(),
            equivalence_tol: 1e-5,
        }
    }
}

impl ConjugacyOptions {
    /// Every tolerance and the grid spacing halved.
    pub fn refined(&self) -> Self {
        let mut out = self.clone();
        out.ode.atol *= 0.5;
        out.ode.rtol *= 0.5;
        out.ode.h_max *= 0.5;
        out.quad_tol *= 0.5;
        out.picard_tol *= 0.5;
        out.grid_spacing *= 0.5;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub iterations: usize,
    /// `‖φ_{k+1} − φ_k‖_∞` per iteration.
    pub differences: Vec<f64>,
    /// Consecutive difference ratios above the noise floor.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// A-posteriori bound on the distance to the fixed point.
    pub residual: f64,
    /// Largest quadrature error over nodes in the final application of T.
    pub quadrature_error: f64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyResult {
    pub value: DVector<f64>,
    pub correction: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub tail_bound: f64,
    pub quadrature_error: f64,
    /// Defect of the grid interpolant of `z*` between nodes over `1 − 𝔮̂`;
    /// zero for `G`.
    pub interpolation_error: f64,
    /// Integrator error carried through `f`: `𝔮̂ (rtol·sup|u| + atol)` along
    /// the solution `u` entering `f`, plus `rtol·|correction|`.
    pub ode_error: f64,
    /// Sum of the residual, quadrature, tail, interpolation and ODE terms.
    pub error_bound: f64,
}

/// One evaluated `w*(t; (τ, η))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub value: DVector<f64>,
    pub tail_bound: f64,
    pub quadrature_error: f64,
    /// `𝔮̂ (rtol·sup|y| + atol)` over the integration window.
    pub ode_error: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub tau: f64,
    pub t_grid: Vec<f64>,
    /// `sup_t |H[t, x(t,τ,ξ)] − y(t, τ, H(τ,ξ))| / max(1, |y|)`.
    pub h_solution: f64,
    /// `sup_t |G[t, y(t,τ,η)] − X(t,τ)G(τ,η)| / max(1, |X(t,τ)G(τ,η)|)`.
    pub g_solution: f64,
    /// `|H(τ, G(τ,η)) − η|`.
    pub roundtrip_hg: f64,
    /// `|G(τ, H(τ,ξ)) − ξ|`.
    pub roundtrip_gh: f64,
    /// `sup |H − id|` and `sup |G − id|` along the sampled trajectories.
    pub sup_h_minus_id: f64,
    pub sup_g_minus_id: f64,
    pub p_hat: Option<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Computes `w*`, `z*`, `H` and `G` for one system/perturbation pair.
#[derive(Debug)]
pub struct Conjugator {
    sys: LinearSystemSpec,
    nl: NonlinearitySpec,
    spec: DichotomySpec,
    opts: ConjugacyOptions,
    kernel: GreenKernel,
    contraction: std::result::Result<C2C3Report, String>,
    /// `K h 𝔲`, used for the beyond-grid extension.
    extension: Envelope,
}

impl Conjugator {
    /// Measures `𝔭̂, 𝔮̂` on `opts.sup_grid`; a failure there is kept and
    /// reported as a warning rather than returned.
    pub fn new(
        sys: &LinearSystemSpec,
        nl: &NonlinearitySpec,
        spec: &DichotomySpec,
        opts: ConjugacyOptions,
    ) -> Result<Self> {
        if nl.dimension() != sys.dimension() {
            return Err(Error::Config(format!(
                "nonlinearity has dimension {} but the system has {}",
                nl.dimension(),
                sys.dimension()
            )));
        }
        let kernel = GreenKernel::new(sys, spec, &opts.ode)?;
        let vopts = VerifyOptions {
            quad_tol: opts.quad_tol.max(1e-10),
            horizon_cap: opts.horizon_cap,
            ode: opts.ode.clone(),
            ..VerifyOptions::default()
        };
        let contraction =
            verify_c2_c3(spec, sys, nl, &opts.sup_grid, &vopts).map_err(|e| e.to_string());
        let extension = spec.k.mul(&spec.h).mul(&nl.u_env);
        Ok(Self {
            sys: sys.clone(),
            nl: nl.clone(),
            spec: spec.clone(),
            opts,
            kernel,
            contraction,
            extension,
        })
    }

    pub fn system(&self) -> &LinearSystemSpec {
        &self.sys
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.nl
    }

    pub fn dichotomy(&self) -> &DichotomySpec {
        &self.spec
    }

    pub fn options(&self) -> &ConjugacyOptions {
        &self.opts
    }

    pub fn kernel(&self) -> &GreenKernel {
        &self.kernel
    }

    pub fn contraction_report(&self) -> Option<&C2C3Report> {
        self.contraction.as_ref().ok()
    }

    pub fn p_hat(&self) -> Option<f64> {
        self.contraction_report().map(|r| r.p_hat)
    }

    pub fn q_hat(&self) -> Option<f64> {
        self.contraction_report().map(|r| r.q_hat)
    }

    pub fn warnings(&self) -> Vec<String> {
        match &self.contraction {
            Ok(r) if !r.c2_passed => vec!["condition (c2) did not pass".into()],
            Ok(_) => Vec::new(),
            Err(e) => vec![format!("conditions (c2)/(c3) unverified: {e}")],
        }
    }

    fn check_point(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.sys.dimension() {
            return Err(Error::Domain(format!(
                "{what} has length {}, expected {}",
                v.len(),
                self.sys.dimension()
            )));
        }
        Ok(())
    }

    /// `X(t, τ)`.
    pub fn transition(&self, t: f64, tau: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 || tau < 0.0 {
            return Err(Error::Domain(format!("times ({t}, {tau}) must be >= 0")));
        }
        self.kernel.transition(t, tau)
    }

    /// `w*(t; (τ, η)) = −∫₀^∞ 𝒢(t,s) f(s, y(s,τ,η)) ds`.
    pub fn w_star(&self, t: f64, tau: f64, eta: &DVector<f64>) -> Result<Correction> {
        self.check_point(eta, "eta")?;
        if t < 0.0 || tau < 0.0 {
            return Err(Error::Domain(format!("times ({t}, {tau}) must be >= 0")));
        }
        let d = self.sys.dimension();
        let tol = self.opts.quad_tol;
        let plan = self.kernel.plan(t, &self.nl.u_env, tol, self.opts.horizon_cap)?;
        let upper = plan.0;
        let y = solve_nonlinear(&self.sys, &self.nl, tau, eta, &[0.0, upper, t], &self.opts.ode)?;
        let fs = self.kernel.fundamental(upper.max(t).max(tau))?;
        let fwd = fs.forward(t)?;
        let left_p = &fwd * &self.spec.p0;
        let left_q = &fwd * self.kernel.q0();
        let g = |s: f64| -> Result<Vec<f64>> {
            let ys = DVector::from_vec(y.eval(s)?);
            let src = fs.inverse(s)? * self.nl.f(s, &ys);
            let v = if s <= t { &left_p * src } else { -(&left_q * src) };
            Ok(v.as_slice().to_vec())
        };
        let out = self.kernel.integrate_planned(t, plan, d, g, tol)?;
        let y_sup = (0..y.len())
            .map(|i| y.sample(i).1.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Correction {
            value: -DVector::from_vec(out.value),
            tail_bound: out.tail_bound,
            quadrature_error: out.quadrature_error,
            ode_error: self.propagated_ode_error(y_sup),
            horizon: out.horizon,
        })
    }

    /// `Tφ(t) = ∫₀^∞ 𝒢(t,s) f(s, x(s,τ,ξ) + φ(s)) ds` at every node of `φ`,
    /// with the node quadrature error and tail bound.
    pub fn apply_t(
        &self,
        phi: &GridFunction,
        tau: f64,
        xi: &DVector<f64>,
    ) -> Result<(GridFunction, f64, f64)> {
        let (rows, quad_error, far_tail, _) = self.apply_t_at(phi, tau, xi, phi.nodes())?;
        let d = self.sys.dimension();
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut derivs = Vec::with_capacity(rows.len() * d);
        for (v, dv) in rows {
            values.extend_from_slice(v.as_slice());
            derivs.extend_from_slice(dv.as_slice());
        }
        let out = GridFunction::new(d, phi.nodes().to_vec(), values, derivs, self.extension.clone())?;
        Ok((out, quad_error, far_tail))
    }

    /// `(Tφ, (Tφ)')` at `nodes`, which must end at `phi.horizon()`, with the
    /// quadrature error, tail bound and `max |x(t_i, τ, ξ)|`.
    #[allow(clippy::type_complexity)]
    fn apply_t_at(
        &self,
        phi: &GridFunction,
        tau: f64,
        xi: &DVector<f64>,
        nodes: &[f64],
    ) -> Result<(Vec<(DVector<f64>, DVector<f64>)>, f64, f64, f64)> {
        self.check_point(xi, "xi")?;
        let d = self.sys.dimension();
        let top = phi.horizon();
        let n = nodes.len();
        let p_trivial = self.kernel.stable_is_trivial();
        let q_trivial = self.kernel.unstable_is_trivial();
        let tol = self.opts.quad_tol;

        // Beyond-grid piece R = ∫_T^∞ 𝒢(T, s) F(s) ds, needed only if Q ≠ 0.
        let (far_end, far_tail) = if q_trivial {
            (top, 0.0)
        } else {
            let env = TailEnvelope::new(self.kernel.unstable_envelope(top, &self.nl.u_env), top);
            quadrature::select_horizon(&env, top, tol, self.opts.horizon_cap)?
        };
        let fs = self.kernel.fundamental(far_end.max(tau))?;
        let c = fs.inverse(tau)? * xi;
        let source = |s: f64| -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
            let (fwd, inv) = fs.at(s)?;
            let x = &fwd * &c;
            let f = self.nl.f(s, &(x + phi.eval(s)));
            Ok((fwd, inv, f))
        };

        // Cell integrals of X(t_c, s) F(s) over [t_c, t_{c+1}].
        let cells: Vec<(DVector<f64>, f64)> = (0..n - 1)
            .into_par_iter()
            .map(|cidx| -> Result<(DVector<f64>, f64)> {
                let (a, b) = (nodes[cidx], nodes[cidx + 1]);
                let anchor = fs.forward(a)?;
                let g = |s: f64| -> Result<Vec<f64>> {
                    let (_, inv, f) = source(s)?;
                    Ok((&anchor * (inv * f)).as_slice().to_vec())
                };
                let cell_tol = tol * (b - a) / top.max(1.0);
                let out = quadrature::adaptive(g, a, b, &[], d, cell_tol)?;
                let k = self.spec.k.eval(a).max(self.spec.k.eval(b));
                Ok((fs.inverse(a)? * DVector::from_vec(out.value), out.error_estimate * k))
            })
            .collect::<Result<_>>()?;
        let quad_error: f64 = cells.iter().map(|c| c.1).sum();

        let far = if q_trivial {
            DVector::zeros(d)
        } else {
            let left = fs.forward(top)? * self.kernel.q0();
            let g = |s: f64| -> Result<Vec<f64>> {
                let (_, inv, f) = source(s)?;
                Ok((-(&left * (inv * f))).as_slice().to_vec())
            };
            DVector::from_vec(quadrature::adaptive(g, top, far_end, &[], d, tol)?.value)
        };

        // Prefix sums: stable part ∫₀^{t_i}, unstable part ∫_{t_i}^T.
        let mut below = vec![DVector::zeros(d); n];
        for i in 1..n {
            below[i] = &below[i - 1] + &cells[i - 1].0;
        }
        let mut above = vec![DVector::zeros(d); n];
        for i in (0..n - 1).rev() {
            above[i] = &above[i + 1] + &cells[i].0;
        }

        let x_sup = nodes
            .iter()
            .map(|&t| Ok((fs.forward(t)? * &c).norm()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(DVector<f64>, DVector<f64>)> {
                let t = nodes[i];
                let (fwd, _) = fs.at(t)?;
                let mut v = DVector::zeros(d);
                if !p_trivial {
                    v += &fwd * (&self.spec.p0 * &below[i]);
                }
                if !q_trivial {
                    v -= &fwd * (self.kernel.q0() * &above[i]);
                    v += fs.transition(t, top)? * &far;
                }
                // (Tφ)' = A(t)·Tφ + F(t)
                let (_, _, f) = source(t)?;
                let dv = self.sys.a(t) * &v + f;
                Ok((v, dv))
            })
            .collect::<Result<_>>()?;
        Ok((rows, quad_error, far_tail, x_sup))
    }

    /// `𝔮̂ (rtol·u_sup + atol)`; infinite when `𝔮̂` is unavailable.
    fn propagated_ode_error(&self, u_sup: f64) -> f64 {
        let q = self.q_hat().unwrap_or(f64::INFINITY);
        if q == 0.0 {
            return 0.0;
        }
        q * (self.opts.ode.rtol * u_sup + self.opts.ode.atol)
    }

    /// `max |Tφ − φ|` at the cell midpoints of `φ`, the interpolation defect
    /// of a converged iterate, and `max |x(t_i, τ, ξ)|` on the refined grid.
    fn interpolation_defect(&self, phi: &GridFunction, tau: f64, xi: &DVector<f64>) -> Result<(f64, f64)> {
        let nodes = phi.nodes();
        let mut fine = Vec::with_capacity(2 * nodes.len());
        for w in nodes.windows(2) {
            fine.push(w[0]);
            fine.push(0.5 * (w[0] + w[1]));
        }
        fine.push(phi.horizon());
        let (rows, _, _, x_sup) = self.apply_t_at(phi, tau, xi, &fine)?;
        let defect = rows
            .iter()
            .zip(&fine)
            .skip(1)
            .step_by(2)
            .map(|((v, _), &s)| (v - phi.eval(s)).norm())
            .fold(0.0, f64::max);
        Ok((defect, x_sup))
    }

    fn contraction_constant(&self) -> Result<f64> {
        match &self.contraction {
            Ok(r) if r.q_hat < 1.0 => Ok(r.q_hat.max(0.0)),
            Ok(r) => Err(Error::NotContracting { q_hat: r.q_hat }),
            Err(e) => Err(Error::Config(format!(
                "contraction constant unavailable, refusing to iterate: {e}"
            ))),
        }
    }

    /// Picard iteration `φ_{k+1} = Tφ_k` from `φ₀ ≡ 0` on the working grid.
    pub fn z_star(&self, tau: f64, xi: &DVector<f64>) -> Result<(GridFunction, ConvergenceStats)> {
        if tau < 0.0 {
            return Err(Error::Domain(format!("tau = {tau} must be >= 0")));
        }
        let q = self.contraction_constant()?;
        let tol = self.opts.picard_tol;
        let threshold = if q > 0.0 { tol * (1.0 - q) / q } else { tol };
        let noise = 10.0 * self.opts.quad_tol;
        let nodes = working_grid(tau, self.opts.grid_spacing, self.opts.grid_min_horizon);
        let mut phi = GridFunction::zeros(self.sys.dimension(), nodes, self.extension.clone())?;
        let mut stats = ConvergenceStats {
            iterations: 0,
            differences: Vec::new(),
            ratios: Vec::new(),
            max_ratio: 0.0,
            residual: f64::INFINITY,
            quadrature_error: 0.0,
            tail_bound: 0.0,
        };
        let mut growing = 0;
        loop {
            let (next, qerr, tail) = self.apply_t(&phi, tau, xi)?;
            let diff = next.sup_distance(&phi);
            stats.iterations += 1;
            stats.quadrature_error = qerr;
            stats.tail_bound = tail;
            if let Some(&prev) = stats.differences.last() {
                if prev > noise && diff > noise {
                    let r = diff / prev;
                    stats.ratios.push(r);
                    stats.max_ratio = stats.max_ratio.max(r);
                    growing = if r >= 1.0 { growing + 1 } else { 0 };
                    if growing >= 3 {
                        return Err(Error::Divergence {
                            ratio: r,
                            iteration: stats.iterations,
                        });
                    }
                }
            }
            stats.differences.push(diff);
            phi = next;
            if diff <= threshold {
                let q_eff = q.max(stats.max_ratio).min(0.999);
                stats.residual = q_eff / (1.0 - q_eff) * diff;
                return Ok((phi, stats));
            }
            if stats.iterations >= self.opts.max_iterations {
                return Err(Error::IterationCap {
                    cap: self.opts.max_iterations,
                    residual: diff,
                });
            }
        }
    }

    /// `H(t, ξ) = ξ + z*(t; (t, ξ))`.
    pub fn h_map(&self, t: f64, xi: &DVector<f64>) -> Result<ConjugacyResult> {
        let (z, stats) = self.z_star(t, xi)?;
        let correction = z.eval(t);
        let quad = stats.quadrature_error;
        let (defect, x_sup) = self.interpolation_defect(&z, t, xi)?;
        let q_eff = self.contraction_constant()?.max(stats.max_ratio).min(0.999);
        let interpolation_error = defect / (1.0 - q_eff);
        let ode_error = self.propagated_ode_error(x_sup) + self.opts.ode.rtol * z.sup_norm();
        Ok(ConjugacyResult {
            value: xi + &correction,
            error_bound: stats.residual + quad + stats.tail_bound + interpolation_error + ode_error,
            correction,
            iterations: stats.iterations,
            residual: stats.residual,
            tail_bound: stats.tail_bound,
            quadrature_error: quad,
            interpolation_error,
            ode_error,
        })
    }

    /// `G(t, η) = η + w*(t; (t, η))`.
    pub fn g_map(&self, t: f64, eta: &DVector<f64>) -> Result<ConjugacyResult> {
        let w = self.w_star(t, t, eta)?;
        let ode_error = w.ode_error + self.opts.ode.rtol * w.value.norm();
        Ok(ConjugacyResult {
            value: eta + &w.value,
            error_bound: w.quadrature_error + w.tail_bound + ode_error,
            correction: w.value,
            iterations: 0,
            residual: 0.0,
            tail_bound: w.tail_bound,
            quadrature_error: w.quadrature_error,
            interpolation_error: 0.0,
            ode_error,
        })
    }

    /// `G(τ, η) = X(τ, 0){y(0, τ, η) + w*(0; (τ, η))}`.
    pub fn g_map_via_origin(&self, tau: f64, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.w_star(0.0, tau, eta)?;
        let y = solve_nonlinear(&self.sys, &self.nl, tau, eta, &[0.0], &self.opts.ode)?;
        let y0 = DVector::from_vec(y.eval(0.0)?);
        Ok(self.kernel.forward(tau)? * (y0 + w.value))
    }

    /// Residuals of the solution-mapping, roundtrip and boundedness
    /// identities along `t_grid`.
    pub fn check_equivalence(
        &self,
        tau: f64,
        xi: &DVector<f64>,
        eta: &DVector<f64>,
        t_grid: &[f64],
    ) -> Result<EquivalenceReport> {
        let h_tau = self.h_map(tau, xi)?.value;
        let g_tau = self.g_map(tau, eta)?.value;
        let mut targets = t_grid.to_vec();
        targets.push(tau);
        let y_from_h = solve_nonlinear(&self.sys, &self.nl, tau, &h_tau, &targets, &self.opts.ode)?;
        let y_from_eta = solve_nonlinear(&self.sys, &self.nl, tau, eta, &targets, &self.opts.ode)?;

        let rows: Vec<(f64, f64, f64, f64)> = t_grid
            .par_iter()
            .map(|&t| -> Result<(f64, f64, f64, f64)> {
                let x_t = self.transition(t, tau)? * xi;
                let h = self.h_map(t, &x_t)?.value;
                let y_h = DVector::from_vec(y_from_h.eval(t)?);
                let lhs_h = (&h - &y_h).norm() / y_h.norm().max(1.0);
                let y_t = DVector::from_vec(y_from_eta.eval(t)?);
                let g = self.g_map(t, &y_t)?.value;
                let x_g = self.transition(t, tau)? * &g_tau;
                let lhs_g = (&g - &x_g).norm() / x_g.norm().max(1.0);
                Ok((lhs_h, lhs_g, (&h - &x_t).norm(), (&g - &y_t).norm()))
            })
            .collect::<Result<_>>()?;
        let sup = |k: usize| {
            rows.iter()
                .map(|r| [r.0, r.1, r.2, r.3][k])
                .fold(0.0_f64, f64::max)
        };
        let roundtrip_hg = (self.h_map(tau, &g_tau)?.value - eta).norm();
        let roundtrip_gh = (self.g_map(tau, &h_tau)?.value - xi).norm();
        let tol = self.opts.equivalence_tol;
        let p_hat = self.p_hat();
        let (h_solution, g_solution) = (sup(0), sup(1));
        let (sup_h, sup_g) = (sup(2), sup(3));
        let bounded = p_hat.is_none_or(|p| sup_h <= p + tol && sup_g <= p + tol);
        Ok(EquivalenceReport {
            tau,
            t_grid: t_grid.to_vec(),
            h_solution,
            g_solution,
            roundtrip_hg,
            roundtrip_gh,
            sup_h_minus_id: sup_h,
            sup_g_minus_id: sup_g,
            p_hat,
            tol,
            passed: h_solution <= tol
                && g_solution <= tol
                && roundtrip_hg <= tol
                && roundtrip_gh <= tol
                && bounded,
        })
    }
}

/// Operator norm helper re-exported for report code.
pub fn matrix_norm(m: &DMatrix<f64>) -> f64 {
    op_norm(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::DichotomySpec;
    use crate::linalg::Array3;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scalar_decay() -> (LinearSystemSpec, DichotomySpec) {
        let sys = LinearSystemSpec::constant(DMatrix::from_element(1, 1, -1.0), None).unwrap();
        let spec = DichotomySpec::exponential(DMatrix::from_element(1, 1, 1.0), 1.0, 1.0).unwrap();
        (sys, spec)
    }

    fn forcing(c: f64) -> NonlinearitySpec {
        NonlinearitySpec::new(
            1,
            Arc::new(move |t, _u| DVector::from_element(1, c * (-t).exp())),
            Envelope::exponential(c, -1.0),
            Envelope::zero(),
        )
        .with_jacobian(Arc::new(|_t, _u| DMatrix::zeros(1, 1)))
    }

    fn damped_sine(nu: f64) -> NonlinearitySpec {
        NonlinearitySpec::new(
            1,
            Arc::new(move |t, u| DVector::from_element(1, nu * (-t).exp() * u[0].sin())),
            Envelope::exponential(nu, -1.0),
            Envelope::exponential(nu, -1.0),
        )
        .with_jacobian(Arc::new(move |t, u| {
            DMatrix::from_element(1, 1, nu * (-t).exp() * u[0].cos())
        }))
        .with_hessian(
            Arc::new(move |t, u| Array3::from_vec(1, vec![-nu * (-t).exp() * u[0].sin()])),
            Envelope::exponential(nu, -1.0),
        )
    }

    fn conj(nl: NonlinearitySpec) -> Conjugator {
        let (sys, spec) = scalar_decay();
        Conjugator::new(&sys, &nl, &spec, ConjugacyOptions::default()).unwrap()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn grid_function_is_exact_at_nodes_and_extends_by_envelope() {
        let f = GridFunction::new(
            1,
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 4.0],
            vec![0.0, 2.0, 4.0],
            Envelope::exponential(1.0, -1.0),
        )
        .unwrap();
        assert_eq!(f.eval(1.0)[0], 1.0);
        assert!((f.eval(1.5)[0] - 2.25).abs() < 1e-15);
        assert!((f.eval(3.0)[0] - 4.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(f.sup_norm(), 4.0);
    }

    #[test]
    fn working_grid_contains_tau() {
        let g = working_grid(7.33, 0.05, 10.0);
        assert!(g.contains(&7.33));
        assert!((g.last().unwrap() - 14.66).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn w_star_vanishes_without_perturbation() {
        let c = conj(NonlinearitySpec::zero(1));
        assert_eq!(c.w_star(1.0, 0.5, &v1(3.0)).unwrap().value[0], 0.0);
    }

    #[test]
    fn w_star_scalar_closed_form() {
        let c = conj(forcing(0.1));
        let w = c.w_star(1.0, 1.0, &v1(2.0)).unwrap();
        assert!((w.value[0] + 0.1 * (-1.0f64).exp()).abs() < 1e-9, "{}", w.value[0]);
    }

    #[test]
    fn w_star_saddle_uses_unstable_branch() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 2.0]));
        let sys = LinearSystemSpec::constant(a, None).unwrap();
        let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let spec = DichotomySpec::exponential(p0, 1.0, 2.0).unwrap();
        let nl = NonlinearitySpec::new(
            2,
            Arc::new(|t, _u| DVector::from_element(2, 0.05 * (-t).exp())),
            Envelope::exponential(0.05 * 2f64.sqrt(), -1.0),
            Envelope::zero(),
        );
        let c = Conjugator::new(&sys, &nl, &spec, ConjugacyOptions::default()).unwrap();
        let w = c.w_star(0.0, 0.7, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(w.value[0].abs() < 1e-12);
        assert!((w.value[1] - 0.05 / 3.0).abs() < 1e-9, "{}", w.value[1]);
        let g = c.g_map(0.0, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((g.value[1] - (1.0 + 0.05 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn t_is_constant_for_state_independent_forcing() {
        let c = conj(forcing(0.1));
        let nodes = working_grid(1.0, 0.05, 10.0);
        let zero = GridFunction::zeros(1, nodes.clone(), Envelope::zero()).unwrap();
        let vals: Vec<f64> = nodes.iter().map(|s| s.sin()).collect();
        let other = GridFunction::new(1, nodes.clone(), vals.clone(), vals, Envelope::zero()).unwrap();
        let (a, _, _) = c.apply_t(&zero, 1.0, &v1(2.0)).unwrap();
        let (b, _, _) = c.apply_t(&other, 1.0, &v1(2.0)).unwrap();
        assert_eq!(a.sup_distance(&b), 0.0);
    }

    #[test]
    fn z_star_iteration_counts() {
        let c = conj(NonlinearitySpec::zero(1));
        assert_eq!(c.z_star(1.0, &v1(2.0)).unwrap().1.iterations, 1);
        let c = conj(forcing(0.1));
        let (z, stats) = c.z_star(1.0, &v1(2.0)).unwrap();
        assert_eq!(stats.iterations, 2);
        let want = 0.1 * (-1.0f64).exp();
        assert!((z.eval(1.0)[0] - want).abs() < 1e-9);
        for &t in &[0.3, 2.0, 5.5] {
            assert!((z.eval(t)[0] - 0.1 * t * (-t as f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn h_and_g_closed_form() {
        let c = conj(forcing(0.1));
        let h = c.h_map(1.0, &v1(2.0)).unwrap();
        assert!((h.value[0] - 2.036_787_9).abs() < 1e-6);
        let g = c.g_map(1.0, &v1(2.0)).unwrap();
        assert!((g.value[0] - 1.963_212_1).abs() < 1e-6);
        let via = c.g_map_via_origin(1.0, &v1(2.0)).unwrap();
        assert!((via[0] - g.value[0]).abs() < 1e-6);
    }

    #[test]
    fn zero_is_fixed_when_f_vanishes_at_origin() {
        let c = conj(damped_sine(0.1));
        for &t in &[0.0, 1.0, 4.0] {
            assert_eq!(c.h_map(t, &v1(0.0)).unwrap().value[0], 0.0);
        }
    }

    #[test]
    fn refuses_without_contraction() {
        let c = conj(damped_sine(30.0));
        assert!(c.q_hat().unwrap() >= 1.0);
        assert!(matches!(c.z_star(0.0, &v1(1.0)), Err(Error::NotContracting { .. })));
    }

    #[test]
    fn z_star_flow_compatibility() {
        let c = conj(damped_sine(0.1));
        let (tau, xi) = (0.5, v1(1.2));
        let (z, _) = c.z_star(tau, &xi).unwrap();
        for &s in &[0.0, 1.3, 3.0] {
            let xs = c.transition(s, tau).unwrap() * &xi;
            let (zs, _) = c.z_star(s, &xs).unwrap();
            for &t in &[0.7, 2.0] {
                assert!((z.eval(t)[0] - zs.eval(t)[0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn equivalence_residuals_on_damped_sine() {
        let c = conj(damped_sine(0.1));
        let grid: Vec<f64> = (0..=5).map(|i| i as f64).collect();
        let r = c.check_equivalence(0.0, &v1(1.0), &v1(1.0), &grid).unwrap();
        assert!(r.passed, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn t_contracts_with_ratio_below_q_hat(seed in 0u64..1000) {
            let c = conj(damped_sine(0.1));
            let nodes = working_grid(1.0, 0.05, 10.0);
            let make = |k: f64| {
                let vals: Vec<f64> = nodes.iter().map(|s| (k * s + seed as f64).sin() * 2.0).collect();
                let der: Vec<f64> = nodes.iter().map(|s| 2.0 * k * (k * s + seed as f64).cos()).collect();
                GridFunction::new(1, nodes.clone(), vals, der, Envelope::zero()).unwrap()
            };
            let (phi, psi) = (make(0.7), make(1.9));
            let (a, _, _) = c.apply_t(&phi, 1.0, &v1(0.5)).unwrap();
            let (b, _, _) = c.apply_t(&psi, 1.0, &v1(0.5)).unwrap();
            let ratio = a.sup_distance(&b) / phi.sup_distance(&psi);
            prop_assert!(ratio <= 0.037, "ratio {}", ratio);
        }
    }
}
