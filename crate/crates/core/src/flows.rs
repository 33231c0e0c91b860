//! Linear transition matrices, perturbed solutions and their first and
//! second variational derivatives, integrated forward or backward in time.

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Array3};
use crate::ode::{self, OdeOptions, Shape, Trajectory};

pub type CoefficientFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(f64, &DVector<f64>) -> Array3 + Send + Sync>;

/// The linear system `x' = A(t) x` on `t ≥ 0`.
#[derive(Clone)]
pub struct LinearSystemSpec {
    dimension: usize,
    coefficient: CoefficientFn,
    uniform_bound: f64,
}

impl std::fmt::Debug for LinearSystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSystemSpec")
            .field("dimension", &self.dimension)
            .field("uniform_bound", &self.uniform_bound)
            .finish_non_exhaustive()
    }
}

/// Sampled check of the standing assumptions on `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemCheck {
    pub max_norm: f64,
    pub max_inverse_norm: f64,
    pub min_abs_det: f64,
    pub uniform_bound: f64,
    pub samples: usize,
    pub invertible: bool,
    pub bounded: bool,
}

impl LinearSystemSpec {
    pub fn new(dimension: usize, coefficient: CoefficientFn, uniform_bound: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(uniform_bound > 0.0 && uniform_bound.is_finite()) {
            return Err(Error::Config(format!(
                "uniform bound M must be positive and finite, got {uniform_bound}"
            )));
        }
        let a0 = coefficient(0.0);
        if a0.nrows() != dimension || a0.ncols() != dimension {
            return Err(Error::Config(format!(
                "A(0) is {}x{}, expected {dimension}x{dimension}",
                a0.nrows(),
                a0.ncols()
            )));
        }
        Ok(Self {
            dimension,
            coefficient,
            uniform_bound,
        })
    }

    /// Constant coefficient matrix; `M` defaults to `max(‖A‖, ‖A⁻¹‖)`.
    pub fn constant(a: DMatrix<f64>, uniform_bound: Option<f64>) -> Result<Self> {
        let d = a.nrows();
        let m = match uniform_bound {
            Some(m) => m,
            None => {
                let inv = a.clone().try_inverse().ok_or_else(|| {
                    Error::Config("constant coefficient matrix is singular".into())
                })?;
                op_norm(&a).max(op_norm(&inv))
            }
        };
        Self::new(d, Arc::new(move |_t| a.clone()), m)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn uniform_bound(&self) -> f64 {
        self.uniform_bound
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        (self.coefficient)(t)
    }

    /// Checks invertibility and `‖A‖, ‖A⁻¹‖ ≤ M` at the given times.
    pub fn validate(&self, times: &[f64]) -> SystemCheck {
        let mut max_norm = 0.0_f64;
        let mut max_inv = 0.0_f64;
        let mut min_det = f64::INFINITY;
        let mut invertible = true;
        for &t in times {
            let a = self.a(t);
            max_norm = max_norm.max(op_norm(&a));
            let det = a.determinant().abs();
            min_det = min_det.min(det);
            match a.try_inverse() {
                Some(inv) if det > f64::EPSILON * op_norm(&self.a(t)).powi(self.dimension as i32) => {
                    max_inv = max_inv.max(op_norm(&inv));
                }
                _ => {
                    invertible = false;
                    max_inv = f64::INFINITY;
                }
            }
        }
        let slack = 1.0 + 1e-12;
        SystemCheck {
            max_norm,
            max_inverse_norm: max_inv,
            min_abs_det: min_det,
            uniform_bound: self.uniform_bound,
            samples: times.len(),
            invertible,
            bounded: max_norm <= self.uniform_bound * slack && max_inv <= self.uniform_bound * slack,
        }
    }
}

/// The perturbation `f(t, u)` with its `u`-derivatives and envelopes.
#[derive(Clone)]
pub struct NonlinearitySpec {
    dimension: usize,
    f: VectorField,
    df: Option<JacobianFn>,
    d2f: Option<HessianFn>,
    /// `|f(s, u)| ≤ 𝔲(s)`.
    pub u_env: Envelope,
    /// Lipschitz envelope, `‖∂f/∂u(s, u)‖ ≤ 𝔳(s)`.
    pub v_env: Envelope,
    /// `‖∂²f/∂u²(s, u)‖ ≤ 𝔙(s)`.
    pub big_v_env: Option<Envelope>,
}

impl std::fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearitySpec")
            .field("dimension", &self.dimension)
            .field("has_df", &self.df.is_some())
            .field("has_d2f", &self.d2f.is_some())
            .field("u_env", &self.u_env)
            .field("v_env", &self.v_env)
            .field("big_v_env", &self.big_v_env)
            .finish()
    }
}

/// Worst sampled envelope ratios; each must be ≤ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub u_ratio: f64,
    pub v_ratio: f64,
    pub big_v_ratio: Option<f64>,
    pub samples: usize,
    pub passed: bool,
}

fn ratio(value: f64, bound: f64) -> f64 {
    if value <= 1e-300 {
        0.0
    } else if bound <= 0.0 {
        f64::INFINITY
    } else {
        value / bound
    }
}

impl NonlinearitySpec {
    pub fn new(dimension: usize, f: VectorField, u_env: Envelope, v_env: Envelope) -> Self {
        Self {
            dimension,
            f,
            df: None,
            d2f: None,
            u_env,
            v_env,
            big_v_env: None,
        }
    }

    pub fn with_jacobian(mut self, df: JacobianFn) -> Self {
        self.df = Some(df);
        self
    }

    pub fn with_hessian(mut self, d2f: HessianFn, big_v_env: Envelope) -> Self {
        self.d2f = Some(d2f);
        self.big_v_env = Some(big_v_env);
        self
    }

    /// `f ≡ 0` with all derivatives and envelopes zero.
    pub fn zero(dimension: usize) -> Self {
        Self::new(
            dimension,
            Arc::new(move |_t, _u| DVector::zeros(dimension)),
            Envelope::zero(),
            Envelope::zero(),
        )
        .with_jacobian(Arc::new(move |_t, _u| DMatrix::zeros(dimension, dimension)))
        .with_hessian(Arc::new(move |_t, _u| Array3::zeros(dimension)), Envelope::zero())
    }

    /// `c · f`, with envelopes scaled alike.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c >= 0.0, "scale must be nonnegative");
        let f = self.f.clone();
        let mut out = Self::new(
            self.dimension,
            Arc::new(move |t, u| f(t, u) * c),
            self.u_env.scale(c),
            self.v_env.scale(c),
        );
        if let Some(df) = self.df.clone() {
            out.df = Some(Arc::new(move |t, u| df(t, u) * c));
        }
        if let (Some(d2f), Some(env)) = (self.d2f.clone(), self.big_v_env.as_ref()) {
            out.d2f = Some(Arc::new(move |t, u| {
                let a = d2f(t, u);
                let d = a.dim();
                Array3::from_vec(d, a.as_slice().iter().map(|v| v * c).collect())
            }));
            out.big_v_env = Some(env.scale(c));
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn f(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, u)
    }

    pub fn df(&self, t: f64, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.df
            .as_ref()
            .map(|df| df(t, u))
            .ok_or(Error::Capability("the Jacobian ∂f/∂u"))
    }

    pub fn d2f(&self, t: f64, u: &DVector<f64>) -> Result<Array3> {
        self.d2f
            .as_ref()
            .map(|d2f| d2f(t, u))
            .ok_or(Error::Capability("the second derivative ∂²f/∂u²"))
    }

    pub fn has_jacobian(&self) -> bool {
        self.df.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.d2f.is_some()
    }

    /// Samples the envelope inequalities on a 41×41 `(s, u)` grid over
    /// `[s_lo, s_hi] × [u_lo, u_hi]^d`. In more than one dimension the `u`
    /// samples are a Halton sequence in the box.
    pub fn validate(&self, s_range: (f64, f64), u_box: (f64, f64)) -> EnvelopeCheck {
        const N: usize = 41;
        let d = self.dimension;
        let points: Vec<DVector<f64>> = (0..N)
            .map(|i| {
                if d == 1 {
                    let x = u_box.0 + (u_box.1 - u_box.0) * i as f64 / (N - 1) as f64;
                    DVector::from_element(1, x)
                } else {
                    DVector::from_fn(d, |k, _| {
                        let x = halton(i + 1, PRIMES[k % PRIMES.len()]);
                        u_box.0 + (u_box.1 - u_box.0) * x
                    })
                }
            })
            .collect();
        let mut u_ratio = 0.0_f64;
        let mut v_ratio = 0.0_f64;
        let mut big_v_ratio: Option<f64> = self.d2f.as_ref().map(|_| 0.0);
        for i in 0..N {
            let s = s_range.0 + (s_range.1 - s_range.0) * i as f64 / (N - 1) as f64;
            for (j, u) in points.iter().enumerate() {
                let fu = self.f(s, u);
                u_ratio = u_ratio.max(ratio(fu.norm(), self.u_env.eval(s)));
                match &self.df {
                    Some(df) => {
                        v_ratio = v_ratio.max(ratio(op_norm(&df(s, u)), self.v_env.eval(s)));
                    }
                    None => {
                        let other = &points[(j + 1) % N];
                        let dist = (u - other).norm();
                        if dist > 0.0 {
                            let lip = (fu - self.f(s, other)).norm() / dist;
                            v_ratio = v_ratio.max(ratio(lip, self.v_env.eval(s)));
                        }
                    }
                }
                if let (Some(d2f), Some(env), Some(r)) =
                    (&self.d2f, &self.big_v_env, big_v_ratio.as_mut())
                {
                    *r = r.max(ratio(d2f(s, u).norm(), env.eval(s)));
                }
            }
        }
        let tol = 1.0 + 1e-12;
        EnvelopeCheck {
            u_ratio,
            v_ratio,
            big_v_ratio,
            samples: N * N,
            passed: u_ratio <= tol && v_ratio <= tol && big_v_ratio.is_none_or(|r| r <= tol),
        }
    }
}

const PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn check_time(t: f64, what: &str) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} = {t} must be a finite time >= 0")))
    }
}

fn mat_from(slice: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, slice)
}

/// `X(t, s)`: the transition matrix of `x' = A(t)x` with `X(s, s) = I`.
pub fn transition_matrix(
    sys: &LinearSystemSpec,
    t: f64,
    s: f64,
    opts: &OdeOptions,
) -> Result<DMatrix<f64>> {
    check_time(t, "t")?;
    check_time(s, "s")?;
    let d = sys.dimension();
    if t == s {
        return Ok(DMatrix::identity(d, d));
    }
    let rhs = |r: f64, x: &[f64], out: &mut [f64]| {
        let prod = sys.a(r) * mat_from(x, d);
        out.copy_from_slice(prod.as_slice());
    };
    let id = DMatrix::<f64>::identity(d, d);
    let end = ode::integrate_to(rhs, s, id.as_slice(), t, opts)?;
    Ok(mat_from(&end, d))
}

fn span_of(tau: f64, targets: &[f64]) -> Result<(f64, f64)> {
    check_time(tau, "tau")?;
    let mut lo = tau;
    let mut hi = tau;
    for &t in targets {
        check_time(t, "target")?;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    Ok((lo, hi))
}

/// `t ↦ y(t, τ, η)` for `y' = A(t)y + f(t, y)`, hitting every target.
pub fn solve_nonlinear(
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    tau: f64,
    eta: &DVector<f64>,
    targets: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let (lo, hi) = span_of(tau, targets)?;
    let d = sys.dimension();
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        let yv = DVector::from_column_slice(y);
        let v = sys.a(t) * &yv + nl.f(t, &yv);
        out.copy_from_slice(v.as_slice());
    };
    ode::integrate_span(rhs, tau, eta.as_slice(), lo, hi, targets, Shape::Vector(d), opts)
}

/// Order of the variational system carried along with `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariationOrder {
    First,
    Second,
}

/// `y`, `∂y/∂η` and optionally `∂²y/∂η²` integrated jointly from `(τ, η)`.
#[derive(Debug, Clone)]
pub struct VariationalFlow {
    dimension: usize,
    order: VariationOrder,
    joint: Trajectory,
}

impl VariationalFlow {
    pub fn new(
        sys: &LinearSystemSpec,
        nl: &NonlinearitySpec,
        tau: f64,
        eta: &DVector<f64>,
        span: (f64, f64),
        stops: &[f64],
        order: VariationOrder,
        opts: &OdeOptions,
    ) -> Result<Self> {
        if !nl.has_jacobian() {
            return Err(Error::Capability("the Jacobian ∂f/∂u"));
        }
        if order == VariationOrder::Second && !nl.has_hessian() {
            return Err(Error::Capability("the second derivative ∂²f/∂u²"));
        }
        let mut all = stops.to_vec();
        all.push(span.0);
        all.push(span.1);
        let (lo, hi) = span_of(tau, &all)?;
        let d = sys.dimension();
        let n = match order {
            VariationOrder::First => d + d * d,
            VariationOrder::Second => d + d * d + d * d * d,
        };
        let mut y0 = vec![0.0; n];
        y0[..d].copy_from_slice(eta.as_slice());
        for i in 0..d {
            y0[d + i * d + i] = 1.0;
        }
        // Errors inside the right-hand side cannot propagate through the
        // integrator; capabilities were checked above.
        let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
            let yv = DVector::from_column_slice(&y[..d]);
            let a = sys.a(t);
            let dy = &a * &yv + nl.f(t, &yv);
            out[..d].copy_from_slice(dy.as_slice());
            let jac = a + nl.df(t, &yv).expect("jacobian checked");
            let z = mat_from(&y[d..d + d * d], d);
            let dz = &jac * &z;
            out[d..d + d * d].copy_from_slice(dz.as_slice());
            if order == VariationOrder::Second {
                let w = Array3::from_vec(d, y[d + d * d..].to_vec());
                let h = nl.d2f(t, &yv).expect("hessian checked");
                let lin = w.left_mul(&jac);
                let src = h.contract_both(&z);
                for (k, (a, b)) in lin.as_slice().iter().zip(src.as_slice()).enumerate() {
                    out[d + d * d + k] = a + b;
                }
            }
        };
        let joint = ode::integrate_span(rhs, tau, &y0, lo, hi, stops, Shape::Flat(n), opts)?;
        Ok(Self {
            dimension: d,
            order,
            joint,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        self.joint.span()
    }

    pub fn state(&self, s: f64) -> Result<(DVector<f64>, DMatrix<f64>, Option<Array3>)> {
        let d = self.dimension;
        let v = self.joint.eval(s)?;
        let y = DVector::from_column_slice(&v[..d]);
        let z = mat_from(&v[d..d + d * d], d);
        let w = match self.order {
            VariationOrder::Second => Some(Array3::from_vec(d, v[d + d * d..].to_vec())),
            VariationOrder::First => None,
        };
        Ok((y, z, w))
    }

    pub fn solution(&self) -> Trajectory {
        self.joint.project(0, Shape::Vector(self.dimension))
    }

    pub fn first(&self) -> Trajectory {
        let d = self.dimension;
        self.joint.project(d, Shape::Matrix(d, d))
    }

    pub fn second(&self) -> Option<Trajectory> {
        let d = self.dimension;
        match self.order {
            VariationOrder::Second => Some(self.joint.project(d + d * d, Shape::Array3(d))),
            VariationOrder::First => None,
        }
    }
}

/// `t ↦ ∂y/∂η(t, τ, η)` from `z' = [A(t) + ∂f/∂u(t, y)] z`, `z(τ) = I`.
pub fn first_variation(
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    tau: f64,
    eta: &DVector<f64>,
    targets: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let (lo, hi) = span_of(tau, targets)?;
    let flow = VariationalFlow::new(sys, nl, tau, eta, (lo, hi), targets, VariationOrder::First, opts)?;
    Ok(flow.first())
}

/// `t ↦ ∂²y/∂η²(t, τ, η)`, zero at `t = τ`.
pub fn second_variation(
    sys: &LinearSystemSpec,
    nl: &NonlinearitySpec,
    tau: f64,
    eta: &DVector<f64>,
    targets: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let (lo, hi) = span_of(tau, targets)?;
    let flow =
        VariationalFlow::new(sys, nl, tau, eta, (lo, hi), targets, VariationOrder::Second, opts)?;
    Ok(flow.second().expect("second order requested"))
}

/// `X(t, 0)` and `X(0, t)` tabulated on `[0, horizon]`, so that
/// `X(t, s) = X(t, 0) X(0, s)` is available without re-integrating.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    dimension: usize,
    horizon: f64,
    joint: Trajectory,
}

impl FundamentalSolution {
    pub fn new(sys: &LinearSystemSpec, horizon: f64, opts: &OdeOptions) -> Result<Self> {
        check_time(horizon, "horizon")?;
        let d = sys.dimension();
        let dd = d * d;
        let mut y0 = vec![0.0; 2 * dd];
        for i in 0..d {
            y0[i * d + i] = 1.0;
            y0[dd + i * d + i] = 1.0;
        }
        let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
            let a = sys.a(t);
            let fwd = &a * mat_from(&y[..dd], d);
            let inv = -(mat_from(&y[dd..], d) * &a);
            out[..dd].copy_from_slice(fwd.as_slice());
            out[dd..].copy_from_slice(inv.as_slice());
        };
        let joint = ode::integrate(rhs, 0.0, &y0, horizon, &[], Shape::Flat(2 * dd), opts)?;
        Ok(Self {
            dimension: d,
            horizon,
            joint,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `(X(t, 0), X(0, t))`.
    pub fn at(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dimension;
        let v = self.joint.eval(t)?;
        Ok((mat_from(&v[..d * d], d), mat_from(&v[d * d..], d)))
    }

    pub fn forward(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.at(t)?.0)
    }

    pub fn inverse(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.at(t)?.1)
    }

    /// `X(t, s)`.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        Ok(self.forward(t)? * self.inverse(s)?)
    }
}

/// Thread-safe [`FundamentalSolution`] that grows its horizon on demand.
#[derive(Debug)]
pub struct FundamentalCache {
    sys: LinearSystemSpec,
    opts: OdeOptions,
    current: RwLock<Option<Arc<FundamentalSolution>>>,
}

impl FundamentalCache {
    pub fn new(sys: LinearSystemSpec, opts: OdeOptions) -> Self {
        Self {
            sys,
            opts,
            current: RwLock::new(None),
        }
    }

    /// A tabulation covering at least `[0, horizon]`.
    pub fn covering(&self, horizon: f64) -> Result<Arc<FundamentalSolution>> {
        if let Some(fs) = self.current.read().expect("cache lock").as_ref() {
            if fs.horizon() >= horizon {
                return Ok(fs.clone());
            }
        }
        let mut guard = self.current.write().expect("cache lock");
        if let Some(fs) = guard.as_ref() {
            if fs.horizon() >= horizon {
                return Ok(fs.clone());
            }
        }
        let grown = guard
            .as_ref()
            .map_or(horizon, |fs| horizon.max(2.0 * fs.horizon()));
        let fs = Arc::new(FundamentalSolution::new(&self.sys, grown.max(1.0), &self.opts)?);
        *guard = Some(fs.clone());
        Ok(fs)
    }
}
