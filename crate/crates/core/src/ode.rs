//! Adaptive Dormand–Prince 5(4) integrator with dense cubic Hermite output.
//!
//! Integration toward smaller times is done on the reversed-time system
//! `dy/dσ = -f(-σ, y)`, so the stepping core only ever moves forward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step control for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Largest step taken. Stored trajectories are interpolated, so this
    /// also bounds the Hermite interpolation error.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            h_max: 0.02,
            max_steps: 2_000_000,
        }
    }
}

impl OdeOptions {
    /// Same tolerances, no step cap (endpoint-only evaluations).
    pub fn endpoint(&self) -> Self {
        Self {
            h_max: f64::INFINITY,
            ..*self
        }
    }
}

/// How the flat state of a trajectory is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    /// Column-major `rows × cols`.
    Matrix(usize, usize),
    /// Row-major `d × d × d`, see [`crate::linalg::Array3`].
    Array3(usize),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) | Shape::Flat(n) => n,
            Shape::Matrix(r, c) => r * c,
            Shape::Array3(d) => d * d * d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solution samples with cubic Hermite interpolation between them.
///
/// Samples are strictly increasing in time and evaluation at a sample time
/// returns the stored state exactly. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    origin_time: f64,
    origin_state: Vec<f64>,
    shape: Shape,
    times: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl Trajectory {
    fn n(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn origin(&self) -> (f64, &[f64]) {
        (self.origin_time, &self.origin_state)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    pub fn sample(&self, i: usize) -> (f64, &[f64]) {
        let n = self.n();
        (self.times[i], &self.values[i * n..(i + 1) * n])
    }

    pub fn sample_derivative(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.derivs[i * n..(i + 1) * n]
    }

    /// Restricts to components `range` (e.g. the variational block of a
    /// joint state), relabelling the shape.
    pub fn project(&self, start: usize, shape: Shape) -> Trajectory {
        let n = self.n();
        let m = shape.len();
        let pick = |src: &[f64]| -> Vec<f64> {
            src.chunks(n)
                .flat_map(|row| row[start..start + m].iter().copied())
                .collect()
        };
        Trajectory {
            origin_time: self.origin_time,
            origin_state: self.origin_state[start..start + m].to_vec(),
            shape,
            times: self.times.clone(),
            values: pick(&self.values),
            derivs: pick(&self.derivs),
        }
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.span();
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::Domain(format!(
                "time {t} outside trajectory span [{lo}, {hi}]"
            )));
        }
        let idx = self.times.partition_point(|&x| x <= t);
        Ok(idx.saturating_sub(1).min(self.times.len().saturating_sub(2)))
    }

    /// State at `t` written into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.n();
        if self.times.len() == 1 {
            out.copy_from_slice(&self.values[..n]);
            return Ok(());
        }
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let y0 = &self.values[i * n..(i + 1) * n];
        let y1 = &self.values[(i + 1) * n..(i + 2) * n];
        if t == t0 {
            out.copy_from_slice(y0);
            return Ok(());
        }
        if t == t1 {
            out.copy_from_slice(y1);
            return Ok(());
        }
        let f0 = &self.derivs[i * n..(i + 1) * n];
        let f1 = &self.derivs[(i + 1) * n..(i + 2) * n];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for k in 0..n {
            out[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Time derivative of the interpolant.
    pub fn eval_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.n();
        if self.times.len() == 1 {
            return Ok(self.derivs[..n].to_vec());
        }
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let y0 = &self.values[i * n..(i + 1) * n];
        let y1 = &self.values[(i + 1) * n..(i + 2) * n];
        let f0 = &self.derivs[i * n..(i + 1) * n];
        let f1 = &self.derivs[(i + 1) * n..(i + 2) * n];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        Ok((0..n)
            .map(|k| d00 * y0[k] + d10 * f0[k] + d01 * y1[k] + d11 * f1[k])
            .collect())
    }

    /// Joins a backward piece (ending at the origin) and a forward piece
    /// (starting there) into one trajectory.
    fn join(backward: Trajectory, forward: Trajectory) -> Trajectory {
        let mut out = backward;
        let n = out.n();
        // Both pieces share the origin sample; keep the forward copy.
        out.times.pop();
        out.values.truncate(out.values.len() - n);
        out.derivs.truncate(out.derivs.len() - n);
        out.times.extend_from_slice(&forward.times);
        out.values.extend_from_slice(&forward.values);
        out.derivs.extend_from_slice(&forward.derivs);
        out
    }
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn scaled_rms(e: &[f64], y0: &[f64], y1: &[f64], opts: &OdeOptions) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    let sum: f64 = e
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(&ei, (&a, &b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (ei / sc).powi(2)
        })
        .sum();
    (sum / e.len() as f64).sqrt()
}

fn initial_step<F>(rhs: &F, t: f64, y: &[f64], f0: &[f64], opts: &OdeOptions) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let d0 = scaled_rms(y, y, y, opts);
    let d1 = scaled_rms(f0, y, y, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    rhs(t + h0, &y1, &mut f1);
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_rms(&df, y, y, opts) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.h_max)
}

/// Integrates forward from `a` to `b > a`, landing exactly on every stop.
fn integrate_forward<F>(
    rhs: &F,
    a: f64,
    y0: &[f64],
    b: f64,
    stops: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut times = vec![a];
    let mut values = y0.to_vec();
    let mut f = vec![0.0; n];
    rhs(a, y0, &mut f);
    let mut derivs = f.clone();
    if b <= a {
        return Ok((times, values, derivs));
    }
    let mut stops: Vec<f64> = stops.iter().copied().filter(|&s| s > a && s < b).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(b);

    let fail = |at: f64, reason: &str| Error::Integrator {
        from: a,
        to: b,
        at,
        reason: reason.to_string(),
    };

    let mut t = a;
    let mut y = y0.to_vec();
    let mut h = initial_step(rhs, t, &y, &f, opts);
    let mut k = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut steps = 0usize;
    let mut stop_idx = 0usize;

    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        let remaining = target - t;
        if remaining <= 1e-14 * (1.0 + t.abs()) {
            stop_idx += 1;
            continue;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(fail(t, "maximum number of steps exceeded"));
        }
        let mut h_try = h.min(opts.h_max);
        let landing = h_try >= remaining * (1.0 - 1e-12);
        if landing {
            h_try = remaining;
        } else if 2.0 * h_try > remaining {
            // avoid a sliver step just before the stop
            h_try = 0.5 * remaining;
        }
        if h_try < 1e-13 * (1.0 + t.abs()) {
            return Err(fail(t, "step size underflow"));
        }

        k[0].copy_from_slice(&f);
        let stage = |coef: &[(usize, f64)], out: &mut Vec<f64>, k: &Vec<Vec<f64>>| {
            for i in 0..n {
                let mut acc = y[i];
                for &(j, c) in coef {
                    acc += h_try * c * k[j][i];
                }
                out[i] = acc;
            }
        };
        stage(&[(0, A21)], &mut ytmp, &k);
        rhs(t + C2 * h_try, &ytmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &mut ytmp, &k);
        rhs(t + C3 * h_try, &ytmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &mut ytmp, &k);
        rhs(t + C4 * h_try, &ytmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &mut ytmp, &k);
        rhs(t + C5 * h_try, &ytmp, &mut k[4]);
        stage(
            &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)],
            &mut ytmp,
            &k,
        );
        rhs(t + h_try, &ytmp, &mut k[5]);
        stage(
            &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)],
            &mut ynew,
            &k,
        );
        let t_new = if landing { target } else { t + h_try };
        rhs(t_new, &ynew, &mut k[6]);
        for i in 0..n {
            err[i] = h_try
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let en = scaled_rms(&err, &y, &ynew, opts);
        if !en.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            if h_try < 1e-10 {
                return Err(fail(t, "non-finite state"));
            }
            h = 0.1 * h_try;
            continue;
        }
        let factor = if en == 0.0 {
            5.0
        } else {
            (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
        };
        if en <= 1.0 {
            t = t_new;
            y.copy_from_slice(&ynew);
            f.copy_from_slice(&k[6]);
            times.push(t);
            values.extend_from_slice(&y);
            derivs.extend_from_slice(&f);
            h = h_try * factor;
            if landing {
                stop_idx += 1;
            }
        } else {
            h = h_try * factor.min(1.0);
        }
    }
    Ok((times, values, derivs))
}

/// Integrates `y' = rhs(t, y)` from `(t0, y0)` to `t1` in either direction.
///
/// The result always has increasing sample times; every time in `stops`
/// lying between `t0` and `t1` is hit exactly.
pub fn integrate<F>(
    rhs: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    stops: &[f64],
    shape: Shape,
    opts: &OdeOptions,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    assert_eq!(shape.len(), y0.len(), "shape does not match state length");
    if t1 >= t0 {
        let (times, values, derivs) = integrate_forward(&rhs, t0, y0, t1, stops, opts)?;
        return Ok(Trajectory {
            origin_time: t0,
            origin_state: y0.to_vec(),
            shape,
            times,
            values,
            derivs,
        });
    }
    // Reversed-time system on σ = -t.
    let reversed = |sigma: f64, y: &[f64], out: &mut [f64]| {
        rhs(-sigma, y, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
    };
    let rstops: Vec<f64> = stops.iter().map(|s| -s).collect();
    let (times, values, derivs) =
        integrate_forward(&reversed, -t0, y0, -t1, &rstops, opts).map_err(|e| match e {
            Error::Integrator { at, reason, .. } => Error::Integrator {
                from: t0,
                to: t1,
                at: -at,
                reason,
            },
            other => other,
        })?;
    let n = y0.len();
    let m = times.len();
    let mut out_t = Vec::with_capacity(m);
    let mut out_v = Vec::with_capacity(m * n);
    let mut out_d = Vec::with_capacity(m * n);
    for i in (0..m).rev() {
        out_t.push(-times[i]);
        out_v.extend_from_slice(&values[i * n..(i + 1) * n]);
        out_d.extend(derivs[i * n..(i + 1) * n].iter().map(|v| -v));
    }
    Ok(Trajectory {
        origin_time: t0,
        origin_state: y0.to_vec(),
        shape,
        times: out_t,
        values: out_v,
        derivs: out_d,
    })
}

/// Integrates from `(t0, y0)` to cover `[lo, hi]` (with `lo ≤ t0 ≤ hi`),
/// backward and forward as needed.
#[allow(clippy::too_many_arguments)]
pub fn integrate_span<F>(
    rhs: F,
    t0: f64,
    y0: &[f64],
    lo: f64,
    hi: f64,
    stops: &[f64],
    shape: Shape,
    opts: &OdeOptions,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let lo = lo.min(t0);
    let hi = hi.max(t0);
    if lo == t0 {
        return integrate(&rhs, t0, y0, hi, stops, shape, opts);
    }
    let back = integrate(&rhs, t0, y0, lo, stops, shape, opts)?;
    if hi == t0 {
        return Ok(back);
    }
    let fwd = integrate(&rhs, t0, y0, hi, stops, shape, opts)?;
    Ok(Trajectory::join(back, fwd))
}

/// Endpoint value only.
pub fn integrate_to<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let traj = integrate(rhs, t0, y0, t1, &[], Shape::Flat(n), &opts.endpoint())?;
    let idx = if t1 >= t0 { traj.len() - 1 } else { 0 };
    Ok(traj.sample(idx).1.to_vec())
}
