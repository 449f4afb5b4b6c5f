//! Convex-analysis kernel: superlinear convex potentials `k`, their
//! gradients `gamma = ∇k`, convex conjugates `k*`, resolvents
//! `(I + λγ)⁻¹`, Yosida maps `γ_λ`, and Moreau envelopes `k_λ`.
//!
//! The exact identities among these objects (Fenchel-Young equality at
//! `r = γ(y)`, the resolvent identity
//! `k(J_λ x) + k*(γ_λ(x)) = γ_λ(x)·x − λ|γ_λ(x)|²`) double as oracles
//! for everything downstream, so the solvers here are driven well below
//! the tolerances at which those identities are asserted.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Acceptance bound for resolvent residuals, relative to `1 + |x|`. The
/// Newton iteration itself drives toward machine precision (the Yosida
/// identity divides the residual by λ); this is only the point at which a
/// solve is declared failed.
pub const RESOLVENT_RTOL: f64 = 1e-10;
const MAX_NEWTON: usize = 100;
const MAX_BISECT: usize = 200;

// ---------------------------------------------------------------------------
// scalar profiles
// ---------------------------------------------------------------------------

/// Radial profile `φ: ℝ₊ → ℝ₊` of a convex potential, with `φ(0) = 0` and
/// nondecreasing slope. `k(x) = φ(|x|)` for the radial built-ins; the
/// anisotropic built-in applies one profile per coordinate.
pub trait ScalarProfile: Send + Sync {
    fn value(&self, s: f64) -> f64;
    fn slope(&self, s: f64) -> f64;
    fn curvature(&self, s: f64) -> f64;
    /// Closed-form scalar conjugate `φ*(t) = sup_{s≥0} (ts − φ(s))`, if known.
    fn conjugate(&self, _t: f64) -> Option<f64> {
        None
    }
    /// Closed-form solution of `s + λ φ'(s) = r`, if known.
    fn resolvent(&self, _lambda: f64, _r: f64) -> Option<f64> {
        None
    }
    /// `Some(c)` when `φ'(s) = c·s` exactly (quadratic profile).
    fn linear_slope(&self) -> Option<f64> {
        None
    }
}

/// `φ(s) = s^p / p`, `p > 1`. The p-Laplace profile.
pub struct PowerProfile {
    pub p: f64,
}

impl ScalarProfile for PowerProfile {
    fn value(&self, s: f64) -> f64 {
        s.powf(self.p) / self.p
    }
    fn slope(&self, s: f64) -> f64 {
        s.powf(self.p - 1.0)
    }
    fn curvature(&self, s: f64) -> f64 {
        if s == 0.0 {
            // limit of (p-1) s^{p-2} at 0
            if self.p == 2.0 {
                1.0
            } else if self.p > 2.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.p - 1.0) * s.powf(self.p - 2.0)
        }
    }
    fn conjugate(&self, t: f64) -> Option<f64> {
        let q = self.p / (self.p - 1.0);
        Some(t.powf(q) / q)
    }
    fn resolvent(&self, lambda: f64, r: f64) -> Option<f64> {
        if self.p == 2.0 {
            Some(r / (1.0 + lambda))
        } else if self.p == 3.0 {
            // s + λ s² = r, positive root
            Some(if r == 0.0 {
                0.0
            } else {
                2.0 * r / (1.0 + (1.0 + 4.0 * lambda * r).sqrt())
            })
        } else {
            None
        }
    }
    fn linear_slope(&self) -> Option<f64> {
        if self.p == 2.0 {
            Some(1.0)
        } else {
            None
        }
    }
}

/// `φ(s) = cosh s − 1`; super-polynomial growth.
pub struct CoshProfile;

impl ScalarProfile for CoshProfile {
    fn value(&self, s: f64) -> f64 {
        s.cosh() - 1.0
    }
    fn slope(&self, s: f64) -> f64 {
        s.sinh()
    }
    fn curvature(&self, s: f64) -> f64 {
        s.cosh()
    }
    fn conjugate(&self, t: f64) -> Option<f64> {
        // sup at s = asinh t
        Some(t * t.asinh() - (1.0 + t * t).sqrt() + 1.0)
    }
}

/// `φ(s) = exp(s²/2) − 1`; grows faster than any polynomial.
pub struct ExpSquareProfile;

impl ScalarProfile for ExpSquareProfile {
    fn value(&self, s: f64) -> f64 {
        (0.5 * s * s).exp_m1()
    }
    fn slope(&self, s: f64) -> f64 {
        s * (0.5 * s * s).exp()
    }
    fn curvature(&self, s: f64) -> f64 {
        (1.0 + s * s) * (0.5 * s * s).exp()
    }
}

// ---------------------------------------------------------------------------
// scalar solves
// ---------------------------------------------------------------------------

/// Safeguarded Newton-bisection for an increasing function with a bracket
/// `f(lo) ≤ 0 ≤ f(hi)`. Newton steps that leave the bracket, or land on a
/// non-finite evaluation, fall back to bisection. Iterates toward
/// `atol_target` (near machine precision — downstream identities divide
/// the residual by λ); only failing `atol_accept` is an error.
#[allow(clippy::too_many_arguments)]
fn solve_increasing(
    op: &'static str,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
    atol_target: f64,
    atol_accept: f64,
) -> Result<f64> {
    let mut s = start.clamp(lo, hi);
    let mut best = s;
    let mut best_res = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let fs = f(s);
        if fs.is_finite() {
            if fs.abs() < best_res {
                best_res = fs.abs();
                best = s;
            }
            if fs.abs() <= atol_target {
                return Ok(s);
            }
            if fs > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let d = df(s);
            let next = s - fs / d;
            s = if d.is_finite() && d > 0.0 && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        } else {
            hi = s;
            s = 0.5 * (lo + hi);
        }
    }
    for _ in 0..MAX_BISECT {
        let fs = f(s);
        if fs.is_finite() {
            if fs.abs() < best_res {
                best_res = fs.abs();
                best = s;
            }
            if fs.abs() <= atol_target {
                return Ok(s);
            }
            if fs > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
        } else {
            hi = s;
        }
        s = 0.5 * (lo + hi);
    }
    if best_res <= atol_accept {
        return Ok(best);
    }
    Err(Error::NonConvergence {
        op,
        iterations: MAX_NEWTON + MAX_BISECT,
        residual: best_res,
    })
}

/// Solves `s + λ φ'(s) = r` for `r ≥ 0` on the always-valid bracket `[0, r]`.
fn radial_resolvent(profile: &dyn ScalarProfile, lambda: f64, r: f64) -> Result<f64> {
    debug_assert!(lambda > 0.0 && r >= 0.0);
    if r == 0.0 {
        return Ok(0.0);
    }
    if !r.is_finite() {
        return Err(Error::NonConvergence {
            op: "resolvent",
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    if let Some(s) = profile.resolvent(lambda, r) {
        return Ok(s);
    }
    solve_increasing(
        "resolvent",
        |s| s + lambda * profile.slope(s) - r,
        |s| 1.0 + lambda * profile.curvature(s),
        0.0,
        r,
        r / (1.0 + lambda), // exact for the quadratic profile
        1e-15 * (1.0 + r),
        RESOLVENT_RTOL * (1.0 + r),
    )
}

/// Solves `φ'(s) = t` for `t ≥ 0`; used by the numeric conjugate. The
/// bracket is grown by doubling, which always terminates for superlinear
/// profiles (overflow to +inf closes the bracket).
fn radial_slope_inverse(profile: &dyn ScalarProfile, t: f64) -> Result<f64> {
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return Ok(0.0);
    }
    if !t.is_finite() {
        return Err(Error::NonConvergence {
            op: "conjugate",
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let mut hi = 1.0;
    let mut grow = 0;
    while profile.slope(hi) < t {
        hi *= 2.0;
        grow += 1;
        if grow > 2000 {
            return Err(Error::NonConvergence {
                op: "conjugate",
                iterations: grow,
                residual: f64::INFINITY,
            });
        }
    }
    solve_increasing(
        "conjugate",
        |s| profile.slope(s) - t,
        |s| profile.curvature(s),
        0.0,
        hi,
        0.5 * hi,
        1e-15 * (1.0 + t),
        RESOLVENT_RTOL * (1.0 + t),
    )
}

/// `φ*(t)` via the closed form when present, else by solving `φ'(s) = t`.
/// The envelope theorem makes the numeric value second-order accurate in
/// the solve residual.
fn scalar_conjugate(profile: &dyn ScalarProfile, t: f64) -> Result<f64> {
    if let Some(v) = profile.conjugate(t) {
        return Ok(v);
    }
    let s = radial_slope_inverse(profile, t)?;
    Ok(t * s - profile.value(s))
}

// ---------------------------------------------------------------------------
// potentials
// ---------------------------------------------------------------------------

/// User-supplied potential given by closures; the resolvent falls back to
/// damped Newton on `y + λγ(y) − x` with a finite-difference Jacobian when
/// no Hessian is registered.
pub struct CustomPotential {
    pub k: ScalarFn,
    pub gamma: VectorFn,
    pub conjugate: Option<ScalarFn>,
    pub resolvent: Option<ResolventFn>,
    pub hessian: Option<VectorFn>,
}

pub type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ResolventFn = Box<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

enum Shape {
    /// `k(x) = φ(|x|)`
    Radial(Arc<dyn ScalarProfile>),
    /// `k(x) = Σ_i φ_i(|x_i|)`; everything decouples per coordinate.
    PerAxis(Vec<Arc<dyn ScalarProfile>>),
    Custom(Arc<CustomPotential>),
}

/// A convex potential `k: ℝⁿ → ℝ₊` with `k(0) = 0`, superlinear at
/// infinity, together with its gradient and the derived convex-analysis
/// maps. Immutable after construction; all operations are pure.
#[derive(Clone)]
pub struct Potential {
    name: String,
    dim: usize,
    shape: Arc<Shape>,
    asymmetry_bound: f64,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Potential({}, dim {})", self.name, self.dim)
    }
}

// max-scaled so magnitudes near the representable limit don't overflow
fn norm(x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = x.iter().map(|v| (v / m) * (v / m)).sum();
    m * s.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Potential {
    pub fn radial(name: impl Into<String>, dim: usize, profile: Arc<dyn ScalarProfile>) -> Self {
        Potential {
            name: name.into(),
            dim,
            shape: Arc::new(Shape::Radial(profile)),
            asymmetry_bound: 1.0,
        }
    }

    /// `k(x) = |x|^p / p`, `p > 1`.
    pub fn p_power(dim: usize, p: f64) -> Result<Self> {
        if p <= 1.0 || p.is_nan() {
            return Err(Error::Config(format!("p_power requires p > 1, got {p}")));
        }
        Ok(Self::radial(format!("p_power({p})"), dim, Arc::new(PowerProfile { p })))
    }

    /// `k(x) = cosh|x| − 1`.
    pub fn cosh(dim: usize) -> Self {
        Self::radial("cosh", dim, Arc::new(CoshProfile))
    }

    /// `k(x) = exp(|x|²/2) − 1`.
    pub fn exp_square(dim: usize) -> Self {
        Self::radial("exp_square", dim, Arc::new(ExpSquareProfile))
    }

    /// `k(x) = Σ_i |x_i|^{p_i} / p_i`, one exponent per coordinate.
    pub fn anisotropic(exponents: &[f64]) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::Config("anisotropic potential needs at least one exponent".into()));
        }
        let mut profiles: Vec<Arc<dyn ScalarProfile>> = Vec::new();
        for &p in exponents {
            if p <= 1.0 || p.is_nan() {
                return Err(Error::Config(format!("anisotropic requires p > 1, got {p}")));
            }
            profiles.push(Arc::new(PowerProfile { p }));
        }
        Ok(Potential {
            name: format!("anisotropic({exponents:?})"),
            dim: exponents.len(),
            shape: Arc::new(Shape::PerAxis(profiles)),
            asymmetry_bound: 1.0,
        })
    }

    /// Wraps user closures. `asymmetry_bound` is the caller's bound on
    /// `limsup k(-x)/k(x)`.
    pub fn custom(name: impl Into<String>, dim: usize, parts: CustomPotential, asymmetry_bound: f64) -> Self {
        Potential {
            name: name.into(),
            dim,
            shape: Arc::new(Shape::Custom(Arc::new(parts))),
            asymmetry_bound,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn asymmetry_bound(&self) -> f64 {
        self.asymmetry_bound
    }

    /// `Some(c)` when `γ(x) = c·x` exactly; lets the backward-Euler
    /// reference scheme solve its step as a single linear system.
    pub fn linear_gradient_slope(&self) -> Option<f64> {
        match &*self.shape {
            Shape::Radial(p) => p.linear_slope(),
            _ => None,
        }
    }

    /// `k(x)`.
    pub fn k(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &*self.shape {
            Shape::Radial(p) => p.value(norm(x)),
            Shape::PerAxis(ps) => ps.iter().zip(x).map(|(p, &xi)| p.value(xi.abs())).sum(),
            Shape::Custom(c) => (c.k)(x),
        }
    }

    /// `γ(x) = ∇k(x)`, written into `out`.
    pub fn gamma_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &*self.shape {
            Shape::Radial(p) => {
                let r = norm(x);
                if r == 0.0 {
                    out.fill(0.0);
                } else {
                    let g = p.slope(r) / r;
                    for (o, &xi) in out.iter_mut().zip(x) {
                        *o = g * xi;
                    }
                }
            }
            Shape::PerAxis(ps) => {
                for ((o, p), &xi) in out.iter_mut().zip(ps).zip(x) {
                    *o = xi.signum() * p.slope(xi.abs());
                    if xi == 0.0 {
                        *o = 0.0;
                    }
                }
            }
            Shape::Custom(c) => (c.gamma)(x, out),
        }
    }

    pub fn gamma(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.gamma_into(x, &mut out);
        out
    }

    /// Resolvent `J_λ x = (I + λγ)⁻¹ x`: the unique `y` with
    /// `y + λγ(y) = x`, equivalently `argmin_z k(z) + |x−z|²/(2λ)`.
    pub fn resolvent_into(&self, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert!(lambda > 0.0);
        debug_assert_eq!(x.len(), self.dim);
        match &*self.shape {
            Shape::Radial(p) => {
                let r = norm(x);
                if r == 0.0 {
                    out.fill(0.0);
                    return Ok(());
                }
                let s = radial_resolvent(p.as_ref(), lambda, r)?;
                let scale = s / r;
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = scale * xi;
                }
                Ok(())
            }
            Shape::PerAxis(ps) => {
                for ((o, p), &xi) in out.iter_mut().zip(ps).zip(x) {
                    let s = radial_resolvent(p.as_ref(), lambda, xi.abs())?;
                    *o = xi.signum() * s;
                    if xi == 0.0 {
                        *o = 0.0;
                    }
                }
                Ok(())
            }
            Shape::Custom(c) => {
                if let Some(res) = &c.resolvent {
                    res(x, lambda, out);
                    return Ok(());
                }
                self.resolvent_newton(c, lambda, x, out)
            }
        }
    }

    pub fn resolvent(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.resolvent_into(lambda, x, &mut out)?;
        Ok(out)
    }

    /// Damped Newton on `F(y) = y + λγ(y) − x` for custom potentials.
    /// Jacobian `I + λ·Hess k`, finite-differenced when no Hessian closure
    /// is registered (step `1e-6·(1+|y|)`).
    fn resolvent_newton(&self, c: &CustomPotential, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim;
        let mut y = x.to_vec();
        let mut gy = vec![0.0; n];
        let mut residual = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        let atol = RESOLVENT_RTOL * (1.0 + norm(x));
        let eval_res = |y: &[f64], gy: &mut [f64], res: &mut [f64]| {
            (c.gamma)(y, gy);
            for i in 0..n {
                res[i] = y[i] + lambda * gy[i] - x[i];
            }
        };
        eval_res(&y, &mut gy, &mut residual);
        let mut res_norm = norm(&residual);
        for iter in 0..MAX_NEWTON {
            if res_norm <= atol {
                out.copy_from_slice(&y);
                return Ok(());
            }
            if let Some(h) = &c.hessian {
                h(&y, &mut jac);
            } else {
                let step = 1e-6 * (1.0 + norm(&y));
                let mut y_pert = y.clone();
                let mut g_pert = vec![0.0; n];
                for j in 0..n {
                    y_pert[j] += step;
                    (c.gamma)(&y_pert, &mut g_pert);
                    for i in 0..n {
                        jac[i * n + j] = (g_pert[i] - gy[i]) / step;
                    }
                    y_pert[j] = y[j];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    jac[i * n + j] *= lambda;
                }
                jac[i * n + i] += 1.0;
            }
            let delta = match solve_dense(&mut jac.clone(), &residual) {
                Some(d) => d,
                None => {
                    return Err(Error::NonConvergence {
                        op: "resolvent",
                        iterations: iter,
                        residual: res_norm,
                    })
                }
            };
            // backtracking line search on the residual norm
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = y.iter().zip(&delta).map(|(yi, di)| yi - t * di).collect();
                let mut g_trial = vec![0.0; n];
                let mut r_trial = vec![0.0; n];
                eval_res(&trial, &mut g_trial, &mut r_trial);
                let rn = norm(&r_trial);
                if rn.is_finite() && rn < res_norm {
                    y = trial;
                    gy = g_trial;
                    residual = r_trial;
                    res_norm = rn;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                return Err(Error::NonConvergence {
                    op: "resolvent",
                    iterations: iter,
                    residual: res_norm,
                });
            }
        }
        if res_norm <= atol {
            out.copy_from_slice(&y);
            Ok(())
        } else {
            Err(Error::NonConvergence {
                op: "resolvent",
                iterations: MAX_NEWTON,
                residual: res_norm,
            })
        }
    }

    /// Yosida map `γ_λ(x) = (x − J_λ x)/λ`; monotone and 1/λ-Lipschitz,
    /// and equal to `γ(J_λ x)`.
    pub fn yosida_into(&self, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.resolvent_into(lambda, x, out)?;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (xi - *o) / lambda;
        }
        Ok(())
    }

    pub fn yosida(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.yosida_into(lambda, x, &mut out)?;
        Ok(out)
    }

    /// Moreau envelope `k_λ(x) = k(J_λ x) + |x − J_λ x|²/(2λ)`; the infimum
    /// in `inf_y k(y) + |x−y|²/(2λ)` is attained at the resolvent.
    pub fn moreau(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        let j = self.resolvent(lambda, x)?;
        let dist_sq: f64 = x.iter().zip(&j).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.k(&j) + dist_sq / (2.0 * lambda))
    }

    /// Convex conjugate `k*(y) = sup_r (y·r − k(r))`.
    pub fn conjugate(&self, y: &[f64]) -> Result<f64> {
        debug_assert_eq!(y.len(), self.dim);
        match &*self.shape {
            Shape::Radial(p) => scalar_conjugate(p.as_ref(), norm(y)),
            Shape::PerAxis(ps) => {
                let mut total = 0.0;
                for (p, &yi) in ps.iter().zip(y) {
                    total += scalar_conjugate(p.as_ref(), yi.abs())?;
                }
                Ok(total)
            }
            Shape::Custom(c) => {
                if let Some(conj) = &c.conjugate {
                    return Ok(conj(y));
                }
                // solve γ(r) = y, i.e. the resolvent-style Newton applied to
                // F(r) = γ(r) − y via a large-λ trick is ill-conditioned;
                // instead reuse the damped Newton with residual γ(r) − y.
                let r = self.gradient_inverse_newton(c, y)?;
                Ok(dot(y, &r) - self.k(&r))
            }
        }
    }

    fn gradient_inverse_newton(&self, c: &CustomPotential, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let mut r = y.to_vec();
        let mut gr = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        let atol = RESOLVENT_RTOL * (1.0 + norm(y));
        (c.gamma)(&r, &mut gr);
        let mut res: Vec<f64> = gr.iter().zip(y).map(|(g, yi)| g - yi).collect();
        let mut res_norm = norm(&res);
        for iter in 0..MAX_NEWTON {
            if res_norm <= atol {
                return Ok(r);
            }
            if let Some(h) = &c.hessian {
                h(&r, &mut jac);
            } else {
                let step = 1e-6 * (1.0 + norm(&r));
                let mut r_pert = r.clone();
                let mut g_pert = vec![0.0; n];
                for j in 0..n {
                    r_pert[j] += step;
                    (c.gamma)(&r_pert, &mut g_pert);
                    for i in 0..n {
                        jac[i * n + j] = (g_pert[i] - gr[i]) / step;
                    }
                    r_pert[j] = r[j];
                }
            }
            let delta = match solve_dense(&mut jac.clone(), &res) {
                Some(d) => d,
                None => {
                    return Err(Error::NonConvergence {
                        op: "conjugate",
                        iterations: iter,
                        residual: res_norm,
                    })
                }
            };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = r.iter().zip(&delta).map(|(ri, di)| ri - t * di).collect();
                let mut g_trial = vec![0.0; n];
                (c.gamma)(&trial, &mut g_trial);
                let res_trial: Vec<f64> = g_trial.iter().zip(y).map(|(g, yi)| g - yi).collect();
                let rn = norm(&res_trial);
                if rn.is_finite() && rn < res_norm {
                    r = trial;
                    gr = g_trial;
                    res = res_trial;
                    res_norm = rn;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if res_norm <= atol {
            Ok(r)
        } else {
            Err(Error::NonConvergence {
                op: "conjugate",
                iterations: MAX_NEWTON,
                residual: res_norm,
            })
        }
    }

    /// `k(y) + k*(r) − r·y ≥ 0`, zero exactly at `r = γ(y)`.
    pub fn fenchel_young_gap(&self, y: &[f64], r: &[f64]) -> Result<f64> {
        Ok(self.k(y) + self.conjugate(r)? - dot(r, y))
    }

    /// Residual of `k(J_λ x) + k*(γ_λ(x)) = γ_λ(x)·x − λ|γ_λ(x)|²`.
    /// Contractually zero to tolerance for every potential; the inequality
    /// form against `γ_λ(x)·x` is exposed by [`Potential::pluto_upper_slack`].
    pub fn pluto_identity_residual(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        let j = self.resolvent(lambda, x)?;
        let gl: Vec<f64> = x.iter().zip(&j).map(|(xi, ji)| (xi - ji) / lambda).collect();
        let gl_sq: f64 = gl.iter().map(|v| v * v).sum();
        Ok(self.k(&j) + self.conjugate(&gl)? - (dot(&gl, x) - lambda * gl_sq))
    }

    /// Slack of the inequality `k(J_λ x) + k*(γ_λ(x)) ≤ γ_λ(x)·x`.
    pub fn pluto_upper_slack(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        let j = self.resolvent(lambda, x)?;
        let gl: Vec<f64> = x.iter().zip(&j).map(|(xi, ji)| (xi - ji) / lambda).collect();
        Ok(dot(&gl, x) - self.k(&j) - self.conjugate(&gl)?)
    }
}

/// Gauss elimination with partial pivoting for the small dense Newton
/// systems (dim is 1 or 2 in practice).
fn solve_dense(a: &mut [f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[piv * n + col].abs() {
                piv = row;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col * n + col];
        for row in 0..col {
            x[row] -= a[row * n + col] * x[col];
        }
    }
    Some(x)
}

/// Truncation `T_R`: identity inside the ball of radius `R`, radial
/// projection onto it outside.
pub fn truncate(radius: f64, x: &[f64], out: &mut [f64]) {
    debug_assert!(radius > 0.0);
    let r = norm(x);
    if r <= radius {
        out.copy_from_slice(x);
    } else {
        let scale = radius / r;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
    }
}

pub fn truncated(radius: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    truncate(radius, x, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Yosida-regularized view
// ---------------------------------------------------------------------------

/// A potential paired with a Yosida parameter `λ > 0`: the view the solver
/// steps with. `γ_λ` is monotone and `1/λ`-Lipschitz; `k_λ ≤ k` increases
/// pointwise to `k` as `λ ↓ 0`.
#[derive(Clone, Debug)]
pub struct RegularizedPotential {
    pub base: Potential,
    pub lambda: f64,
}

impl RegularizedPotential {
    pub fn new(base: Potential, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 || lambda.is_nan() {
            return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(RegularizedPotential { base, lambda })
    }

    pub fn gamma_lambda_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.base.yosida_into(self.lambda, x, out)
    }

    pub fn resolvent_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.base.resolvent_into(self.lambda, x, out)
    }

    pub fn moreau(&self, x: &[f64]) -> Result<f64> {
        self.base.moreau(self.lambda, x)
    }
}

// ---------------------------------------------------------------------------
// registry
// ---------------------------------------------------------------------------

type Factory = Box<dyn Fn(&serde_json::Value) -> Result<Potential> + Send + Sync>;

fn registry() -> &'static Mutex<HashMap<String, Factory>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Factory>>> = OnceLock::new();
    REGISTRY.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Registration hook for user potentials: makes `{"kind": "registered",
/// "name": ..., "params": ...}` resolvable from config files.
pub fn register_potential(
    name: impl Into<String>,
    factory: impl Fn(&serde_json::Value) -> Result<Potential> + Send + Sync + 'static,
) {
    registry().lock().unwrap().insert(name.into(), Box::new(factory));
}

pub fn build_registered(name: &str, params: &serde_json::Value) -> Result<Potential> {
    let reg = registry().lock().unwrap();
    match reg.get(name) {
        Some(f) => f(params),
        None => Err(Error::Config(format!("no registered potential named '{name}'"))),
    }
}
