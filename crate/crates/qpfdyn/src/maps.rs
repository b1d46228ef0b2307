//! Fibre-map families `(θ, x) ↦ (θ + ω, f_θ(x))` with analytic derivatives.
//!
//! Three families are provided:
//!
//! * Arnold: `x + τ + a·sin(2πx) + b·cos(2πθ)^d`
//! * Pinched: `h_α(x) + g(θ)` with `h_α` built from `a_p(x) = ∫₀ˣ dt/(1+|t|^p)`
//! * Cocycle: `ĥ_α(x) + g(θ)`, the projective action of a hyperbolic
//!   `SL(2,ℝ)` matrix, with `ĥ_α(x) = (1/π)·arctan(α²·tan(πx))`
//!
//! All evaluation is pure; [`QpfSystem`] is immutable and cheap to clone.

use crate::circle::{mod1, CirclePoint};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_PI, PI, TAU};
use std::sync::Arc;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fibre inverse did not converge at theta={theta}, y={y}")]
    NoConvergence { theta: f64, y: f64 },
}

/// `x^n` by repeated squaring.
#[inline]
pub fn ipow(mut x: f64, mut n: u32) -> f64 {
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= x;
        }
        x *= x;
        n >>= 1;
    }
    acc
}

/// Forcing term `g(θ)` added to the fibre map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    /// `b·cos(2πθ)^d`
    CosPower { b: f64, d: u32 },
    /// `β·cos(2πθ)`
    Cosine { beta: f64 },
    /// `b·((1 + sin 2πθ)/2)^d`, `d > 0` real
    SinPower { b: f64, d: f64 },
}

impl Forcing {
    pub const ZERO: Forcing = Forcing::CosPower { b: 0.0, d: 1 };

    #[inline]
    pub fn value(&self, theta: f64) -> f64 {
        match *self {
            Forcing::CosPower { b, d } => b * ipow((TAU * theta).cos(), d),
            Forcing::Cosine { beta } => beta * (TAU * theta).cos(),
            Forcing::SinPower { b, d } => b * (0.5 * (1.0 + (TAU * theta).sin())).powf(d),
        }
    }

    /// `g'(θ)`.
    #[inline]
    pub fn deriv(&self, theta: f64) -> f64 {
        match *self {
            Forcing::CosPower { b, d } => {
                if b == 0.0 {
                    return 0.0;
                }
                let (s, c) = (TAU * theta).sin_cos();
                -TAU * b * d as f64 * ipow(c, d - 1) * s
            }
            Forcing::Cosine { beta } => -TAU * beta * (TAU * theta).sin(),
            Forcing::SinPower { b, d } => {
                if b == 0.0 {
                    return 0.0;
                }
                let (s, c) = (TAU * theta).sin_cos();
                let base = 0.5 * (1.0 + s);
                if base <= 0.0 {
                    return 0.0;
                }
                b * d * base.powf(d - 1.0) * PI * c
            }
        }
    }

    /// Amplitude `b` or `β`.
    pub fn amplitude(&self) -> f64 {
        match *self {
            Forcing::CosPower { b, .. } => b,
            Forcing::Cosine { beta } => beta,
            Forcing::SinPower { b, .. } => b,
        }
    }

    /// Upper bound for `sup |g'|`, closed form where available.
    pub fn deriv_bound(&self) -> f64 {
        match *self {
            Forcing::CosPower { b, d } => TAU * b.abs() * d as f64 * cos_power_slope_max(d),
            Forcing::Cosine { beta } => TAU * beta.abs(),
            Forcing::SinPower { b, d } => {
                // |g'| = π|b|d·base^{d-1}|cos|, maximised on a fine grid
                let n = 1 << 16;
                let mut m: f64 = 0.0;
                for i in 0..n {
                    let t = i as f64 / n as f64;
                    m = m.max(Forcing::SinPower { b, d }.deriv(t).abs());
                }
                m * (1.0 + 1e-6)
            }
        }
    }
}

/// `max_θ |cos(2πθ)^{d−1} sin(2πθ)|`, attained at `sin² = 1/d`.
pub fn cos_power_slope_max(d: u32) -> f64 {
    if d <= 1 {
        return 1.0;
    }
    let df = d as f64;
    (1.0 - 1.0 / df).powf(0.5 * (df - 1.0)) / df.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArnoldParams {
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub d: u32,
}

impl ArnoldParams {
    pub fn new(tau: f64, a: f64, b: f64, d: u32) -> Self {
        ArnoldParams { tau, a, b, d }
    }

    pub fn forcing(&self) -> Forcing {
        Forcing::CosPower {
            b: self.b,
            d: self.d,
        }
    }

    fn validate(&self) -> Result<(), MapError> {
        if !(0.0..=1.0 / TAU + 1e-15).contains(&self.a) {
            return Err(MapError::InvalidParameter(format!(
                "a = {} outside [0, 1/(2π)]",
                self.a
            )));
        }
        if self.d % 2 == 0 {
            return Err(MapError::InvalidParameter(format!(
                "d = {} must be odd",
                self.d
            )));
        }
        if !self.tau.is_finite() || !self.b.is_finite() {
            return Err(MapError::InvalidParameter("non-finite tau or b".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchedParams {
    pub alpha: f64,
    pub p: u32,
    pub g: Forcing,
}

impl PinchedParams {
    /// Default forcing `β·cos(2πθ)`.
    pub fn new(alpha: f64, p: u32, beta: f64) -> Self {
        PinchedParams {
            alpha,
            p,
            g: Forcing::Cosine { beta },
        }
    }

    fn validate(&self) -> Result<(), MapError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MapError::InvalidParameter(format!(
                "alpha = {} must be > 0",
                self.alpha
            )));
        }
        if self.p < 2 {
            return Err(MapError::InvalidParameter(format!(
                "p = {} must be >= 2",
                self.p
            )));
        }
        if let Forcing::Cosine { beta } = self.g {
            if beta <= 0.5 {
                return Err(MapError::InvalidParameter(format!(
                    "beta = {beta} must exceed 1/2 for cosine forcing"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleParams {
    pub alpha: f64,
    pub g: Forcing,
}

impl CocycleParams {
    pub fn new(alpha: f64, g: Forcing) -> Self {
        CocycleParams { alpha, g }
    }

    /// Always 2: the closed form of `σ⁻¹` needs `a_2 = arctan`.
    pub fn p(&self) -> u32 {
        2
    }

    fn validate(&self) -> Result<(), MapError> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(MapError::InvalidParameter(format!(
                "alpha = {} must be > 1",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Arnold(ArnoldParams),
    Pinched(PinchedParams),
    Cocycle(CocycleParams),
}

impl Family {
    pub fn forcing(&self) -> Forcing {
        match self {
            Family::Arnold(a) => a.forcing(),
            Family::Pinched(p) => p.g,
            Family::Cocycle(c) => c.g,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Arnold(_) => "arnold",
            Family::Pinched(_) => "pinched",
            Family::Cocycle(_) => "cocycle",
        }
    }
}

// ---------------------------------------------------------------------------
// a_p

/// `c_p = lim_{x→∞} a_p(x) = (π/p)/sin(π/p)`.
pub fn c_p(p: u32) -> f64 {
    let pf = p as f64;
    (PI / pf) / (PI / pf).sin()
}

#[inline]
fn ap_integrand(p: u32, t: f64) -> f64 {
    1.0 / (1.0 + ipow(t.abs(), p))
}

/// `a_p(x) = ∫₀ˣ dt/(1+|t|^p)` to absolute accuracy `1e-12`.
pub fn a_p_eval(p: u32, x: f64) -> f64 {
    if p == 2 {
        return x.atan();
    }
    let ax = x.abs();
    let v = if ax <= 1.0 {
        quad::integrate(|t| ap_integrand(p, t), 0.0, ax, 1e-14)
    } else {
        // ∫_x^∞ dt/(1+t^p) = ∫_0^{1/x} u^{p-2}/(1+u^p) du
        let tail = quad::integrate(
            |u| ipow(u, p - 2) / (1.0 + ipow(u, p)),
            0.0,
            1.0 / ax,
            1e-14,
        );
        c_p(p) - tail
    };
    v.copysign(x)
}

/// `a_p'(x) = 1/(1+|x|^p)`.
#[inline]
pub fn a_p_deriv(p: u32, x: f64) -> f64 {
    ap_integrand(p, x)
}

const AP_NODES: usize = 4096;
const AP_TMAX: f64 = 8.0;
const AP_STRETCH: f64 = 1.5;

/// Dense `a_p` table on `[0, 8]` with monotone cubic Hermite interpolation;
/// beyond the table the convergent tail series is summed.
#[derive(Debug)]
pub struct ApTable {
    p: u32,
    cp: f64,
    t: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
    tanh_k: f64,
}

impl ApTable {
    pub fn new(p: u32) -> Self {
        let tanh_k = AP_STRETCH.tanh();
        let n = AP_NODES;
        let t: Vec<f64> = (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                AP_TMAX * (1.0 - (AP_STRETCH * (1.0 - u)).tanh() / tanh_k)
            })
            .collect();
        let mut v = vec![0.0; n];
        for i in 1..n {
            v[i] = v[i - 1] + quad::gauss20(|s| ap_integrand(p, s), t[i - 1], t[i]);
        }
        let mut m: Vec<f64> = t.iter().map(|&x| ap_integrand(p, x)).collect();
        // Fritsch–Carlson limiter; inactive for exact slopes of a smooth
        // monotone function but kept as a guard
        for i in 0..n - 1 {
            let delta = (v[i + 1] - v[i]) / (t[i + 1] - t[i]);
            if delta <= 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let (al, be) = (m[i] / delta, m[i + 1] / delta);
            let r = al * al + be * be;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                m[i] = tau * al * delta;
                m[i + 1] = tau * be * delta;
            }
        }
        ApTable {
            p,
            cp: c_p(p),
            t,
            v,
            m,
            tanh_k,
        }
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        let r = if ax >= AP_TMAX {
            self.tail(ax)
        } else {
            // invert the stretched grid to find the panel
            let w = (1.0 - ax / AP_TMAX) * self.tanh_k;
            let u = 1.0 - w.atanh() / AP_STRETCH;
            let n = self.t.len();
            let mut i = ((u * (n - 1) as f64) as usize).min(n - 2);
            while i > 0 && self.t[i] > ax {
                i -= 1;
            }
            while i < n - 2 && self.t[i + 1] < ax {
                i += 1;
            }
            let h = self.t[i + 1] - self.t[i];
            let s = (ax - self.t[i]) / h;
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            h00 * self.v[i] + h10 * h * self.m[i] + h01 * self.v[i + 1] + h11 * h * self.m[i + 1]
        };
        r.copysign(x)
    }

    /// `c_p − Σ_k (−1)^k x^{1−p(k+1)}/(p(k+1)−1)`, valid for `x > 1`.
    fn tail(&self, x: f64) -> f64 {
        let p = self.p as f64;
        let xp = ipow(1.0 / x, self.p);
        let mut term = x * xp; // x^{1-p}
        let mut s = 0.0;
        let mut k = 0.0;
        let mut sign = 1.0;
        loop {
            let c = term / (p * (k + 1.0) - 1.0);
            s += sign * c;
            if c < 1e-18 {
                break;
            }
            term *= xp;
            sign = -sign;
            k += 1.0;
        }
        self.cp - s
    }
}

// ---------------------------------------------------------------------------
// systems

#[derive(Clone, Debug)]
enum Kernel {
    Arnold {
        tau: f64,
        a: f64,
    },
    Pinched {
        alpha: f64,
        p: u32,
        norm: f64,
        table: Option<Arc<ApTable>>,
    },
    Cocycle {
        a2: f64,
    },
}

/// Base frequency plus a fibre-map family.
#[derive(Clone, Debug)]
pub struct QpfSystem {
    omega: CirclePoint,
    family: Family,
    forcing: Forcing,
    kernel: Kernel,
}

impl QpfSystem {
    pub fn new(omega: CirclePoint, family: Family) -> Result<Self, MapError> {
        let kernel = match family {
            Family::Arnold(a) => {
                a.validate()?;
                Kernel::Arnold { tau: a.tau, a: a.a }
            }
            Family::Pinched(p) => {
                p.validate()?;
                let table = if p.p == 2 {
                    None
                } else {
                    Some(Arc::new(ApTable::new(p.p)))
                };
                let half = a_p_eval(p.p, p.alpha / 2.0);
                Kernel::Pinched {
                    alpha: p.alpha,
                    p: p.p,
                    norm: 1.0 / (2.0 * half),
                    table,
                }
            }
            Family::Cocycle(c) => {
                c.validate()?;
                Kernel::Cocycle {
                    a2: c.alpha * c.alpha,
                }
            }
        };
        Ok(QpfSystem {
            omega,
            family,
            forcing: family.forcing(),
            kernel,
        })
    }

    pub fn arnold(omega: f64, tau: f64, a: f64, b: f64, d: u32) -> Result<Self, MapError> {
        Self::new(
            CirclePoint::new(omega),
            Family::Arnold(ArnoldParams::new(tau, a, b, d)),
        )
    }

    /// The map `(θ, x) ↦ (θ + ω, x)`.
    pub fn identity(omega: f64) -> Self {
        Self::arnold(omega, 0.0, 0.0, 0.0, 1).expect("identity parameters are valid")
    }

    pub fn omega(&self) -> CirclePoint {
        self.omega
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.omega.value()
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    /// Same fibre maps, different base frequency. Cheap: tables are shared.
    pub fn with_omega(&self, omega: f64) -> Self {
        let mut s = self.clone();
        s.omega = CirclePoint::new(omega);
        s
    }

    /// Unforced part `h(x)` on the lift.
    #[inline]
    pub fn h_lift(&self, x: f64) -> f64 {
        match &self.kernel {
            Kernel::Arnold { tau, a } => x + tau + a * (TAU * x).sin(),
            Kernel::Pinched {
                alpha,
                p,
                norm,
                table,
            } => {
                let n = x.round();
                let u = alpha * (x - n);
                let ap = match table {
                    None => u.atan(),
                    Some(t) => t.eval(u),
                };
                debug_assert!(*p >= 2);
                n + ap * norm
            }
            Kernel::Cocycle { a2 } => {
                let n = x.round();
                let u = x - n;
                if u.abs() >= 0.5 {
                    return n + u;
                }
                n + FRAC_1_PI * (a2 * (PI * u).tan()).atan()
            }
        }
    }

    /// `h'(x)`.
    #[inline]
    pub fn h_dx(&self, x: f64) -> f64 {
        match &self.kernel {
            Kernel::Arnold { a, .. } => 1.0 + TAU * a * (TAU * x).cos(),
            Kernel::Pinched { alpha, p, norm, .. } => {
                let u = alpha * (x - x.round());
                alpha * norm * a_p_deriv(*p, u)
            }
            Kernel::Cocycle { a2 } => {
                let (s, c) = (PI * x).sin_cos();
                a2 / (c * c + a2 * a2 * s * s)
            }
        }
    }

    /// Lift `F_θ(x)` with `F_θ(x+1) = F_θ(x) + 1`.
    #[inline]
    pub fn lift(&self, theta: f64, x: f64) -> f64 {
        self.h_lift(x) + self.forcing.value(theta)
    }

    /// `f_θ(x)` in `[0, 1)`.
    #[inline]
    pub fn eval(&self, theta: f64, x: f64) -> f64 {
        mod1(self.lift(theta, x))
    }

    /// `∂x f_θ(x)`.
    #[inline]
    pub fn dx(&self, _theta: f64, x: f64) -> f64 {
        self.h_dx(x)
    }

    /// `∂θ f_θ(x)`.
    #[inline]
    pub fn dtheta(&self, theta: f64, _x: f64) -> f64 {
        self.forcing.deriv(theta)
    }

    /// The unique `x ∈ [0,1)` with `f_θ(x) = y`.
    pub fn inverse(&self, theta: f64, y: f64) -> Result<f64, MapError> {
        self.inverse_near(theta, y, None)
    }

    /// [`inverse`](Self::inverse) with an optional warm start.
    pub fn inverse_near(&self, theta: f64, y: f64, guess: Option<f64>) -> Result<f64, MapError> {
        let g = self.forcing.value(theta);
        if let Kernel::Cocycle { a2 } = &self.kernel {
            // ĥ⁻¹ is ĥ with α² replaced by α⁻²
            let u = centered_unit(y - g);
            if u.abs() >= 0.5 {
                return Ok(0.5);
            }
            return Ok(mod1(FRAC_1_PI * ((PI * u).tan() / a2).atan()));
        }
        let f0 = self.h_lift(0.0) + g;
        let target = f0 + mod1(y - f0);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = match guess {
            Some(x0) if x0 > 0.0 && x0 < 1.0 => x0,
            _ => {
                // linear guess from the unforced slope
                (target - f0).clamp(0.0, 1.0)
            }
        };
        for _ in 0..200 {
            let r = self.h_lift(x) + g - target;
            if r.abs() <= 2e-15 {
                return Ok(mod1(x));
            }
            if r < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
            if hi - lo <= 4.0 * f64::EPSILON {
                return Ok(mod1(0.5 * (lo + hi)));
            }
            let d = self.h_dx(x);
            let newton = x - r / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        let r = self.h_lift(x) + g - target;
        if r.abs() < 1e-12 {
            Ok(mod1(x))
        } else {
            Err(MapError::NoConvergence { theta, y })
        }
    }

    /// `(θ, x) ↦ (θ + ω, f_θ(x))`.
    #[inline]
    pub fn step(&self, theta: f64, x: f64) -> (f64, f64) {
        (mod1(theta + self.w()), self.eval(theta, x))
    }

    /// Inverse of [`step`](Self::step).
    pub fn step_back(&self, theta: f64, x: f64) -> Result<(f64, f64), MapError> {
        let t = mod1(theta - self.w());
        Ok((t, self.inverse(t, x)?))
    }

    /// Sampled check that every fibre map is orientation preserving.
    pub fn is_orientation_preserving(&self, n: usize) -> bool {
        (0..n).all(|i| self.h_dx((i as f64 + 0.5) / n as f64) > 0.0)
    }
}

#[inline]
fn centered_unit(x: f64) -> f64 {
    let r = mod1(x + 0.5) - 0.5;
    r
}

pub fn fibre_eval(sys: &QpfSystem, theta: CirclePoint, x: CirclePoint) -> CirclePoint {
    CirclePoint::new(sys.eval(theta.value(), x.value()))
}

pub fn fibre_dx(sys: &QpfSystem, theta: CirclePoint, x: CirclePoint) -> f64 {
    sys.dx(theta.value(), x.value())
}

pub fn fibre_dtheta(sys: &QpfSystem, theta: CirclePoint, x: CirclePoint) -> f64 {
    sys.dtheta(theta.value(), x.value())
}

pub fn fibre_inverse(
    sys: &QpfSystem,
    theta: CirclePoint,
    y: CirclePoint,
) -> Result<CirclePoint, MapError> {
    sys.inverse(theta.value(), y.value()).map(CirclePoint::new)
}

pub fn lift_eval(sys: &QpfSystem, theta: CirclePoint, x_lift: f64) -> f64 {
    sys.lift(theta.value(), x_lift)
}

/// `ĥ_α(x) + g(θ)` mod 1, with `ĥ_α = σ ∘ (u ↦ α²u) ∘ σ⁻¹` and
/// `σ(u) = arctan(u)/π`, `σ(∞) = 1/2`.
pub fn cocycle_eval(params: &CocycleParams, theta: CirclePoint, x: CirclePoint) -> CirclePoint {
    let u = x.value();
    let h = if (u - 0.5).abs() < 1e-300 {
        0.5
    } else {
        FRAC_1_PI * (params.alpha * params.alpha * (PI * u).tan()).atan()
    };
    CirclePoint::new(h + params.g.value(theta.value()))
}

/// The matrix whose projective action on `v = (cos πx, sin πx)` is the
/// cocycle fibre map at `θ`: a rotation by `π·g(θ)` after
/// `diag(α⁻¹, α)`.
pub fn cocycle_matrix(params: &CocycleParams, theta: f64) -> [[f64; 2]; 2] {
    let phi = PI * params.g.value(theta);
    let (s, c) = phi.sin_cos();
    let (a, ai) = (params.alpha, 1.0 / params.alpha);
    [[c * ai, -s * a], [s * ai, c * a]]
}

/// Projective action of a 2×2 matrix in the `v = (cos πx, sin πx)` chart.
pub fn projective_action(m: [[f64; 2]; 2], x: f64) -> f64 {
    let (s, c) = (PI * x).sin_cos();
    let v0 = m[0][0] * c + m[0][1] * s;
    let v1 = m[1][0] * c + m[1][1] * s;
    mod1(FRAC_1_PI * v1.atan2(v0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GOLD: f64 = 0.618_033_988_749_894_8;

    fn pt(x: f64) -> CirclePoint {
        CirclePoint::new(x)
    }

    fn pinched(alpha: f64, p: u32, g: Forcing) -> QpfSystem {
        QpfSystem::new(pt(GOLD), Family::Pinched(PinchedParams { alpha, p, g })).unwrap()
    }

    fn cocycle(alpha: f64, g: Forcing) -> QpfSystem {
        QpfSystem::new(pt(GOLD), Family::Cocycle(CocycleParams::new(alpha, g))).unwrap()
    }

    #[test]
    fn identity_and_rotation() {
        let id = QpfSystem::identity(GOLD);
        assert_eq!(fibre_eval(&id, pt(0.3), pt(0.7)).value(), 0.7);
        let rot = QpfSystem::arnold(GOLD, 0.25, 0.0, 0.0, 1).unwrap();
        assert_abs_diff_eq!(
            fibre_eval(&rot, pt(0.123), pt(0.9)).value(),
            0.15,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lift_eval(&rot, pt(0.5), 1.9), 2.15, epsilon = 1e-15);
        assert_abs_diff_eq!(
            fibre_inverse(&id, pt(0.2), pt(0.4)).unwrap().value(),
            0.4,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            fibre_inverse(&rot, pt(0.2), pt(0.15)).unwrap().value(),
            0.9,
            epsilon = 1e-14
        );
    }

    #[test]
    fn arnold_derivatives() {
        let a = 1.0 / TAU;
        let s = QpfSystem::arnold(GOLD, 0.0, a, 0.0, 1).unwrap();
        assert_abs_diff_eq!(fibre_dx(&s, pt(0.1), pt(0.0)), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fibre_dx(&s, pt(0.1), pt(0.5)), 0.0, epsilon = 1e-15);
        assert_eq!(fibre_dtheta(&s, pt(0.3), pt(0.2)), 0.0);
        let s = QpfSystem::arnold(GOLD, 0.0, 0.1, 1.0, 1).unwrap();
        assert_abs_diff_eq!(fibre_dtheta(&s, pt(0.25), pt(0.0)), -TAU, epsilon = 1e-14);
        let s = QpfSystem::arnold(GOLD, 0.0, 0.1, 1.0, 5).unwrap();
        assert_eq!(fibre_dtheta(&s, pt(0.0), pt(0.3)), 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(QpfSystem::arnold(GOLD, 0.0, 0.2, 0.0, 1).is_err());
        assert!(QpfSystem::arnold(GOLD, 0.0, 0.1, 1.0, 4).is_err());
        let bad = Family::Pinched(PinchedParams::new(10.0, 2, 0.4));
        assert!(QpfSystem::new(pt(GOLD), bad).is_err());
        let bad = Family::Pinched(PinchedParams::new(10.0, 1, 1.0));
        assert!(QpfSystem::new(pt(GOLD), bad).is_err());
        let bad = Family::Cocycle(CocycleParams::new(0.5, Forcing::ZERO));
        assert!(QpfSystem::new(pt(GOLD), bad).is_err());
    }

    #[test]
    fn pinched_slope_at_zero() {
        let s = pinched(10.0, 2, Forcing::Cosine { beta: 1.0 });
        let expect = 10.0 / (2.0 * 5f64.atan());
        assert_abs_diff_eq!(fibre_dx(&s, pt(0.4), pt(0.0)), expect, epsilon = 1e-13);
        assert_abs_diff_eq!(expect, 3.640_598, epsilon = 1e-6);
    }

    #[test]
    fn pinched_is_odd() {
        for p in [2, 3, 4] {
            let s = pinched(50.0, p, Forcing::ZERO);
            for &x in &[0.01, 0.1, 0.3, 0.49] {
                let a = s.eval(0.2, x);
                let b = s.eval(0.2, 1.0 - x);
                assert!(crate::circle::dist(a, 1.0 - b) < 1e-12, "p={p} x={x}");
            }
            assert_abs_diff_eq!(s.eval(0.0, 0.5), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn a_p_values() {
        assert_abs_diff_eq!(a_p_eval(2, 1.0), PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a_p_eval(2, 1.0), 0.785_398_163_4, epsilon = 1e-10);
        for p in 2..7 {
            assert_eq!(a_p_eval(p, 0.0), 0.0);
        }
        // oracle: composite Simpson with many panels
        let n = 200_000;
        let h = 2.0 / n as f64;
        let f = |t: f64| 1.0 / (1.0 + t.powi(4));
        let mut s = f(0.0) + f(2.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let simpson = s * h / 3.0;
        assert_abs_diff_eq!(a_p_eval(4, 2.0), simpson, epsilon = 1e-13);
        assert_abs_diff_eq!(a_p_eval(4, 1e9), c_p(4), epsilon = 1e-12);
        assert_abs_diff_eq!(c_p(2), PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ap_table_matches_quadrature() {
        for p in [3, 4, 5] {
            let t = ApTable::new(p);
            let mut worst: f64 = 0.0;
            for i in 0..2000 {
                let x = -30.0 + 60.0 * i as f64 / 1999.0;
                worst = worst.max((t.eval(x) - a_p_eval(p, x)).abs());
            }
            assert!(worst < 1e-11, "p={p} worst={worst}");
        }
    }

    #[test]
    fn cocycle_values() {
        let par = CocycleParams::new(2.0, Forcing::ZERO);
        assert_abs_diff_eq!(cocycle_eval(&par, pt(0.3), pt(0.0)).value(), 0.0);
        assert_abs_diff_eq!(
            cocycle_eval(&par, pt(0.3), pt(0.5)).value(),
            0.5,
            epsilon = 1e-15
        );
        let v = cocycle_eval(&par, pt(0.3), pt(0.25)).value();
        assert_abs_diff_eq!(v, 4f64.atan() / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.4220, epsilon = 1e-4);
        let s = cocycle(2.0, Forcing::ZERO);
        assert_abs_diff_eq!(s.eval(0.3, 0.25), v, epsilon = 1e-15);
    }

    #[test]
    fn cocycle_is_projective_action() {
        let par = CocycleParams::new(3.0, Forcing::Cosine { beta: 0.7 });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (th, x): (f64, f64) = (rng.gen(), rng.gen());
            let direct = cocycle_eval(&par, pt(th), pt(x)).value();
            let proj = projective_action(cocycle_matrix(&par, th), x);
            assert!(crate::circle::dist(direct, proj) < 1e-12);
        }
    }

    #[test]
    fn inverse_roundtrip_all_families() {
        let systems = vec![
            QpfSystem::arnold(GOLD, 0.05, 1.0 / TAU, 1.3, 7).unwrap(),
            QpfSystem::arnold(GOLD, 0.0, 0.12, 1.0, 161).unwrap(),
            pinched(1e4, 2, Forcing::Cosine { beta: 1.0 }),
            pinched(200.0, 3, Forcing::Cosine { beta: 0.8 }),
            cocycle(5.0, Forcing::Cosine { beta: 0.3 }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in &systems {
            for _ in 0..1000 {
                let (th, x): (f64, f64) = (rng.gen(), rng.gen());
                let y = s.eval(th, x);
                let back = s.inverse(th, y).unwrap();
                assert!(
                    crate::circle::dist(back, x) < 1e-10 || s.dx(th, x) < 1e-6,
                    "{:?} th={th} x={x} back={back}",
                    s.family()
                );
                assert!(crate::circle::dist(s.eval(th, back), y) < 1e-12);
            }
        }
    }

    #[test]
    fn arnold_half_turn_symmetry() {
        let s = QpfSystem::arnold(GOLD, 0.03, 0.1, 0.9, 11).unwrap();
        let neg = QpfSystem::arnold(GOLD, 0.03, 0.1, -0.9, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (th, x): (f64, f64) = (rng.gen(), rng.gen());
            assert!(crate::circle::dist(s.eval(mod1(th + 0.5), x), neg.eval(th, x)) < 1e-13);
        }
    }

    #[test]
    fn arnold_odd_lift_at_zero_tau() {
        let s = QpfSystem::arnold(GOLD, 0.0, 0.15, 1.1, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (th, x): (f64, f64) = (rng.gen(), rng.gen::<f64>() * 4.0 - 2.0);
            // the half-turn in θ flips the sign of the forcing
            let lhs = s.lift(mod1(th + 0.5), -x);
            assert_abs_diff_eq!(lhs, -s.lift(th, x), epsilon = 1e-12);
        }
    }

    fn families_for_props() -> Vec<QpfSystem> {
        vec![
            QpfSystem::arnold(GOLD, 0.1, 0.15, 0.7, 3).unwrap(),
            pinched(30.0, 2, Forcing::Cosine { beta: 0.9 }),
            pinched(30.0, 4, Forcing::SinPower { b: 0.6, d: 3.0 }),
            cocycle(2.5, Forcing::CosPower { b: 0.5, d: 3 }),
        ]
    }

    proptest! {
        #[test]
        fn orientation_preserving(th in 0.0f64..1.0, x in 0.0f64..1.0) {
            for s in families_for_props() {
                prop_assert!(s.dx(th, x) > 0.0);
            }
        }

        #[test]
        fn derivatives_match_finite_differences(th in 0.0f64..1.0, x in 0.0f64..1.0) {
            let h = 1e-6;
            for s in families_for_props() {
                let fd_t = (s.lift(th + h, x) - s.lift(th - h, x)) / (2.0 * h);
                let an_t = s.dtheta(th, x);
                prop_assert!((fd_t - an_t).abs() <= 1e-6 * an_t.abs().max(1.0), "{:?}", s.family());
                let fd_x = (s.lift(th, x + h) - s.lift(th, x - h)) / (2.0 * h);
                let an_x = s.dx(th, x);
                prop_assert!((fd_x - an_x).abs() <= 1e-6 * an_x.abs().max(1.0), "{:?} x={}", s.family(), x);
            }
        }

        #[test]
        fn lift_is_periodic(th in 0.0f64..1.0, x in -3.0f64..3.0) {
            for s in families_for_props() {
                prop_assert!((s.lift(th, x + 1.0) - s.lift(th, x) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn pinched_diffeo_for_large_alpha(log_a in 0.0f64..6.0, x in 0.0f64..1.0) {
            let s = pinched(10f64.powf(log_a), 2, Forcing::ZERO);
            prop_assert!(s.dx(0.0, x) > 0.0);
            let y = s.eval(0.0, x);
            let back = s.inverse(0.0, y).unwrap();
            prop_assert!(crate::circle::dist(s.eval(0.0, back), y) < 1e-12);
        }
    }
}
