//! Orbits with derivative accumulators, Lyapunov exponents, rotation numbers,
//! deviations from the mean rotation, sink-source detection and tongue
//! boundaries.

use crate::circle::{dist, mod1, CirclePoint};
use crate::maps::{ArnoldParams, Family, MapError, QpfSystem};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("rotation number {rho_target} not attained for tau in [{lo}, {hi}]")]
    BracketFailure { rho_target: f64, lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Position on an orbit together with the derivative cocycles of the
/// `k`-step map with respect to `x₀`, `θ₀` and `ω` (with `θ₀` fixed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitState {
    pub theta: f64,
    pub x: f64,
    /// Steps taken; backward orbits count up as well.
    pub k: u64,
    /// `log ∂x f^k_{θ₀}(x₀)` (or of `f^{-k}` for backward orbits).
    pub log_dx: f64,
    /// `∂θ₀ f^k_{θ₀}(x₀)`.
    pub dtheta: f64,
    /// `∂ω f^k_{θ₀}(x₀)`.
    pub domega: f64,
    /// Integer part of the lift relative to the start.
    pub wind: i64,
    /// Lift of `x₀` at the start.
    pub x0: f64,
}

impl OrbitState {
    pub fn start(theta: f64, x: f64) -> Self {
        let (theta, x) = (mod1(theta), mod1(x));
        OrbitState {
            theta,
            x,
            k: 0,
            log_dx: 0.0,
            dtheta: 0.0,
            domega: 0.0,
            wind: 0,
            x0: x,
        }
    }

    /// Lift coordinate `F^k_{θ₀}(x₀)` with `x_lift(0) = x₀`.
    pub fn x_lift(&self) -> f64 {
        self.wind as f64 + self.x
    }

    /// `F^k(x₀) − x₀`, computed without cancellation in the integer part.
    pub fn displacement(&self) -> f64 {
        self.wind as f64 + (self.x - self.x0)
    }

    pub fn point(&self) -> (f64, f64) {
        (self.theta, self.x)
    }
}

/// One forward step, updating every accumulator.
#[inline]
pub fn step_forward(sys: &QpfSystem, st: &mut OrbitState) {
    let (th, x) = (st.theta, st.x);
    let dx = sys.dx(th, x);
    let dth = sys.dtheta(th, x);
    st.domega = dth * st.k as f64 + dx * st.domega;
    st.dtheta = dth + dx * st.dtheta;
    st.log_dx += dx.ln();
    let y = sys.lift(th, x);
    let fl = y.floor();
    let mut frac = y - fl;
    let mut w = fl as i64;
    if frac >= 1.0 {
        frac = 0.0;
        w += 1;
    }
    st.wind += w;
    st.x = frac;
    let t = th + sys.w();
    st.theta = if t >= 1.0 { t - 1.0 } else { t };
    st.k += 1;
}

/// One backward step. `guess` is a warm start for the preimage.
#[inline]
pub fn step_backward(
    sys: &QpfSystem,
    st: &mut OrbitState,
    guess: Option<f64>,
) -> Result<(), MapError> {
    let t = st.theta - sys.w();
    let tp = if t < 0.0 { t + 1.0 } else { t };
    let xp = sys.inverse_near(tp, st.x, guess)?;
    let dx = sys.dx(tp, xp);
    let dth = sys.dtheta(tp, xp);
    let m1 = (st.k + 1) as f64;
    st.domega = (st.domega + m1 * dth) / dx;
    st.dtheta = (st.dtheta - dth) / dx;
    st.log_dx -= dx.ln();
    let fl = sys.lift(tp, xp);
    let jump = (fl - st.x).round() as i64;
    st.wind -= jump;
    st.theta = mod1(tp);
    st.x = xp;
    st.k += 1;
    Ok(())
}

/// State after `n` forward steps from `(θ₀, x₀)`.
pub fn iterate_forward(sys: &QpfSystem, theta0: f64, x0: f64, n: u64) -> OrbitState {
    let mut st = OrbitState::start(theta0, x0);
    for _ in 0..n {
        step_forward(sys, &mut st);
    }
    st
}

/// As [`iterate_forward`], calling `visit` on every state including the start.
pub fn iterate_forward_with<F: FnMut(&OrbitState)>(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n: u64,
    mut visit: F,
) -> OrbitState {
    let mut st = OrbitState::start(theta0, x0);
    visit(&st);
    for _ in 0..n {
        step_forward(sys, &mut st);
        visit(&st);
    }
    st
}

/// State after `n` backward steps from `(θ₀, x₀)`.
pub fn iterate_backward(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n: u64,
) -> Result<OrbitState, MapError> {
    iterate_backward_with(sys, theta0, x0, n, |_| {})
}

pub fn iterate_backward_with<F: FnMut(&OrbitState)>(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n: u64,
    mut visit: F,
) -> Result<OrbitState, MapError> {
    let mut st = OrbitState::start(theta0, x0);
    visit(&st);
    let mut last_disp = 0.0;
    for _ in 0..n {
        let before = st.x;
        let guess = mod1(before - last_disp);
        step_backward(sys, &mut st, Some(guess))?;
        last_disp = crate::circle::centered(before - st.x);
        visit(&st);
    }
    Ok(st)
}

// ---------------------------------------------------------------------------
// Lyapunov exponents

/// Signed finite-window estimates of the pointwise exponents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub forward: f64,
    pub backward: f64,
    pub window: u64,
    pub converged: bool,
    /// Estimates on the half window, reported alongside for inconclusive runs.
    pub forward_half: f64,
    pub backward_half: f64,
}

/// Mean of `log ∂x f` along `n` forward steps and of `log ∂x f^{-1}` along
/// `n` backward steps; converged when halving the window moves both by less
/// than `tol`.
pub fn lyapunov_pointwise(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n_max: u64,
    tol: f64,
) -> Result<LyapunovEstimate, MapError> {
    let n = n_max.max(2);
    let half = n / 2;
    let mut fh = 0.0;
    let f = iterate_forward_with(sys, theta0, x0, n, |s| {
        if s.k == half {
            fh = s.log_dx;
        }
    });
    let mut bh = 0.0;
    let b = iterate_backward_with(sys, theta0, x0, n, |s| {
        if s.k == half {
            bh = s.log_dx;
        }
    })?;
    let (fw, bw) = (f.log_dx / n as f64, b.log_dx / n as f64);
    let (fwh, bwh) = (fh / half as f64, bh / half as f64);
    let converged = (fw - fwh).abs() < tol && (bw - bwh).abs() < tol;
    Ok(LyapunovEstimate {
        forward: fw,
        backward: bw,
        window: n,
        converged,
        forward_half: fwh,
        backward_half: bwh,
    })
}

/// Forward exponents `log ∂x f^n / n` at each requested window, one pass.
pub fn forward_exponents(sys: &QpfSystem, theta0: f64, x0: f64, windows: &[u64]) -> Vec<f64> {
    let n = windows.iter().copied().max().unwrap_or(0);
    let mut out = vec![0.0; windows.len()];
    iterate_forward_with(sys, theta0, x0, n, |s| {
        for (i, &w) in windows.iter().enumerate() {
            if s.k == w && w > 0 {
                out[i] = s.log_dx / w as f64;
            }
        }
    });
    out
}

/// Backward exponents `log ∂x f^{-n} / n` at each requested window.
pub fn backward_exponents(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    windows: &[u64],
) -> Result<Vec<f64>, MapError> {
    let n = windows.iter().copied().max().unwrap_or(0);
    let mut out = vec![0.0; windows.len()];
    iterate_backward_with(sys, theta0, x0, n, |s| {
        for (i, &w) in windows.iter().enumerate() {
            if s.k == w && w > 0 {
                out[i] = s.log_dx / w as f64;
            }
        }
    })?;
    Ok(out)
}

/// Finite-window exponents of the true orbit segments that pass near a point.
///
/// An expanding forward segment cannot be followed by forward iteration in
/// floating point; it is recovered instead by iterating backward from
/// `θ₀ + (n+T)ω`, which converges onto the segment. Symmetrically for the
/// backward segment. Offsets report how far the recovered segments start
/// from `x₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowedExponents {
    pub windows: Vec<u64>,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub forward_offset: f64,
    pub backward_offset: f64,
}

pub fn shadowed_exponents(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    windows: &[u64],
    transient: u64,
) -> Result<ShadowedExponents, MapError> {
    let n = windows.iter().copied().max().unwrap_or(0);
    let total = n + transient;
    let w = sys.w();

    // forward segment: land at θ₀ + total·ω, then come back
    let end = iterate_forward(sys, theta0, x0, total);
    let mut xs = vec![0.0; (n + 1) as usize];
    iterate_backward_with(sys, end.theta, end.x, total, |s| {
        let k_from_start = total - s.k;
        if k_from_start <= n {
            xs[k_from_start as usize] = s.x;
        }
    })?;
    let mut forward = vec![0.0; windows.len()];
    let mut acc = 0.0;
    let mut th = theta0;
    for k in 0..n as usize {
        acc += sys.dx(th, xs[k]).ln();
        th = mod1(th + w);
        for (i, &win) in windows.iter().enumerate() {
            if win as usize == k + 1 {
                forward[i] = acc / win as f64;
            }
        }
    }
    let forward_offset = dist(xs[0], mod1(x0));

    // backward segment: land at θ₀ − total·ω, then come forward
    let start = iterate_backward(sys, theta0, x0, total)?;
    let mut ys = vec![0.0; (n + 1) as usize];
    iterate_forward_with(sys, start.theta, start.x, total, |s| {
        let back = total - s.k;
        if back <= n {
            ys[back as usize] = s.x;
        }
    });
    let mut backward = vec![0.0; windows.len()];
    let mut acc = 0.0;
    let mut th = theta0;
    for k in 1..=n as usize {
        th = mod1(th - w);
        acc -= sys.dx(th, ys[k]).ln();
        for (i, &win) in windows.iter().enumerate() {
            if win as usize == k {
                backward[i] = acc / win as f64;
            }
        }
    }
    let backward_offset = dist(ys[0], mod1(x0));
    Ok(ShadowedExponents {
        windows: windows.to_vec(),
        forward,
        backward,
        forward_offset,
        backward_offset,
    })
}

/// A candidate with positive finite-time exponents in both time directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkSourceHit {
    pub theta: f64,
    pub x: f64,
    pub exponents: ShadowedExponents,
}

/// Settings for [`sink_source_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkSourceConfig {
    pub windows: Vec<u64>,
    /// Required lower bound on both exponents.
    pub lambda_min: f64,
    /// Maximal offset between a candidate and the recovered segments.
    pub offset_tol: f64,
    pub transient: u64,
}

impl SinkSourceConfig {
    /// `λ_min = ½·(1/p)·log α`.
    pub fn lambda_from_alpha(alpha: f64, p: u32) -> f64 {
        0.5 * alpha.ln() / p as f64
    }
}

/// Candidates whose forward and backward exponents exceed `λ_min` on every
/// window, along orbit segments starting within `offset_tol` of the
/// candidate.
pub fn sink_source_search(
    sys: &QpfSystem,
    candidates: &[(f64, f64)],
    cfg: &SinkSourceConfig,
) -> Result<Vec<SinkSourceHit>, MapError> {
    use rayon::prelude::*;
    let results: Vec<Result<Option<SinkSourceHit>, MapError>> = candidates
        .par_iter()
        .map(|&(th, x)| {
            let e = shadowed_exponents(sys, th, x, &cfg.windows, cfg.transient)?;
            let ok = e.forward.iter().all(|&v| v > cfg.lambda_min)
                && e.backward.iter().all(|&v| v > cfg.lambda_min)
                && e.forward_offset <= cfg.offset_tol
                && e.backward_offset <= cfg.offset_tol;
            Ok(ok.then(|| SinkSourceHit {
                theta: th,
                x,
                exponents: e,
            }))
        })
        .collect();
    let mut hits = Vec::new();
    for r in results {
        if let Some(h) = r? {
            hits.push(h);
        }
    }
    Ok(hits)
}

// ---------------------------------------------------------------------------
// rotation numbers and deviations

/// `(F^n_{θ₀}(x₀) − x₀, F^{n/2}_{θ₀}(x₀) − x₀)`, fast path without
/// derivative tracking.
fn lift_displacements(sys: &QpfSystem, theta0: f64, x0: f64, n: u64) -> (f64, f64) {
    let w = sys.w();
    let (mut th, mut x) = (mod1(theta0), mod1(x0));
    let start = x;
    let mut wind: i64 = 0;
    let half = n / 2;
    let mut at_half = 0.0;
    for k in 0..n {
        if k == half {
            at_half = wind as f64 + (x - start);
        }
        let y = sys.lift(th, x);
        let fl = y.floor();
        wind += fl as i64;
        x = y - fl;
        if x >= 1.0 {
            x = 0.0;
            wind += 1;
        }
        th += w;
        if th >= 1.0 {
            th -= 1.0;
        }
    }
    (wind as f64 + (x - start), at_half)
}

/// Unreduced estimate `(F^n(x₀) − x₀)/n` and `|ρ̂(n) − ρ̂(n/2)|`.
pub fn rotation_number_lift(sys: &QpfSystem, theta0: f64, x0: f64, n: u64) -> (f64, f64) {
    let n = n.max(1);
    let (full, half) = lift_displacements(sys, theta0, x0, n);
    let r = full / n as f64;
    let h = n / 2;
    let err = if h > 0 {
        (r - half / h as f64).abs()
    } else {
        f64::INFINITY
    };
    (r, err)
}

/// `ρ̂ mod 1` and, when requested, the half-window error estimate (NaN otherwise).
pub fn rotation_number(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n: u64,
    with_error: bool,
) -> (f64, f64) {
    let (r, e) = rotation_number_lift(sys, theta0, x0, n);
    (mod1(r), if with_error { e } else { f64::NAN })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub rho: f64,
    pub deviation: Vec<f64>,
    pub running_sup: Vec<f64>,
}

/// `F^k_θ(x) − x − kρ` for `k = 1..n` and its running sup of absolute values.
/// `rho` is the unreduced rotation number; estimated from the same orbit
/// when absent.
pub fn deviation_profile(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n: u64,
    rho: Option<f64>,
) -> DeviationProfile {
    let rho = rho.unwrap_or_else(|| rotation_number_lift(sys, theta0, x0, n).0);
    let mut deviation = Vec::with_capacity(n as usize);
    let mut running_sup = Vec::with_capacity(n as usize);
    let mut sup: f64 = 0.0;
    let w = sys.w();
    let (mut th, mut x) = (mod1(theta0), mod1(x0));
    let start = x;
    let mut wind: i64 = 0;
    for k in 1..=n {
        let y = sys.lift(th, x);
        let fl = y.floor();
        wind += fl as i64;
        x = y - fl;
        if x >= 1.0 {
            x = 0.0;
            wind += 1;
        }
        th = mod1(th + w);
        let dev = wind as f64 + (x - start) - k as f64 * rho;
        sup = sup.max(dev.abs());
        deviation.push(dev);
        running_sup.push(sup);
    }
    DeviationProfile {
        rho,
        deviation,
        running_sup,
    }
}

// ---------------------------------------------------------------------------
// graphs and point clouds

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLyapunov {
    pub value: f64,
    /// Largest `d(f_θ(φ(θ)), φ(θ+ω))` over consecutive sample pairs.
    pub residual: f64,
    /// False when the residual exceeds the tolerance.
    pub invariant: bool,
}

/// `∫ log ∂x f_θ(φ(θ)) dθ` estimated by binning samples into `n_theta`
/// θ-bins and averaging the bin means.
pub fn graph_lyapunov(
    sys: &QpfSystem,
    samples: &[(f64, f64)],
    n_theta: usize,
    tol: f64,
) -> GraphLyapunov {
    let nb = n_theta.max(1);
    let mut sum = vec![0.0; nb];
    let mut cnt = vec![0usize; nb];
    for &(th, x) in samples {
        let b = ((mod1(th) * nb as f64) as usize).min(nb - 1);
        sum[b] += sys.dx(th, x).ln();
        cnt[b] += 1;
    }
    let (mut acc, mut used) = (0.0, 0usize);
    for b in 0..nb {
        if cnt[b] > 0 {
            acc += sum[b] / cnt[b] as f64;
            used += 1;
        }
    }
    let value = if used > 0 {
        acc / used as f64
    } else {
        f64::NAN
    };
    let mut residual: f64 = 0.0;
    let w = sys.w();
    for pair in samples.windows(2) {
        let ((t0, x0), (t1, x1)) = (pair[0], pair[1]);
        if dist(mod1(t0 + w), t1) < 1e-9 {
            residual = residual.max(dist(sys.eval(t0, x0), x1));
        } else if dist(mod1(t1 + w), t0) < 1e-9 {
            residual = residual.max(dist(sys.eval(t1, x1), x0));
        }
    }
    GraphLyapunov {
        value,
        residual,
        invariant: residual <= tol,
    }
}

/// Forward orbit after a transient.
pub fn attractor_sample(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n_transient: u64,
    n_keep: u64,
) -> Vec<(f64, f64)> {
    let (mut th, mut x) = (mod1(theta0), mod1(x0));
    for _ in 0..n_transient {
        (th, x) = sys.step(th, x);
    }
    let mut out = Vec::with_capacity(n_keep as usize);
    for _ in 0..n_keep {
        out.push((th, x));
        (th, x) = sys.step(th, x);
    }
    out
}

/// Backward orbit after a transient; samples the repeller.
pub fn repeller_sample(
    sys: &QpfSystem,
    theta0: f64,
    x0: f64,
    n_transient: u64,
    n_keep: u64,
) -> Result<Vec<(f64, f64)>, MapError> {
    let mut out = Vec::with_capacity(n_keep as usize);
    iterate_backward_with(sys, theta0, x0, n_transient + n_keep, |s| {
        if s.k >= n_transient && s.k < n_transient + n_keep {
            out.push((s.theta, s.x));
        }
    })?;
    Ok(out)
}

/// Fraction of occupied cells in an `n_bins × n_bins` grid over the torus.
pub fn orbit_density(samples: &[(f64, f64)], n_bins: usize) -> f64 {
    let nb = n_bins.max(1);
    let mut occ = vec![false; nb * nb];
    for &(th, x) in samples {
        let i = ((mod1(th) * nb as f64) as usize).min(nb - 1);
        let j = ((mod1(x) * nb as f64) as usize).min(nb - 1);
        occ[i * nb + j] = true;
    }
    occ.iter().filter(|&&o| o).count() as f64 / (nb * nb) as f64
}

// ---------------------------------------------------------------------------
// tongues

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TongueBoundary {
    pub tau_minus: CirclePoint,
    pub tau_plus: CirclePoint,
    pub width: f64,
    pub rho_target: f64,
    /// Smallest width distinguishable from a point: `2 tol_τ + 2 tol_ρ / ρ′`
    /// with `ρ′` the secant slope of `ρ(τ)` across the plateau.
    pub resolution: f64,
    pub resolved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TongueConfig {
    pub rho_target: f64,
    pub tol_rho: f64,
    pub tol_tau: f64,
    /// Iterations per rotation-number evaluation.
    pub n: u64,
    pub theta0: f64,
    pub x0: f64,
}

impl TongueConfig {
    pub fn new(rho_target: f64, tol_rho: f64, tol_tau: f64, n: u64) -> Self {
        TongueConfig {
            rho_target,
            tol_rho,
            tol_tau,
            n,
            theta0: 0.0,
            x0: 0.0,
        }
    }
}

/// Plateau `{τ : |ρ(τ) − ρ*| ≤ tol_ρ}` of a non-decreasing `ρ(τ)` located by
/// two bisections on `[lo, hi]`, where `ρ(lo) < ρ* < ρ(hi)` strictly.
pub fn plateau_bisection<R: Fn(f64) -> f64>(
    rho: R,
    lo: f64,
    hi: f64,
    rho_target: f64,
    tol_rho: f64,
    tol_tau: f64,
) -> Result<(f64, f64), DynamicsError> {
    let below = |t: f64| rho(t) <= rho_target + tol_rho;
    let above = |t: f64| rho(t) >= rho_target - tol_rho;
    if !below(lo) || below(hi) || above(lo) || !above(hi) {
        return Err(DynamicsError::BracketFailure { rho_target, lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol_tau {
        let m = 0.5 * (a + b);
        if below(m) {
            a = m
        } else {
            b = m
        }
    }
    let tau_plus = 0.5 * (a + b);
    let (mut a, mut b) = (lo, hi);
    while b - a > tol_tau {
        let m = 0.5 * (a + b);
        if above(m) {
            b = m
        } else {
            a = m
        }
    }
    let tau_minus = 0.5 * (a + b);
    if tau_plus < tau_minus - 2.0 * tol_tau {
        return Err(DynamicsError::BracketFailure {
            rho_target,
            lo: tau_minus,
            hi: tau_plus,
        });
    }
    Ok((tau_minus, tau_plus))
}

/// Boundaries `τ±` of the tongue `ρ = ρ*` of the Arnold family at fixed
/// `(a, b, d, ω)`. The `tau` field of `params` is ignored.
pub fn tongue_boundary(
    omega: f64,
    params: ArnoldParams,
    cfg: &TongueConfig,
) -> Result<TongueBoundary, DynamicsError> {
    if !(cfg.tol_rho > 0.0 && cfg.tol_tau > 0.0 && cfg.n > 0) {
        return Err(DynamicsError::InvalidArgument(
            "tolerances and n must be positive".into(),
        ));
    }
    QpfSystem::new(CirclePoint::new(omega), Family::Arnold(params))?;
    let reach = params.a + params.b.abs() + 0.01;
    let rho_at = |tau: f64| {
        let p = ArnoldParams { tau, ..params };
        let sys = QpfSystem::new(CirclePoint::new(omega), Family::Arnold(p))
            .expect("only tau differs from validated parameters");
        rotation_number_lift(&sys, cfg.theta0, cfg.x0, cfg.n).0
    };
    let (lo, hi) = (cfg.rho_target - reach, cfg.rho_target + reach);
    let (tm, tp) = plateau_bisection(rho_at, lo, hi, cfg.rho_target, cfg.tol_rho, cfg.tol_tau)?;
    let width = (tp - tm).max(0.0);
    let delta = width.max(100.0 * cfg.tol_tau);
    let slope = (rho_at(tp + delta) - rho_at(tm - delta)) / (tp - tm + 2.0 * delta);
    let resolution = 2.0 * cfg.tol_tau
        + if slope > 0.0 {
            2.0 * cfg.tol_rho / slope
        } else {
            f64::INFINITY
        };
    Ok(TongueBoundary {
        tau_minus: CirclePoint::new(tm),
        tau_plus: CirclePoint::new(tp),
        width,
        rho_target: cfg.rho_target,
        resolution,
        resolved: width > resolution,
    })
}
