//! Numerical estimates of the expansion/contraction constants of a fibre-map
//! family, verdicts on the hypotheses (A1)–(A8), and the derived constants
//! `β`, `α±`, `𝒮`, `γ` that drive the critical-set construction.

use crate::circle::{ccw_length, centered, CircleInterval, CirclePoint, RegionUnion};
use crate::maps::{cos_power_slope_max, ArnoldParams, Forcing, PinchedParams, QpfSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConditionsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("series diverges: alpha_minus = {alpha_minus}, alpha_plus = {alpha_plus}")]
    Divergence { alpha_minus: f64, alpha_plus: f64 },
}

/// Pass/fail for one hypothesis. Failures always carry a witness `(θ, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub witness: Option<(f64, f64)>,
}

impl Verdict {
    fn new(name: &str, pass: bool, margin: f64, witness: (f64, f64)) -> Self {
        Verdict {
            name: name.into(),
            pass,
            margin,
            witness: if pass { None } else { Some(witness) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub e: CircleInterval,
    pub c: CircleInterval,
    pub i0: RegionUnion,
    pub i0_prime: Option<RegionUnion>,
    pub alpha_l: f64,
    pub alpha_c: f64,
    pub alpha_e: f64,
    pub alpha_u: f64,
    #[serde(rename = "S")]
    pub s_big: f64,
    pub s: f64,
    pub s_prime: Option<f64>,
    pub eps0: f64,
    #[serde(rename = "N")]
    pub n_components: usize,
    /// `+1` for an upwards crossing on the component, `−1` downwards, `0` if
    /// `∂θ f` changes sign there.
    pub crossing: Vec<i8>,
    /// Largest change of `∂x f` between neighbouring grid points.
    pub dx_margin: f64,
    /// Largest change of `∂θ f` between neighbouring grid points.
    pub dtheta_margin: f64,
    pub verdicts: Vec<Verdict>,
}

impl HypothesisReport {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn ordering_holds(&self) -> bool {
        0.0 < self.alpha_l
            && self.alpha_l < self.alpha_c
            && self.alpha_c < 1.0
            && 1.0 < self.alpha_e
            && self.alpha_e < self.alpha_u
    }

    pub fn e_minus(&self) -> f64 {
        self.e.lo().value()
    }

    pub fn e_plus(&self) -> f64 {
        self.e.hi().value()
    }

    pub fn c_minus(&self) -> f64 {
        self.c.lo().value()
    }

    pub fn c_plus(&self) -> f64 {
        self.c.hi().value()
    }
}

/// `n` points spanning the closed arc `I`, endpoints included.
fn arc_grid(i: &CircleInterval, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| i.at(k as f64 / (n - 1) as f64)).collect()
}

fn circle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / n as f64).collect()
}

#[derive(Clone, Copy)]
struct Extreme {
    val: f64,
    at: (f64, f64),
}

fn scan<F: Fn(f64, f64) -> f64 + Sync>(
    thetas: &[f64],
    xs: &[f64],
    f: F,
    want_max: bool,
) -> Extreme {
    let init = Extreme {
        val: if want_max {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
        at: (f64::NAN, f64::NAN),
    };
    let better = move |a: Extreme, b: Extreme| {
        let pick_b = if want_max {
            b.val > a.val
        } else {
            b.val < a.val
        };
        if pick_b {
            b
        } else {
            a
        }
    };
    thetas
        .par_iter()
        .map(|&t| {
            xs.iter().fold(init, |acc, &x| {
                better(
                    acc,
                    Extreme {
                        val: f(t, x),
                        at: (t, x),
                    },
                )
            })
        })
        .reduce(|| init, better)
}

fn neighbour_variation<F: Fn(f64) -> f64>(grid: &[f64], f: F) -> f64 {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    vals.windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Grid estimates of every hypothesis constant and verdicts for (A1)–(A7),
/// plus (A8) when `i0_prime` is given.
pub fn estimate_bounds(
    sys: &QpfSystem,
    grid_theta: usize,
    grid_x: usize,
    e: CircleInterval,
    c: CircleInterval,
    i0: &RegionUnion,
    i0_prime: Option<&RegionUnion>,
) -> Result<HypothesisReport, ConditionsError> {
    if e.intersects(&c) {
        return Err(ConditionsError::Config("E and C intersect".into()));
    }
    if e.is_degenerate() || c.is_degenerate() {
        return Err(ConditionsError::Config(
            "E and C need positive length".into(),
        ));
    }
    if i0.is_empty() || i0.is_full() {
        return Err(ConditionsError::Config(
            "critical region must be a proper nonempty union".into(),
        ));
    }
    let thetas = circle_grid(grid_theta);
    let xs = circle_grid(grid_x);
    let xe = arc_grid(&e, grid_x);
    let xc = arc_grid(&c, grid_x);
    let dx = |t: f64, x: f64| sys.dx(t, x);
    let adth = |t: f64, x: f64| sys.dtheta(t, x).abs();

    let lo = scan(&thetas, &xs, dx, false);
    let hi = scan(&thetas, &xs, dx, true);
    let on_e = scan(&thetas, &xe, dx, false);
    let on_c = scan(&thetas, &xc, dx, true);
    let s_grid = scan(&thetas, &xs, adth, true);
    let s_big = s_grid.val.max(sys.forcing().deriv_bound());

    let comp_grids: Vec<Vec<f64>> = i0
        .components()
        .iter()
        .map(|i| arc_grid(i, grid_theta))
        .collect();
    let i0_thetas: Vec<f64> = comp_grids.iter().flatten().copied().collect();
    let s_small = scan(&i0_thetas, &xs, adth, false);

    let crossing: Vec<i8> = comp_grids
        .iter()
        .map(|g| {
            let signs: Vec<f64> = g.iter().map(|&t| sys.dtheta(t, 0.0)).collect();
            if signs.iter().all(|&v| v > 0.0) {
                1
            } else if signs.iter().all(|&v| v < 0.0) {
                -1
            } else {
                0
            }
        })
        .collect();

    let dx_margin = neighbour_variation(&xs, |x| sys.dx(0.0, x))
        .max(neighbour_variation(&xe, |x| sys.dx(0.0, x)))
        .max(neighbour_variation(&xc, |x| sys.dx(0.0, x)));
    let dtheta_margin = neighbour_variation(&thetas, |t| sys.dtheta(t, 0.0));

    let mut verdicts = Vec::new();

    // (A1): image of the closed arc [e⁺, e⁻] is the arc [f(e⁺), f(e⁻)]
    let (em, ep) = (e.lo().value(), e.hi().value());
    let (cm, clen) = (c.lo(), c.length());
    let outside: Vec<f64> = thetas
        .iter()
        .copied()
        .filter(|&t| !i0.contains_val(t))
        .collect();
    let mut a1 = Extreme {
        val: f64::INFINITY,
        at: (f64::NAN, f64::NAN),
    };
    for &t in &outside {
        let y1 = CirclePoint::new(sys.eval(t, ep));
        let y2 = CirclePoint::new(sys.eval(t, em));
        let off = ccw_length(cm, y1);
        let span = ccw_length(y1, y2);
        let left = off;
        let right = clen - off - span;
        let m = left.min(right);
        if m < a1.val {
            a1 = Extreme {
                val: m,
                at: (t, if left <= right { ep } else { em }),
            };
        }
    }
    verdicts.push(Verdict::new("A1", a1.val > 0.0, a1.val, a1.at));

    let ordering_gaps = [
        (lo.val, lo.at),
        (on_c.val - lo.val, lo.at),
        (1.0 - on_c.val, on_c.at),
        (on_e.val - 1.0, on_e.at),
        (hi.val - on_e.val, hi.at),
    ];
    let worst =
        ordering_gaps
            .iter()
            .copied()
            .fold((f64::INFINITY, (f64::NAN, f64::NAN)), |a, b| {
                if b.0 < a.0 {
                    b
                } else {
                    a
                }
            });
    verdicts.push(Verdict::new("A2", worst.0 > 0.0, worst.0, worst.1));
    verdicts.push(Verdict::new("A3", on_e.val > 1.0, on_e.val - 1.0, on_e.at));
    verdicts.push(Verdict::new("A4", on_c.val < 1.0, 1.0 - on_c.val, on_c.at));
    verdicts.push(Verdict::new("A5", s_big.is_finite(), s_big, s_grid.at));
    let a6 = s_small.val > 0.0 && s_small.val < s_big;
    verdicts.push(Verdict::new("A6", a6, s_small.val, s_small.at));

    // (A7): one crossing of f_θ(c⁺) = e⁻ and of f_θ(c⁻) = e⁺ per component
    let cp = c.hi().value();
    let mut a7_ok = true;
    let mut a7_witness = (f64::NAN, f64::NAN);
    let mut a7_worst = i64::MAX;
    for g in &comp_grids {
        for (from, to) in [(cp, em), (cm.value(), ep)] {
            let vals: Vec<f64> = g
                .iter()
                .map(|&t| centered(sys.eval(t, from) - to))
                .collect();
            let mut roots = Vec::new();
            for k in 1..vals.len() {
                let (a, b) = (vals[k - 1], vals[k]);
                if a.abs() < 0.25 && b.abs() < 0.25 && (a == 0.0 || a.signum() != b.signum()) {
                    roots.push(g[k]);
                }
            }
            let count = roots.len() as i64;
            a7_worst = a7_worst.min(if count == 1 { 1 } else { 0 });
            if count != 1 && a7_ok {
                a7_ok = false;
                let t = if count == 0 { g[g.len() / 2] } else { roots[1] };
                a7_witness = (t, from);
            }
        }
    }
    verdicts.push(Verdict::new("A7", a7_ok, a7_worst as f64, a7_witness));

    let mut s_prime = None;
    if let Some(ip) = i0_prime {
        let included = i0.is_subset_of(ip);
        let rest = ip.complement();
        let rest_thetas: Vec<f64> = rest
            .components()
            .iter()
            .flat_map(|i| arc_grid(i, grid_theta))
            .collect();
        let sp = if rest_thetas.is_empty() {
            Extreme {
                val: 0.0,
                at: (f64::NAN, f64::NAN),
            }
        } else {
            scan(&rest_thetas, &xc, adth, true)
        };
        s_prime = Some(sp.val);
        let witness = if included {
            sp.at
        } else {
            let stray = i0
                .components()
                .iter()
                .find(|i| !ip.components().iter().any(|o| i.is_subset_of(o)))
                .map(|i| i.midpoint().value())
                .unwrap_or(f64::NAN);
            (stray, 0.0)
        };
        let pass = included && sp.val < s_big;
        verdicts.push(Verdict::new("A8", pass, s_big - sp.val, witness));
    }

    Ok(HypothesisReport {
        e,
        c,
        i0: i0.clone(),
        i0_prime: i0_prime.cloned(),
        alpha_l: lo.val,
        alpha_c: on_c.val,
        alpha_e: on_e.val,
        alpha_u: hi.val,
        s_big,
        s: s_small.val,
        s_prime,
        eps0: i0.max_component_length(),
        n_components: i0.len(),
        crossing,
        dx_margin,
        dtheta_margin,
        verdicts,
    })
}

/// Regions and `θ`-derivative constants chosen for one of the two families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionChoice {
    pub e: CircleInterval,
    pub c: CircleInterval,
    pub i0: RegionUnion,
    pub i0_prime: Option<RegionUnion>,
    pub eps: f64,
    pub s: f64,
    #[serde(rename = "S")]
    pub s_big: f64,
    pub s_prime: Option<f64>,
    /// Constant `A` with `s > √d/A` for large `d` (Arnold family only).
    pub a_const: Option<f64>,
}

impl RegionChoice {
    pub fn report(
        &self,
        sys: &QpfSystem,
        grid_theta: usize,
        grid_x: usize,
    ) -> Result<HypothesisReport, ConditionsError> {
        estimate_bounds(
            sys,
            grid_theta,
            grid_x,
            self.e,
            self.c,
            &self.i0,
            self.i0_prime.as_ref(),
        )
    }
}

/// `{θ : β·cos 2πθ ∈ (lo, hi)}` for `β > 0`, as circle intervals.
fn cosine_preimage(beta: f64, lo: f64, hi: f64) -> Vec<CircleInterval> {
    let (l, u) = (lo / beta, hi / beta);
    if l >= 1.0 || u <= -1.0 {
        return Vec::new();
    }
    let t_hi = if l <= -1.0 { 0.5 } else { l.acos() / TAU };
    let t_lo = if u >= 1.0 { 0.0 } else { u.acos() / TAU };
    if t_lo == 0.0 && t_hi == 0.5 {
        return vec![CircleInterval::full()];
    }
    if t_lo == 0.0 {
        return vec![CircleInterval::from_reals(-t_hi, t_hi)];
    }
    if t_hi == 0.5 {
        return vec![CircleInterval::from_reals(t_lo, 1.0 - t_lo)];
    }
    vec![
        CircleInterval::from_reals(t_lo, t_hi),
        CircleInterval::from_reals(1.0 - t_hi, 1.0 - t_lo),
    ]
}

/// Regions for `h_α(x) + β cos 2πθ`: `e± = ±α^{−(2p−1)/2p}`, `c± = ∓ε/2`
/// and `𝓘₀ = {θ : g(θ) mod 1 ∈ B_ε(½)}`.
pub fn choose_regions_pinched(
    params: &PinchedParams,
    eps: f64,
) -> Result<RegionChoice, ConditionsError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(ConditionsError::Config(format!(
            "eps must lie in (0, 1/2), got {eps}"
        )));
    }
    let beta = match params.g {
        Forcing::Cosine { beta } if beta > 0.0 => beta,
        _ => {
            return Err(ConditionsError::Config(
                "pinched regions need g = beta cos(2 pi theta), beta > 0".into(),
            ))
        }
    };
    let p = params.p as f64;
    let e_r = params.alpha.powf(-(2.0 * p - 1.0) / (2.0 * p));
    let e = CircleInterval::from_reals(-e_r, e_r);
    let c = CircleInterval::from_reals(eps / 2.0, 1.0 - eps / 2.0);
    let mut parts = Vec::new();
    let mut k = -(beta + eps + 1.0).ceil() as i64;
    while (k as f64) + 0.5 - eps < beta {
        let center = k as f64 + 0.5;
        parts.extend(cosine_preimage(beta, center - eps, center + eps));
        k += 1;
    }
    let i0 = RegionUnion::new(parts);
    let g = Forcing::Cosine { beta };
    let mut s = f64::INFINITY;
    for comp in i0.components() {
        if comp.contains_interior(0.0) || comp.contains_interior(0.5) {
            s = 0.0;
        }
        s = s
            .min(g.deriv(comp.lo().value()).abs())
            .min(g.deriv(comp.hi().value()).abs());
    }
    Ok(RegionChoice {
        e,
        c,
        i0,
        i0_prime: None,
        eps,
        s,
        s_big: TAU * beta,
        s_prime: None,
        a_const: None,
    })
}

/// `|g_d'|` at the endpoint cases `g_d = v` of the critical region, for
/// `g_d = β cos(2πθ)^d`.
fn cos_power_slope_at_level(beta: f64, d: f64, v: f64) -> f64 {
    TAU * beta * d * v.powf((d - 1.0) / d) * (1.0 - v.powf(2.0 / d)).sqrt()
}

/// The three candidate values for `min |g_d'|` on `𝓘₀`: the two endpoint
/// levels `ε`, `1 − ε` and the inflection point `sin² 2πθ = 1/d` when it lies
/// inside the region.
pub fn arnold_slope_cases(beta: f64, d: u32, eps: f64) -> Vec<f64> {
    let df = d as f64;
    let mut v = vec![
        cos_power_slope_at_level(beta, df, eps),
        cos_power_slope_at_level(beta, df, 1.0 - eps),
    ];
    let g_infl = (1.0 - 1.0 / df).powf(df / 2.0);
    if g_infl >= eps && g_infl <= 1.0 - eps {
        v.push(TAU * beta * df.sqrt() * (1.0 - 1.0 / df).powf((df - 1.0) / 2.0));
    }
    v
}

/// Regions for `x + τ + a sin 2πx + β cos(2πθ)^d` with `0 ≤ τ < a < 1/2π`.
///
/// `E = [−¼+η, ¼−η]` and `C = [¼+η, ¾−η]` bracket the repelling and
/// attracting fixed points of `h`; `η` defaults to `(a − τ)/8`.
pub fn choose_regions_arnold(
    params: &ArnoldParams,
    eta: Option<f64>,
) -> Result<RegionChoice, ConditionsError> {
    let ArnoldParams { tau, a, b, d } = *params;
    if !(0.0 <= tau && tau < a && a < 1.0 / TAU) {
        return Err(ConditionsError::Config(format!(
            "h needs 0 <= tau < a < 1/(2 pi), got tau={tau}, a={a}"
        )));
    }
    if d % 2 == 0 || b == 0.0 {
        return Err(ConditionsError::Config(
            "forcing needs odd d and b != 0".into(),
        ));
    }
    let eta = eta.unwrap_or((a - tau) / 8.0);
    let h = |x: f64| x + tau + a * (TAU * x).sin();
    let e = CircleInterval::from_reals(-0.25 + eta, 0.25 - eta);
    let c = CircleInterval::from_reals(0.25 + eta, 0.75 - eta);
    // h(𝕋¹ ∖ E) is the arc from h(e⁺) to h(e⁻ + 1)
    let left = h(0.25 - eta) - (0.25 + eta);
    let right = (0.75 - eta) - h(0.75 + eta);
    let eps = 0.5 * left.min(right);
    if !(eps > 0.0) {
        return Err(ConditionsError::Config(
            "h(cl(E^c)) is not inside int(C)".into(),
        ));
    }
    let df = d as f64;
    let beta = b.abs();
    let lo = eps.powf(1.0 / df);
    let hi = (1.0 - eps).powf(1.0 / df);
    let (t1, t2) = (hi.acos() / TAU, lo.acos() / TAU);
    let i0 = RegionUnion::new(vec![
        CircleInterval::from_reals(t1, t2),
        CircleInterval::from_reals(-t2, -t1),
        CircleInterval::from_reals(0.5 - t2, 0.5 - t1),
        CircleInterval::from_reals(0.5 + t1, 0.5 + t2),
    ]);
    let r = df.powf(-1.0 / 3.0);
    let i0_prime = RegionUnion::new(vec![
        CircleInterval::ball(0.0, r),
        CircleInterval::ball(0.5, r),
    ]);
    let s = arnold_slope_cases(beta, d, eps)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let s_big = TAU * beta * df * cos_power_slope_max(d);
    let s_prime = TAU * beta * df * (1.0 - df.powf(-2.0 / 3.0)).powf(df - 1.0);
    let a_const =
        1.0 / (eps * eps.ln().abs().sqrt()).min((1.0 - eps) * (1.0 - eps).ln().abs().sqrt());
    Ok(RegionChoice {
        e,
        c,
        i0,
        i0_prime: Some(i0_prime),
        eps,
        s,
        s_big,
        s_prime: Some(s_prime),
        a_const: Some(a_const),
    })
}

// ---------------------------------------------------------------------------
// derived constants

/// `Σ_{k≥m} k x^k` for `0 ≤ x < 1`.
pub fn sum_k_xk(x: f64, m: u64) -> f64 {
    let mf = m as f64;
    x.powf(mf) * (mf - (mf - 1.0) * x) / ((1.0 - x) * (1.0 - x))
}

/// `Σ_{k≥m} (k+1) x^k` for `0 ≤ x < 1`.
pub fn sum_k1_xk(x: f64, m: u64) -> f64 {
    sum_k_xk(x, m) + x.powf(m as f64) / (1.0 - x)
}

/// `Σ_{j≥0} 1/K_j = 2^{1−t}/𝒩²` for `K_j = 2^{j+t}𝒩²`.
pub fn k_series_sum(t: u32, n: usize) -> f64 {
    2f64.powi(1 - t as i32) / (n * n) as f64
}

/// Smallest `t ≥ 4` with `2^{2−t}/𝒩² ≤ log((p²+2)/(p²+1))`.
pub fn minimal_t(p: u32, n: usize) -> u32 {
    let p2 = (p * p) as f64;
    let bound = ((p2 + 2.0) / (p2 + 1.0)).ln();
    let mut t = 4;
    while 2f64.powi(2 - t as i32) / (n * n) as f64 > bound {
        t += 1;
    }
    t as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub p: u32,
    pub alpha: f64,
    pub beta_n: Vec<f64>,
    pub beta: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    #[serde(rename = "Scal")]
    pub scal: f64,
    pub gamma: f64,
    /// `𝒮′` and `γ′` of the refined estimate, when `M₀` and `s′` are known.
    pub scal_refined: Option<f64>,
    pub gamma_refined: Option<f64>,
    pub t: u32,
    #[serde(rename = "K")]
    pub k: Vec<u64>,
    #[serde(rename = "N_seq")]
    pub n_seq: Vec<f64>,
    pub eps_seq: Vec<f64>,
    /// `Σ 1/K_j`, and whether it is below `1/(6𝒩²)`.
    pub k_sum: f64,
    pub k_condition: bool,
    pub scal_condition: bool,
    pub gamma_condition: bool,
}

/// Levels materialized for `K`, `β_n` and the `N`/`ε` sequences.
pub const DERIVED_LEVELS: usize = 8;

/// `N₀ = N0, N_{n+1} = α^{N_n/16p}` until the values overflow; `ε₀` given,
/// `ε_n = (2/s)·α^{−N_{n−1}/p}`.
pub fn basic_sequences(
    alpha: f64,
    p: u32,
    n0: f64,
    eps0: f64,
    s: f64,
    levels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pf = p as f64;
    let mut n_seq = vec![n0];
    while n_seq.len() < levels {
        let next = alpha.powf(n_seq[n_seq.len() - 1] / (16.0 * pf));
        if !next.is_finite() {
            break;
        }
        n_seq.push(next);
    }
    let mut eps_seq = vec![eps0];
    for w in &n_seq {
        if eps_seq.len() >= n_seq.len() {
            break;
        }
        eps_seq.push(2.0 / s * alpha.powf(-w / pf));
    }
    (n_seq, eps_seq)
}

/// Constants of the critical-set geometry from measured hypothesis
/// constants, for the schedule `K_n = 2^{n+t}𝒩²`. `m0` enables the refined
/// `𝒮′`, `γ′` when the report carries `s′`.
pub fn derived_constants(
    report: &HypothesisReport,
    p: u32,
    alpha: f64,
    t: u32,
    m0: Option<u64>,
) -> Result<DerivedConstants, ConditionsError> {
    if t < 4 {
        return Err(ConditionsError::Config(format!(
            "t must be at least 4, got {t}"
        )));
    }
    if !report.ordering_holds() {
        return Err(ConditionsError::Config(
            "constants violate 0 < a_l < a_c < 1 < a_e < a_u".into(),
        ));
    }
    let nn = report.n_components.max(1);
    let k: Vec<u64> = (0..DERIVED_LEVELS)
        .map(|j| (1u64 << (j as u32 + t)) * (nn * nn) as u64)
        .collect();
    let mut beta_n = vec![1.0];
    for kj in &k {
        let last = *beta_n.last().unwrap();
        beta_n.push(last * (1.0 - 1.0 / *kj as f64));
    }
    // infinite product: log terms decay geometrically
    let mut log_beta = 0.0;
    let mut j = 0u32;
    loop {
        let kj = 2f64.powi((j + t) as i32) * (nn * nn) as f64;
        let term = (-1.0 / kj).ln_1p();
        log_beta += term;
        if term.abs() < 1e-18 {
            break;
        }
        j += 1;
    }
    let beta = log_beta.exp();
    let alpha_minus = report.alpha_c.powf(beta) * report.alpha_u.powf(1.0 - beta);
    let alpha_plus = report.alpha_e.powf(beta) * report.alpha_l.powf(1.0 - beta);
    if !(alpha_minus < 1.0 && alpha_plus > 1.0) {
        return Err(ConditionsError::Divergence {
            alpha_minus,
            alpha_plus,
        });
    }
    let (s, sb) = (report.s, report.s_big);
    let inv_p = 1.0 / alpha_plus;
    let geo_minus = 1.0 / (1.0 / alpha_minus - 1.0);
    let geo_plus = 1.0 / (alpha_plus - 1.0);
    let scal = s - sb * (geo_minus + geo_plus);
    let series = sum_k_xk(alpha_minus, 1) + sum_k1_xk(inv_p, 1);
    let gamma = sb * series;
    let (scal_refined, gamma_refined) = match (m0, report.s_prime) {
        (Some(m0), Some(sp)) => {
            let sr = s
                - ((sp + alpha_minus.powf(m0 as f64) * sb) * geo_minus
                    + (sp + inv_p.powf(m0 as f64) * sb) * geo_plus);
            let tail = sum_k_xk(alpha_minus, m0 + 1) + sum_k1_xk(inv_p, m0 + 1);
            (Some(sr), Some(sp * series + sb * tail))
        }
        _ => (None, None),
    };
    let k_sum = k_series_sum(t, nn);
    let (n_seq, eps_seq) = basic_sequences(
        alpha,
        p,
        3.0,
        report.i0.min_component_length(),
        s,
        DERIVED_LEVELS,
    );
    Ok(DerivedConstants {
        p,
        alpha,
        beta_n,
        beta,
        alpha_minus,
        alpha_plus,
        scal,
        gamma,
        scal_refined,
        gamma_refined,
        t,
        k,
        n_seq,
        eps_seq,
        k_sum,
        k_condition: k_sum < 1.0 / (6.0 * (nn * nn) as f64),
        scal_condition: scal >= s / 2.0,
        gamma_condition: gamma <= scal / 4.0,
    })
}

/// Range of `α` for which the measured constants are compatible with
/// `α_c⁻¹ = α_e = α^{2/p}` and `α_l⁻¹ = α_u = α^p`, read as `α_e ≥ α^{2/p}`,
/// `α_c ≤ α^{−2/p}`, `α_u ≤ α^p`, `α_l ≥ α^{−p}`, each up to `slack`.
pub fn theorem_alpha_range(report: &HypothesisReport, p: u32, slack: f64) -> Option<(f64, f64)> {
    let pf = p as f64;
    let hi = (report.alpha_e * slack)
        .powf(pf / 2.0)
        .min((report.alpha_c / slack).powf(-pf / 2.0));
    let lo = (report.alpha_u / slack)
        .powf(1.0 / pf)
        .max((report.alpha_l * slack).powf(-1.0 / pf));
    if lo <= hi && lo > 1.0 {
        Some((lo, hi))
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TheoremVariant {
    Basic,
    /// Constants `A`, `d` of the scaling conditions.
    Refined {
        a: f64,
        d: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub failures: Vec<String>,
    pub ordering_witness: Option<(f64, f64)>,
}

pub const DEFAULT_SLACK: f64 = 1.05;

fn check(name: &str, value: f64, bound: f64, pass: bool) -> Check {
    Check {
        name: name.into(),
        pass,
        value,
        bound,
    }
}

/// Verdict on the hypotheses of the basic or refined existence theorem.
pub fn certify_theorem_hypotheses(
    report: &HypothesisReport,
    derived: Option<&DerivedConstants>,
    which: TheoremVariant,
    slack: f64,
) -> Certification {
    let mut checks = Vec::new();
    for v in &report.verdicts {
        checks.push(check(&v.name, v.margin, 0.0, v.pass));
    }
    let ordering_witness = report.verdict("A2").and_then(|v| v.witness);
    match derived {
        None => checks.push(check("derived", f64::NAN, f64::NAN, false)),
        Some(dc) => {
            let a = dc.alpha;
            let q = dc.p as f64;
            checks.push(check(
                "alpha_e >= alpha^(2/p)",
                report.alpha_e,
                a.powf(2.0 / q) / slack,
                report.alpha_e * slack >= a.powf(2.0 / q),
            ));
            checks.push(check(
                "alpha_c <= alpha^(-2/p)",
                report.alpha_c,
                a.powf(-2.0 / q) * slack,
                report.alpha_c <= a.powf(-2.0 / q) * slack,
            ));
            checks.push(check(
                "alpha_u <= alpha^p",
                report.alpha_u,
                a.powf(q) * slack,
                report.alpha_u <= a.powf(q) * slack,
            ));
            checks.push(check(
                "alpha_l >= alpha^(-p)",
                report.alpha_l,
                a.powf(-q) / slack,
                report.alpha_l * slack >= a.powf(-q),
            ));
            checks.push(check(
                "K",
                dc.k_sum,
                1.0 / (6.0 * (report.n_components.pow(2)) as f64),
                dc.k_condition,
            ));
            match which {
                TheoremVariant::Basic => {
                    checks.push(check(
                        "Scal >= s/2",
                        dc.scal,
                        report.s / 2.0,
                        dc.scal_condition,
                    ));
                    checks.push(check(
                        "gamma <= Scal/4",
                        dc.gamma,
                        dc.scal / 4.0,
                        dc.gamma_condition,
                    ));
                }
                TheoremVariant::Refined { a: big_a, d } => {
                    checks.push(check(
                        "S < A d",
                        report.s_big,
                        big_a * d,
                        report.s_big < big_a * d,
                    ));
                    checks.push(check(
                        "s > sqrt(d)/A",
                        report.s,
                        d.sqrt() / big_a,
                        report.s > d.sqrt() / big_a,
                    ));
                    checks.push(check(
                        "eps0 < A d^(-1/3)",
                        report.eps0,
                        big_a * d.powf(-1.0 / 3.0),
                        report.eps0 < big_a * d.powf(-1.0 / 3.0),
                    ));
                    match (dc.scal_refined, dc.gamma_refined) {
                        (Some(sr), Some(gr)) => {
                            checks.push(check(
                                "Scal' >= s/2",
                                sr,
                                report.s / 2.0,
                                sr >= report.s / 2.0,
                            ));
                            checks.push(check("gamma' <= Scal'/4", gr, sr / 4.0, gr <= sr / 4.0));
                        }
                        _ => checks.push(check("refined constants", f64::NAN, f64::NAN, false)),
                    }
                }
            }
        }
    }
    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.clone())
        .collect();
    Certification {
        pass: failures.is_empty(),
        checks,
        failures,
        ordering_witness,
    }
}

/// Theorem exponent `p` and `α` for a measured report: the smallest `p ≤
/// p_max` admitting a compatible `α`, paired with the largest such `α`.
pub fn fit_theorem_alpha(report: &HypothesisReport, p_max: u32, slack: f64) -> Option<(u32, f64)> {
    (1..=p_max).find_map(|p| theorem_alpha_range(report, p, slack).map(|(_, hi)| (p, hi)))
}

/// Full certification pipeline for the pinched family at one `α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchedCertification {
    pub params: PinchedParams,
    pub regions: RegionChoice,
    pub report: HypothesisReport,
    /// Theorem exponent and `α` fitted to the measured constants.
    pub theorem: Option<(u32, f64)>,
    pub derived: Option<DerivedConstants>,
    pub certification: Certification,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSize {
    pub theta: usize,
    pub x: usize,
}

impl Default for GridSize {
    fn default() -> Self {
        GridSize {
            theta: 4000,
            x: 400,
        }
    }
}

/// Largest theorem exponent tried when fitting measured constants.
pub const P_MAX: u32 = 8;

pub fn certify_pinched(
    params: &PinchedParams,
    eps: f64,
    grid: GridSize,
    slack: f64,
) -> Result<PinchedCertification, ConditionsError> {
    let regions = choose_regions_pinched(params, eps)?;
    let sys = QpfSystem::new(CirclePoint::new(0.0), crate::maps::Family::Pinched(*params))
        .map_err(|e| ConditionsError::Config(e.to_string()))?;
    let report = regions.report(&sys, grid.theta, grid.x)?;
    let theorem = fit_theorem_alpha(&report, P_MAX, slack);
    let derived = theorem.and_then(|(p, a)| {
        derived_constants(&report, p, a, minimal_t(p, report.n_components), None).ok()
    });
    let certification =
        certify_theorem_hypotheses(&report, derived.as_ref(), TheoremVariant::Basic, slack);
    Ok(PinchedCertification {
        params: *params,
        regions,
        report,
        theorem,
        derived,
        certification,
    })
}

/// Smallest `α` in `[lo, hi]` (to relative tolerance `rtol`) at which the
/// pinched family certifies, by bisection on `log α`. `None` if `hi` fails.
pub fn pinched_threshold(
    p: u32,
    beta: f64,
    eps: f64,
    lo: f64,
    hi: f64,
    rtol: f64,
    grid: GridSize,
) -> Result<Option<PinchedCertification>, ConditionsError> {
    let run = |a: f64| -> Result<Option<PinchedCertification>, ConditionsError> {
        match certify_pinched(&PinchedParams::new(a, p, beta), eps, grid, DEFAULT_SLACK) {
            Ok(c) if c.certification.pass => Ok(Some(c)),
            Ok(_) => Ok(None),
            Err(ConditionsError::Config(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut best = match run(hi)? {
        Some(c) => c,
        None => return Ok(None),
    };
    let (mut l, mut h) = (lo.ln(), hi.ln());
    if let Some(c) = run(lo)? {
        return Ok(Some(c));
    }
    while h - l > rtol {
        let m = 0.5 * (l + h);
        match run(m.exp())? {
            Some(c) => {
                best = c;
                h = m;
            }
            None => l = m,
        }
    }
    Ok(Some(best))
}

/// Convenience: `h_α(e±)` for the pinched family, tends to `±½`.
pub fn pinched_image_of_e(params: &PinchedParams) -> f64 {
    let p = params.p as f64;
    let sys = QpfSystem::new(
        CirclePoint::new(0.0),
        crate::maps::Family::Pinched(PinchedParams {
            g: Forcing::ZERO,
            ..*params
        }),
    )
    .expect("validated parameters");
    sys.h_lift(params.alpha.powf(-(2.0 * p - 1.0) / (2.0 * p)))
}
