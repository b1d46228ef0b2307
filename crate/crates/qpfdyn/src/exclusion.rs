//! Frequency exclusion: schedules `(Nₙ, Kₙ, εₙ)` with their measure
//! bookkeeping, the window search and the interval-subdivision step that
//! builds the nested good sets `Ω₀ ⊇ Ω₁ ⊇ …`.

use crate::circle::{CircleInterval, RegionUnion};
use crate::conditions::HypothesisReport;
use crate::critical::{build_critical, return_distance, BuildConfig, CriticalError};
use crate::maps::QpfSystem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ExclusionError {
    #[error("schedule infeasible at level {level}: {reason}")]
    Infeasible {
        level: usize,
        reason: String,
        min_alpha: Option<f64>,
    },
    #[error("no admissible window in [{lo}, {hi}) at omega = {omega}")]
    NoWindow { omega: f64, lo: u64, hi: u64 },
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleVariant {
    Basic,
    /// `N₀` is the smallest integer larger than `d^{1/4}`.
    Refined {
        d: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `N_{n+1} = α^{Nₙ/16p}`; bookkeeping only.
    Exact,
    /// User-chosen small `(Nₙ, Kₙ, εₙ)`.
    Desk,
}

/// One term `V_{n−1}uₙ` of the excluded-measure series with the bound it
/// is compared against (`α^{−N_{n−1}/4p}` for `n ≥ 1`, `u₀` itself for
/// `n = 0`). Natural logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTerm {
    pub n: usize,
    pub log_term: f64,
    pub log_bound: f64,
}

impl ChainTerm {
    pub fn holds(&self) -> bool {
        self.log_term <= self.log_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub p: u32,
    pub alpha: f64,
    pub t: u32,
    #[serde(rename = "n_components")]
    pub n_components: usize,
    #[serde(rename = "N0")]
    pub n0: f64,
    /// `ln Nₙ`; `N` holds `exp` of these (possibly infinite).
    pub log_n: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    pub eps: Vec<f64>,
    pub log_eps: Vec<f64>,
    pub log_u: Vec<f64>,
    pub log_v: Vec<f64>,
    /// `ln Vₙ = Σ_{i≤n} ln vᵢ` (the product, not the window set).
    pub log_vprod: Vec<f64>,
    /// `1 − Σ V_{n−1}uₙ` over materialized levels.
    pub sigma: f64,
    /// `1 − u₀ − Σ α^{−Nₙ/4p}`; empty sums for desk schedules.
    pub sigma_chain: f64,
    pub chain: Vec<ChainTerm>,
    /// `Σ 1/K_j` (closed form for exact schedules).
    pub k_sum: f64,
    /// `Σ 1/K_j < 1/(6𝒩²)`.
    pub k_condition: bool,
    /// Structural conditions that fail.
    pub violations: Vec<String>,
}

impl Schedule {
    pub fn levels(&self) -> usize {
        self.n.len()
    }

    pub fn u(&self, n: usize) -> f64 {
        self.log_u[n].exp()
    }

    pub fn v(&self, n: usize) -> f64 {
        self.log_v[n].exp()
    }

    pub fn vprod(&self, n: usize) -> f64 {
        self.log_vprod[n].exp()
    }

    /// Integer window range `[Nₙ, 2Nₙ)`.
    pub fn window_range(&self, n: usize) -> (u64, u64) {
        let lo = self.n[n].ceil() as u64;
        let hi = (2.0 * self.n[n]).ceil() as u64;
        (lo, hi.max(lo + 1))
    }

    /// `u64` value of `Kₙ`.
    pub fn k_int(&self, n: usize) -> u64 {
        self.k[n] as u64
    }

    /// Lower bound `1 − Σ_{i≤n} V_{i−1}uᵢ` on `Leb(Ωₙ)`.
    pub fn measure_bound(&self, n: usize) -> f64 {
        1.0 - (0..=n).map(|i| self.log_term(i).exp()).sum::<f64>()
    }

    /// The intermediate bounds `u_{n+1} ≤ α^{−3Nₙ/4p}`, `v_{n+1} ≤ α^{Nₙ/4p}`
    /// and `Vₙ ≤ α^{Nₙ/4p}` as `(name, n, ln lhs, ln rhs)`; exact mode only.
    pub fn chain_steps(&self) -> Vec<(&'static str, usize, f64, f64)> {
        let mut out = Vec::new();
        if self.mode != ScheduleMode::Exact {
            return out;
        }
        let c = self.alpha.ln() / (4.0 * self.p as f64);
        for i in 0..self.levels() {
            out.push(("V", i, self.log_vprod[i], self.n[i] * c));
            if i + 1 < self.levels() {
                out.push(("u", i + 1, self.log_u[i + 1], -3.0 * self.n[i] * c));
                out.push(("v", i + 1, self.log_v[i + 1], self.n[i] * c));
            }
        }
        out
    }

    fn log_term(&self, i: usize) -> f64 {
        self.log_u[i] + if i == 0 { 0.0 } else { self.log_vprod[i - 1] }
    }
}

/// Largest real `ln N` a materialized level may carry; the next level would
/// need `N` itself.
const LOG_N_CAP: f64 = 700.0;

/// Exact schedule `N₀ = 3` (or `⌊d^{1/4}⌋ + 1`), `N_{n+1} = α^{Nₙ/16p}`,
/// `Kₙ = 2^{n+t}𝒩²`, `ε₀ = min |I₀^ι|`, `εₙ = (2/s)α^{−N_{n−1}/p}`,
/// materialized while `ln Nₙ ≤ log_cap`.
pub fn exact_schedule(
    n_components: usize,
    eps0: f64,
    s: f64,
    p: u32,
    alpha: f64,
    t: u32,
    variant: ScheduleVariant,
    log_cap: f64,
) -> Result<Schedule, ExclusionError> {
    if t < 4 {
        return Err(ExclusionError::Config(format!(
            "t must be at least 4, got {t}"
        )));
    }
    if !(alpha > 1.0 && eps0 > 0.0 && s > 0.0 && n_components > 0 && p > 0) {
        return Err(ExclusionError::Config(
            "need alpha > 1, eps0 > 0, s > 0, N >= 1, p >= 1".into(),
        ));
    }
    let nn = n_components as f64;
    let pf = p as f64;
    let la = alpha.ln();
    let n0 = match variant {
        ScheduleVariant::Basic => 3.0,
        ScheduleVariant::Refined { d } => d.powf(0.25).floor() + 1.0,
    };
    let k_at = |n: usize| 2f64.powi((n as u32 + t) as i32) * nn * nn;
    let mut log_n = vec![n0.ln()];
    while log_n.len() < 64 {
        let last = *log_n.last().unwrap();
        if last > log_cap.min(LOG_N_CAP) {
            break;
        }
        log_n.push(last.exp() / (16.0 * pf) * la);
    }
    let mut n: Vec<f64> = log_n.iter().map(|l| l.exp()).collect();
    n[0] = n0;
    let levels = n.len();
    let k: Vec<f64> = (0..levels).map(k_at).collect();
    let mut log_eps = vec![eps0.ln()];
    for i in 1..levels {
        log_eps.push((2.0 / s).ln() - n[i - 1] / pf * la);
    }

    // (N2) and the eps ratio at level 0 fix the smallest usable alpha
    let min_alpha_n2 = (2.0 * k[0] * n0).ln() * 16.0 * pf / n0;
    let min_alpha_eps = ((6.0 / s).ln() - eps0.ln()) * pf / n0;
    let min_alpha = min_alpha_n2.max(min_alpha_eps).exp();
    for i in 0..levels.saturating_sub(1) {
        if !(log_n[i + 1] > (2.0 * k[i]).ln() + log_n[i]) {
            return Err(ExclusionError::Infeasible {
                level: i,
                reason: format!(
                    "N_{} = {:.6e} <= 2 K_{i} N_{i} = {:.6e}",
                    i + 1,
                    n[i + 1],
                    2.0 * k[i] * n[i]
                ),
                min_alpha: Some(min_alpha),
            });
        }
        if !(log_eps[i] >= 3f64.ln() + log_eps[i + 1]) {
            return Err(ExclusionError::Infeasible {
                level: i,
                reason: format!("eps_{i} < 3 eps_{}", i + 1),
                min_alpha: Some(min_alpha),
            });
        }
    }
    let mut sched = bookkeeping(
        ScheduleMode::Exact,
        n_components,
        p,
        alpha,
        t,
        n.clone(),
        log_n,
        k,
        log_eps,
    );
    // closed form of Σ 2^{−(j+t)}/𝒩²
    sched.k_sum = 2f64.powi(1 - t as i32) / (nn * nn);
    sched.k_condition = sched.k_sum < 1.0 / (6.0 * nn * nn);
    let mut chain = Vec::with_capacity(levels);
    let mut chain_sum = 0.0;
    for i in 0..levels {
        let log_bound = if i == 0 {
            sched.log_u[0]
        } else {
            -n[i - 1] / (4.0 * pf) * la
        };
        chain.push(ChainTerm {
            n: i,
            log_term: sched.log_term(i),
            log_bound,
        });
        chain_sum += log_bound.exp();
    }
    // the displayed chain sums α^{−Nₙ/4p} over all n ≥ 0
    let tail = (-n[levels - 1] / (4.0 * pf) * la).exp();
    sched.sigma_chain = 1.0 - chain_sum - tail;
    sched.chain = chain;
    Ok(sched)
}

#[allow(clippy::too_many_arguments)]
fn bookkeeping(
    mode: ScheduleMode,
    n_components: usize,
    p: u32,
    alpha: f64,
    t: u32,
    n: Vec<f64>,
    log_n: Vec<f64>,
    k: Vec<f64>,
    log_eps: Vec<f64>,
) -> Schedule {
    let levels = log_n.len();
    let l_nn = (n_components as f64).ln();
    let lk: Vec<f64> = k.iter().map(|v| v.ln()).collect();
    let mut log_u = Vec::with_capacity(levels);
    let mut log_v = Vec::with_capacity(levels);
    log_u.push(32f64.ln() + 2.0 * l_nn + lk[0] + log_n[0] + log_eps[0]);
    log_v.push(4f64.ln() + 2.0 * l_nn + 2.0 * lk[0] + 2.0 * log_n[0]);
    for i in 1..levels {
        log_u.push(64f64.ln() + 2.0 * l_nn + lk[i] + 2.0 * log_n[i] + log_eps[i] - log_eps[i - 1]);
        log_v.push(8f64.ln() - log_eps[i - 1] + 2.0 * l_nn + 2.0 * lk[i] + 3.0 * log_n[i]);
    }
    let mut acc = 0.0;
    let log_vprod: Vec<f64> = log_v
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    let k_sum: f64 = k.iter().map(|v| 1.0 / v).sum();
    let nn = n_components as f64;
    let mut s = Schedule {
        mode,
        p,
        alpha,
        t,
        n_components,
        n0: n[0],
        n,
        log_n,
        k,
        eps: log_eps.iter().map(|l| l.exp()).collect(),
        log_eps,
        log_u,
        log_v,
        log_vprod,
        sigma: 0.0,
        sigma_chain: f64::NAN,
        chain: Vec::new(),
        k_sum,
        k_condition: k_sum < 1.0 / (6.0 * nn * nn),
        violations: Vec::new(),
    };
    s.sigma = 1.0 - (0..levels).map(|i| s.log_term(i).exp()).sum::<f64>();
    s
}

/// [`exact_schedule`] with `𝒩`, `ε₀ = min |I₀^ι|` and `s` from a report.
pub fn build_schedule(
    report: &HypothesisReport,
    p: u32,
    alpha: f64,
    t: u32,
    variant: ScheduleVariant,
) -> Result<Schedule, ExclusionError> {
    exact_schedule(
        report.n_components,
        report.i0.min_component_length(),
        report.s,
        p,
        alpha,
        t,
        variant,
        LOG_N_CAP,
    )
}

/// Desk-scale schedule with given `Nₙ`, `Kₙ`, `εₙ`. Structural conditions
/// that fail are listed in `violations`.
pub fn desk_schedule(
    n_components: usize,
    n: &[u64],
    k: &[u64],
    eps: &[f64],
) -> Result<Schedule, ExclusionError> {
    if n.is_empty() || n.len() != k.len() || n.len() != eps.len() {
        return Err(ExclusionError::Config(
            "N, K and eps need equal non-zero lengths".into(),
        ));
    }
    if n_components == 0
        || n.iter().any(|&v| v < 2)
        || k.iter().any(|&v| v == 0)
        || eps.iter().any(|&e| !(e > 0.0))
    {
        return Err(ExclusionError::Config(
            "need N >= 1 components, N_n >= 2, K_n >= 1, eps_n > 0".into(),
        ));
    }
    let log_n: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let kf: Vec<f64> = k.iter().map(|&v| v as f64).collect();
    let log_eps: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let mut s = bookkeeping(
        ScheduleMode::Desk,
        n_components,
        0,
        f64::NAN,
        0,
        n.iter().map(|&v| v as f64).collect(),
        log_n,
        kf,
        log_eps,
    );
    if n[0] < 3 {
        s.violations.push(format!("N_0 = {} < 3", n[0]));
    }
    for i in 0..n.len() - 1 {
        if n[i + 1] <= 2 * k[i] * n[i] {
            s.violations.push(format!(
                "N_{} = {} <= 2 K_{i} N_{i} = {}",
                i + 1,
                n[i + 1],
                2 * k[i] * n[i]
            ));
        }
        if eps[i] < 3.0 * eps[i + 1] {
            s.violations.push(format!("eps_{i} < 3 eps_{}", i + 1));
        }
        if k[i + 1] < k[i] {
            s.violations.push(format!("K_{} < K_{i}", i + 1));
        }
    }
    if !s.k_condition {
        s.violations
            .push(format!("sum 1/K_j = {} >= 1/(6 N^2)", s.k_sum));
    }
    Ok(s)
}

/// [`desk_schedule`] that rejects any structural violation.
pub fn desk_schedule_strict(
    n_components: usize,
    n: &[u64],
    k: &[u64],
    eps: &[f64],
) -> Result<Schedule, ExclusionError> {
    let s = desk_schedule(n_components, n, k, eps)?;
    match s.violations.first() {
        Some(v) => Err(ExclusionError::Infeasible {
            level: 0,
            reason: v.clone(),
            min_alpha: None,
        }),
        None => Ok(s),
    }
}

// ---------------------------------------------------------------------------
// bad sets and windows

/// `{ω ∈ Γ : d(I + kω, J) ≤ ε}`: the preimage under `ω ↦ kω` of an arc of
/// length `|I| + |J| + 2ε`, i.e. `|k|` arcs of length `(|I|+|J|+2ε)/|k|`.
pub fn bad_set_for_pair(
    i: &CircleInterval,
    j: &CircleInterval,
    k: i64,
    eps: f64,
    gamma: &CircleInterval,
) -> Result<RegionUnion, ExclusionError> {
    let mut parts = Vec::new();
    push_bad_arcs(i, j, k, eps, gamma, &mut parts)?;
    Ok(RegionUnion::new(parts))
}

fn push_bad_arcs(
    i: &CircleInterval,
    j: &CircleInterval,
    k: i64,
    eps: f64,
    gamma: &CircleInterval,
    out: &mut Vec<CircleInterval>,
) -> Result<(), ExclusionError> {
    if k == 0 {
        return Err(ExclusionError::Config("k = 0 has no bad set".into()));
    }
    let len = i.length() + j.length() + 2.0 * eps;
    if len >= 1.0 {
        out.push(*gamma);
        return Ok(());
    }
    // kω ∈ [J.lo − I.hi − ε, J.lo − I.hi − ε + len]
    let mut a = j.lo().value() - i.lo().value() - i.length() - eps;
    let mut kk = k;
    if k < 0 {
        // kω ∈ A  ⇔  |k|ω ∈ −A
        a = -(a + len);
        kk = -k;
    }
    let kf = kk as f64;
    if gamma.is_full() {
        for m in 0..kk {
            let start = (a + m as f64) / kf;
            out.push(CircleInterval::with_length(
                crate::CirclePoint::new(start),
                len / kf,
            ));
        }
        return Ok(());
    }
    let glo = gamma.lo().value();
    let ghi = glo + gamma.length();
    // arcs (a + m)/k + [0, len/k] meeting the lift [glo, ghi]
    let m_lo = (kf * glo - a - len).floor() as i64;
    let m_hi = (kf * ghi - a).ceil() as i64;
    for m in m_lo..=m_hi {
        let start = (a + m as f64) / kf;
        let (s, e) = (start.max(glo), (start + len / kf).min(ghi));
        if e > s {
            out.push(CircleInterval::with_length(
                crate::CirclePoint::new(s),
                e - s,
            ));
        }
    }
    Ok(())
}

/// `ω ∈ Γ` violating `(F1)` for the frozen components `comps`: some
/// `d(I^ι + kω, I^κ) ≤ thresh`, `1 ≤ k ≤ 2KM`.
pub fn f1_bad_set(
    comps: &[CircleInterval],
    k: u64,
    m: u64,
    thresh: f64,
    gamma: &CircleInterval,
) -> Result<RegionUnion, ExclusionError> {
    let mut parts = Vec::new();
    for a in comps {
        for b in comps {
            for kk in 1..=(2 * k * m) as i64 {
                push_bad_arcs(a, b, kk, thresh, gamma, &mut parts)?;
            }
        }
    }
    Ok(RegionUnion::new(parts))
}

/// Smallest `M ∈ [lo, hi)` with
/// `d((𝓘_{n+1} − (M−1)ω) ∪ (𝓘_{n+1} + (M+1)ω), 𝒴ₙ) > εₙ`, where `regions`
/// holds `𝓘₀ … 𝓘_{n+1}` at `ω` and `ms = (M₀ … Mₙ)`. An empty `ms` is the
/// bootstrap with void `𝒴`.
pub fn find_window(
    regions: &[Vec<CircleInterval>],
    ms: &[u64],
    range: (u64, u64),
    omega: f64,
    eps_n: f64,
) -> Result<u64, ExclusionError> {
    let level = ms.len();
    if regions.len() <= level {
        return Err(ExclusionError::Config(format!(
            "need regions up to level {level}"
        )));
    }
    for m in range.0..range.1 {
        if level == 0 || return_distance(regions, ms, level, &regions[level], m, omega) > eps_n {
            return Ok(m);
        }
    }
    Err(ExclusionError::NoWindow {
        omega,
        lo: range.0,
        hi: range.1,
    })
}

// ---------------------------------------------------------------------------
// region models

/// The critical regions as functions of `ω`.
pub trait RegionModel: Sync {
    /// `𝓘₀(ω) … 𝓘_{len(ms)}(ω)` for windows `ms`.
    fn regions(&self, omega: f64, ms: &[u64]) -> Result<Vec<Vec<CircleInterval>>, ExclusionError>;

    /// Bound on `|∂ω I_j^ι|`.
    fn d_omega_bound(&self) -> f64;
}

/// Regions independent of `ω` and of the windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRegions(pub Vec<Vec<CircleInterval>>);

impl RegionModel for FixedRegions {
    fn regions(&self, _omega: f64, ms: &[u64]) -> Result<Vec<Vec<CircleInterval>>, ExclusionError> {
        if self.0.len() <= ms.len() {
            return Err(ExclusionError::Config(format!(
                "toy regions stop at level {}",
                self.0.len() - 1
            )));
        }
        Ok(self.0[..=ms.len()].to_vec())
    }

    fn d_omega_bound(&self) -> f64 {
        0.0
    }
}

/// Regions of a system built per frequency from strip intersections.
pub struct SystemRegions<'a, B: Fn(f64) -> QpfSystem + Sync> {
    pub build: B,
    pub report: &'a HypothesisReport,
    pub cfg: BuildConfig,
}

impl<B: Fn(f64) -> QpfSystem + Sync> RegionModel for SystemRegions<'_, B> {
    fn regions(&self, omega: f64, ms: &[u64]) -> Result<Vec<Vec<CircleInterval>>, ExclusionError> {
        let sys = (self.build)(omega);
        Ok(build_critical(&sys, self.report, ms, &self.cfg)?.components)
    }

    fn d_omega_bound(&self) -> f64 {
        0.25
    }
}

// ---------------------------------------------------------------------------
// good sets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaInterval {
    pub interval: CircleInterval,
    /// `M₀ … Mₙ`, shared with every ancestor.
    #[serde(rename = "M")]
    pub m: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAccount {
    pub level: usize,
    pub measure: f64,
    pub components: usize,
    /// Largest measure removed from a single parent interval.
    pub max_excluded: f64,
    /// `uₙ` and `Vₙ` from the schedule.
    pub u: f64,
    pub vprod: f64,
    pub measure_bound: f64,
    /// Subintervals dropped for lack of a window.
    pub no_window: usize,
}

impl LevelAccount {
    pub fn components_ok(&self) -> bool {
        self.components as f64 <= self.vprod
    }

    pub fn excluded_ok(&self) -> bool {
        self.max_excluded <= self.u
    }

    pub fn measure_ok(&self) -> bool {
        self.measure >= self.measure_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaSet {
    pub level: usize,
    pub intervals: Vec<OmegaInterval>,
    pub measure: f64,
    pub accounts: Vec<LevelAccount>,
}

impl OmegaSet {
    pub fn region(&self) -> RegionUnion {
        RegionUnion::new(self.intervals.iter().map(|i| i.interval).collect())
    }

    pub fn find(&self, omega: f64) -> Option<&OmegaInterval> {
        self.intervals
            .iter()
            .find(|i| i.interval.contains_val(omega))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionConfig {
    /// Absolute margin added to every frozen-interval bad-set threshold.
    pub margin: f64,
}

impl Default for ExclusionConfig {
    fn default() -> Self {
        ExclusionConfig { margin: 0.0 }
    }
}

/// `Ω₀`: the `(F1)₀` good set with `M₀` the first window in `[N₀, 2N₀)`.
pub fn bootstrap<R: RegionModel + ?Sized>(
    model: &R,
    sched: &Schedule,
    cfg: &ExclusionConfig,
) -> Result<(Vec<OmegaInterval>, LevelAccount), ExclusionError> {
    let regions = model.regions(0.0, &[])?;
    let m0 = find_window(&regions, &[], sched.window_range(0), 0.0, 0.0)?;
    let bad = f1_bad_set(
        &regions[0],
        sched.k_int(0),
        m0,
        3.0 * sched.eps[0] + cfg.margin,
        &CircleInterval::full(),
    )?;
    let good = bad.complement();
    let intervals: Vec<OmegaInterval> = good
        .components()
        .iter()
        .map(|c| OmegaInterval {
            interval: *c,
            m: vec![m0],
        })
        .collect();
    let measure = good.measure();
    let account = LevelAccount {
        level: 0,
        measure,
        components: intervals.len(),
        max_excluded: 1.0 - measure,
        u: sched.u(0),
        vprod: sched.vprod(0),
        measure_bound: sched.measure_bound(0),
        no_window: 0,
    };
    Ok((intervals, account))
}

/// Refinement of one interval `Λ ⊆ Ωₙ`: subdivision into `Γ^κ` of length
/// `≤ 2εₙ/(3N_{n+1})`, a window `M^κ` at each midpoint and removal of the
/// `(F1)_{n+1}` bad set with the regions frozen at the midpoint. Returns the
/// surviving pieces, the excluded measure and the count of windowless `Γ`.
pub fn exclusion_step<R: RegionModel + ?Sized>(
    model: &R,
    sched: &Schedule,
    lambda: &OmegaInterval,
    cfg: &ExclusionConfig,
) -> Result<(Vec<OmegaInterval>, f64, usize), ExclusionError> {
    let n = lambda.m.len() - 1;
    if n + 1 >= sched.levels() {
        return Err(ExclusionError::Config(format!(
            "schedule has no level {}",
            n + 1
        )));
    }
    let len = lambda.interval.length();
    let gmax = 2.0 * sched.eps[n] / (3.0 * sched.n[n + 1]);
    let count = ((len / gmax).ceil() as usize).max(1);
    let lo = lambda.interval.lo().value();
    let mut out: Vec<OmegaInterval> = Vec::new();
    let mut kept = 0.0;
    let mut no_window = 0;
    for kappa in 0..count {
        let a = lo + len * kappa as f64 / count as f64;
        let b = lo + len * (kappa + 1) as f64 / count as f64;
        let gamma = CircleInterval::with_length(crate::CirclePoint::new(a), b - a);
        let mid = gamma.midpoint().value();
        let regions = model.regions(mid, &lambda.m)?;
        let m = match find_window(
            &regions,
            &lambda.m,
            sched.window_range(n + 1),
            mid,
            sched.eps[n],
        ) {
            Ok(m) => m,
            Err(ExclusionError::NoWindow { .. }) => {
                no_window += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        // endpoints move by ≤ γ|ω − ω^κ| ≤ γ|Γ|/2 each
        let thresh = 3.0 * sched.eps[n + 1] + model.d_omega_bound() * gamma.length() + cfg.margin;
        let bad = f1_bad_set(&regions[n + 1], sched.k_int(n + 1), m, thresh, &gamma)?;
        let good = RegionUnion::single(gamma).difference(&bad);
        let mut hist = lambda.m.clone();
        hist.push(m);
        for c in good.components() {
            kept += c.length();
            match out.last_mut() {
                // merge across Γ boundaries when the windows agree
                Some(last)
                    if last.m == hist
                        && (last.interval.hi().value() - c.lo().value()).abs() < 1e-15 =>
                {
                    last.interval = CircleInterval::with_length(
                        last.interval.lo(),
                        last.interval.length() + c.length(),
                    );
                }
                _ => out.push(OmegaInterval {
                    interval: *c,
                    m: hist.clone(),
                }),
            }
        }
    }
    Ok((out, (len - kept).max(0.0), no_window))
}

/// `Ω_depth` with per-interval window histories and per-level accounting.
pub fn build_omega<R: RegionModel + ?Sized>(
    model: &R,
    sched: &Schedule,
    depth: usize,
    cfg: &ExclusionConfig,
) -> Result<OmegaSet, ExclusionError> {
    if depth >= sched.levels() {
        return Err(ExclusionError::Config(format!(
            "schedule has {} levels, depth {depth} requested",
            sched.levels()
        )));
    }
    let (mut intervals, acc0) = bootstrap(model, sched, cfg)?;
    let mut accounts = vec![acc0];
    for level in 1..=depth {
        let steps: Vec<_> = intervals
            .par_iter()
            .map(|lam| exclusion_step(model, sched, lam, cfg))
            .collect::<Result<_, _>>()?;
        let mut next = Vec::new();
        let (mut max_excluded, mut no_window) = (0.0f64, 0);
        for (pieces, excl, nw) in steps {
            next.extend(pieces);
            max_excluded = max_excluded.max(excl);
            no_window += nw;
        }
        intervals = next;
        let measure = intervals.iter().map(|i| i.interval.length()).sum();
        accounts.push(LevelAccount {
            level,
            measure,
            components: intervals.len(),
            max_excluded,
            u: sched.u(level),
            vprod: sched.vprod(level),
            measure_bound: sched.measure_bound(level),
            no_window,
        });
    }
    let measure = intervals.iter().map(|i| i.interval.length()).sum();
    Ok(OmegaSet {
        level: depth,
        intervals,
        measure,
        accounts,
    })
}

/// The toy configuration: `𝓘₀ = [0, len₀]` and fixed sub-intervals
/// `𝓘ₙ` of length `εₙ/2` centred in `𝓘₀`.
pub fn toy_regions(len0: f64, eps: &[f64]) -> FixedRegions {
    let c = 0.5 * len0;
    let mut levels = vec![vec![CircleInterval::from_reals(0.0, len0)]];
    for e in eps.iter().skip(1) {
        levels.push(vec![CircleInterval::ball(c, 0.25 * e)]);
    }
    FixedRegions(levels)
}
