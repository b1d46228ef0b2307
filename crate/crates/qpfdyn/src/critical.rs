//! Critical sets: boundary graphs of the contracting strips `f^{M}(𝒜ₙ)` and
//! expanding strips `f^{−M}(ℬₙ)`, their intersection giving `𝓘ₙ₊₁`, the
//! return-time conditions on `ω`, occupation-time audits and the geometric
//! bound audits.

use crate::circle::{ccw_length, centered, CircleInterval, CirclePoint, RegionUnion};
use crate::conditions::{sum_k1_xk, sum_k_xk, DerivedConstants, HypothesisReport};
use crate::dynamics::{iterate_backward, iterate_forward, OrbitState};
use crate::maps::{MapError, QpfSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CriticalError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("component {component}: no crossing of {pair}")]
    NoCrossing {
        component: usize,
        pair: &'static str,
    },
    #[error("component {component}: {count} crossings of {pair}")]
    MultiCrossing {
        component: usize,
        pair: &'static str,
        count: usize,
    },
    #[error("component {component}: strips meet tangentially (min slope {min_slope:e})")]
    Tangency { component: usize, min_slope: f64 },
    #[error("component {component}: strips do not intersect")]
    EmptyIntersection { component: usize },
    #[error("critical region not entered within {horizon} steps")]
    HorizonExceeded { horizon: u64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Value of a boundary graph with its `θ`- and `ω`-derivatives (the latter
/// with `θ` held fixed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub value: f64,
    pub dtheta: f64,
    pub domega: f64,
}

impl GraphPoint {
    pub fn constant(value: f64) -> Self {
        GraphPoint {
            value,
            dtheta: 0.0,
            domega: 0.0,
        }
    }

    /// `φ(θ) = f^M_{θ−Mω}(c)`: the start moves with `ω`.
    fn from_forward(st: &OrbitState, m: u64) -> Self {
        GraphPoint {
            value: st.x,
            dtheta: st.dtheta,
            domega: st.domega - m as f64 * st.dtheta,
        }
    }

    /// `ψ(θ) = f^{−M}_{θ+Mω}(e)`.
    fn from_backward(st: &OrbitState, m: u64) -> Self {
        GraphPoint {
            value: st.x,
            dtheta: st.dtheta,
            domega: st.domega + m as f64 * st.dtheta,
        }
    }

    /// `(∂θ + ∂ω)` of the graph.
    pub fn total(&self) -> f64 {
        self.dtheta + self.domega
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub theta: f64,
    pub phi_minus: GraphPoint,
    pub phi_plus: GraphPoint,
    pub psi_minus: GraphPoint,
    pub psi_plus: GraphPoint,
}

impl GraphSample {
    pub fn phi_height(&self) -> f64 {
        arc_len(self.phi_minus.value, self.phi_plus.value)
    }

    pub fn psi_height(&self) -> f64 {
        arc_len(self.psi_minus.value, self.psi_plus.value)
    }

    /// Whether the open fibre intervals `J^φ(θ)` and `J^ψ(θ)` are disjoint.
    pub fn separated(&self) -> bool {
        let jp = CircleInterval::from_reals(self.phi_minus.value, self.phi_plus.value);
        let js = CircleInterval::from_reals(self.psi_minus.value, self.psi_plus.value);
        let touch = |a: &CircleInterval, b: &CircleInterval| {
            b.contains_interior(a.lo().value()) || b.contains_interior(a.hi().value())
        };
        !(touch(&jp, &js)
            || touch(&js, &jp)
            || (jp.midpoint() == js.midpoint() && jp.length() > 0.0))
    }
}

/// Counterclockwise length from `a` to `b`, reading a rounding-level
/// negative length as zero.
fn arc_len(a: f64, b: f64) -> f64 {
    let l = ccw_length(CirclePoint::new(a), CirclePoint::new(b));
    if l > 1.0 - 1e-9 {
        0.0
    } else {
        l
    }
}

/// Source of the four boundary graphs at a base point `θ`.
pub trait StripGraphs: Sync {
    fn sample(&self, theta: f64) -> Result<GraphSample, CriticalError>;
}

/// Graphs from closures, for synthetic tests.
pub struct FnStrips<F>(pub F);

impl<F: Fn(f64) -> GraphSample + Sync> StripGraphs for FnStrips<F> {
    fn sample(&self, theta: f64) -> Result<GraphSample, CriticalError> {
        Ok((self.0)(theta))
    }
}

/// `φ±(θ) = f^M_{θ−Mω}(c±)` and `ψ±(θ) = f^{−M}_{θ+Mω}(e±)`; with `m = None`
/// the initial graphs `φ±(θ) = f_{θ−ω}(c±)`, `ψ± = e±`.
pub struct SystemStrips<'a> {
    pub sys: &'a QpfSystem,
    pub c: (f64, f64),
    pub e: (f64, f64),
    pub m: Option<u64>,
}

impl<'a> SystemStrips<'a> {
    pub fn new(sys: &'a QpfSystem, report: &HypothesisReport, m: Option<u64>) -> Self {
        SystemStrips {
            sys,
            c: (report.c_minus(), report.c_plus()),
            e: (report.e_minus(), report.e_plus()),
            m,
        }
    }
}

impl StripGraphs for SystemStrips<'_> {
    fn sample(&self, theta: f64) -> Result<GraphSample, CriticalError> {
        let w = self.sys.w();
        match self.m {
            None => {
                let fw =
                    |c| GraphPoint::from_forward(&iterate_forward(self.sys, theta - w, c, 1), 1);
                Ok(GraphSample {
                    theta,
                    phi_minus: fw(self.c.0),
                    phi_plus: fw(self.c.1),
                    psi_minus: GraphPoint::constant(self.e.0),
                    psi_plus: GraphPoint::constant(self.e.1),
                })
            }
            Some(m) => {
                let mf = m as f64;
                let fw = |c| {
                    GraphPoint::from_forward(&iterate_forward(self.sys, theta - mf * w, c, m), m)
                };
                let bw = |e| -> Result<GraphPoint, CriticalError> {
                    Ok(GraphPoint::from_backward(
                        &iterate_backward(self.sys, theta + mf * w, e, m)?,
                        m,
                    ))
                };
                Ok(GraphSample {
                    theta,
                    phi_minus: fw(self.c.0),
                    phi_plus: fw(self.c.1),
                    psi_minus: bw(self.e.0)?,
                    psi_plus: bw(self.e.1)?,
                })
            }
        }
    }
}

/// Uniform samples over the arc `domain` in lift coordinates, endpoints
/// included.
pub fn sample_graphs<G: StripGraphs + ?Sized>(
    strips: &G,
    domain: CircleInterval,
    n: usize,
) -> Result<Vec<GraphSample>, CriticalError> {
    let n = n.max(2);
    let lo = domain.lo().value();
    let len = domain.length();
    (0..n)
        .into_par_iter()
        .map(|i| strips.sample(lo + len * i as f64 / (n - 1) as f64))
        .collect()
}

/// Sampled boundary graphs over `𝓘ₙ^ι + ω` with `M = m`.
pub fn boundary_graphs(
    sys: &QpfSystem,
    report: &HypothesisReport,
    domain: CircleInterval,
    m: Option<u64>,
    n_samples: usize,
) -> Result<Vec<GraphSample>, CriticalError> {
    sample_graphs(&SystemStrips::new(sys, report, m), domain, n_samples)
}

/// CSV rows `theta,phi_minus,phi_plus,psi_minus,psi_plus`.
pub fn graphs_csv(samples: &[GraphSample]) -> String {
    let mut s = String::from("theta,phi_minus,phi_plus,psi_minus,psi_plus\n");
    for g in samples {
        s.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            g.theta, g.phi_minus.value, g.phi_plus.value, g.psi_minus.value, g.psi_plus.value
        ));
    }
    s
}

/// Infima and suprema over sampled base points of strip heights, graph
/// slopes and `|(∂θ + ∂ω)|` of the graphs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredBounds {
    pub h_phi: f64,
    #[serde(rename = "H_phi")]
    pub big_h_phi: f64,
    pub h_psi: f64,
    #[serde(rename = "H_psi")]
    pub big_h_psi: f64,
    pub l_phi: f64,
    pub u_phi: f64,
    pub u_psi: f64,
    pub gamma_phi: f64,
    pub gamma_psi: f64,
}

impl MeasuredBounds {
    pub fn from_samples(samples: &[GraphSample]) -> Self {
        let mut b = MeasuredBounds {
            h_phi: f64::INFINITY,
            big_h_phi: 0.0,
            h_psi: f64::INFINITY,
            big_h_psi: 0.0,
            l_phi: f64::INFINITY,
            u_phi: 0.0,
            u_psi: 0.0,
            gamma_phi: 0.0,
            gamma_psi: 0.0,
        };
        for g in samples {
            let (hp, hs) = (g.phi_height(), g.psi_height());
            b.h_phi = b.h_phi.min(hp);
            b.big_h_phi = b.big_h_phi.max(hp);
            b.h_psi = b.h_psi.min(hs);
            b.big_h_psi = b.big_h_psi.max(hs);
            for p in [g.phi_minus, g.phi_plus] {
                b.l_phi = b.l_phi.min(p.dtheta.abs());
                b.u_phi = b.u_phi.max(p.dtheta.abs());
                b.gamma_phi = b.gamma_phi.max(p.total().abs());
            }
            for p in [g.psi_minus, g.psi_plus] {
                b.u_psi = b.u_psi.max(p.dtheta.abs());
                b.gamma_psi = b.gamma_psi.max(p.total().abs());
            }
        }
        b
    }

    /// Componentwise worst case of two records.
    pub fn merge(&self, o: &MeasuredBounds) -> MeasuredBounds {
        MeasuredBounds {
            h_phi: self.h_phi.min(o.h_phi),
            big_h_phi: self.big_h_phi.max(o.big_h_phi),
            h_psi: self.h_psi.min(o.h_psi),
            big_h_psi: self.big_h_psi.max(o.big_h_psi),
            l_phi: self.l_phi.min(o.l_phi),
            u_phi: self.u_phi.max(o.u_phi),
            u_psi: self.u_psi.max(o.u_psi),
            gamma_phi: self.gamma_phi.max(o.gamma_phi),
            gamma_psi: self.gamma_psi.max(o.gamma_psi),
        }
    }
}

/// The child interval cut out of a parent by the two strips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripIntersection {
    /// `I_{n+1}^ι`, in the parent's coordinates (base points minus `ω`).
    pub child: CircleInterval,
    /// Base points `a + ω`, `b + ω` where the strips first and last meet.
    pub theta_a: f64,
    pub theta_b: f64,
    /// `∂ω a`, `∂ω b` from the implicit function theorem.
    pub d_omega_a: f64,
    pub d_omega_b: f64,
    /// `min |∂θ(φ − ψ)|` over samples, over both endpoint equations.
    pub min_slope: f64,
    pub samples: Vec<GraphSample>,
}

impl StripIntersection {
    pub fn d_omega(&self) -> f64 {
        self.d_omega_a.abs().max(self.d_omega_b.abs())
    }
}

/// Samples used for a component of length `len` when the child is expected
/// to be about `resolution` wide.
pub fn sample_count(len: f64, resolution: f64) -> usize {
    let want = if resolution > 0.0 {
        (10.0 * len / resolution).ceil()
    } else {
        0.0
    };
    (want.min(1e6) as usize).max(1024)
}

fn bracket_roots(samples: &[GraphSample], g: impl Fn(&GraphSample) -> f64) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..samples.len() {
        let (a, b) = (g(&samples[i - 1]), g(&samples[i]));
        if a.abs() < 0.25 && b.abs() < 0.25 && ((a < 0.0) != (b < 0.0)) {
            out.push(i - 1);
        }
    }
    out
}

fn refine_root<G: StripGraphs + ?Sized>(
    strips: &G,
    mut lo: f64,
    mut hi: f64,
    g: impl Fn(&GraphSample) -> f64,
) -> Result<GraphSample, CriticalError> {
    let mut s_lo = strips.sample(lo)?;
    let neg_lo = g(&s_lo) < 0.0;
    // bisect to adjacent floats: child widths can be far below 1e-12
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = strips.sample(mid)?;
        if (g(&s) < 0.0) == neg_lo {
            lo = mid;
            s_lo = s;
        } else {
            hi = mid;
        }
    }
    let s = strips.sample(0.5 * (lo + hi))?;
    Ok(if s.theta.is_finite() { s } else { s_lo })
}

/// Intersect the strips over base points `domain = I_n^ι + ω`.
///
/// The child is bounded by the unique roots of `φ⁺ − ψ⁻` and `φ⁻ − ψ⁺`.
/// Fails on tangency (`min |∂θ(φ − ψ)| ≤ min_slope`), on a missing root and
/// on more than one root per pair.
pub fn intersect_strips<G: StripGraphs + ?Sized>(
    strips: &G,
    component: usize,
    domain: CircleInterval,
    omega: f64,
    n_samples: usize,
    min_slope: f64,
) -> Result<StripIntersection, CriticalError> {
    let samples = sample_graphs(strips, domain, n_samples)?;
    let g1 = |s: &GraphSample| centered(s.phi_plus.value - s.psi_minus.value);
    let g2 = |s: &GraphSample| centered(s.phi_minus.value - s.psi_plus.value);
    let slope = samples
        .iter()
        .map(|s| {
            (s.phi_plus.dtheta - s.psi_minus.dtheta)
                .abs()
                .min((s.phi_minus.dtheta - s.psi_plus.dtheta).abs())
        })
        .fold(f64::INFINITY, f64::min);
    if !(slope > min_slope) {
        return Err(CriticalError::Tangency {
            component,
            min_slope: slope,
        });
    }
    let mut roots = Vec::with_capacity(2);
    for (pair, g) in [
        ("phi+ = psi-", &g1 as &dyn Fn(&GraphSample) -> f64),
        ("phi- = psi+", &g2),
    ] {
        let br = bracket_roots(&samples, g);
        match br.len() {
            0 => return Err(CriticalError::NoCrossing { component, pair }),
            1 => {}
            count => {
                return Err(CriticalError::MultiCrossing {
                    component,
                    pair,
                    count,
                })
            }
        }
        let i = br[0];
        let s = refine_root(strips, samples[i].theta, samples[i + 1].theta, g)?;
        let (phi, psi) = if pair.starts_with("phi+") {
            (s.phi_plus, s.psi_minus)
        } else {
            (s.phi_minus, s.psi_plus)
        };
        let d = phi.dtheta - psi.dtheta;
        let d_omega = -(phi.total() - psi.total()) / d;
        roots.push((s.theta, d_omega));
    }
    roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ((ta, da), (tb, db)) = (roots[0], roots[1]);
    if !(tb > ta) {
        return Err(CriticalError::EmptyIntersection { component });
    }
    Ok(StripIntersection {
        child: CircleInterval::from_reals(ta - omega, tb - omega),
        theta_a: ta,
        theta_b: tb,
        d_omega_a: da,
        d_omega_b: db,
        min_slope: slope,
        samples,
    })
}

// ---------------------------------------------------------------------------
// critical state

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub iota: usize,
    pub parent: CircleInterval,
    pub child: CircleInterval,
    pub d_omega_a: f64,
    pub d_omega_b: f64,
    pub min_slope: f64,
    pub bounds: MeasuredBounds,
    /// `J^φ ∩ J^ψ = ∅` at both ends of the sampled domain.
    pub separated: bool,
    /// Smallest gap between child and parent endpoints; negative if the
    /// child leaves the parent.
    pub nesting_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: u64,
    pub components: Vec<ComponentRecord>,
    pub bounds: MeasuredBounds,
}

impl LevelRecord {
    pub fn d_omega(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.d_omega_a.abs().max(c.d_omega_b.abs()))
            .fold(0.0, f64::max)
    }

    pub fn child_lengths(&self) -> (f64, f64) {
        let it = self.components.iter().map(|c| c.child.length());
        let lo = it.clone().fold(f64::INFINITY, f64::min);
        (lo, it.fold(0.0, f64::max))
    }
}

/// Levels `𝓘₀ ⊇ 𝓘₁ ⊇ …` with labelled components, the windows used so far
/// and the measured bounds of each level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalState {
    pub omega: f64,
    pub level: usize,
    /// `components[n][ι] = I_n^ι`.
    pub components: Vec<Vec<CircleInterval>>,
    #[serde(rename = "M")]
    pub m: Vec<u64>,
    pub crossing: Vec<i8>,
    pub levels: Vec<LevelRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Lower limit on the sample count per component.
    pub n_samples: usize,
    pub min_slope: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            n_samples: 1024,
            min_slope: 1e-9,
        }
    }
}

impl CriticalState {
    pub fn new(report: &HypothesisReport, omega: f64) -> Self {
        CriticalState {
            omega,
            level: 0,
            components: vec![report.i0.components().to_vec()],
            m: Vec::new(),
            crossing: report.crossing.clone(),
            levels: Vec::new(),
        }
    }

    pub fn n_components(&self) -> usize {
        self.components[0].len()
    }

    pub fn region(&self, n: usize) -> RegionUnion {
        RegionUnion::new(self.components[n].clone())
    }

    pub fn regions(&self) -> Vec<RegionUnion> {
        (0..=self.level).map(|n| self.region(n)).collect()
    }

    /// Build `𝓘_{n+1}` from `𝓘_n` with window `M_n = m`.
    pub fn build_level(
        &mut self,
        sys: &QpfSystem,
        report: &HypothesisReport,
        m: u64,
        cfg: &BuildConfig,
    ) -> Result<&LevelRecord, CriticalError> {
        if m < 2 {
            return Err(CriticalError::Config(format!(
                "M must be at least 2, got {m}"
            )));
        }
        if let Some(&last) = self.m.last() {
            if m <= last {
                return Err(CriticalError::Config(format!(
                    "M must increase: {m} after {last}"
                )));
            }
        }
        let n = self.level;
        let strips = SystemStrips::new(sys, report, Some(m));
        let mut records = Vec::new();
        for (iota, parent) in self.components[n].iter().enumerate() {
            let domain = parent.translate(self.omega);
            let expected = if n == 0 {
                0.0
            } else {
                self.levels[n - 1].child_lengths().0 * 1e-3
            };
            let ns = sample_count(parent.length(), expected).max(cfg.n_samples);
            let cut = intersect_strips(&strips, iota, domain, self.omega, ns, cfg.min_slope)?;
            let bounds = MeasuredBounds::from_samples(&cut.samples);
            let first = cut.samples.first().unwrap();
            let last = cut.samples.last().unwrap();
            let nesting_margin = if cut.child.is_subset_of(parent) {
                let a = ccw_length(parent.lo(), cut.child.lo());
                let b = ccw_length(cut.child.hi(), parent.hi());
                a.min(b)
            } else {
                -parent.distance(&cut.child).max(f64::MIN_POSITIVE)
            };
            records.push(ComponentRecord {
                iota,
                parent: *parent,
                child: cut.child,
                d_omega_a: cut.d_omega_a,
                d_omega_b: cut.d_omega_b,
                min_slope: cut.min_slope,
                bounds,
                separated: first.separated() && last.separated(),
                nesting_margin,
            });
        }
        let bounds = records
            .iter()
            .skip(1)
            .fold(records[0].bounds, |acc, r| acc.merge(&r.bounds));
        self.components
            .push(records.iter().map(|r| r.child).collect());
        self.m.push(m);
        self.level += 1;
        self.levels.push(LevelRecord {
            n,
            m,
            components: records,
            bounds,
        });
        Ok(self.levels.last().unwrap())
    }
}

/// Levels `𝓘₀ … 𝓘_{len(ms)}` for the windows `ms`.
pub fn build_critical(
    sys: &QpfSystem,
    report: &HypothesisReport,
    ms: &[u64],
    cfg: &BuildConfig,
) -> Result<CriticalState, CriticalError> {
    let mut st = CriticalState::new(report, sys.w());
    for &m in ms {
        st.build_level(sys, report, m, cfg)?;
    }
    Ok(st)
}

/// Nesting of every built level: one child per parent, each strictly inside.
pub fn nesting_margin(state: &CriticalState) -> f64 {
    state
        .levels
        .iter()
        .flat_map(|l| l.components.iter().map(|c| c.nesting_margin))
        .fold(f64::INFINITY, f64::min)
}

/// Points in the deepest strip intersection, one per component: `θ` the
/// midpoint of `I_depth^ι + ω`, `x` the midpoint of `J^φ ∩ J^ψ` there.
pub fn deep_intersection(
    sys: &QpfSystem,
    report: &HypothesisReport,
    state: &CriticalState,
) -> Result<Vec<(f64, f64)>, CriticalError> {
    let depth = state.level;
    let m = if depth == 0 {
        None
    } else {
        Some(state.m[depth - 1])
    };
    let strips = SystemStrips::new(sys, report, m);
    let mut out = Vec::new();
    for (iota, comp) in state.components[depth].iter().enumerate() {
        let theta = comp.translate(state.omega).midpoint().value();
        let g = strips.sample(theta)?;
        let jp = CircleInterval::from_reals(g.phi_minus.value, g.phi_plus.value);
        let js = CircleInterval::from_reals(g.psi_minus.value, g.psi_plus.value);
        // J^φ ∩ J^ψ as an arc: start at whichever lower end lies in the other
        let lo = if js.contains_val(jp.lo().value()) {
            jp.lo()
        } else if jp.contains_val(js.lo().value()) {
            js.lo()
        } else {
            return Err(CriticalError::EmptyIntersection { component: iota });
        };
        let hi_len = |i: &CircleInterval| ccw_length(lo, i.hi());
        let len = hi_len(&jp).min(hi_len(&js));
        out.push((theta, lo.shift(0.5 * len).value()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// return-time windows

fn translates(comps: &[CircleInterval], ks: impl Iterator<Item = i64>, omega: f64) -> RegionUnion {
    let mut items = Vec::new();
    for k in ks {
        let t = (k as f64 * omega).rem_euclid(1.0);
        items.extend(comps.iter().map(|c| c.translate(t)));
    }
    RegionUnion::new(items)
}

/// The sets `𝒳ₙ, 𝒴ₙ, 𝒵ₙ, 𝒱ₙ, 𝒲ₙ` of returns of the critical regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyWindows {
    #[serde(rename = "K")]
    pub k: Vec<u64>,
    pub eps: Vec<f64>,
    pub x: Vec<RegionUnion>,
    pub y: Vec<RegionUnion>,
    pub z: Vec<RegionUnion>,
    pub v: Vec<RegionUnion>,
    pub w: Vec<RegionUnion>,
}

impl FrequencyWindows {
    /// Window sets for levels `0 … min(len) − 1` of `regions`, `m`, `k`.
    pub fn new(
        components: &[Vec<CircleInterval>],
        m: &[u64],
        k: &[u64],
        eps: &[f64],
        omega: f64,
    ) -> Result<Self, CriticalError> {
        for w in eps.windows(2) {
            if w[0] < 3.0 * w[1] {
                return Err(CriticalError::Config(format!(
                    "eps must satisfy eps_n >= 3 eps_(n+1), got {} and {}",
                    w[0], w[1]
                )));
            }
        }
        for w in k.windows(2) {
            if w[1] < w[0] {
                return Err(CriticalError::Config("K must be non-decreasing".into()));
            }
        }
        let levels = components.len().min(m.len());
        let mut fw = FrequencyWindows {
            k: k.to_vec(),
            eps: eps.to_vec(),
            x: vec![],
            y: vec![],
            z: vec![],
            v: vec![],
            w: vec![],
        };
        let (mut y, mut z, mut v, mut w) = (
            RegionUnion::empty(),
            RegionUnion::empty(),
            RegionUnion::empty(),
            RegionUnion::empty(),
        );
        for n in 0..levels {
            let c = &components[n];
            let mj = m[n] as i64;
            if let Some(&kn) = k.get(n) {
                fw.x.push(translates(c, 1..=2 * kn as i64 * mj, omega));
            }
            y = y.union(&translates(c, -mj + 1..=mj + 1, omega));
            z = z.union(&translates(c, -mj + 2..=mj, omega));
            v = v.union(&translates(c, 1..=mj + 1, omega));
            w = w.union(&translates(c, -mj + 1..=0, omega));
            fw.y.push(y.clone());
            fw.z.push(z.clone());
            fw.v.push(v.clone());
            fw.w.push(w.clone());
        }
        Ok(fw)
    }

    fn prev(sets: &[RegionUnion], n: usize) -> RegionUnion {
        if n == 0 {
            RegionUnion::empty()
        } else {
            sets[n - 1].clone()
        }
    }

    /// `𝒵_{n−1}`, empty for `n = 0`.
    pub fn z_before(&self, n: usize) -> RegionUnion {
        Self::prev(&self.z, n)
    }

    pub fn v_before(&self, n: usize) -> RegionUnion {
        Self::prev(&self.v, n)
    }

    pub fn w_before(&self, n: usize) -> RegionUnion {
        Self::prev(&self.w, n)
    }
}

/// `min d(A^ι + s, B^κ + kω)` over components and `k ∈ ks`.
fn min_shift_distance(
    a: &[CircleInterval],
    s: f64,
    b: &[CircleInterval],
    ks: impl Iterator<Item = i64> + Clone,
    omega: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    for ai in a {
        let ai = ai.translate(s);
        for k in ks.clone() {
            let t = (k as f64 * omega).rem_euclid(1.0);
            for bj in b {
                best = best.min(ai.distance(&bj.translate(t)));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
    }
    best
}

/// `d(𝓘_j, 𝒳_j) − 3ε_j` for `𝒳_j = ⋃_{k=1}^{2K_jM_j} 𝓘_j + kω`.
pub fn f1_margin(comps: &[CircleInterval], m: u64, k: u64, eps: f64, omega: f64) -> f64 {
    min_shift_distance(comps, 0.0, comps, 1..=(2 * k * m) as i64, omega) - 3.0 * eps
}

/// `d((I − (M−1)ω) ∪ (I + (M+1)ω), 𝒴)` with `𝒴 = ⋃_{j<level}` translates of
/// `𝓘_j` by `k ∈ [−M_j+1, M_j+1]`.
pub fn return_distance(
    components: &[Vec<CircleInterval>],
    m: &[u64],
    level: usize,
    comps: &[CircleInterval],
    big_m: u64,
    omega: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mf = big_m as f64;
    for j in 0..level {
        let mj = m[j] as i64;
        for s in [-(mf - 1.0) * omega, (mf + 1.0) * omega] {
            best = best.min(min_shift_distance(
                comps,
                s.rem_euclid(1.0),
                &components[j],
                -mj + 1..=mj + 1,
                omega,
            ));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FVerdict {
    /// `d(𝓘_j, 𝒳_j) − 3ε_j`, `j = 0 … n`.
    pub f1: Vec<f64>,
    /// `d((𝓘_j − (M_j−1)ω) ∪ (𝓘_j + (M_j+1)ω), 𝒴_{j−1})`, `j = 1 … n`.
    pub f2: Vec<f64>,
    /// Whether `(F1′)₀` replaced `(F1)₀`.
    pub f1_prime: bool,
    pub pass: bool,
}

impl FVerdict {
    pub fn min_margin(&self) -> f64 {
        self.f1
            .iter()
            .chain(&self.f2)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(F1)_n` and `(F2)_n` at `ω` for the given regions and windows. With
/// `i0_prime`, `(F1)₀` is evaluated on `𝓘₀′` instead.
pub fn check_f_conditions(
    components: &[Vec<CircleInterval>],
    m: &[u64],
    k: &[u64],
    eps: &[f64],
    omega: f64,
    n: usize,
    i0_prime: Option<&RegionUnion>,
) -> Result<FVerdict, CriticalError> {
    if components.len() <= n || m.len() <= n || k.len() <= n || eps.len() <= n {
        return Err(CriticalError::Config(format!(
            "level {n} needs regions, M, K and eps up to index {n}"
        )));
    }
    let mut f1 = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let comps: &[CircleInterval] = match (j, i0_prime) {
            (0, Some(p)) => p.components(),
            _ => &components[j],
        };
        f1.push(f1_margin(comps, m[j], k[j], eps[j], omega));
    }
    let f2: Vec<f64> = (1..=n)
        .map(|j| return_distance(components, m, j, &components[j], m[j], omega))
        .collect();
    let pass = f1.iter().all(|&v| v > 0.0) && f2.iter().all(|&v| v > 0.0);
    Ok(FVerdict {
        f1,
        f2,
        f1_prime: i0_prime.is_some(),
        pass,
    })
}

// ---------------------------------------------------------------------------
// occupation times

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// `count[m] = #{k ∈ [m, N−1] : hit[k]}` for `m = 0 … N`.
pub fn occupation_counts(hit: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; hit.len() + 1];
    for k in (0..hit.len()).rev() {
        out[k] = out[k + 1] + hit[k] as u64;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationAudit {
    pub direction: Direction,
    pub n: usize,
    /// `𝓛` (forward) or `𝓡` (backward).
    pub entry_time: u64,
    /// Violations of `(C1)_n` / `(C2)_n`.
    pub escape_violations: u64,
    /// Violations of `(C3)_n` / `(C4)_n`.
    pub occupation_violations: u64,
    /// `min_m 𝒫^𝓛_m/(𝓛 − m)` (resp. `𝒬`), 1 if `𝓛 = 0`.
    pub min_fraction: f64,
    pub beta: f64,
    /// `x_𝓛 ∈ C` (resp. `x_{−𝓡} ∈ E`).
    pub ends_inside: bool,
}

impl OccupationAudit {
    pub fn pass(&self) -> bool {
        self.escape_violations == 0 && self.occupation_violations == 0
    }
}

fn in_open(r: &RegionUnion, x: f64) -> bool {
    r.components().iter().any(|c| c.contains_interior(x))
}

pub const DEFAULT_HORIZON: u64 = 10_000_000;

/// Audit of a forward orbit from `(θ₀, x₀)` with `x₀ ∈ C` up to its first
/// entry into `𝓘_n`, or a backward orbit from `x₀ ∈ E` up to its first entry
/// into `𝓘_n + ω`.
#[allow(clippy::too_many_arguments)]
pub fn occupation_audit(
    sys: &QpfSystem,
    report: &HypothesisReport,
    state: &CriticalState,
    windows: &FrequencyWindows,
    n: usize,
    theta0: f64,
    x0: f64,
    direction: Direction,
    beta: f64,
    horizon: u64,
) -> Result<OccupationAudit, CriticalError> {
    if n > state.level {
        return Err(CriticalError::Config(format!("level {n} not built")));
    }
    if in_open(&windows.z_before(n), theta0) {
        return Err(CriticalError::Precondition("theta0 lies in Z_(n-1)".into()));
    }
    let target = state.region(n);
    let (home, escape_set, target) = match direction {
        Direction::Forward => (report.c, windows.v_before(n), target),
        Direction::Backward => (report.e, windows.w_before(n), target.shift(state.omega)),
    };
    if !home.contains_val(x0) {
        return Err(CriticalError::Precondition(format!(
            "x0 = {x0} outside the start interval"
        )));
    }
    let mut hit = Vec::new();
    let mut escapes = 0u64;
    let (mut th, mut x) = (theta0.rem_euclid(1.0), x0.rem_euclid(1.0));
    let mut k = 0u64;
    loop {
        let inside = home.contains_val(x);
        if k >= 1 && !inside && !escape_set.contains_val(th) {
            escapes += 1;
        }
        if in_open(&target, th) {
            break;
        }
        hit.push(inside);
        if k >= horizon {
            return Err(CriticalError::HorizonExceeded { horizon });
        }
        (th, x) = match direction {
            Direction::Forward => sys.step(th, x),
            Direction::Backward => sys.step_back(th, x)?,
        };
        k += 1;
    }
    let ends_inside = home.contains_val(x);
    let counts = occupation_counts(&hit);
    let l = hit.len() as u64;
    let mut violations = 0u64;
    let mut min_fraction: f64 = 1.0;
    for m in 0..l {
        let span = (l - m) as f64;
        let c = counts[m as usize] as f64;
        min_fraction = min_fraction.min(c / span);
        if c < beta * span - 1e-9 {
            violations += 1;
        }
    }
    Ok(OccupationAudit {
        direction,
        n,
        entry_time: l,
        escape_violations: escapes,
        occupation_violations: violations,
        min_fraction,
        beta,
        ends_inside,
    })
}

// ---------------------------------------------------------------------------
// bound audits

/// Constants entering the closed-form bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConstants {
    pub s: f64,
    #[serde(rename = "S")]
    pub s_big: f64,
    pub s_prime: Option<f64>,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub e_len: f64,
    pub c_len: f64,
}

impl AuditConstants {
    pub fn new(report: &HypothesisReport, derived: &DerivedConstants) -> Self {
        AuditConstants {
            s: report.s,
            s_big: report.s_big,
            s_prime: report.s_prime,
            alpha_minus: derived.alpha_minus,
            alpha_plus: derived.alpha_plus,
            alpha_l: report.alpha_l,
            alpha_u: report.alpha_u,
            e_len: report.e.length(),
            c_len: report.c.length(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub level: usize,
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// `bound − measured` for upper bounds, `measured − bound` for lower.
    pub margin: f64,
    pub pass: bool,
}

fn upper(level: usize, name: &str, measured: f64, bound: f64) -> BoundCheck {
    let margin = bound - measured;
    BoundCheck {
        level,
        name: name.into(),
        measured,
        bound,
        margin,
        pass: margin > 0.0,
    }
}

fn lower(level: usize, name: &str, measured: f64, bound: f64) -> BoundCheck {
    let margin = measured - bound;
    BoundCheck {
        level,
        name: name.into(),
        measured,
        bound,
        margin,
        pass: margin > 0.0,
    }
}

/// Strip heights against `|C|α_l^M ≤ h^φ ≤ H^φ ≤ |C|α₋^M` and
/// `|E|α_u^{−M} ≤ h^ψ ≤ H^ψ ≤ |E|α₊^{−M}`.
pub fn audit_heights(state: &CriticalState, k: &AuditConstants) -> Vec<BoundCheck> {
    let mut out = Vec::new();
    for l in &state.levels {
        let (b, m) = (&l.bounds, l.m as i32);
        out.push(lower(l.n, "h_phi", b.h_phi, k.c_len * k.alpha_l.powi(m)));
        out.push(upper(
            l.n,
            "H_phi",
            b.big_h_phi,
            k.c_len * k.alpha_minus.powi(m),
        ));
        out.push(lower(l.n, "h_psi", b.h_psi, k.e_len * k.alpha_u.powi(-m)));
        out.push(upper(
            l.n,
            "H_psi",
            b.big_h_psi,
            k.e_len * k.alpha_plus.powi(-m),
        ));
    }
    out
}

/// Slopes `l^φ, u^φ, u^ψ` and `γ^φ, γ^ψ` against their closed-form bounds.
/// `refined` uses `s′` on the last `M₀` terms.
pub fn audit_graph_slopes(
    state: &CriticalState,
    k: &AuditConstants,
    refined: bool,
) -> Vec<BoundCheck> {
    let (am, ap, s, sb) = (k.alpha_minus, k.alpha_plus, k.s, k.s_big);
    let geo_m = 1.0 / (1.0 / am - 1.0);
    let geo_p = 1.0 / (ap - 1.0);
    let (coef_phi, coef_psi, gam_phi, gam_psi) = match (refined, k.s_prime, state.m.first()) {
        (true, Some(sp), Some(&m0)) => (
            sp + am.powf(m0 as f64) * sb,
            sp + ap.powf(-(m0 as f64)) * sb,
            sp * sum_k_xk(am, 1) + sb * sum_k_xk(am, m0 + 1),
            sp * sum_k1_xk(1.0 / ap, 1) + sb * sum_k1_xk(1.0 / ap, m0 + 1),
        ),
        _ => (sb, sb, sb * sum_k_xk(am, 1), sb * sum_k1_xk(1.0 / ap, 1)),
    };
    let mut out = Vec::new();
    for l in &state.levels {
        let b = &l.bounds;
        out.push(lower(l.n, "l_phi", b.l_phi, s - coef_phi * geo_m));
        out.push(upper(l.n, "u_phi", b.u_phi, sb + coef_phi * geo_m));
        out.push(upper(l.n, "u_psi", b.u_psi, coef_psi * geo_p));
        out.push(upper(l.n, "gamma_phi", b.gamma_phi, gam_phi));
        out.push(upper(l.n, "gamma_psi", b.gamma_psi, gam_psi));
    }
    out
}

/// Child widths against `(h^φ+h^ψ)/(u^φ+u^ψ) ≤ |I| ≤ (H^φ+H^ψ)/(l^φ−u^ψ)`,
/// `|∂ω I|` against `(γ^φ+γ^ψ)/(l^φ−u^ψ)` and `¼`, per component.
pub fn audit_widths(state: &CriticalState) -> Vec<BoundCheck> {
    let mut out = Vec::new();
    for l in &state.levels {
        for c in &l.components {
            let b = &c.bounds;
            let len = c.child.length();
            let denom = b.l_phi - b.u_psi;
            out.push(lower(
                l.n,
                "width_lower",
                len,
                (b.h_phi + b.h_psi) / (b.u_phi + b.u_psi),
            ));
            out.push(upper(
                l.n,
                "width_upper",
                len,
                (b.big_h_phi + b.big_h_psi) / denom,
            ));
            let dw = c.d_omega_a.abs().max(c.d_omega_b.abs());
            out.push(upper(
                l.n,
                "d_omega_bound",
                dw,
                (b.gamma_phi + b.gamma_psi) / denom,
            ));
            out.push(upper(l.n, "d_omega_quarter", dw, 0.25));
        }
    }
    out
}

/// Sample-wise inclusions `f^{M_n − M_{n−1}}(𝒜_n) ⊆ 𝒜_{n−1}` and
/// `f^{M_n − 1}(𝒜_n) ⊆ 𝓘_n × C`; returns the number of violating samples.
pub fn audit_inclusions(
    sys: &QpfSystem,
    report: &HypothesisReport,
    state: &CriticalState,
    per_component: usize,
) -> (usize, usize) {
    let w = state.omega;
    let (mut checked, mut bad) = (0, 0);
    for n in 0..state.level {
        let mn = state.m[n];
        for comp in &state.components[n] {
            for i in 0..per_component {
                let t = (i as f64 + 0.5) / per_component as f64;
                let theta_end = comp.at(t);
                let theta0 = theta_end - (mn as f64 - 1.0) * w;
                for j in 0..per_component {
                    let x0 = report.c.at((j as f64 + 0.5) / per_component as f64);
                    checked += 1;
                    let (mut th, mut x) = (theta0.rem_euclid(1.0), x0);
                    let mut ok = true;
                    for step in 1..mn {
                        (th, x) = sys.step(th, x);
                        if n >= 1 && step == mn - state.m[n - 1] && !report.c.contains_val(x) {
                            ok = false;
                        }
                    }
                    if !report.c.contains_val(x) || !comp.contains_val(th) {
                        ok = false;
                    }
                    if !ok {
                        bad += 1;
                    }
                }
            }
        }
    }
    (checked, bad)
}
