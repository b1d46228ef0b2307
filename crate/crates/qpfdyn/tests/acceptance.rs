//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! `QPFDYN_ACCEPT=2,5` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qpfdyn::circle::CircleInterval;
use qpfdyn::conditions::{
    choose_regions_arnold, pinched_threshold, GridSize, HypothesisReport, PinchedCertification,
};
use qpfdyn::critical::{
    audit_graph_slopes, audit_heights, audit_inclusions, audit_widths, build_critical,
    check_f_conditions, deep_intersection, nesting_margin, occupation_audit, AuditConstants,
    BuildConfig, CriticalError, CriticalState, Direction, FrequencyWindows, DEFAULT_HORIZON,
};
use qpfdyn::dynamics::{
    attractor_sample, graph_lyapunov, iterate_forward, repeller_sample, rotation_number_lift,
    sink_source_search, tongue_boundary, SinkSourceConfig, TongueConfig,
};
use qpfdyn::exclusion::{
    build_omega, build_schedule, desk_schedule, toy_regions, ExclusionConfig, ExclusionError,
    RegionModel, ScheduleVariant,
};
use qpfdyn::{ArnoldParams, CocycleParams, Family, Forcing, PinchedParams, QpfSystem, GOLDEN};

struct Harness {
    only: Option<BTreeSet<u32>>,
    failed: Vec<u32>,
}

impl Harness {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().map_or(true, |s| s.contains(&id))
    }

    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!(
            "{} [{id}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(id);
        }
    }
}

fn arnold(omega: f64, tau: f64, a: f64, b: f64, d: u32) -> QpfSystem {
    QpfSystem::arnold(omega, tau, a, b, d).expect("valid Arnold parameters")
}

// ---------------------------------------------------------------------------
// 1

const C1_N: u64 = 1_000_000;
const C1_TOL: f64 = 1e-9;
const C1_SECONDS: f64 = 0.1;

fn criterion_1(h: &mut Harness) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut slowest) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let (tau, omega): (f64, f64) = (rng.gen(), rng.gen());
        let sys = arnold(omega, tau, 0.0, 0.0, 1);
        let t0 = Instant::now();
        let (rho, _) = rotation_number_lift(&sys, rng.gen(), rng.gen(), C1_N);
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        worst = worst.max((rho - tau).abs());
    }
    h.record(
        1,
        "rigid rotation rho = tau",
        worst < C1_TOL && slowest < C1_SECONDS,
        format!("10 points at n=1e6, max |rho-tau| = {worst:.2e} (tol {C1_TOL:e}), max time {slowest:.3} s (limit {C1_SECONDS} s)"),
    );
}

// ---------------------------------------------------------------------------
// 2

const C2_N: u64 = 10_000_000;
const C2_TOL: f64 = 1e-5;
const C2_SECONDS: f64 = 2.0;

fn criterion_2(h: &mut Harness) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<(f64, f64, u32, f64, f64, f64)> = (0..20)
        .map(|_| {
            let a = rng.gen::<f64>() / TAU;
            let b = 2.0 * rng.gen::<f64>();
            let d = 2 * rng.gen_range(0..=100u32) + 1;
            (a, b, d, rng.gen(), rng.gen(), rng.gen())
        })
        .collect();
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for &(a, b, d, omega, th, x) in &pts {
        let sys = arnold(omega, 0.0, a, b, d);
        let t0 = Instant::now();
        let (rho, _) = rotation_number_lift(&sys, th, x, C2_N);
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        worst = worst.max(rho.abs());
    }
    h.record(
        2,
        "symmetric Arnold maps have rho = 0",
        worst < C2_TOL && slowest < C2_SECONDS,
        format!("20 random (a, b, odd d <= 201, omega) at n=1e7, max |rho| = {worst:.2e} (tol {C2_TOL:e}), max time {slowest:.2} s (limit {C2_SECONDS} s)"),
    );
}

// ---------------------------------------------------------------------------
// 3

const C3_POINTS: usize = 1000;
const C3_TOL: f64 = 1e-5;
/// Largest relative error estimate at which the oracle adjudicates a point.
const C3_ORACLE: f64 = 1e-7;
const C3_MIN_RESOLVED: f64 = 0.95;

/// Ridders' extrapolated central difference; returns (derivative, error estimate).
/// The estimate never drops below the roundoff of the difference quotient.
fn ridders<F: Fn(f64) -> f64>(f: &F, x: f64, h0: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const NTAB: usize = 10;
    let con2 = CON * CON;
    let noise = 64.0 * f64::EPSILON * (f(x).abs() + 1.0);
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut hh = h0;
    a[0][0] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
    let (mut ans, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..NTAB {
        hh /= CON;
        a[0][i] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
        let mut fac = con2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= con2;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs())
                .max(noise / hh);
            if e <= err {
                err = e;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (ans, err)
}

/// Ridders over a ladder of initial steps, keeping the smallest error estimate.
fn ridders_best<F: Fn(f64) -> f64>(f: F, x: f64) -> (f64, f64) {
    [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]
        .iter()
        .map(|&h0| ridders(&f, x, h0))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn rel_err(acc: f64, fd: f64) -> f64 {
    (acc - fd).abs() / fd.abs().max(f64::MIN_POSITIVE)
}

fn random_family(kind: usize, rng: &mut ChaCha8Rng) -> Family {
    match kind {
        0 => Family::Arnold(ArnoldParams::new(
            rng.gen(),
            rng.gen::<f64>() / TAU * 0.95,
            rng.gen_range(-1.0..1.0),
            2 * rng.gen_range(0..=10u32) + 1,
        )),
        1 => Family::Pinched(PinchedParams::new(
            rng.gen_range(2.0..20.0),
            rng.gen_range(2..=3),
            rng.gen_range(0.6..1.5),
        )),
        _ => Family::Cocycle(CocycleParams::new(
            rng.gen_range(1.2..4.0),
            Forcing::Cosine {
                beta: rng.gen_range(0.2..1.0),
            },
        )),
    }
}

fn criterion_3(h: &mut Harness) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let jobs: Vec<(usize, Family, f64, f64, f64, u64)> = (0..3 * C3_POINTS)
        .map(|i| {
            let kind = i % 3;
            (
                kind,
                random_family(kind, &mut rng),
                rng.gen(),
                rng.gen(),
                rng.gen(),
                rng.gen_range(1..=100),
            )
        })
        .collect();
    // (family, rel err, oracle resolved) for each of the two derivatives
    let results: Vec<(usize, [(f64, bool); 2])> = jobs
        .par_iter()
        .map(|&(kind, fam, omega, th, x, n)| {
            let sys = QpfSystem::new(qpfdyn::CirclePoint::new(omega), fam).unwrap();
            let st = iterate_forward(&sys, th, x, n);
            let (fd_t, e_t) = ridders_best(|t| iterate_forward(&sys, t, x, n).x_lift(), th);
            let (fd_w, e_w) = ridders_best(
                |w| iterate_forward(&sys.with_omega(w), th, x, n).x_lift(),
                omega,
            );
            let judge = |acc: f64, fd: f64, e: f64| (rel_err(acc, fd), e <= C3_ORACLE * fd.abs());
            (
                kind,
                [judge(st.dtheta, fd_t, e_t), judge(st.domega, fd_w, e_w)],
            )
        })
        .collect();
    let mut worst = [0.0f64; 3];
    let (mut bad, mut unresolved) = (0usize, 0usize);
    for (k, pair) in &results {
        for &(e, resolved) in pair {
            if !resolved {
                unresolved += 1;
                continue;
            }
            worst[*k] = worst[*k].max(e);
            if !(e < C3_TOL) {
                bad += 1;
            }
        }
    }
    let total = 2 * results.len();
    let resolved_share = 1.0 - unresolved as f64 / total as f64;
    h.record(
        3,
        "d/dtheta and d/domega accumulators vs finite differences",
        bad == 0 && resolved_share >= C3_MIN_RESOLVED,
        format!(
            "{C3_POINTS} points per family, n <= 100; max rel err arnold {:.1e}, pinched {:.1e}, cocycle {:.1e} (tol {C3_TOL:e}); {bad} failures; \
             {unresolved}/{total} derivatives where the oracle's own error exceeds {C3_ORACLE:e} relative (skipped, at most {:.0}% allowed)",
            worst[0],
            worst[1],
            worst[2],
            100.0 * (1.0 - C3_MIN_RESOLVED)
        ),
    );
}

// ---------------------------------------------------------------------------
// 4

const C4_TOL: f64 = 1e-4;
const C4_SECONDS: f64 = 30.0;

fn criterion_4(h: &mut Harness) {
    let t0 = Instant::now();
    let cfg = TongueConfig::new(0.0, 1e-4, 1e-6, 1_000_000);
    let r = tongue_boundary(GOLDEN, ArnoldParams::new(0.0, 0.1, 0.0, 1), &cfg);
    let secs = t0.elapsed().as_secs_f64();
    match r {
        Ok(t) => h.record(
            4,
            "unforced tongue width 2a",
            (t.width - 0.2).abs() < C4_TOL && secs < C4_SECONDS,
            format!(
                "a=0.1: width {:.8} vs 0.2 (tol {C4_TOL:e}), {secs:.2} s (limit {C4_SECONDS} s)",
                t.width
            ),
        ),
        Err(e) => h.record(
            4,
            "unforced tongue width 2a",
            false,
            format!("bisection failed: {e}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// 5

const C5_A: f64 = 0.12;
const C5_DS: [u32; 6] = [11, 21, 41, 81, 161, 321];
const C5_NB: usize = 64;
const C5_N: u64 = 100_000;
const C5_TOL_RHO: f64 = 2e-5;
const C5_TOL_TAU: f64 = 1e-6;
const C5_COLLAPSE: f64 = 1e-2;

#[derive(Clone, Copy)]
struct Collapse {
    d: u32,
    b: f64,
    resolved: bool,
}

/// Returns, per scanned d, the b of smallest width when that width is below 1% of the b=0 width.
fn criterion_5(h: &mut Harness) -> Vec<Collapse> {
    let cfg = TongueConfig::new(0.0, C5_TOL_RHO, C5_TOL_TAU, C5_N);
    let bs: Vec<f64> = (0..C5_NB)
        .map(|i| 0.8 + 0.4 * i as f64 / (C5_NB - 1) as f64)
        .collect();
    let base = tongue_boundary(GOLDEN, ArnoldParams::new(0.0, C5_A, 0.0, 1), &cfg)
        .map(|t| t.width)
        .unwrap_or(f64::NAN);
    let jobs: Vec<(u32, f64)> = C5_DS
        .iter()
        .flat_map(|&d| bs.iter().map(move |&b| (d, b)))
        .collect();
    let rows: Vec<(u32, f64, Option<(f64, bool)>)> = jobs
        .par_iter()
        .map(|&(d, b)| {
            let r = tongue_boundary(GOLDEN, ArnoldParams::new(0.0, C5_A, b, d), &cfg).ok();
            (d, b, r.map(|t| (t.width, t.resolved)))
        })
        .collect();
    let reference = 2.0 * C5_A;
    let mut mins = Vec::new();
    let mut raw_mins = Vec::new();
    let mut collapsed: Vec<Collapse> = Vec::new();
    let mut failures = 0;
    for &d in &C5_DS {
        let mut m = f64::INFINITY;
        let mut raw = f64::INFINITY;
        let mut best: Option<(f64, f64, bool)> = None;
        for (dd, b, r) in &rows {
            if *dd != d {
                continue;
            }
            match r {
                Some((w, resolved)) => {
                    m = m.min(if *resolved { *w } else { 0.0 });
                    raw = raw.min(*w);
                    if best.map_or(true, |(bw, _, _)| *w < bw) {
                        best = Some((*w, *b, *resolved));
                    }
                }
                None => failures += 1,
            }
        }
        mins.push(m);
        raw_mins.push(raw);
        if let Some((w, b, resolved)) = best {
            if w < C5_COLLAPSE * reference {
                collapsed.push(Collapse { d, b, resolved });
            }
        }
    }
    let monotone = mins.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!(
        "b=0 width {base:.6} (analytic {reference}); min width over b per d {:?}: raw {:?}, resolved-or-0 {:?}; \
         first d with width < {C5_COLLAPSE} x 0.24: {}; {failures} bisection failures",
        C5_DS,
        raw_mins.iter().map(|w| format!("{w:.2e}")).collect::<Vec<_>>(),
        mins.iter().map(|w| format!("{w:.2e}")).collect::<Vec<_>>(),
        collapsed.first().map_or("none".into(), |c| format!("d = {} (b = {:.4})", c.d, c.b)),
    );
    h.record(
        5,
        "tongue collapse",
        !collapsed.is_empty() && monotone && failures == 0,
        detail,
    );
    collapsed
}

// ---------------------------------------------------------------------------
// 6

const C6_WINDOWS: [u64; 3] = [1_000, 10_000, 100_000];
const C6_MS: [u64; 1] = [3];
/// Depth-1 critical intervals resolve the fibre to about this distance.
const C6_OFFSET: f64 = 0.02;

fn criterion_6(h: &mut Harness, collapsed: &[Collapse]) {
    let mut skipped = Vec::new();
    for c in collapsed.iter().filter(|c| !c.resolved) {
        let params = ArnoldParams::new(0.0, C5_A, c.b, c.d);
        let sys = arnold(GOLDEN, 0.0, C5_A, c.b, c.d);
        let built = choose_regions_arnold(&params, None)
            .map_err(|e| e.to_string())
            .and_then(|ch| ch.report(&sys, 4000, 400).map_err(|e| e.to_string()))
            .and_then(|rep| {
                let st = build_critical(&sys, &rep, &C6_MS, &BuildConfig::default())
                    .map_err(|e| e.to_string())?;
                Ok((rep, st))
            });
        let (rep, state) = match built {
            Ok(x) => x,
            Err(e) => {
                skipped.push(format!("d={} b={:.4}: {e}", c.d, c.b));
                continue;
            }
        };
        return sink_source_at(h, &sys, &rep, &state, c, &skipped);
    }
    h.record(
        6,
        "sink-source evidence",
        false,
        format!(
            "no collapse point with a depth-1 construction: {}",
            skipped.join("; ")
        ),
    );
}

fn sink_source_at(
    h: &mut Harness,
    sys: &QpfSystem,
    rep: &HypothesisReport,
    state: &CriticalState,
    c: &Collapse,
    skipped: &[String],
) {
    let run = || -> Result<(bool, String), String> {
        let cands = deep_intersection(sys, rep, state).map_err(|e| e.to_string())?;
        let cfg = SinkSourceConfig {
            windows: C6_WINDOWS.to_vec(),
            lambda_min: 0.0,
            offset_tol: C6_OFFSET,
            transient: 1000,
        };
        let hits = sink_source_search(sys, &cands, &cfg).map_err(|e| e.to_string())?;
        let att = attractor_sample(sys, 0.0, 0.0, 10_000, 100_000);
        let rep_s = repeller_sample(sys, 0.0, 0.0, 10_000, 100_000).map_err(|e| e.to_string())?;
        let ga = graph_lyapunov(sys, &att, 1000, 1e-6);
        let gr = graph_lyapunov(sys, &rep_s, 1000, 1e-6);
        let ok = !hits.is_empty() && ga.value < 0.0 && gr.value > 0.0;
        let exps: Vec<String> = hits
            .iter()
            .map(|x| {
                format!(
                    "fwd {:?} bwd {:?} offsets {:.1e}/{:.1e}",
                    round3(&x.exponents.forward),
                    round3(&x.exponents.backward),
                    x.exponents.forward_offset,
                    x.exponents.backward_offset
                )
            })
            .collect();
        let skip = if skipped.is_empty() {
            String::new()
        } else {
            format!("skipped [{}]; ", skipped.join("; "))
        };
        Ok((
            ok,
            format!(
                "{skip}d={} b={:.4}, depth 1 (M={:?}): {} candidates, {} with both exponents > 0 on windows 1e3,1e4,1e5 \
                 and segments within {C6_OFFSET} of the candidate [{}]; graph exponent attractor {:.4}, repeller {:.4}",
                c.d,
                c.b,
                C6_MS,
                cands.len(),
                hits.len(),
                exps.join("; "),
                ga.value,
                gr.value
            ),
        ))
    };
    match run() {
        Ok((p, m)) => h.record(6, "sink-source evidence", p, m),
        Err(m) => h.record(6, "sink-source evidence", false, m),
    }
}

fn round3(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}

// ---------------------------------------------------------------------------
// 7 and 8

const C7_P: u32 = 2;
const C7_BETA: f64 = 1.0;
const C7_EPS: f64 = 0.1;
const C7_MS: [u64; 2] = [2, 3];

struct Certified {
    cert: PinchedCertification,
    sys: QpfSystem,
    state: CriticalState,
}

fn certified_setup() -> Result<Certified, String> {
    let cert = pinched_threshold(C7_P, C7_BETA, C7_EPS, 1e3, 1e4, 1e-3, GridSize::default())
        .map_err(|e| e.to_string())?
        .ok_or("no certified alpha in [1e3, 1e4]")?;
    let sys = QpfSystem::new(
        qpfdyn::CirclePoint::new(GOLDEN),
        Family::Pinched(cert.params),
    )
    .map_err(|e| e.to_string())?;
    let state = build_critical(&sys, &cert.report, &C7_MS, &BuildConfig::default())
        .map_err(|e| e.to_string())?;
    Ok(Certified { cert, sys, state })
}

fn criterion_7(h: &mut Harness, c: &Result<Certified, String>) {
    let c = match c {
        Ok(c) => c,
        Err(e) => {
            return h.record(
                7,
                "critical-set audits",
                false,
                format!("setup failed: {e}"),
            )
        }
    };
    let Some(derived) = &c.cert.derived else {
        return h.record(
            7,
            "critical-set audits",
            false,
            "no derived constants at the threshold".into(),
        );
    };
    let k = AuditConstants::new(&c.cert.report, derived);
    let one_child = c.state.levels.iter().all(|l| {
        l.components.len() == c.state.components[l.n].len()
            && c.state.components[l.n + 1].len() == l.components.len()
    });
    let nest = nesting_margin(&c.state);
    let mut checks = audit_heights(&c.state, &k);
    checks.extend(audit_graph_slopes(&c.state, &k, false));
    checks.extend(audit_widths(&c.state));
    let failed: Vec<String> = checks
        .iter()
        .filter(|b| !(b.pass && b.margin > 0.0))
        .map(|b| format!("{}@{}", b.name, b.level))
        .collect();
    let min_margin = checks
        .iter()
        .map(|b| b.margin)
        .fold(f64::INFINITY, f64::min);
    let (checked, bad) = audit_inclusions(&c.sys, &c.cert.report, &c.state, 200);
    let widths: Vec<String> = c
        .state
        .levels
        .iter()
        .map(|l| format!("{:.2e}", l.child_lengths().1))
        .collect();
    h.record(
        7,
        "critical-set audits",
        one_child && nest > 0.0 && failed.is_empty(),
        format!(
            "pinched p=2 beta=1 eps=0.1 at certified alpha* = {:.2}, golden omega, M = {:?}: nesting margin {nest:.2e}, one child per parent {one_child}, \
             {} bound checks (heights, slopes, widths, |d_omega I| <= 1/4) min margin {min_margin:.2e}, failures {:?}; max child width per level {:?}; \
             inclusion spot checks {bad}/{checked} outside",
            c.cert.params.alpha,
            C7_MS,
            checks.len(),
            failed,
            widths
        ),
    );
}

const C8_STARTS: usize = 100;

fn criterion_8(h: &mut Harness, c: &Result<Certified, String>) {
    let c = match c {
        Ok(c) => c,
        Err(e) => {
            return h.record(
                8,
                "occupation-time audit",
                false,
                format!("setup failed: {e}"),
            )
        }
    };
    let Some(derived) = &c.cert.derived else {
        return h.record(
            8,
            "occupation-time audit",
            false,
            "no derived constants at the threshold".into(),
        );
    };
    let rep = &c.cert.report;
    let st = &c.state;
    let kk: Vec<u64> = derived.k[..3].to_vec();
    let eps: Vec<f64> = (0..3).map(|n| rep.eps0 / 3f64.powi(n)).collect();
    let fw = match FrequencyWindows::new(&st.components, &st.m, &kk, &eps, GOLDEN) {
        Ok(f) => f,
        Err(e) => {
            return h.record(
                8,
                "occupation-time audit",
                false,
                format!("window sets: {e}"),
            )
        }
    };
    let mut lines = Vec::new();
    let mut total_violations = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..=2usize {
        let in_f = if n == 0 {
            "n/a".to_string()
        } else {
            match check_f_conditions(&st.components, &st.m, &kk, &eps, GOLDEN, n - 1, None) {
                Ok(v) => format!("{} (margin {:.3})", v.pass, v.min_margin()),
                Err(e) => format!("error {e}"),
            }
        };
        let beta = derived.beta_n[n];
        for dir in [Direction::Forward, Direction::Backward] {
            let (mut esc, mut occ, mut accepted, mut tries) = (0u64, 0u64, 0usize, 0usize);
            let mut min_frac = 1.0f64;
            while accepted < C8_STARTS && tries < 100 * C8_STARTS {
                tries += 1;
                let comps = &st.components[n];
                let comp = comps[rng.gen_range(0..comps.len())];
                let j = rng.gen_range(1..=10_000u64) as f64;
                let (th0, x0) = match dir {
                    Direction::Forward => (comp.at(rng.gen()) - j * GOLDEN, rep.c.at(rng.gen())),
                    Direction::Backward => (
                        comp.at(rng.gen()) + GOLDEN + j * GOLDEN,
                        rep.e.at(rng.gen()),
                    ),
                };
                match occupation_audit(
                    &c.sys,
                    rep,
                    st,
                    &fw,
                    n,
                    th0.rem_euclid(1.0),
                    x0,
                    dir,
                    beta,
                    DEFAULT_HORIZON,
                ) {
                    Ok(a) => {
                        accepted += 1;
                        esc += a.escape_violations;
                        occ += a.occupation_violations;
                        min_frac = min_frac.min(a.min_fraction);
                    }
                    Err(CriticalError::Precondition(_)) => {}
                    Err(e) => {
                        lines.push(format!("n={n} {dir:?}: {e}"));
                        break;
                    }
                }
            }
            total_violations += esc + occ;
            if accepted < C8_STARTS {
                total_violations += 1;
            }
            lines.push(format!(
                "n={n} {dir:?} beta={beta:.4} omega in F_(n-1): {in_f}, {accepted} starts, escape {esc}, occupation {occ}, min fraction {min_frac:.3}"
            ));
        }
    }
    h.record(
        8,
        "occupation-time audit",
        total_violations == 0,
        lines.join("; "),
    );
}

// ---------------------------------------------------------------------------
// 9

const C9_LEN: f64 = 0.01;
const C9_EPS0: f64 = 2e-5;
const C9_N: [u64; 2] = [3, 97];
const C9_K: [u64; 2] = [16, 32];
const C9_SAMPLES: usize = 1_000_000;
const C9_TOL: f64 = 2e-3;

fn norm(t: f64) -> f64 {
    let f = t.rem_euclid(1.0);
    f.min(1.0 - f)
}

/// Depth-1 toy membership straight from `‖kω‖`: `I₀ = [0, L]`, `I₁` the ball
/// of radius `ε₁/4` about `L/2`, `M₀ = 3`.
fn toy_member(w: f64, eps: [f64; 2]) -> bool {
    let m0 = C9_N[0] as i64;
    if !(1..=2 * C9_K[0] as i64 * m0).all(|k| norm(k as f64 * w) - C9_LEN > 3.0 * eps[0]) {
        return false;
    }
    let r1 = 0.25 * eps[1];
    let window = (C9_N[1] as i64..2 * C9_N[1] as i64).find(|&m| {
        [-(m - 1), m + 1].iter().all(|&s| {
            ((-m0 + 1)..=(m0 + 1)).all(|k| norm((s - k) as f64 * w) - (0.5 * C9_LEN + r1) > eps[0])
        })
    });
    let Some(m1) = window else { return false };
    (1..=2 * C9_K[1] as i64 * m1).all(|k| norm(k as f64 * w) - 2.0 * r1 > 3.0 * eps[1])
}

fn criterion_9(h: &mut Harness) {
    let eps = [C9_EPS0, C9_EPS0 / 3.0];
    let run = || -> Result<(bool, String), ExclusionError> {
        let sched = desk_schedule(1, &C9_N, &C9_K, &eps)?;
        let toy = toy_regions(C9_LEN, &eps);
        let om = build_omega(&toy, &sched, 1, &ExclusionConfig::default())?;
        let mut ivs: Vec<(f64, f64, usize)> = om
            .intervals
            .iter()
            .enumerate()
            .map(|(i, iv)| {
                (
                    iv.interval.lo().value(),
                    iv.interval.lo().value() + iv.interval.length(),
                    i,
                )
            })
            .collect();
        ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let locate = |w: f64| -> Option<usize> {
            let i = ivs.partition_point(|iv| iv.0 <= w);
            (i > 0 && w <= ivs[i - 1].1).then(|| ivs[i - 1].2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ws: Vec<f64> = (0..C9_SAMPLES).map(|_| rng.gen()).collect();
        let hits: Vec<(bool, Option<usize>)> = ws
            .par_iter()
            .map(|&w| (toy_member(w, eps), locate(w)))
            .collect();
        let mc = hits.iter().filter(|h| h.0).count() as f64 / C9_SAMPLES as f64;
        let survivors: Vec<(f64, usize)> = ws
            .iter()
            .zip(&hits)
            .filter_map(|(&w, h)| h.1.map(|i| (w, i)))
            .collect();
        let repass_fail = survivors
            .par_iter()
            .filter(|&&(w, i)| {
                let regions = toy.regions(w, &om.intervals[i].m[..1]).unwrap();
                !check_f_conditions(&regions, &om.intervals[i].m, &C9_K, &eps, w, 1, None)
                    .map_or(false, |v| v.pass)
            })
            .count();
        let v1 = sched.vprod(1);
        let comps = om.intervals.len();
        let pass = (om.measure - mc).abs() < C9_TOL && (comps as f64) <= v1 && repass_fail == 0;
        let a0 = &om.accounts[0];
        Ok((
            pass,
            format!(
                "toy |I0|=0.01, K=(16,32), N=(3,97), eps=(2e-5, eps0/3): Leb(Omega_1) = {:.6}, Monte-Carlo 1e6 = {mc:.6}, |diff| {:.2e} (tol {C9_TOL:e}); \
                 components {comps} <= V_1 = {v1:.3e}; {} sampled survivors, {repass_fail} fail (F1)/(F2) re-check; \
                 level-0 accounting bound {:.4} vs measure {:.4} (reported only)",
                om.measure,
                (om.measure - mc).abs(),
                survivors.len(),
                a0.measure_bound,
                a0.measure
            ),
        ))
    };
    match run() {
        Ok((p, m)) => h.record(9, "exclusion engine vs Monte-Carlo", p, m),
        Err(e) => h.record(9, "exclusion engine vs Monte-Carlo", false, e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// 10

fn criterion_10(h: &mut Harness, c: &Result<Certified, String>) {
    let rep: HypothesisReport = match c {
        Ok(c) => c.cert.report.clone(),
        Err(e) => {
            return h.record(
                10,
                "schedule arithmetic",
                false,
                format!("setup failed: {e}"),
            )
        }
    };
    let (p, t) = match &c.as_ref().unwrap().cert.theorem {
        Some((p, _)) => (*p, 4u32),
        None => {
            return h.record(
                10,
                "schedule arithmetic",
                false,
                "no theorem exponent".into(),
            )
        }
    };
    let min_alpha = match build_schedule(&rep, p, 10.0, t, ScheduleVariant::Basic) {
        Err(ExclusionError::Infeasible {
            min_alpha: Some(a), ..
        }) => a,
        Ok(_) => 10.0,
        Err(e) => return h.record(10, "schedule arithmetic", false, e.to_string()),
    };
    let alpha = 1.01 * min_alpha;
    let s = match build_schedule(&rep, p, alpha, t, ScheduleVariant::Basic) {
        Ok(s) => s,
        Err(e) => return h.record(10, "schedule arithmetic", false, e.to_string()),
    };
    let nn = rep.n_components as f64;
    let pf = p as f64;
    let la = alpha.ln();
    // independent recomputation of every chain term from N, K, eps
    let mut log_vprod = 0.0;
    let mut term_err = 0.0f64;
    let mut chain_ok = true;
    let mut sigma_terms = 0.0;
    for n in 0..s.levels() {
        let (ln_n, ln_k) = (s.log_n[n], s.k[n].ln());
        let log_u = if n == 0 {
            (32.0 * nn * nn).ln() + ln_k + ln_n + s.log_eps[0]
        } else {
            (64.0 * nn * nn).ln() + ln_k + 2.0 * ln_n + s.log_eps[n] - s.log_eps[n - 1]
        };
        let log_v = if n == 0 {
            (4.0 * nn * nn).ln() + 2.0 * ln_k + 2.0 * ln_n
        } else {
            (8.0 * nn * nn).ln() - s.log_eps[n - 1] + 2.0 * ln_k + 3.0 * ln_n
        };
        term_err = term_err.max((log_u - s.log_u[n]).abs() / log_u.abs().max(1.0));
        term_err = term_err.max((log_v - s.log_v[n]).abs() / log_v.abs().max(1.0));
        let log_term = if n == 0 { log_u } else { log_u + log_vprod };
        let log_bound = if n == 0 {
            log_u
        } else {
            -s.n[n - 1] * la / (4.0 * pf)
        };
        let ct = s.chain[n];
        chain_ok &= ct.n == n
            && ct.holds()
            && (ct.log_term - log_term).abs() <= 1e-9 * log_term.abs().max(1.0);
        chain_ok &= (ct.log_bound - log_bound).abs() <= 1e-9 * log_bound.abs().max(1.0);
        sigma_terms += log_term.exp();
        log_vprod += log_v;
    }
    let sigma = 1.0 - sigma_terms;
    let sigma_ok =
        (sigma - s.sigma).abs() <= 1e-9 * sigma.abs().max(1.0) && s.sigma >= s.sigma_chain;
    let closed = 2f64.powi(1 - t as i32) / (nn * nn);
    let partial: f64 = (0..60)
        .map(|i| 1.0 / (2f64.powi(i + t as i32) * nn * nn))
        .sum();
    let k_ok = s.k_sum == closed
        && (partial - closed).abs() <= 1e-15 * closed
        && s.k_condition == (closed < 1.0 / (6.0 * nn * nn));
    h.record(
        10,
        "schedule arithmetic",
        chain_ok && sigma_ok && k_ok && term_err < 1e-12,
        format!(
            "exact schedule, N={} components, p={p}, t={t}, alpha = 1.01 x {min_alpha:.4e}: {} levels, N = {:?}; \
             chain terms hold term-by-term {chain_ok}, u/v recomputation rel err {term_err:.1e}; sigma = {:.6e}, chain bound {:.6e}; \
             (K) sum = {:.6e} = 2^(1-t)/N^2 = {closed:.6e} exactly: {}, partial sums agree, condition {}",
            rep.n_components,
            s.levels(),
            s.n.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>(),
            s.sigma,
            s.sigma_chain,
            s.k_sum,
            s.k_sum == closed,
            s.k_condition
        ),
    );
}

// ---------------------------------------------------------------------------
// 11

const C11_TAU: f64 = 0.05;
const C11_A: f64 = 0.12;
const C11_B: f64 = 1.0;
const C11_DS: [u32; 2] = [41, 161];
const C11_TOL: f64 = 1e-6;
const C11_GRID: usize = 1_000_000;

fn g_slope(b: f64, d: u32, th: f64) -> f64 {
    let c = (TAU * th).cos();
    (TAU * b * d as f64 * c.abs().powi(d as i32 - 1) * (TAU * th).sin()).abs()
}

fn grid_min(b: f64, d: u32, comps: &[CircleInterval]) -> f64 {
    comps
        .iter()
        .map(|c| {
            (0..=C11_GRID)
                .into_par_iter()
                .map(|i| g_slope(b, d, c.at(i as f64 / C11_GRID as f64)))
                .reduce(|| f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_11(h: &mut Harness) {
    let mut ok = true;
    let mut ratios = Vec::new();
    let mut parts = Vec::new();
    for &d in &C11_DS {
        let choice = match choose_regions_arnold(&ArnoldParams::new(C11_TAU, C11_A, C11_B, d), None)
        {
            Ok(c) => c,
            Err(e) => return h.record(11, "Arnold region constants", false, format!("d={d}: {e}")),
        };
        let big_a = choice.a_const.unwrap();
        let sp = choice.s_prime.unwrap();
        let scan = grid_min(C11_B, d, choice.i0.components());
        let rel = (choice.s - scan).abs() / scan;
        let lower = (d as f64).sqrt() / big_a;
        ok &= choice.s >= lower && rel < C11_TOL;
        ratios.push(sp / choice.s);
        parts.push(format!(
            "d={d}: s={:.6e} >= sqrt(d)/A={lower:.4e}, grid min {scan:.6e} (rel {rel:.1e}), s'/s={:.3e}",
            choice.s,
            sp / choice.s
        ));
    }
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    h.record(
        11,
        "Arnold region constants",
        ok && decreasing,
        format!("{}; s'/s decreasing {decreasing}", parts.join("; ")),
    );
}

fn main() {
    let only = std::env::var("QPFDYN_ACCEPT").ok().map(|s| {
        s.split(',')
            .filter_map(|t| t.trim().parse().ok())
            .collect::<BTreeSet<u32>>()
    });
    let mut h = Harness {
        only,
        failed: Vec::new(),
    };
    let t0 = Instant::now();
    if h.wants(1) {
        criterion_1(&mut h);
    }
    if h.wants(2) {
        criterion_2(&mut h);
    }
    if h.wants(3) {
        criterion_3(&mut h);
    }
    if h.wants(4) {
        criterion_4(&mut h);
    }
    if h.wants(5) || h.wants(6) {
        let collapsed = criterion_5(&mut h);
        if h.wants(6) {
            criterion_6(&mut h, &collapsed);
        }
    }
    if h.wants(7) || h.wants(8) || h.wants(10) {
        let c = certified_setup();
        if h.wants(7) {
            criterion_7(&mut h, &c);
        }
        if h.wants(8) {
            criterion_8(&mut h, &c);
        }
        if h.wants(10) {
            criterion_10(&mut h, &c);
        }
    }
    if h.wants(9) {
        criterion_9(&mut h);
    }
    if h.wants(11) {
        criterion_11(&mut h);
    }
    println!(
        "acceptance finished in {:.1} s; failed: {:?}",
        t0.elapsed().as_secs_f64(),
        h.failed
    );
    if !h.failed.is_empty() {
        std::process::exit(1);
    }
}
