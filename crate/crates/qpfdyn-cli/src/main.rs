use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use rayon::prelude::*;
use serde_json::json;

use qpfdyn::circle::centered;
use qpfdyn::conditions::{
    choose_regions_arnold, choose_regions_pinched, derived_constants, fit_theorem_alpha, minimal_t,
    ConditionsError, HypothesisReport, RegionChoice, DEFAULT_SLACK, P_MAX,
};
use qpfdyn::critical::{
    audit_graph_slopes, audit_heights, audit_inclusions, audit_widths, build_critical,
    nesting_margin, AuditConstants, BuildConfig, CriticalError,
};
use qpfdyn::dynamics::{
    attractor_sample, backward_exponents, deviation_profile, forward_exponents, lyapunov_pointwise,
    repeller_sample, rotation_number_lift, tongue_boundary, DynamicsError, TongueConfig,
};
use qpfdyn::exclusion::{
    build_omega, desk_schedule, toy_regions, ExclusionConfig, ExclusionError, SystemRegions,
};
use qpfdyn::maps::MapError;
use qpfdyn::sweep::{
    fmt_f64, run_sweep_to_csv, thread_pool, Config, FamilySpec, KeyDoc, KeyValues, RunOptions,
    SweepError, SweepSpec, SWEEP_KEYS, SYSTEM_KEYS,
};
use qpfdyn::{Family, QpfSystem};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            MapError::NoConvergence { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Map(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Map(m) => m.into(),
            DynamicsError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            DynamicsError::BracketFailure { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ConditionsError> for CliError {
    fn from(e: ConditionsError) -> Self {
        match e {
            ConditionsError::Config(_) => CliError::Usage(e.to_string()),
            ConditionsError::Divergence { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<CriticalError> for CliError {
    fn from(e: CriticalError) -> Self {
        match e {
            CriticalError::Map(m) => m.into(),
            CriticalError::Config(_) | CriticalError::Precondition(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ExclusionError> for CliError {
    fn from(e: ExclusionError) -> Self {
        match e {
            ExclusionError::Critical(c) => c.into(),
            ExclusionError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// keys per subcommand

const K_START: [KeyDoc; 2] = [
    KeyDoc {
        key: "theta0",
        default: "0",
        help: "starting theta",
    },
    KeyDoc {
        key: "x0",
        default: "0",
        help: "starting x",
    },
];
const K_OUTPUT: KeyDoc = KeyDoc {
    key: "output",
    default: "stdout",
    help: "output file",
};

const ROTNUM_KEYS: &[KeyDoc] = &[
    K_START[0],
    K_START[1],
    KeyDoc {
        key: "n",
        default: "1e6",
        help: "iterations",
    },
    K_OUTPUT,
];
const LYAP_KEYS: &[KeyDoc] = &[
    K_START[0],
    K_START[1],
    KeyDoc {
        key: "n",
        default: "1e5",
        help: "iterations per direction",
    },
    KeyDoc {
        key: "tol",
        default: "1e-3",
        help: "half-window convergence tolerance",
    },
    KeyDoc {
        key: "windows",
        default: "",
        help: "extra comma list of windows for finite-time exponents",
    },
    K_OUTPUT,
];
const ATTRACTOR_KEYS: &[KeyDoc] = &[
    K_START[0],
    K_START[1],
    KeyDoc {
        key: "transient",
        default: "1e4",
        help: "discarded iterations",
    },
    KeyDoc {
        key: "n",
        default: "1e4",
        help: "points written",
    },
    KeyDoc {
        key: "direction",
        default: "forward",
        help: "forward (attractor) or backward (repeller)",
    },
    K_OUTPUT,
];
const DEVIATIONS_KEYS: &[KeyDoc] = &[
    K_START[0],
    K_START[1],
    KeyDoc {
        key: "n",
        default: "1e4",
        help: "iterations",
    },
    KeyDoc {
        key: "rho",
        default: "estimated",
        help: "rotation number subtracted from the lift",
    },
    K_OUTPUT,
];
const TONGUE_KEYS: &[KeyDoc] = &[
    K_START[0],
    K_START[1],
    KeyDoc {
        key: "rho",
        default: "0",
        help: "target rotation number",
    },
    KeyDoc {
        key: "n",
        default: "1e5",
        help: "iterations per rotation number estimate",
    },
    KeyDoc {
        key: "tol_rho",
        default: "1e-4",
        help: "plateau tolerance",
    },
    KeyDoc {
        key: "tol_tau",
        default: "1e-6",
        help: "tau resolution",
    },
    KeyDoc {
        key: "b_range",
        default: "",
        help: "`lo hi count` to scan b instead of the single value b",
    },
    K_OUTPUT,
];
const CONDITIONS_KEYS: &[KeyDoc] = &[
    KeyDoc {
        key: "eps",
        default: "0.1",
        help: "pinched: region width parameter",
    },
    KeyDoc {
        key: "eta",
        default: "automatic",
        help: "arnold: region parameter",
    },
    KeyDoc {
        key: "grid_theta",
        default: "4000",
        help: "theta grid points",
    },
    KeyDoc {
        key: "grid_x",
        default: "400",
        help: "x grid points per region",
    },
    K_OUTPUT,
];
const CRITICAL_EXTRA: &[KeyDoc] = &[
    KeyDoc {
        key: "levels",
        default: "2,3",
        help: "comma list of windows M_1, M_2, ...",
    },
    KeyDoc {
        key: "n_samples",
        default: "1024",
        help: "minimum theta samples per strip intersection",
    },
    KeyDoc {
        key: "min_slope",
        default: "1e-9",
        help: "tangency threshold",
    },
    KeyDoc {
        key: "inclusion_samples",
        default: "100",
        help: "points per component for the inclusion audit",
    },
];
const EXCLUDE_EXTRA: &[KeyDoc] = &[
    KeyDoc {
        key: "model",
        default: "toy",
        help: "toy (fixed intervals) or system (regions of the map)",
    },
    KeyDoc {
        key: "toy_len",
        default: "0.01",
        help: "toy: length of I_0",
    },
    KeyDoc {
        key: "schedule_n",
        default: "3,97",
        help: "desk schedule N_0, N_1, ...",
    },
    KeyDoc {
        key: "schedule_k",
        default: "16,32",
        help: "desk schedule K_0, K_1, ...",
    },
    KeyDoc {
        key: "schedule_eps",
        default: "2e-5,6.6666666666666666e-6",
        help: "desk schedule eps_0, eps_1, ...",
    },
    KeyDoc {
        key: "depth",
        default: "1",
        help: "exclusion depth",
    },
    KeyDoc {
        key: "margin",
        default: "0",
        help: "extra distance required beyond the conditions",
    },
];

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: Vec<&'static [KeyDoc]>,
}

fn subs() -> Vec<Sub> {
    let s = |name, about, keys: Vec<&'static [KeyDoc]>| Sub { name, about, keys };
    vec![
        s(
            "rotnum",
            "Fibred rotation number of one orbit (JSON)",
            vec![SYSTEM_KEYS, ROTNUM_KEYS],
        ),
        s(
            "lyap",
            "Forward and backward Lyapunov exponents of one orbit (JSON)",
            vec![SYSTEM_KEYS, LYAP_KEYS],
        ),
        s(
            "attractor",
            "Orbit points after a transient (CSV theta,x)",
            vec![SYSTEM_KEYS, ATTRACTOR_KEYS],
        ),
        s(
            "deviations",
            "Lift deviation from rigid rotation (CSV n,deviation,running_sup)",
            vec![SYSTEM_KEYS, DEVIATIONS_KEYS],
        ),
        s(
            "tongue",
            "Arnold tongue boundary in tau (CSV b,tau_minus,tau_plus,width,resolved)",
            vec![SYSTEM_KEYS, TONGUE_KEYS],
        ),
        s(
            "conditions",
            "Hypothesis report for the chosen regions (JSON)",
            vec![SYSTEM_KEYS, CONDITIONS_KEYS],
        ),
        s(
            "critical",
            "Critical-set construction and audits (JSON)",
            vec![SYSTEM_KEYS, CONDITIONS_KEYS, CRITICAL_EXTRA],
        ),
        s(
            "exclude",
            "Frequency exclusion on a desk schedule (JSON)",
            vec![SYSTEM_KEYS, CONDITIONS_KEYS, CRITICAL_EXTRA, EXCLUDE_EXTRA],
        ),
        s(
            "sweep",
            "Parallel parameter sweep with checkpointing (CSV)",
            vec![SYSTEM_KEYS, SWEEP_KEYS],
        ),
    ]
}

fn cli() -> Command {
    let mut cmd = Command::new("qpfdyn")
        .about("Numerics for quasiperiodically forced circle maps")
        .subcommand_required(true)
        .after_help(
            "Every key can be set in a config file (`key = value`, global keys first, then \
             `[subcommand]` sections) or as a `--key value` flag; flags win.\n\
             QPFDYN_THREADS overrides the worker count.",
        );
    for s in subs() {
        let mut sc = Command::new(s.name).about(s.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("config file with `key = value` lines"),
        );
        let mut seen = BTreeSet::new();
        for d in s.keys.iter().flat_map(|k| k.iter()) {
            if !seen.insert(d.key) {
                continue;
            }
            let help = if d.default.is_empty() {
                d.help.to_string()
            } else {
                format!("{} [default: {}]", d.help, d.default)
            };
            sc = sc.arg(
                Arg::new(d.key)
                    .long(d.key)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        cmd = cmd.subcommand(sc);
    }
    cmd
}

fn all_keys() -> BTreeSet<&'static str> {
    subs()
        .iter()
        .flat_map(|s| s.keys.iter().flat_map(|k| k.iter().map(|d| d.key)))
        .collect()
}

/// Config section overlaid with flags. Global config keys must be known to
/// some subcommand, section keys to this one.
fn key_values(sub: &Sub, m: &ArgMatches) -> Result<KeyValues> {
    let own: BTreeSet<&str> = sub
        .keys
        .iter()
        .flat_map(|k| k.iter().map(|d| d.key))
        .collect();
    let mut kv = match m.get_one::<PathBuf>("config") {
        None => KeyValues::new(),
        Some(p) => {
            let cfg = Config::load(p)?;
            let names: BTreeSet<&str> = subs().iter().map(|s| s.name).collect();
            for (name, sec) in cfg.sections() {
                if !names.contains(name.as_str()) {
                    return Err(usage(format!("unknown config section [{name}]")));
                }
                if name == sub.name {
                    if let Some(k) = sec.keys().find(|k| !own.contains(k)) {
                        return Err(usage(format!("unknown key `{k}` in section [{name}]")));
                    }
                }
            }
            let known = all_keys();
            if let Some(k) = cfg.general().keys().find(|k| !known.contains(k)) {
                return Err(usage(format!("unknown config key `{k}`")));
            }
            let mut kv = KeyValues::new();
            for (k, v) in cfg.section(sub.name).iter() {
                if own.contains(k) {
                    kv.set(k, v);
                }
            }
            kv
        }
    };
    for k in &own {
        if let Some(v) = m.get_one::<String>(k) {
            kv.set(k, v.clone());
        }
    }
    Ok(kv)
}

fn emit(kv: &KeyValues, text: &str) -> Result<()> {
    match kv.get("output") {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn emit_json(kv: &KeyValues, v: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| usage(e.to_string()))?;
    s.push('\n');
    emit(kv, &s)
}

fn system(kv: &KeyValues) -> Result<(FamilySpec, QpfSystem)> {
    let spec = FamilySpec::from_keys(kv)?;
    let sys = spec.system()?;
    Ok((spec, sys))
}

fn start(kv: &KeyValues) -> Result<(f64, f64)> {
    Ok((kv.f64_or("theta0", 0.0)?, kv.f64_or("x0", 0.0)?))
}

fn positive(kv: &KeyValues, key: &str, default: u64) -> Result<u64> {
    match kv.count_or(key, default)? {
        0 => Err(usage(format!("{key} must be positive"))),
        n => Ok(n),
    }
}

// ---------------------------------------------------------------------------
// subcommands

fn rotnum(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let (th, x) = start(kv)?;
    let n = positive(kv, "n", 1_000_000)?;
    let (rho, err) = rotation_number_lift(&sys, th, x, n);
    emit_json(
        kv,
        &json!({ "rho": rho, "rho_mod1": rho.rem_euclid(1.0), "half_window_error": err, "n": n }),
    )
}

fn lyap(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let (th, x) = start(kv)?;
    let n = positive(kv, "n", 100_000)?;
    let est = lyapunov_pointwise(&sys, th, x, n, kv.f64_or("tol", 1e-3)?)?;
    let mut v = serde_json::to_value(est).map_err(|e| usage(e.to_string()))?;
    if let Some(w) = kv.count_list("windows")? {
        v["windows"] = json!(w);
        v["forward_windows"] = json!(forward_exponents(&sys, th, x, &w));
        v["backward_windows"] = json!(backward_exponents(&sys, th, x, &w)?);
    }
    emit_json(kv, &v)
}

fn attractor(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let (th, x) = start(kv)?;
    let transient = kv.count_or("transient", 10_000)?;
    let n = positive(kv, "n", 10_000)?;
    let pts = match kv.str_or("direction", "forward") {
        "forward" => attractor_sample(&sys, th, x, transient, n),
        "backward" => repeller_sample(&sys, th, x, transient, n)?,
        other => {
            return Err(usage(format!(
                "direction must be forward or backward, got `{other}`"
            )))
        }
    };
    let mut s = String::from("theta,x\n");
    for (t, y) in pts {
        s.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(y)));
    }
    emit(kv, &s)
}

fn deviations(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let (th, x) = start(kv)?;
    let n = positive(kv, "n", 10_000)?;
    let prof = deviation_profile(&sys, th, x, n, kv.f64("rho")?);
    let mut s = String::from("n,deviation,running_sup\n");
    for (k, (d, r)) in prof.deviation.iter().zip(&prof.running_sup).enumerate() {
        s.push_str(&format!("{},{},{}\n", k + 1, fmt_f64(*d), fmt_f64(*r)));
    }
    emit(kv, &s)
}

fn tongue(kv: &KeyValues) -> Result<()> {
    let (spec, sys) = system(kv)?;
    let Family::Arnold(params) = *sys.family() else {
        return Err(usage("tongue needs family = arnold"));
    };
    let (th, x) = start(kv)?;
    let mut cfg = TongueConfig::new(
        kv.f64_or("rho", 0.0)?,
        kv.f64_or("tol_rho", 1e-4)?,
        kv.f64_or("tol_tau", 1e-6)?,
        positive(kv, "n", 100_000)?,
    );
    (cfg.theta0, cfg.x0) = (th, x);
    let bs: Vec<f64> = match kv.get("b_range") {
        None => vec![params.b],
        Some(r) => {
            let ax = qpfdyn::sweep::Axis::parse(&format!("b {r}"))?;
            if ax.count == 0 {
                return Err(usage("b_range count must be positive"));
            }
            (0..ax.count).map(|i| ax.value(i)).collect()
        }
    };
    let pool = thread_pool()?;
    let rows: Vec<_> = pool.install(|| {
        bs.par_iter()
            .map(|&b| {
                (
                    b,
                    tongue_boundary(spec.omega, qpfdyn::ArnoldParams { b, ..params }, &cfg),
                )
            })
            .collect()
    });
    if rows.len() == 1 {
        if let (_, Err(e)) = &rows[0] {
            return Err(e.clone().into());
        }
    }
    if rows.iter().all(|(_, r)| r.is_err()) {
        return Err(CliError::Numeric(
            "tongue bisection failed for every b".into(),
        ));
    }
    let mut s = String::from("b,tau_minus,tau_plus,width,resolved\n");
    for (b, r) in rows {
        match r {
            Ok(t) => s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(b),
                fmt_f64(cfg.rho_target + centered(t.tau_minus.value() - cfg.rho_target)),
                fmt_f64(cfg.rho_target + centered(t.tau_plus.value() - cfg.rho_target)),
                fmt_f64(t.width),
                t.resolved
            )),
            Err(_) => s.push_str(&format!("{},,,,false\n", fmt_f64(b))),
        }
    }
    emit(kv, &s)
}

fn regions(kv: &KeyValues, sys: &QpfSystem) -> Result<RegionChoice> {
    Ok(match *sys.family() {
        Family::Pinched(p) => choose_regions_pinched(&p, kv.f64_or("eps", 0.1)?)?,
        Family::Arnold(p) => choose_regions_arnold(&p, kv.f64("eta")?)?,
        Family::Cocycle(_) => return Err(usage("hypothesis checks need family arnold or pinched")),
    })
}

fn report(kv: &KeyValues, sys: &QpfSystem) -> Result<HypothesisReport> {
    let gt = positive(kv, "grid_theta", 4000)? as usize;
    let gx = positive(kv, "grid_x", 400)? as usize;
    Ok(regions(kv, sys)?.report(sys, gt, gx)?)
}

fn conditions(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let rep = report(kv, &sys)?;
    emit_json(
        kv,
        &serde_json::to_value(rep).map_err(|e| usage(e.to_string()))?,
    )
}

fn build_config(kv: &KeyValues) -> Result<BuildConfig> {
    Ok(BuildConfig {
        n_samples: positive(kv, "n_samples", 1024)? as usize,
        min_slope: kv.f64_or("min_slope", 1e-9)?,
    })
}

fn critical(kv: &KeyValues) -> Result<()> {
    let (_, sys) = system(kv)?;
    let rep = report(kv, &sys)?;
    let ms = kv.count_list("levels")?.unwrap_or(vec![2, 3]);
    let state = build_critical(&sys, &rep, &ms, &build_config(kv)?)?;
    let derived = fit_theorem_alpha(&rep, P_MAX, DEFAULT_SLACK).and_then(|(p, a)| {
        derived_constants(&rep, p, a, minimal_t(p, rep.n_components), None).ok()
    });
    let per = kv.count_or("inclusion_samples", 100)? as usize;
    let (checked, bad) = audit_inclusions(&sys, &rep, &state, per);
    let mut audits = audit_widths(&state);
    if let Some(d) = &derived {
        let k = AuditConstants::new(&rep, d);
        audits.extend(audit_heights(&state, &k));
        audits.extend(audit_graph_slopes(&state, &k, false));
    }
    let pass = audits.iter().all(|c| c.pass) && bad == 0 && nesting_margin(&state) >= 0.0;
    emit_json(
        kv,
        &json!({
            "report": rep,
            "derived": derived,
            "state": state,
            "nesting_margin": nesting_margin(&state),
            "audits": audits,
            "inclusions": { "checked": checked, "violations": bad },
            "pass": pass,
        }),
    )
}

fn exclude(kv: &KeyValues) -> Result<()> {
    let n = kv.count_list("schedule_n")?.unwrap_or(vec![3, 97]);
    let k = kv.count_list("schedule_k")?.unwrap_or(vec![16, 32]);
    let eps = kv
        .f64_list("schedule_eps")?
        .unwrap_or(vec![2e-5, 2e-5 / 3.0]);
    let depth = kv.count_or("depth", 1)? as usize;
    let cfg = ExclusionConfig {
        margin: kv.f64_or("margin", 0.0)?,
    };
    let set = match kv.str_or("model", "toy") {
        "toy" => {
            let sched = desk_schedule(1, &n, &k, &eps)?;
            build_omega(
                &toy_regions(kv.f64_or("toy_len", 0.01)?, &eps),
                &sched,
                depth,
                &cfg,
            )?
        }
        "system" => {
            let (_, sys) = system(kv)?;
            let rep = report(kv, &sys)?;
            let sched = desk_schedule(rep.n_components, &n, &k, &eps)?;
            let model = SystemRegions {
                build: |w: f64| sys.with_omega(w),
                report: &rep,
                cfg: build_config(kv)?,
            };
            build_omega(&model, &sched, depth, &cfg)?
        }
        other => return Err(usage(format!("model must be toy or system, got `{other}`"))),
    };
    emit_json(
        kv,
        &serde_json::to_value(set).map_err(|e| usage(e.to_string()))?,
    )
}

fn sweep(kv: &KeyValues) -> Result<()> {
    let spec = SweepSpec::from_keys(kv)?;
    if spec.output.is_none() {
        return Err(usage("sweep needs output"));
    }
    let out = run_sweep_to_csv(&spec, RunOptions::default())?;
    eprintln!(
        "{} cells written ({} resumed)",
        out.cells_done, out.resumed_from
    );
    Ok(())
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sm) = m.subcommand().expect("subcommand is required");
    let all = subs();
    let sub = all
        .iter()
        .find(|s| s.name == name)
        .expect("registered subcommand");
    let kv = key_values(sub, sm)?;
    match name {
        "rotnum" => rotnum(&kv),
        "lyap" => lyap(&kv),
        "attractor" => attractor(&kv),
        "deviations" => deviations(&kv),
        "tongue" => tongue(&kv),
        "conditions" => conditions(&kv),
        "critical" => critical(&kv),
        "exclude" => exclude(&kv),
        "sweep" => sweep(&kv),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let m = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&m) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Numeric(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
