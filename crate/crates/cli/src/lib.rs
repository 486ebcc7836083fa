//! The `cml` command line: a symbol config in, JSON reports and CSV dumps out.
//!
//! Every run writes a `manifest.json` next to its reports with the config
//! hash, crate versions and wall time. Reports themselves carry no timing, so
//! identical runs produce byte-identical reports.

pub mod config;
pub mod output;

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cml_core::hamflow::{
    completeness_probe, default_seed_grid, integrate_flow, Direction, FlowOptions, FlowOutcome, ProbeReport,
    ProbeVerdict, Seed,
};
use cml_core::microlocal::{
    build_escape, escape_derivative_check, mourre_symbol_check, scan_field, EscapeGrid, EstimateReport,
};
use cml_core::spectral::{
    deficiency_probe, lorentzian_modes, lorentzian_witness, shoot, spectrum, DeficiencyReport, LorentzianWitness,
    Operator, ShootDirection, ShootOptions, SpectrumOptions, SpectrumReport,
};
use cml_core::symbols::{classify_esa, radial_sets, survey, ClassificationReport, Completeness, EsaVerdict, Fiber, RootOptions};
use cml_core::wkb::{
    local_data, residual_order, smooth_partial_sums, sobolev_trend, solve_amplitude, synthesize, ResidualReport,
    SobolevTrend, SynthesisOptions, WkbOptions,
};
use cml_core::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::SymbolConfig;
use output::{float, Writer};

#[derive(Debug, Parser)]
#[command(name = "cml", version, about = "Real-principal-type operators on the circle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Symbol config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "cml-out")]
    pub out: PathBuf,
    /// Integrator tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Classify the symbol and cross-check the three completeness/ESA verdicts.
    Analyze {
        /// Flow horizon of the completeness probe.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Integrate Hamilton trajectories from the config seeds (or probe the default grid).
    Flow {
        #[arg(long)]
        horizon: Option<f64>,
        /// Extra seed `X,XI`; may be repeated.
        #[arg(long = "seed-point", value_parser = parse_pair)]
        seed_points: Vec<(f64, f64)>,
    },
    /// Transport hierarchy and one-sided quasimode at a radial source.
    Wkb {
        /// Source point; defaults to the config's `x0` or the first source found.
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long, value_parser = parse_complex, default_value = "0,0")]
        z: Complex64,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 65536)]
        n_syn: usize,
    },
    /// Truncation spectra, deficiency shooting and Lorentzian mode matrices.
    Spectrum {
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
        n_list: Vec<usize>,
        #[arg(long, value_parser = parse_complex, default_value = "0,1")]
        z: Complex64,
        /// Lorentzian modes `ELL:EPS:N0..N1`.
        #[arg(long, value_parser = parse_modes)]
        modes: Option<ModeSpec>,
        #[arg(long, default_value_t = 4096)]
        k_max: usize,
    },
    /// Escape function and the escape / commutator symbol estimates.
    Escape {
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        #[arg(long, default_value_t = 10.0)]
        r: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeSpec {
    pub ell: i64,
    pub epsilon: f64,
    pub n_lo: i64,
    pub n_hi: i64,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

/// `RE,IM`, or one of `i`, `-i`, or a real number.
pub fn parse_complex(s: &str) -> std::result::Result<Complex64, String> {
    match s.trim() {
        "i" | "+i" => Ok(Complex64::new(0.0, 1.0)),
        "-i" => Ok(Complex64::new(0.0, -1.0)),
        t if t.contains(',') => parse_pair(t).map(|(re, im)| Complex64::new(re, im)),
        t => t.parse::<f64>().map(|re| Complex64::new(re, 0.0)).map_err(|e| format!("{t:?}: {e}")),
    }
}

/// `ELL:EPS:N0..N1`.
pub fn parse_modes(s: &str) -> std::result::Result<ModeSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [ell, eps, range] = parts[..] else {
        return Err(format!("expected ELL:EPS:N0..N1, got {s:?}"));
    };
    let (lo, hi) = range.split_once("..").ok_or_else(|| format!("expected N0..N1, got {range:?}"))?;
    let int = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}"));
    let spec = ModeSpec {
        ell: int(ell)?,
        epsilon: eps.trim().parse::<f64>().map_err(|e| format!("{eps:?}: {e}"))?,
        n_lo: int(lo)?,
        n_hi: int(hi)?,
    };
    if spec.n_lo > spec.n_hi {
        return Err(format!("empty mode range {range:?}"));
    }
    Ok(spec)
}

/// Result of a run that completed; `agreement == false` maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub agreement: bool,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config_path: String,
    config_sha256: String,
    cml_version: &'static str,
    cml_core_version: &'static str,
    threads: usize,
    wall_time_seconds: f64,
    outputs: Vec<String>,
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Analyze { .. } => "analyze",
        Command::Flow { .. } => "flow",
        Command::Wkb { .. } => "wkb",
        Command::Spectrum { .. } => "spectrum",
        Command::Escape { .. } => "escape",
    }
}

fn flow_options(common: &Common, horizon: Option<f64>) -> Result<FlowOptions> {
    let mut opts = FlowOptions::default();
    if let Some(t) = common.tol {
        if !(t > 0.0 && t < 1e-2) {
            bail!("--tol {t} outside (0, 1e-2)");
        }
        opts.tol = t;
    }
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            bail!("--horizon must be positive, got {h}");
        }
        opts.horizon = h;
    }
    Ok(opts)
}

/// Run one subcommand and write its reports.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let start = Instant::now();
    let path = cli.common.config.as_ref().context("--config is required")?;
    let (cfg, bytes) = SymbolConfig::load(path)?;
    let op = cfg.operator()?;
    let mut out = Writer::new(&cli.common.out)?;
    let agreement = match &cli.command {
        Command::Analyze { horizon } => analyze(&op, &flow_options(&cli.common, *horizon)?, &mut out)?,
        Command::Flow { horizon, seed_points } => {
            flow(&op, &cfg, seed_points, &flow_options(&cli.common, *horizon)?, &mut out)?
        }
        Command::Wkb { x0, z, depth, n_syn } => wkb(&op, x0.or(cfg.x0), *z, *depth, *n_syn, &mut out)?,
        Command::Spectrum { n_list, z, modes, k_max } => spectrum_cmd(&op, n_list, *z, *modes, *k_max, &mut out)?,
        Command::Escape { eps, r } => escape(&op, *eps, *r, &mut out)?,
    };
    let files = out.written().to_vec();
    let manifest = Manifest {
        subcommand: subcommand_name(&cli.command),
        config_path: path.display().to_string(),
        config_sha256: hex::encode(Sha256::digest(&bytes)),
        cml_version: env!("CARGO_PKG_VERSION"),
        cml_core_version: cml_core::VERSION,
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: files.clone(),
    };
    out.json("manifest.json", &manifest)?;
    Ok(Outcome { agreement, files })
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdicts {
    pub analytic_esa: Option<EsaVerdict>,
    pub analytic_completeness: Completeness,
    pub flow_completeness: ProbeVerdict,
    /// `true` when no square-summable solution of `(A -+ i) u = 0` was found.
    pub deficiency_esa: Option<bool>,
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub operator: Operator,
    pub classification: ClassificationReport,
    pub notes: Vec<String>,
    pub probe: ProbeReport,
    pub deficiency: Option<DeficiencyReport>,
    pub verdicts: Verdicts,
}

/// Symbol classification, flow probe and deficiency probe of one operator.
pub fn analyze_report(op: &Operator, flow: &FlowOptions) -> Result<AnalyzeReport> {
    let roots = RootOptions::default();
    let p = op.principal();
    let classification = survey(&p, &roots)?;
    let mut notes = Vec::new();
    if classification.is_principal_type {
        // validates V against m
        classify_esa(&p, op.lower_order(), &roots)?;
    } else {
        for c in classification.char_orders.iter().filter(|c| c.order > 1) {
            notes.push(format!("a_{}({:.12}) = 0 is {}-characteristic", c.fiber, c.x, c.order));
        }
    }
    let seeds = default_seed_grid(&p, &roots)?;
    let probe = completeness_probe(&p, &seeds, flow, &roots)?;
    let deficiency = if classification.is_principal_type {
        Some(deficiency_probe(op, p.m, &ShootOptions::default())?)
    } else {
        None
    };
    let deficiency_esa = deficiency.as_ref().map(|d| d.esa_consistent);
    let analytic_complete = classification.completeness_verdict == Completeness::Complete;
    let mut agree = probe.agrees;
    if let Some(esa) = classification.esa_verdict {
        agree &= (esa == EsaVerdict::Esa) == analytic_complete;
    }
    if let Some(d) = deficiency_esa {
        agree &= d == analytic_complete;
    }
    let verdicts = Verdicts {
        analytic_esa: classification.esa_verdict,
        analytic_completeness: classification.completeness_verdict,
        flow_completeness: probe.verdict,
        deficiency_esa,
        agree,
    };
    Ok(AnalyzeReport { operator: op.clone(), classification, notes, probe, deficiency, verdicts })
}

fn analyze(op: &Operator, flow: &FlowOptions, out: &mut Writer) -> Result<bool> {
    let report = analyze_report(op, flow)?;
    out.json("analyze.json", &report)?;
    Ok(report.verdicts.agree)
}

#[derive(Debug, Clone, Serialize)]
struct TrajectorySummary {
    seed: Seed,
    outcome: FlowOutcome,
    samples: usize,
    energy_drift: f64,
    scaled_energy_drift: f64,
    file: String,
}

#[derive(Debug, Clone, Serialize)]
struct FlowReport {
    horizon: f64,
    tol: f64,
    trajectories: Vec<TrajectorySummary>,
    probe: Option<ProbeReport>,
}

fn flow(
    op: &Operator,
    cfg: &SymbolConfig,
    extra: &[(f64, f64)],
    opts: &FlowOptions,
    out: &mut Writer,
) -> Result<bool> {
    let p = op.principal();
    let roots = RootOptions::default();
    let seeds: Vec<Seed> = cfg
        .seeds
        .iter()
        .flatten()
        .map(|s| (s[0], s[1]))
        .chain(extra.iter().copied())
        .map(|(x, xi)| Seed { x, xi })
        .collect();
    let mut trajectories = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        for dir in [Direction::Forward, Direction::Backward] {
            let traj = integrate_flow(&p, *seed, dir.sign() * opts.horizon, opts)?;
            let tag = match dir {
                Direction::Forward => "fwd",
                Direction::Backward => "bwd",
            };
            let file = format!("trajectory_{i}_{tag}.csv");
            out.csv(
                &file,
                &["t", "x", "xi", "p_value"],
                traj.samples.iter().map(|s| vec![float(s.t), float(s.x), float(s.xi), float(s.p_value)]),
            )?;
            trajectories.push(TrajectorySummary {
                seed: *seed,
                outcome: traj.outcome,
                samples: traj.samples.len(),
                energy_drift: traj.energy_drift(opts.blowup_threshold),
                scaled_energy_drift: traj.scaled_energy_drift(&p, opts.blowup_threshold),
                file,
            });
        }
    }
    let probe = if seeds.is_empty() {
        Some(completeness_probe(&p, &default_seed_grid(&p, &roots)?, opts, &roots)?)
    } else {
        None
    };
    let agreement = probe.as_ref().is_none_or(|r| r.agrees);
    out.json("flow.json", &FlowReport { horizon: opts.horizon, tol: opts.tol, trajectories, probe })?;
    Ok(agreement)
}

#[derive(Debug, Clone, Serialize)]
pub struct WkbReport {
    pub x0: f64,
    pub fiber: Fiber,
    pub z: Complex64,
    pub depth: usize,
    pub m: f64,
    pub kappa: f64,
    pub a_prime: f64,
    pub taylor_a: Vec<f64>,
    pub max_abs_c: f64,
    pub im_c_exponent: Option<f64>,
    pub phase_error_estimate: f64,
    pub fitted_orders: Vec<f64>,
    pub predicted_orders: Vec<f64>,
    pub transport_residuals: Vec<f64>,
    pub n_syn: usize,
    pub n0: usize,
    pub chi_eps: f64,
    pub negative_ratio: f64,
    pub sobolev: Vec<SobolevTrend>,
    /// `(n_max, |S_n(x0 + pi)|)` for smooth partial sums away from the source.
    pub partial_sums_opposite: Vec<(usize, f64)>,
    pub residual: std::result::Result<ResidualReport, String>,
}

/// Ramp start used for the residual series: small, so that the fit window
/// is as long as the rounding floor allows.
const RESIDUAL_N0: usize = 4;

fn default_source(op: &Operator) -> Result<f64> {
    let rs = radial_sets(&op.principal(), &RootOptions::default())?;
    rs.sources.first().map(|s| s.x).context("no radial source: the symbol has no characteristic points")
}

fn wkb(op: &Operator, x0: Option<f64>, z: Complex64, depth: usize, n_syn: usize, out: &mut Writer) -> Result<bool> {
    let x0 = match x0 {
        Some(x) => x,
        None => default_source(op)?,
    };
    let local = local_data(op, x0, z, &WkbOptions { depth, ..Default::default() })?;
    let amp = solve_amplitude(&local)?;
    let state = synthesize(&local, &amp, &SynthesisOptions { n_syn, ..Default::default() })?;
    let critical = 0.5 * (local.m - 1.0);
    let sobolev = vec![sobolev_trend(&state, critical - 0.1), sobolev_trend(&state, critical)];
    let n_list: Vec<usize> = (6..).map(|p| 1usize << p).take_while(|&n| n <= n_syn / 2).collect();
    let partial = smooth_partial_sums(&state, x0 + PI, &n_list).into_iter().map(|(n, s)| (n, s.norm())).collect();
    let residual = residual_order(op, z, &state, RESIDUAL_N0).map_err(|e| e.to_string());

    let mut header = vec!["xi".to_string()];
    for k in 0..amp.b_levels.len() {
        header.push(format!("re_b{k}"));
        header.push(format!("im_b{k}"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "amplitude.csv",
        &header,
        amp.xi_grid.iter().enumerate().map(|(i, xi)| {
            let mut row = vec![float(*xi)];
            for b in &amp.b_levels {
                row.push(float(b[i].re));
                row.push(float(b[i].im));
            }
            row
        }),
    )?;
    let n = state.n_syn as i64;
    out.csv(
        "fourier.csv",
        &["n", "re", "im"],
        (-n..=n).map(|k| {
            let c = state.coeff(k);
            vec![k.to_string(), float(c.re), float(c.im)]
        }),
    )?;
    let report = WkbReport {
        x0,
        fiber: local.fiber,
        z,
        depth,
        m: local.m,
        kappa: local.kappa,
        a_prime: local.a_prime,
        taylor_a: local.taylor_a.clone(),
        max_abs_c: local.c_profile.iter().map(|c| c.norm()).fold(0.0, f64::max),
        im_c_exponent: local.im_c_exponent,
        phase_error_estimate: local.phase_error_estimate,
        fitted_orders: amp.fitted_orders.clone(),
        predicted_orders: amp.predicted_orders.clone(),
        transport_residuals: amp.transport_residuals.clone(),
        n_syn: state.n_syn,
        n0: state.n0,
        chi_eps: state.chi_eps,
        negative_ratio: state.negative_ratio,
        sobolev,
        partial_sums_opposite: partial,
        residual,
    };
    out.json("wkb.json", &report)?;
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
struct LorentzianReport {
    modes: ModeSpec,
    n: usize,
    /// `max |P_0 - eps * A_1d|` entrywise, where `A_1d` is the divergence
    /// matrix of `a = sin(ell x)`.
    n0_block_defect: Option<f64>,
    witness: Option<LorentzianWitness>,
}

#[derive(Debug, Clone, Serialize)]
struct SpectrumCommandReport {
    z: Complex64,
    spectrum: SpectrumReport,
    deficiency: std::result::Result<DeficiencyReport, String>,
    lorentzian: Option<LorentzianReport>,
}

fn spectrum_cmd(
    op: &Operator,
    n_list: &[usize],
    z: Complex64,
    modes: Option<ModeSpec>,
    k_max: usize,
    out: &mut Writer,
) -> Result<bool> {
    if n_list.is_empty() {
        bail!("--n-list is empty");
    }
    let opts = SpectrumOptions { n_list: n_list.to_vec(), z, ..Default::default() };
    let report = spectrum(op, &opts)?;
    let shoot_opts = ShootOptions { k_max, ..Default::default() };
    let deficiency = deficiency_probe(op, op.order(), &shoot_opts).map_err(|e| e.to_string());

    out.csv(
        "eigenvalues.csv",
        &["N", "index", "value"],
        report.n_list.iter().zip(&report.eigenvalues).flat_map(|(n, evs)| {
            evs.iter().enumerate().map(move |(i, v)| vec![n.to_string(), i.to_string(), float(*v)])
        }),
    )?;
    let shot = shoot(op, z, ShootDirection::Positive, &shoot_opts)?;
    let rows: Vec<Vec<String>> = match shot.solutions.iter().find(|s| s.summable).or(shot.solutions.first()) {
        Some(sol) => (0..sol.coeffs.len())
            .map(|i| {
                let v = sol.value(i);
                vec![sol.frequency(i).to_string(), float(v.re), float(v.im)]
            })
            .collect(),
        None => Vec::new(),
    };
    out.csv("shooting.csv", &["k", "re", "im"], rows)?;

    let lorentzian = match modes {
        None => None,
        Some(spec) => {
            let n = *n_list.iter().max().unwrap();
            let blocks = lorentzian_modes(spec.epsilon, spec.ell, spec.n_lo..=spec.n_hi, n)?;
            let one_d = cml_core::spectral::assemble(
                &Operator::divergence(cml_core::symbols::TrigPoly::sin_mode(spec.ell.unsigned_abs() as usize, spec.ell.signum() as f64)),
                n,
                false,
            )?;
            let n0_block_defect = blocks.iter().find(|(mode, _)| *mode == 0).map(|(_, b)| {
                (&b.entries - one_d.entries.map(|v| v * spec.epsilon)).iter().map(|v| v.norm()).fold(0.0, f64::max)
            });
            for (mode, block) in &blocks {
                out.csv(
                    &format!("lorentzian_mode_{mode}.csv"),
                    &["j", "k", "re", "im"],
                    (0..block.dim()).flat_map(|r| {
                        (0..block.dim()).filter_map(move |c| {
                            let v = block.entries[(r, c)];
                            (v.norm() != 0.0).then(|| {
                                let (j, k) = (r as i64 - n as i64, c as i64 - n as i64);
                                vec![j.to_string(), k.to_string(), float(v.re), float(v.im)]
                            })
                        })
                    }),
                )?;
            }
            let witness = lorentzian_witness(spec.epsilon, spec.ell, 2048).ok().map(|(w, _)| w);
            Some(LorentzianReport { modes: spec, n, n0_block_defect, witness })
        }
    };
    let agreement = match &deficiency {
        Ok(d) => d.esa_consistent == (op.is_elliptic()? || op.order() <= 1.0),
        Err(_) => true,
    };
    out.json("spectrum.json", &SpectrumCommandReport { z, spectrum: report, deficiency, lorentzian })?;
    Ok(agreement)
}

#[derive(Debug, Clone, Serialize)]
struct EscapeReport {
    eps: f64,
    r: f64,
    escape: EstimateReport,
    mourre: Option<std::result::Result<EstimateReport, String>>,
}

fn escape(op: &Operator, eps: f64, r: f64, out: &mut Writer) -> Result<bool> {
    let p = op.principal();
    let roots = RootOptions::default();
    let e = build_escape(&p, eps, r, &roots)?;
    let grid = EscapeGrid::default();
    let report = escape_derivative_check(&p, &e, &grid)?;
    let mourre = (p.m <= 1.0).then(|| mourre_symbol_check(&p, &e, &grid).map_err(|e| e.to_string()));
    out.csv(
        "escape_field.csv",
        &["x", "xi", "e", "hp_e_log"],
        scan_field(&p, &e, &EscapeGrid { nx: 128, nxi: 64, ..grid })
            .into_iter()
            .map(|row| row.iter().map(|v| float(*v)).collect()),
    )?;
    out.json("escape.json", &EscapeReport { eps, r, escape: report, mourre })?;
    Ok(true)
}

/// Cap rayon's pool from `CML_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CML_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("CML_THREADS={v:?} is not a count"))?;
        if n == 0 {
            bail!("CML_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    Ok(())
}
