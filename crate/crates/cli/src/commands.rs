//! The three subcommands: collar certification, flow-box certification and
//! heuristic surface experiments.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use phforge_core::collar::{
    collar_threshold, default_collar_grid, respectful_metrics, CollarParams, CollarSystem, RespectfulMetrics,
    TwistFunction, TwistMode,
};
use phforge_core::conecert::{certify, verdict, Cone, GridSpec, PHCertificate, PowerBoundsReport};
use phforge_core::flowbox::{
    assemble_map, box_bundle_slopes, default_flowbox_grid, determinant_deviation, flowbox_power_bounds, min_n_search,
    transversality_margin, BoxFoliations, BundleSlope, CoverModel, FlowBoxCertConfig, TwistPath,
};
use phforge_core::surface::{
    lyapunov_estimate, transitivity_probe, volume_check, CollarBox, FNData, LyapunovExponents, Surface,
    TransitivityReport, VolumeCheck, COLLAR_SIDE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CertSettings, CollarConfig, ExperimentsConfig, FlowboxConfig, Overrides};
use crate::output::{Cell, Table};

pub const SCHEMA_VERSION: u32 = 1;
pub const HEURISTIC_NOTE: &str = "heuristic: not a theorem reproduction";

/// Which subcommand to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CertifyCollar,
    CertifyFlowbox,
    Experiments,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CertifyCollar => "certify-collar",
            Command::CertifyFlowbox => "certify-flowbox",
            Command::Experiments => "experiments",
        }
    }
}

/// A finished run: the report, the CSV table and where to write them.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Value,
    pub table: Table,
    pub out_dir: std::path::PathBuf,
    /// One-line human summary.
    pub summary: String,
}

#[derive(Serialize)]
struct Provenance {
    certified_grid: bool,
    heuristic: bool,
    rigorous: bool,
}

#[derive(Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

#[derive(Default)]
struct Clock {
    stages: Vec<Stage>,
}

impl Clock {
    fn time<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(Stage {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    command: Command,
    config: &impl Serialize,
    provenance: Provenance,
    metadata: Value,
    warnings: Vec<String>,
    results: Value,
    clock: Clock,
    started: Instant,
) -> Result<Value> {
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "tool": { "name": "phforge", "version": env!("CARGO_PKG_VERSION") },
        "command": command.name(),
        "config": serde_json::to_value(config)?,
        "provenance": serde_json::to_value(provenance)?,
        "metadata": metadata,
        "warnings": warnings,
        "results": results,
        "timings": {
            "total_seconds": started.elapsed().as_secs_f64(),
            "stages": serde_json::to_value(clock.stages)?,
        },
    }))
}

/// Load, override, validate and run `cmd`.
pub fn run(cmd: Command, config_path: Option<&Path>, overrides: &Overrides) -> Result<RunOutput> {
    match cmd {
        Command::CertifyCollar => {
            let cfg = crate::config::load::<CollarConfig>(config_path)?.apply(overrides)?;
            certify_collar(&cfg)
        }
        Command::CertifyFlowbox => {
            let cfg = crate::config::load::<FlowboxConfig>(config_path)?.apply(overrides)?;
            certify_flowbox(&cfg)
        }
        Command::Experiments => {
            let cfg = crate::config::load::<ExperimentsConfig>(config_path)?.apply(overrides)?;
            experiments(&cfg)
        }
    }
}

fn grid_spec(base: GridSpec, cert: &CertSettings, seed: u64) -> GridSpec {
    if cert.jitter {
        GridSpec::jittered(base.counts, base.ranges, seed)
    } else {
        base
    }
}

fn cones(cert: &CertSettings) -> Result<(Cone, Cone)> {
    Ok((
        Cone::unstable(cert.cone_half_angle)?,
        Cone::stable(cert.cone_half_angle)?,
    ))
}

#[derive(Serialize)]
struct CollarRow {
    ell: f64,
    mode: TwistMode,
    respectful: RespectfulMetrics,
    unstable: PHCertificate,
    stable: PHCertificate,
    passed: bool,
}

#[derive(Serialize)]
struct FlowRow {
    ell: f64,
    unstable: PHCertificate,
    stable: PHCertificate,
    passed: bool,
}

#[derive(Serialize)]
struct Frontier {
    mode: TwistMode,
    /// Once a length passes, every smaller length in the sweep passes.
    monotone: bool,
    smallest_ell: f64,
    smallest_ell_passed: bool,
    passing_ells: Vec<f64>,
}

/// Respectful metrics and both-direction certificates over the `ℓ` sweep.
pub fn certify_collar(cfg: &CollarConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut clock = Clock::default();
    let grid = grid_spec(default_collar_grid(cfg.grid), &cfg.cert, cfg.seed);
    let (cu, cs) = cones(&cfg.cert)?;
    let opts = cfg.cert.options();
    let rho = TwistFunction::new(cfg.winding)?;
    let mut ells = cfg.ell_list.clone();
    ells.sort_by(|a, b| b.total_cmp(a));

    let mut rows = Vec::new();
    let mut flows = Vec::new();
    let mut table = Table::new(vec![
        "ell",
        "mode",
        "angle_dev",
        "metric_dist",
        "max_exit_angle",
        "nu",
        "nu_prime",
        "passed",
    ]);
    for &mode in &cfg.modes {
        for &ell in &ells {
            let params = CollarParams::new(ell)?;
            let respectful = clock.time(format!("respectful {} {ell}", mode.as_str()), || {
                respectful_metrics(&params, &rho, mode, &grid)
            })?;
            let sys = CollarSystem::new(params, rho, mode);
            let (u, s) = clock.time(format!("certify {} {ell}", mode.as_str()), || {
                certify(&sys, &cu, &cs, &grid, &opts)
            })?;
            let passed = verdict(&u, &s);
            table.push(vec![
                Cell::Float(ell),
                Cell::Text(mode.as_str().into()),
                Cell::Float(respectful.angle_dev),
                Cell::Float(respectful.metric_dist),
                Cell::Float(u.max_exit_angle.max(s.max_exit_angle)),
                Cell::Float(u.nu.min(s.nu)),
                Cell::Float(u.nu_prime.max(s.nu_prime)),
                Cell::Bool(passed),
            ]);
            rows.push(CollarRow {
                ell,
                mode,
                respectful,
                unstable: u,
                stable: s,
                passed,
            });
        }
    }
    for &ell in &ells {
        let sys = CollarSystem::pure_flow(CollarParams::new(ell)?);
        let (u, s) = clock.time(format!("certify flow {ell}"), || certify(&sys, &cu, &cs, &grid, &opts))?;
        let passed = verdict(&u, &s);
        flows.push(FlowRow {
            ell,
            unstable: u,
            stable: s,
            passed,
        });
    }

    let frontiers: Vec<Frontier> = cfg
        .modes
        .iter()
        .map(|&mode| {
            let passes: Vec<(f64, bool)> = rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| (r.ell, r.passed))
                .collect();
            let first = passes.iter().position(|p| p.1);
            Frontier {
                mode,
                monotone: first.is_none_or(|i| passes[i..].iter().all(|p| p.1)),
                smallest_ell: passes.last().map_or(f64::NAN, |p| p.0),
                smallest_ell_passed: passes.last().is_some_and(|p| p.1),
                passing_ells: passes.iter().filter(|p| p.1).map(|p| p.0).collect(),
            }
        })
        .collect();

    let n_pass = rows.iter().filter(|r| r.passed).count();
    let summary = format!(
        "certify-collar: {n_pass}/{} twisted maps certified; pure flow certified at {}/{} lengths",
        rows.len(),
        flows.iter().filter(|f| f.passed).count(),
        flows.len()
    );
    let results = json!({
        "sweep": serde_json::to_value(&rows)?,
        "pure_flow": serde_json::to_value(&flows)?,
        "frontier": serde_json::to_value(&frontiers)?,
    });
    let metadata = json!({
        "collar_threshold": collar_threshold(),
        "grid_nodes": grid.len(),
        "csv_columns": "max_exit_angle, nu_prime: max over both directions; nu: min; passed: both",
    });
    let report = report(
        Command::CertifyCollar,
        cfg,
        Provenance {
            certified_grid: true,
            heuristic: false,
            rigorous: false,
        },
        metadata,
        Vec::new(),
        results,
        clock,
        started,
    )?;
    Ok(RunOutput {
        report,
        table,
        out_dir: cfg.out.clone(),
        summary,
    })
}

#[derive(Serialize)]
struct SearchRowOut {
    n: f64,
    k: usize,
    unstable: PHCertificate,
    stable: PHCertificate,
    margin: f64,
    passed: bool,
}

/// `N` search, slopes, transversality, power bounds and determinant check.
pub fn certify_flowbox(cfg: &FlowboxConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut clock = Clock::default();
    let auto = cfg.auto()?;
    let path = TwistPath::new(cfg.winding);
    let grid = grid_spec(default_flowbox_grid(cfg.grid), &cfg.cert, cfg.seed);
    let (cone_u, cone_s) = cones(&cfg.cert)?;
    let cert = FlowBoxCertConfig {
        cone_u,
        cone_s,
        options: cfg.cert.options(),
    };
    let mut warnings: Vec<String> = path.warning().map(String::from).into_iter().collect();

    let slopes: Vec<BundleSlope> = clock.time("slopes", || {
        box_bundle_slopes(&auto, &cfg.section, &cfg.slope_n_list, cfg.slope_resolution)
    })?;
    let slope_ratios: Vec<Value> = slopes
        .windows(2)
        .map(|w| {
            json!({
                "n": w[0].n,
                "next_n": w[1].n,
                "uu": w[1].uu / w[0].uu,
                "ss": w[1].ss / w[0].ss,
            })
        })
        .collect();

    let trans_grid = default_flowbox_grid(cfg.grid.max(2));
    let transversality = clock.time("transversality", || -> Result<Value> {
        let lin = BoxFoliations::linear(auto);
        let bounded = BoxFoliations::slope_bounded(cfg.slope_amplitude, cfg.slope_amplitude)?;
        Ok(json!({
            "linear": transversality_margin(&lin, &path, &trans_grid)?,
            "linear_untwisted": transversality_margin(&lin, &TwistPath::identity(), &trans_grid)?,
            "slope_bounded": transversality_margin(&bounded, &path, &trans_grid)?,
            "eigen_angle": auto.eigen_angle(),
        }))
    })?;

    let search = clock.time("search", || {
        min_n_search(&auto, &cfg.section, &path, &cfg.n_candidates, cfg.k_cap, &grid, &cert)
    })?;

    let mut table = Table::new(vec![
        "n",
        "k",
        "unstable_exit_angle",
        "unstable_nu",
        "unstable_nu_prime",
        "stable_exit_angle",
        "stable_nu",
        "stable_nu_prime",
        "passed",
    ]);
    for r in &search.rows {
        table.push(vec![
            Cell::Float(r.n),
            Cell::Int(r.k as i64),
            Cell::Float(r.unstable.max_exit_angle),
            Cell::Float(r.unstable.nu),
            Cell::Float(r.unstable.nu_prime),
            Cell::Float(r.stable.max_exit_angle),
            Cell::Float(r.stable.nu),
            Cell::Float(r.stable.nu_prime),
            Cell::Bool(r.passed),
        ]);
    }

    let mut power: Option<PowerBoundsReport> = None;
    let mut det_dev: Option<f64> = None;
    let found = match search.found {
        Some((n, k)) => {
            let model = CoverModel::with_section(auto, n, k, cfg.section)?;
            let sys = assemble_map(&model, &path)?;
            let row = search
                .rows
                .iter()
                .find(|r| r.n == n && r.k == k)
                .context("search table lacks the passing row")?;
            power = Some(clock.time("power bounds", || {
                flowbox_power_bounds(&sys, &row.unstable, &grid, cfg.power_segments)
            })?);
            det_dev = Some(clock.time("determinant", || determinant_deviation(&sys, &grid))?);
            json!({ "n": n, "k": k, "n0": k, "segment_length": power.as_ref().map(|p| p.n) })
        }
        None => {
            warnings.push("no candidate N passed: NOT FOUND".into());
            Value::Null
        }
    };

    let rows: Vec<SearchRowOut> = search
        .rows
        .iter()
        .map(|r| SearchRowOut {
            n: r.n,
            k: r.k,
            unstable: r.unstable.clone(),
            stable: r.stable.clone(),
            margin: r.margin(),
            passed: r.passed,
        })
        .collect();
    let summary = match search.found {
        Some((n, k)) => format!("certify-flowbox: found N0 = {n}, K0 = {k}"),
        None => "certify-flowbox: no candidate N passed".into(),
    };
    let results = json!({
        "automorphism": {
            "matrix": auto.matrix(),
            "trace": auto.trace(),
            "det": auto.det(),
            "mu": auto.mu(),
            "unstable_direction": [auto.unstable_direction().x, auto.unstable_direction().y],
            "stable_direction": [auto.stable_direction().x, auto.stable_direction().y],
        },
        "path": { "winding": path.winding, "degenerate": path.is_degenerate() },
        "slopes": serde_json::to_value(&slopes)?,
        "slope_ratios": slope_ratios,
        "transversality": transversality,
        "search": { "found": found, "rows": serde_json::to_value(&rows)? },
        "power_bounds": serde_json::to_value(&power)?,
        "determinant_deviation": det_dev,
    });
    let metadata = json!({
        "grid_nodes": grid.len(),
        "metric": "dt^2 + dx^2 + dy^2 on each chart",
        "winding_note": "homotopy class recorded as the winding number, not verified topologically",
    });
    let report = report(
        Command::CertifyFlowbox,
        cfg,
        Provenance {
            certified_grid: true,
            heuristic: false,
            rigorous: false,
        },
        metadata,
        warnings,
        results,
        clock,
        started,
    )?;
    Ok(RunOutput {
        report,
        table,
        out_dir: cfg.out.clone(),
        summary,
    })
}

#[derive(Serialize)]
struct ExperimentRow {
    ell: f64,
    mode: TwistMode,
    lyapunov: LyapunovExponents,
    transitivity: TransitivityReport,
    volume: VolumeCheck,
}

/// Lyapunov exponents, transitivity coverage and Monte Carlo volume checks
/// on the genus-two surface. All outputs are heuristic.
pub fn experiments(cfg: &ExperimentsConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut clock = Clock::default();
    let mut table = Table::new(vec![
        "ell",
        "mode",
        "lambda_uu",
        "lambda_c",
        "lambda_ss",
        "coverage",
        "volume_z",
        "volume_within_3_sigma",
    ]);
    let mut rows = Vec::new();
    let rho = TwistFunction::new(cfg.winding)?;
    if cfg.n_orbits > 0 {
        for &ell in &cfg.ell_list {
            let surface = clock.time(format!("surface {ell}"), || Surface::build(&FNData::pinched(ell)))?;
            for &mode in &cfg.modes {
                let twist = match mode {
                    TwistMode::Identity => None,
                    m => Some(surface.twist(rho, m)?),
                };
                let tw = twist.as_ref();
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let v0 = surface.sample_tangent(&mut rng);
                let tag = format!("{} {ell}", mode.as_str());
                let lyapunov = clock.time(format!("lyapunov {tag}"), || {
                    lyapunov_estimate(&surface, tw, &v0, cfg.lyapunov_steps)
                })?;
                let transitivity = clock.time(format!("transitivity {tag}"), || {
                    transitivity_probe(&surface, tw, cfg.n_orbits, cfg.n_steps, cfg.cells, cfg.seed)
                })?;
                let volume = clock.time(format!("volume {tag}"), || {
                    volume_check(&surface, tw, &CollarBox::default(), cfg.volume_samples, cfg.seed)
                })?;
                table.push(vec![
                    Cell::Float(ell),
                    Cell::Text(mode.as_str().into()),
                    Cell::Float(lyapunov.uu),
                    Cell::Float(lyapunov.c),
                    Cell::Float(lyapunov.ss),
                    Cell::Float(transitivity.coverage),
                    Cell::Float(volume.z_score),
                    Cell::Bool(volume.within_3_sigma),
                ]);
                rows.push(ExperimentRow {
                    ell,
                    mode,
                    lyapunov,
                    transitivity,
                    volume,
                });
            }
        }
    }
    let summary = format!("experiments: {} runs (heuristic)", rows.len());
    let results = json!({ "runs": serde_json::to_value(&rows)? });
    let metadata = json!({
        "heuristic_note": HEURISTIC_NOTE,
        "collar_side": COLLAR_SIDE,
        "volume_box": serde_json::to_value(CollarBox::default())?,
    });
    let report = report(
        Command::Experiments,
        cfg,
        Provenance {
            certified_grid: false,
            heuristic: true,
            rigorous: false,
        },
        metadata,
        Vec::new(),
        results,
        clock,
        started,
    )?;
    Ok(RunOutput {
        report,
        table,
        out_dir: cfg.out.clone(),
        summary,
    })
}
