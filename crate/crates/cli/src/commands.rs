use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use qsm_core::asymptotics::{check_l2_relation, fit_lapse_expansion};
use qsm_core::evolve::{evolve_coeffs, residual_report};
use qsm_core::imcf::{imcf_radius, q_trace, FlowTrace};
use qsm_core::metric::{schwarzschild, PotentialField, QuasiSphericalMetric};
use qsm_core::sphere::{make_grid, SphereGrid};
use qsm_core::static_solver::{
    potential_expansion, rigidity_probe, solve_potential_radial, solve_potential_symmetric, static_residual,
    RadialOptions, RigidityOptions,
};
use qsm_core::{tolerances, Error};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::snapshot::Snapshot;

/// Files written by a command.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn grid_for(g: &QuasiSphericalMetric) -> CliResult<SphereGrid> {
    Ok(make_grid(g.n, g.lmax)?)
}

/// Evolve the configured initial lapse; writes `metric.qsm` and `residual.json`.
pub fn cmd_evolve(cfg: &RunConfig, out: &Path) -> CliResult<Outputs> {
    let grid = make_grid(cfg.n, cfg.lmax)?;
    let init = cfg.initial_coeffs(&grid);
    let g = evolve_coeffs(&grid, &init, &cfg.evolve_params())?;
    let report = residual_report(&grid, &g)?;
    ensure_dir(out)?;
    let snap_path = out.join("metric.qsm");
    Snapshot {
        metric: g,
        potential: None,
    }
    .save(&snap_path)?;
    let rep_path = out.join("residual.json");
    write_json(
        &rep_path,
        &json!({
            "n": cfg.n,
            "lmax": cfg.lmax,
            "audit_tolerance": cfg.audit_tolerance,
            "max_sup": report.max_sup,
            "max_l2": report.max_l2,
            "stations": report.stations,
        }),
    )?;
    if report.max_sup > cfg.audit_tolerance {
        return Err(CliError::Audit {
            residual: report.max_sup,
            tolerance: cfg.audit_tolerance,
        });
    }
    Ok(Outputs {
        files: vec![snap_path, rep_path],
    })
}

/// The stored potential, or the bounded radial-equation potential.
fn potential_for(grid: &SphereGrid, snap: &Snapshot) -> CliResult<PotentialField> {
    match &snap.potential {
        Some(v) => Ok(v.clone()),
        None => Ok(solve_potential_radial(grid, &snap.metric, &RadialOptions::default())?),
    }
}

/// Expansion fits of `u` and `V` with relation gaps; writes `analysis.json`.
pub fn cmd_analyze(cfg: &RunConfig, snapshot: &Path, out: &Path) -> CliResult<Outputs> {
    let snap = Snapshot::load(snapshot)?;
    let g = &snap.metric;
    let grid = grid_for(g)?;
    let window = cfg.fit_window();
    let lapse = fit_lapse_expansion(&grid, g, &window)?;
    let l2_gap = match check_l2_relation(&grid, &lapse) {
        Ok(gap) => Some(gap),
        Err(Error::MissingCoefficients(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let v = potential_for(&grid, &snap)?;
    let pot = potential_expansion(&grid, g, &v, &window)?;
    ensure_dir(out)?;
    let path = out.join("analysis.json");
    write_json(
        &path,
        &json!({
            "n": g.n,
            "lmax": g.lmax,
            "mass": lapse.mass(),
            "lapse": lapse,
            "l2_relation_gap": l2_gap,
            "potential_source": v.source,
            "potential": pot.potential,
            "potential_gaps": {
                "dot": pot.dot_gap,
                "hat": pot.hat_gap,
                "tdot": pot.tdot_gap,
            },
        }),
    )?;
    Ok(Outputs { files: vec![path] })
}

fn probe_row(grid: &SphereGrid, g: &QuasiSphericalMetric) -> CliResult<Value> {
    let (rep, best) = rigidity_probe(grid, g, &RigidityOptions::default())?;
    let res = static_residual(grid, g, &best)?;
    Ok(json!({
        "lmax": g.lmax,
        "stations": g.len(),
        "defect": rep.defect,
        "aggregate": rep.aggregate,
        "unknowns": rep.unknowns,
        "components": rep.components,
        "best_potential_max_norms": res.max_norms(),
        "best_inner_data": rep.data,
    }))
}

/// Static residual of the stored potential and the rigidity probe, with a
/// refinement row at doubled `lmax` and doubled station count; writes `static.json`.
pub fn cmd_static(cfg: &RunConfig, snapshot: &Path, out: &Path) -> CliResult<Outputs> {
    let snap = Snapshot::load(snapshot)?;
    let g = &snap.metric;
    let grid = grid_for(g)?;
    let audit = residual_report(&grid, g)?;
    if audit.max_sup > cfg.audit_tolerance {
        return Err(Error::NotScalarFlat {
            residual: audit.max_sup,
            tolerance: cfg.audit_tolerance,
        }
        .into());
    }
    let stored = match &snap.potential {
        Some(v) => Some(static_residual(&grid, g, v)?.max_norms()),
        None => None,
    };
    let mut table = vec![probe_row(&grid, g)?];
    if cfg.probe.refine {
        let fine_grid = make_grid(g.n, 2 * g.lmax)?;
        let init = g.lapse[0].with_lmax(2 * g.lmax);
        let mut p = cfg.evolve_params();
        p.r0 = g.radii[0];
        p.r_max = *g.radii.last().unwrap();
        p.lmax = 2 * g.lmax;
        p.snapshots = 2 * g.len() - 1;
        let fine = evolve_coeffs(&fine_grid, &init, &p)?;
        table.push(probe_row(&fine_grid, &fine)?);
    }
    ensure_dir(out)?;
    let path = out.join("static.json");
    write_json(
        &path,
        &json!({
            "n": g.n,
            "background_max_scalar_residual": audit.max_sup,
            "stored_potential_max_norms": stored,
            "defect": table[0]["defect"],
            "refinement": table,
        }),
    )?;
    Ok(Outputs { files: vec![path] })
}

#[derive(Serialize)]
struct TraceSidecar<'a> {
    n: usize,
    m: f64,
    samples: usize,
    monotone: bool,
    max_increase: f64,
    tolerance: f64,
    label: &'a Option<String>,
}

/// Flow trace of `Q` on a symmetric background; writes `trace.csv` and `trace.json`.
pub fn cmd_imcf(cfg: &RunConfig, snapshot: Option<&Path>, out: &Path) -> CliResult<Outputs> {
    let (grid, g, v) = match (snapshot, cfg.imcf.closed_form_mass) {
        (Some(path), _) => {
            let snap = Snapshot::load(path)?;
            let grid = grid_for(&snap.metric)?;
            let var = snap.metric.angular_variation(&grid);
            if var > tolerances::SYMMETRY {
                return Err(Error::NotImcf(var).into());
            }
            let v = match snap.potential {
                Some(v) => v,
                None => solve_potential_symmetric(&grid, &snap.metric)?.potential,
            };
            (grid, snap.metric, v)
        }
        (None, Some(m)) => {
            // Closed form evaluated exactly on the flow radii.
            let grid = make_grid(cfg.n, cfg.lmax)?;
            let nf = cfg.n as f64;
            let t_max = cfg.imcf.t_max.unwrap_or((nf - 1.0) * (cfg.r_max / cfg.r0).ln());
            let last = (cfg.imcf.samples - 1) as f64;
            let radii: Vec<f64> = (0..cfg.imcf.samples)
                .map(|i| imcf_radius(t_max * i as f64 / last, cfg.r0, cfg.n))
                .collect();
            let (g, v) = schwarzschild(&grid, m, &radii)?;
            (grid, g, v)
        }
        (None, None) => {
            return Err(CliError::Config(
                "imcf needs a snapshot or imcf.closed_form_mass".into(),
            ))
        }
    };
    let r0 = g.radii[0];
    let r_last = *g.radii.last().unwrap();
    let t_max = cfg
        .imcf
        .t_max
        .unwrap_or((g.n as f64 - 1.0) * (r_last / r0).ln());
    let trace: FlowTrace = q_trace(&grid, &g, &v, (0.0, t_max), cfg.imcf.samples)?;
    ensure_dir(out)?;
    let csv = out.join("trace.csv");
    write_text(&csv, &trace.to_csv())?;
    let side = out.join("trace.json");
    write_json(
        &side,
        &TraceSidecar {
            n: trace.n,
            m: trace.m,
            samples: trace.t.len(),
            monotone: trace.monotone,
            max_increase: trace.max_increase,
            tolerance: tolerances::MONOTONICITY,
            label: &trace.label,
        },
    )?;
    Ok(Outputs {
        files: vec![csv, side],
    })
}
