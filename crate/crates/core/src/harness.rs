//! Command dispatch and output files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use crate::bloch::{BlochSolver, PlaneWaveBand};
use crate::config::{RunConfig, ECHO_FILE};
use crate::error::{Error, Result};
use crate::frame::{hessian_blocks, init_frame, maslov_index, propagate_frame, BeamFrame};
use crate::orbit::{area_profile, orbit_at, peierls_lift, Orbit};
use crate::phases::MagneticLevelTable;
use crate::pipeline::{analyze_orbit, level_density_sweep, ExtremumReport};
use crate::quasimode::eikonal_residual;

pub const LEVELS_HEADER: [&str; 7] = ["k3", "n", "eps_n", "gamma", "theta_b", "theta_rw", "N_M"];
pub const ORBIT_HEADER: [&str; 5] = ["s", "k1", "k2", "vy1", "vy2"];
pub const AREA_HEADER: [&str; 2] = ["k3", "S"];
pub const RESIDUAL_HEADER: [&str; 2] = ["eps", "sup_residual"];
pub const DENSITY_HEADER: [&str; 2] = ["eps_bin", "count"];
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Bands,
    Orbit,
    Beam,
    Phases,
    Levels,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::Orbit => "orbit",
            Command::Beam => "beam",
            Command::Phases => "phases",
            Command::Levels => "levels",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Command as clap::ValueEnum>::from_str(s, false).map_err(|_| Error::InvalidInput(format!("unknown command {s:?}")))
    }
}

/// Sign and normalisation choices that every summary carries.
#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub units: &'static str,
    pub inner_product: &'static str,
    pub symplectic_form: &'static str,
    pub berry_phase: &'static str,
    pub theta_rw_sign: &'static str,
    pub gamma_rule: &'static str,
    pub level_formula: &'static str,
    pub phase_branch: &'static str,
}

pub const CONVENTIONS: Conventions = Conventions {
    units: "hbar^2/2m = 1, e = 1, mu = e/hbar from orbit.mu",
    inner_product: "<a,b> = sum_G conj(a_G) b_G",
    symplectic_form: "sigma((y,eta),(w,zeta)) = y.zeta - w.eta",
    berry_phase: "Theta_b = -arg prod_j <Phi_j, Phi_j+1> around the orbit in flow order",
    theta_rw_sign: "Theta_rw = -oint Im<(H0-E) d1 Phi, d2 Phi> ds",
    gamma_rule: "gamma = 1/2 if N_M is odd, else 0",
    level_formula: "eps_n = (S/mu) / (2 pi (n + gamma) + Theta_b + Theta_rw)",
    phase_branch: "Theta_b and Theta_rw reported in (-pi, pi]",
};

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub conventions: Conventions,
    pub config: RunConfig,
    pub files: Vec<String>,
    pub results: Value,
}

/// Writes CSV files (and optional `.dat` mirrors) into one directory.
struct Emitter {
    dir: PathBuf,
    dat: bool,
    files: Vec<String>,
}

fn num(x: f64) -> String {
    format!("{x}")
}

impl Emitter {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        if self.dat {
            let stem = name.strip_suffix(".csv").unwrap_or(name);
            let mut text = format!("# {}\n", header.join(" "));
            for r in rows {
                text.push_str(&r.join(" "));
                text.push('\n');
            }
            let dat = format!("{stem}.dat");
            fs::write(self.dir.join(&dat), text)?;
            self.files.push(dat);
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        fs::write(self.dir.join(name), text + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn build_sampler(cfg: &RunConfig) -> Result<PlaneWaveBand> {
    let solver = BlochSolver::new(cfg.lattice_spec()?, cfg.solver_options())?;
    PlaneWaveBand::new(solver, cfg.solver.band_index)
}

/// Run `cmd`, writing every artifact under `out`. On a failed check the
/// files and summary are still written before the error is returned.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    fs::write(out.join(ECHO_FILE), cfg.to_toml())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.output.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut em = Emitter {
        dir: out.to_path_buf(),
        dat: cfg.output.dat,
        files: vec![ECHO_FILE.to_string()],
    };
    let (results, failure) = pool.install(|| dispatch(cmd, cfg, &mut em))?;
    let summary = Summary {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        conventions: CONVENTIONS,
        config: cfg.clone(),
        files: {
            let mut f = em.files.clone();
            f.push(SUMMARY_FILE.to_string());
            f
        },
        results,
    };
    em.json(SUMMARY_FILE, &summary)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

type Dispatched = (Value, Option<Error>);

fn dispatch(cmd: Command, cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    match cmd {
        Command::Bands => bands(cfg, em),
        Command::Orbit => orbit(cfg, em),
        Command::Beam => beam(cfg, em),
        Command::Phases => phases(cfg, em),
        Command::Levels => levels(cfg, em),
        Command::Verify => verify(cfg, em),
        Command::Sweep => sweep(cfg, em),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serialises")
}

fn bands(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    use rayon::prelude::*;
    let solver = BlochSolver::new(cfg.lattice_spec()?, cfg.solver_options())?;
    let count = cfg.bands.count.min(solver.basis().len());
    let b = solver.basis().b;
    let cart = |r: [f64; 3]| {
        let v = b[0] * r[0] + b[1] * r[1] + b[2] * r[2];
        [v[0], v[1], v[2]]
    };
    let path = &cfg.bands.path;
    let per = cfg.bands.points_per_segment;
    let mut ks = Vec::new();
    let mut t = 0.0;
    for (i, w) in path.windows(2).enumerate() {
        let (a, c) = (cart(w[0]), cart(w[1]));
        let len = ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2) + (c[2] - a[2]).powi(2)).sqrt();
        let last = i + 2 == path.len();
        for j in 0..(per + usize::from(last)) {
            let f = j as f64 / per as f64;
            ks.push((t + f * len, [0, 1, 2].map(|d| a[d] + f * (c[d] - a[d]))));
        }
        t += len;
    }
    let energies = ks
        .par_iter()
        .map(|(_, k)| solver.eigensystem(*k).map(|e| e.energies[..count].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut header: Vec<String> = ["t", "k1", "k2", "k3"].map(String::from).to_vec();
    header.extend((1..=count).map(|n| format!("E_{n}")));
    let rows: Vec<Vec<String>> = ks
        .iter()
        .zip(&energies)
        .map(|((t, k), e)| {
            let mut r = vec![num(*t), num(k[0]), num(k[1]), num(k[2])];
            r.extend(e.iter().map(|&x| num(x)));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    em.csv("bands.csv", &header, &rows)?;
    Ok((json!({ "points": ks.len(), "bands": count, "basis_size": solver.basis().len() }), None))
}

fn orbit_rows(o: &Orbit) -> Vec<Vec<String>> {
    o.samples
        .iter()
        .map(|p| vec![num(p.s), num(p.k[0]), num(p.k[1]), num(p.vy[0]), num(p.vy[1])])
        .collect()
}

fn orbit_summary(o: &Orbit) -> Value {
    json!({
        "k3": o.k3,
        "e0": o.e0,
        "mu": o.mu,
        "period": o.period,
        "area": o.area,
        "orientation": o.orientation,
        "samples": o.samples.len(),
    })
}

fn orbit(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    let sampler = build_sampler(cfg)?;
    let opts = cfg.orbit_options();
    let ray = cfg.seed_ray();
    let o = orbit_at(&sampler, cfg.orbit.k3, cfg.orbit.e0, &ray, &opts)?;
    em.csv("orbit.csv", &ORBIT_HEADER, &orbit_rows(&o))?;
    let mut results = json!({ "orbit": orbit_summary(&o) });
    match &cfg.orbit.k3_grid {
        Some(grid) => {
            let profile = area_profile(&sampler, cfg.orbit.e0, grid, &ray, &opts);
            let rows: Vec<Vec<String>> = profile
                .points
                .iter()
                .filter_map(|p| p.result.as_ref().ok().map(|&s| vec![num(p.k3), num(s)]))
                .collect();
            em.csv("area.csv", &AREA_HEADER, &rows)?;
            let failed: Vec<Value> = profile
                .points
                .iter()
                .filter_map(|p| p.result.as_ref().err().map(|e| json!({ "k3": p.k3, "error": e })))
                .collect();
            let extrema: Vec<ExtremumReport> = profile.extrema.iter().map(|&e| e.into()).collect();
            results["area_extrema"] = to_value(&extrema);
            results["failed_k3"] = Value::Array(failed);
        }
        None => em.csv("area.csv", &AREA_HEADER, &[vec![num(o.k3), num(o.area)]])?,
    }
    Ok((results, None))
}

fn frame_rows(f: &BeamFrame) -> Vec<Vec<String>> {
    (0..f.s.len())
        .map(|j| {
            let mut r = vec![num(f.s[j])];
            for m in [&f.y[j], &f.n[j], &f.m[j]] {
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    r.push(num(m[(a, b)].re));
                    r.push(num(m[(a, b)].im));
                }
            }
            r.push(num(f.det_y[j].norm()));
            r.push(num(f.arg_det_y[j]));
            r
        })
        .collect()
}

pub fn frame_header() -> Vec<String> {
    let mut h = vec!["s".to_string()];
    for m in ["Y", "N", "M"] {
        for ij in ["11", "12", "21", "22"] {
            h.push(format!("{m}{ij}_re"));
            h.push(format!("{m}{ij}_im"));
        }
    }
    h.push("abs_det_Y".into());
    h.push("arg_det_Y".into());
    h
}

fn beam(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    let sampler = build_sampler(cfg)?;
    let p = cfg.pipeline_options();
    let o = orbit_at(&sampler, cfg.orbit.k3, cfg.orbit.e0, &p.ray, &p.orbit)?;
    let lift = peierls_lift(&o, p.p2_const, p.c);
    let blocks = hessian_blocks(&o, &sampler)?;
    let init = init_frame(&lift)?;
    let frame = propagate_frame(&blocks, &init, &lift, &p.frame)?;
    let (n_m, theta_m) = maslov_index(&frame)?;
    let header = frame_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    em.csv("frame.csv", &header, &frame_rows(&frame))?;
    let report = json!({
        "orbit": orbit_summary(&o),
        "maslov_index": n_m,
        "theta_m": theta_m,
        "winding": (frame.arg_det_y[frame.samples()] - frame.arg_det_y[0]) / std::f64::consts::TAU,
        "sigma12": [frame.sigma12.re, frame.sigma12.im],
        "sigma2bar": [frame.sigma2bar.re, frame.sigma2bar.im],
        "diagnostics": to_value(&frame.diagnostics),
    });
    em.json("maslov.json", &report)?;
    Ok((report, None))
}

fn phases(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    let sampler = build_sampler(cfg)?;
    let a = analyze_orbit(&sampler, cfg.orbit.k3, cfg.orbit.e0, &cfg.pipeline_options())?;
    let report = json!({
        "orbit": orbit_summary(&a.orbit),
        "ledger": to_value(&a.ledger),
        "berry": to_value(&a.berry),
        "monodromy_defect": a.monodromy_defect,
        "frame": to_value(&a.frame.diagnostics),
    });
    em.json("phases.json", &report)?;
    Ok((report, None))
}

fn level_rows(t: &MagneticLevelTable) -> Vec<Vec<String>> {
    t.entries
        .iter()
        .map(|e| {
            vec![
                num(t.k3),
                e.n.to_string(),
                num(e.eps),
                num(t.gamma),
                num(t.theta_b),
                num(t.theta_rw),
                t.n_m.to_string(),
            ]
        })
        .collect()
}

fn levels(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    use rayon::prelude::*;
    let sampler = build_sampler(cfg)?;
    let p = cfg.pipeline_options();
    let tables = cfg
        .k3_values()
        .par_iter()
        .map(|&k3| analyze_orbit(&sampler, k3, cfg.orbit.e0, &p).map(|a| a.levels))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = tables.iter().flat_map(level_rows).collect();
    em.csv("levels.csv", &LEVELS_HEADER, &rows)?;
    Ok((json!({ "tables": to_value(&tables) }), None))
}

fn verify(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    let sampler = build_sampler(cfg)?;
    let a = analyze_orbit(&sampler, cfg.orbit.k3, cfg.orbit.e0, &cfg.pipeline_options())?;
    let jet = a.jet(cfg.residual.tube_radius)?;
    let stride = (a.orbit.len() / cfg.residual.fibres.min(a.orbit.len())).max(1);
    let fibres: Vec<usize> = (0..a.orbit.len()).step_by(stride).collect();
    let eikonal = eikonal_residual(&jet, &sampler, cfg.orbit.e0, &fibres, &cfg.residual.deltas)?;
    let report = crate::quasimode::residual_scaling(
        &jet,
        &a.amplitude,
        &a.fields(),
        &sampler,
        cfg.orbit.e0,
        &cfg.residual.eps_list,
        &cfg.residual_options(),
    )?;
    let rows: Vec<Vec<String>> = report
        .per_eps
        .iter()
        .map(|r| vec![num(r.eps), num(r.sup_residual)])
        .collect();
    em.csv("residual.csv", &RESIDUAL_HEADER, &rows)?;
    let target = [1.35, 1.65];
    let slope_ok = report.slope >= target[0] && report.slope <= target[1];
    let eikonal_ok = eikonal.check(cfg.residual.min_eikonal_order);
    let out = json!({
        "orbit": orbit_summary(&a.orbit),
        "residual": to_value(&report),
        "slope_target": target,
        "slope_within_target": slope_ok,
        "eikonal": to_value(&eikonal),
        "eikonal_min_order": cfg.residual.min_eikonal_order,
        "eikonal_passed": eikonal_ok.is_ok(),
        "tube_radius": jet.tube_radius,
        "lambda_min": jet.lambda_min,
    });
    em.json("verify.json", &out)?;
    let failure = match eikonal_ok {
        Err(e) => Some(e),
        Ok(()) if !slope_ok => Some(Error::Accuracy(format!(
            "residual slope {:.4} outside [{}, {}]",
            report.slope, target[0], target[1]
        ))),
        Ok(()) => None,
    };
    Ok((out, failure))
}

fn sweep(cfg: &RunConfig, em: &mut Emitter) -> Result<Dispatched> {
    let Some(grid) = &cfg.orbit.k3_grid else {
        return Err(Error::Config("sweep needs orbit.k3_grid".into()));
    };
    let sampler = build_sampler(cfg)?;
    let report = level_density_sweep(&sampler, cfg.orbit.e0, grid, &cfg.pipeline_options(), &cfg.sweep_options())?;
    let rows: Vec<Vec<String>> = report
        .histogram
        .iter()
        .map(|b| vec![num(0.5 * (b.eps_lo + b.eps_hi)), b.count.to_string()])
        .collect();
    em.csv("density.csv", &DENSITY_HEADER, &rows)?;
    let level_rows: Vec<Vec<String>> = report
        .points
        .iter()
        .filter_map(|p| p.levels.as_ref())
        .flat_map(level_rows)
        .collect();
    em.csv("levels.csv", &LEVELS_HEADER, &level_rows)?;
    let area: Vec<Vec<String>> = report
        .points
        .iter()
        .filter_map(|p| p.area.map(|s| vec![num(p.k3), num(s)]))
        .collect();
    em.csv("area.csv", &AREA_HEADER, &area)?;
    let rho: Vec<Vec<String>> = report.density.iter().map(|&(k, r)| vec![num(k), num(r)]).collect();
    em.csv("level_density.csv", &["k3", "rho"], &rho)?;
    let failed: Vec<Value> = report
        .points
        .iter()
        .filter_map(|p| p.error.as_ref().map(|e| json!({ "k3": p.k3, "error": e })))
        .collect();
    let out = json!({
        "peak_k3": report.peak_k3,
        "area_extrema": to_value(&report.area_extrema),
        "grid_step": grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
        "failed_k3": failed,
        "empty_window": report.histogram.is_empty(),
    });
    em.json("sweep.json", &out)?;
    Ok((out, None))
}

