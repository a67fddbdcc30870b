//! Run configuration: strict TOML with defaults and validation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::{LatticeSpec, SolverOptions};
use crate::error::{Error, Result};
use crate::frame::FrameOptions;
use crate::ode::OdeOptions;
use crate::orbit::{OrbitOptions, SeedRay};
use crate::pipeline::{PipelineOptions, SweepOptions};
use crate::quasimode::{ResidualOptions, TransportOptions};

/// Name of the effective-configuration echo in the output directory.
pub const ECHO_FILE: &str = "config.effective.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub orbit: OrbitConfig,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub phases: PhasesConfig,
    #[serde(default)]
    pub residual: ResidualConfig,
    #[serde(default)]
    pub bands: BandsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One Fourier coefficient `V̂(g) = re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialTerm {
    pub g: [i32; 3],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Real-space basis vectors as rows.
    #[serde(default = "cubic_vectors")]
    pub vectors: [[f64; 3]; 3],
    #[serde(default)]
    pub potential: Vec<PotentialTerm>,
}

fn cubic_vectors() -> [[f64; 3]; 3] {
    [[2.0 * PI, 0.0, 0.0], [0.0, 2.0 * PI, 0.0], [0.0, 0.0, 2.0 * PI]]
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            vectors: cubic_vectors(),
            potential: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cutoff: f64,
    /// 1-based band index.
    pub band_index: usize,
    pub delta_gap: f64,
    pub tol_eig: f64,
    pub tol_deriv: f64,
    /// Bands excluded from the top of the spectrum in derivative sums.
    pub band_margin: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            cutoff: d.cutoff,
            band_index: 1,
            delta_gap: d.delta_gap,
            tol_eig: d.tol_eig,
            tol_deriv: d.tol_deriv,
            band_margin: d.band_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    pub e0: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3_grid: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed_origin: [f64; 2],
    #[serde(default = "e1")]
    pub seed_direction: [f64; 2],
    #[serde(default = "default_seed_radius")]
    pub seed_radius: f64,
    #[serde(default = "default_tol_level")]
    pub tol_level: f64,
    #[serde(default = "default_tol_close")]
    pub tol_close: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn one() -> f64 {
    1.0
}
fn e1() -> [f64; 2] {
    [1.0, 0.0]
}
fn default_samples() -> usize {
    OrbitOptions::default().samples
}
fn default_seed_radius() -> f64 {
    OrbitOptions::default().seed_radius
}
fn default_tol_level() -> f64 {
    OrbitOptions::default().tol_level
}
fn default_tol_close() -> f64 {
    OrbitOptions::default().tol_close
}
fn default_v_min() -> f64 {
    OrbitOptions::default().v_min
}
fn default_s_max() -> f64 {
    OrbitOptions::default().s_max
}
fn default_rtol() -> f64 {
    OdeOptions::default().rtol
}
fn default_atol() -> f64 {
    OdeOptions::default().atol
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub tol_frame: f64,
    pub d_min: f64,
    pub p_min: f64,
    pub tol_amp: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        let f = FrameOptions::default();
        BeamConfig {
            tol_frame: f.tol_frame,
            d_min: f.d_min,
            p_min: f.p_min,
            tol_amp: TransportOptions::default().tol_amp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhasesConfig {
    pub tol_phase: f64,
    pub tol_action: f64,
    pub tol_monodromy: f64,
    /// Inclusive range of Landau indices.
    pub n_range: [u32; 2],
    pub p2_const: f64,
    pub c: f64,
}

impl Default for PhasesConfig {
    fn default() -> Self {
        let p = PipelineOptions::default();
        PhasesConfig {
            tol_phase: p.tol_phase,
            tol_action: p.tol_action,
            tol_monodromy: p.tol_monodromy,
            n_range: [0, p.n_max],
            p2_const: p.p2_const,
            c: p.c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualConfig {
    pub eps_list: Vec<f64>,
    pub tube_factor: f64,
    pub fibres: usize,
    pub offsets: usize,
    pub include_m1perp: bool,
    /// Transverse offsets for the eikonal vanishing-order fit.
    pub deltas: Vec<f64>,
    pub min_eikonal_order: f64,
    /// Tube radius of the phase jet; defaults to a fraction of the smallest
    /// radius of curvature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_radius: Option<f64>,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        let r = ResidualOptions::default();
        ResidualConfig {
            eps_list: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            tube_factor: r.tube_factor,
            fibres: r.fibres,
            offsets: r.offsets,
            include_m1perp: r.include_m1perp,
            deltas: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            min_eikonal_order: 2.8,
            tube_radius: None,
        }
    }
}

/// Piecewise-linear k-path for the `bands` command, in reduced coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsConfig {
    pub path: Vec<[f64; 3]>,
    pub points_per_segment: usize,
    pub count: usize,
}

impl Default for BandsConfig {
    fn default() -> Self {
        BandsConfig {
            path: vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 0.0]],
            points_per_segment: 32,
            count: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `[lo, hi]` window for the level histogram; `hi` may be `inf`.
    pub eps_window: [f64; 2],
    pub bins: usize,
    pub slope_floor: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s = SweepOptions::default();
        SweepConfig {
            eps_window: [0.0, 0.1],
            bins: s.bins,
            slope_floor: s.slope_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Also write whitespace-separated `.dat` mirrors of every CSV.
    pub dat: bool,
    /// Worker threads; 0 lets the pool choose.
    pub threads: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            dat: false,
            threads: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        positive("solver.cutoff", s.cutoff)?;
        positive("solver.delta_gap", s.delta_gap)?;
        positive("solver.tol_eig", s.tol_eig)?;
        positive("solver.tol_deriv", s.tol_deriv)?;
        if s.band_index == 0 {
            return Err(Error::Config("solver.band_index is 1-based".into()));
        }
        let o = &self.orbit;
        if !o.e0.is_finite() || !o.k3.is_finite() {
            return Err(Error::Config("orbit.e0 and orbit.k3 must be finite".into()));
        }
        positive("orbit.mu", o.mu)?;
        for (name, v) in [
            ("orbit.seed_radius", o.seed_radius),
            ("orbit.tol_level", o.tol_level),
            ("orbit.tol_close", o.tol_close),
            ("orbit.v_min", o.v_min),
            ("orbit.s_max", o.s_max),
            ("orbit.rtol", o.rtol),
            ("orbit.atol", o.atol),
        ] {
            positive(name, v)?;
        }
        if o.samples < 16 {
            return Err(Error::Config(format!("orbit.samples must be at least 16, got {}", o.samples)));
        }
        if o.seed_direction == [0.0, 0.0] {
            return Err(Error::Config("orbit.seed_direction must be nonzero".into()));
        }
        if let Some(grid) = &o.k3_grid {
            if grid.is_empty() || !grid.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config("orbit.k3_grid must be nonempty and strictly increasing".into()));
            }
        }
        let b = &self.beam;
        for (name, v) in [
            ("beam.tol_frame", b.tol_frame),
            ("beam.d_min", b.d_min),
            ("beam.p_min", b.p_min),
            ("beam.tol_amp", b.tol_amp),
        ] {
            positive(name, v)?;
        }
        let p = &self.phases;
        positive("phases.tol_phase", p.tol_phase)?;
        positive("phases.tol_action", p.tol_action)?;
        positive("phases.tol_monodromy", p.tol_monodromy)?;
        if p.n_range[0] > p.n_range[1] {
            return Err(Error::Config("phases.n_range must be [lo, hi] with lo <= hi".into()));
        }
        let r = &self.residual;
        if !r.eps_list.iter().all(|&e| e > 0.0) || !r.eps_list.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("residual.eps_list must be positive and strictly decreasing".into()));
        }
        if !r.deltas.iter().all(|&e| e > 0.0) || !r.deltas.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("residual.deltas must be positive and strictly decreasing".into()));
        }
        positive("residual.tube_factor", r.tube_factor)?;
        positive("residual.min_eikonal_order", r.min_eikonal_order)?;
        if let Some(t) = r.tube_radius {
            positive("residual.tube_radius", t)?;
        }
        if r.fibres == 0 || r.offsets == 0 {
            return Err(Error::Config("residual.fibres and residual.offsets must be positive".into()));
        }
        if self.bands.path.len() < 2 || self.bands.points_per_segment == 0 || self.bands.count == 0 {
            return Err(Error::Config("bands.path needs two points, and points_per_segment and count must be positive".into()));
        }
        let w = self.sweep.eps_window;
        if !(w[0] < w[1]) || w[0].is_nan() {
            return Err(Error::Config("sweep.eps_window must satisfy lo < hi".into()));
        }
        positive("sweep.slope_floor", self.sweep.slope_floor)?;
        self.lattice_spec()?;
        Ok(())
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec> {
        let mut potential = BTreeMap::new();
        for t in &self.lattice.potential {
            if potential.insert(t.g, Complex64::new(t.re, t.im)).is_some() {
                return Err(Error::Config(format!("duplicate potential coefficient for g = {:?}", t.g)));
            }
        }
        let v = &self.lattice.vectors;
        let a = [0, 1, 2].map(|i| Vector3::new(v[i][0], v[i][1], v[i][2]));
        LatticeSpec::new(a, potential)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            cutoff: s.cutoff,
            delta_gap: s.delta_gap,
            tol_eig: s.tol_eig,
            tol_deriv: s.tol_deriv,
            band_margin: s.band_margin,
        }
    }

    pub fn orbit_options(&self) -> OrbitOptions {
        let o = &self.orbit;
        OrbitOptions {
            mu: o.mu,
            samples: o.samples,
            ode: OdeOptions {
                rtol: o.rtol,
                atol: o.atol,
                ..OdeOptions::default()
            },
            tol_level: o.tol_level,
            tol_close: o.tol_close,
            v_min: o.v_min,
            s_max: o.s_max,
            seed_radius: o.seed_radius,
        }
    }

    pub fn seed_ray(&self) -> SeedRay {
        SeedRay {
            origin: self.orbit.seed_origin,
            direction: self.orbit.seed_direction,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let d = PipelineOptions::default();
        let b = &self.beam;
        let p = &self.phases;
        PipelineOptions {
            orbit: self.orbit_options(),
            ray: self.seed_ray(),
            frame: FrameOptions {
                tol_frame: b.tol_frame,
                d_min: b.d_min,
                p_min: b.p_min,
                ..d.frame
            },
            transport: TransportOptions {
                tol_amp: b.tol_amp,
                ..d.transport
            },
            tol_phase: p.tol_phase,
            tol_action: p.tol_action,
            tol_monodromy: p.tol_monodromy,
            p2_const: p.p2_const,
            c: p.c,
            n_min: p.n_range[0],
            n_max: p.n_range[1],
            tube_radius: self.residual.tube_radius,
        }
    }

    pub fn residual_options(&self) -> ResidualOptions {
        let r = &self.residual;
        ResidualOptions {
            tube_factor: r.tube_factor,
            fibres: r.fibres,
            offsets: r.offsets,
            include_m1perp: r.include_m1perp,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            eps_window: (self.sweep.eps_window[0], self.sweep.eps_window[1]),
            bins: self.sweep.bins,
            slope_floor: self.sweep.slope_floor,
        }
    }

    /// `k3_grid` if given, otherwise the single `k3`.
    pub fn k3_values(&self) -> Vec<f64> {
        self.orbit.k3_grid.clone().unwrap_or_else(|| vec![self.orbit.k3])
    }
}
