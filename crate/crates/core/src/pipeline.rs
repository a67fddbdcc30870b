//! The full per-orbit chain and the k₃ sweep built on it.

use faer::c64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch::BandSampler;
use crate::error::{Error, Result};
use crate::frame::{init_frame, maslov_index, propagate_frame, BeamFrame, FrameOptions, HessianBlocks, InitialFrame};
use crate::orbit::{find_extrema, orbit_at, peierls_lift, Extremum, Orbit, OrbitOptions, PeierlsLift, SeedRay};
use crate::phases::{
    action_integral, berry_phase, check_action, onsager_levels, orbit_geometry, wr_phase, wrap_phase, BerryPhase,
    MagneticLevelTable, OrbitGeometry, PhaseLedger,
};
use crate::quasimode::{orbit_fields, transport_amplitude, AmplitudeTrace, OrbitFields, PhaseJet, TransportOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub orbit: OrbitOptions,
    pub ray: SeedRay,
    pub frame: FrameOptions,
    pub transport: TransportOptions,
    pub tol_phase: f64,
    pub tol_action: f64,
    /// Largest admissible `|f₀(T)/f₀(0) − e^{−iΘ}|`.
    pub tol_monodromy: f64,
    pub p2_const: f64,
    pub c: f64,
    pub n_min: u32,
    pub n_max: u32,
    pub tube_radius: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            orbit: OrbitOptions::default(),
            ray: SeedRay::default(),
            frame: FrameOptions::default(),
            transport: TransportOptions::default(),
            tol_phase: 1e-8,
            tol_action: 1e-7,
            tol_monodromy: 1e-6,
            p2_const: 0.0,
            c: 0.0,
            n_min: 0,
            n_max: 5,
            tube_radius: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrbitAnalysis {
    pub orbit: Orbit,
    pub lift: PeierlsLift,
    pub blocks: HessianBlocks,
    pub init: InitialFrame,
    pub frame: BeamFrame,
    pub geometry: OrbitGeometry,
    pub berry: BerryPhase,
    pub ledger: PhaseLedger,
    pub levels: MagneticLevelTable,
    pub amplitude: AmplitudeTrace,
    /// `|f₀(T)/f₀(0) − e^{−i(Θ_M+Θ_b+Θ_rw)}|`.
    pub monodromy_defect: f64,
}

impl OrbitAnalysis {
    pub fn jet(&self, tube_radius: Option<f64>) -> Result<PhaseJet> {
        PhaseJet::new(&self.lift, &self.blocks, &self.frame, self.orbit.k3, tube_radius)
    }

    pub fn fields(&self) -> OrbitFields {
        let a: Vec<[f64; 3]> = self.geometry.samples.iter().map(|g| g.connection).collect();
        orbit_fields(&a, &self.geometry.wr_rate())
    }
}

pub fn analyze_orbit<S: BandSampler + ?Sized>(sampler: &S, k3: f64, e0: f64, opts: &PipelineOptions) -> Result<OrbitAnalysis> {
    let orbit = orbit_at(sampler, k3, e0, &opts.ray, &opts.orbit)?;
    let lift = peierls_lift(&orbit, opts.p2_const, opts.c);
    let geometry = orbit_geometry(&orbit, sampler)?;
    let hess: Vec<[[f64; 3]; 3]> = geometry.samples.iter().map(|g| g.jet.hessian).collect();
    let blocks = HessianBlocks::from_hessians(&hess, orbit.mu, orbit.period);
    let init = init_frame(&lift)?;
    let frame = propagate_frame(&blocks, &init, &lift, &opts.frame)?;
    let (n_m, theta_m) = maslov_index(&frame)?;
    let berry = berry_phase(&orbit, sampler, Some(&geometry.states), opts.tol_phase)?;
    let theta_rw = wrap_phase(wr_phase(&orbit, &geometry));
    let action = action_integral(&lift);
    check_action(&orbit, action, opts.tol_action)?;
    let ledger = PhaseLedger {
        theta_b: berry.theta,
        theta_rw,
        n_m,
        theta_m,
        action,
        area_over_mu: orbit.area / orbit.mu,
    };
    let levels = onsager_levels(k3, orbit.area, berry.theta, theta_rw, n_m, opts.n_min..=opts.n_max, orbit.mu)?;
    let rate: Vec<f64> = geometry
        .berry_rate(&orbit)
        .iter()
        .zip(geometry.wr_rate())
        .map(|(b, w)| b - w)
        .collect();
    let amplitude = transport_amplitude(&frame, &blocks, &rate, &opts.transport)?;
    let want = c64::from_polar(1.0, -(theta_m + berry.theta + theta_rw));
    let monodromy_defect = (amplitude.monodromy() - want).norm();
    if !(monodromy_defect <= opts.tol_monodromy) {
        return Err(Error::Consistency(format!(
            "amplitude monodromy {} differs from exp(-i Theta) = {want} by {monodromy_defect:.3e}",
            amplitude.monodromy()
        )));
    }
    Ok(OrbitAnalysis {
        orbit,
        lift,
        blocks,
        init,
        frame,
        geometry,
        berry,
        ledger,
        levels,
        amplitude,
        monodromy_defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k3: f64,
    pub area: Option<f64>,
    pub levels: Option<MagneticLevelTable>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBin {
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub points: Vec<SweepPoint>,
    /// `(k₃, Σ_n 1/|dε_n/dk₃|)` over levels inside the window.
    pub density: Vec<(f64, f64)>,
    pub histogram: Vec<DensityBin>,
    pub peak_k3: Option<f64>,
    pub area_extrema: Vec<ExtremumReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremumReport {
    pub k3: f64,
    pub area: f64,
    pub maximum: bool,
}

impl From<Extremum> for ExtremumReport {
    fn from(e: Extremum) -> Self {
        ExtremumReport {
            k3: e.k3,
            area: e.area,
            maximum: e.kind == crate::orbit::ExtremumKind::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub eps_window: (f64, f64),
    pub bins: usize,
    /// Lower bound on `|dε_n/dk₃|` in the density.
    pub slope_floor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            eps_window: (0.0, f64::INFINITY),
            bins: 20,
            slope_floor: 1e-10,
        }
    }
}

/// Run the pipeline at every `k₃`, histogram the levels inside the
/// `ε`-window and locate the `k₃` where levels crowd most.
pub fn level_density_sweep<S: BandSampler + ?Sized>(
    sampler: &S,
    e0: f64,
    k3_grid: &[f64],
    pipeline: &PipelineOptions,
    opts: &SweepOptions,
) -> Result<DensityReport> {
    if !k3_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput("k3 grid must be strictly increasing".into()));
    }
    let points: Vec<SweepPoint> = k3_grid
        .par_iter()
        .map(|&k3| match analyze_orbit(sampler, k3, e0, pipeline) {
            Ok(a) => SweepPoint {
                k3,
                area: Some(a.orbit.area),
                levels: Some(a.levels),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep point k3 = {k3} failed: {e}");
                SweepPoint {
                    k3,
                    area: None,
                    levels: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let good: Vec<&SweepPoint> = points.iter().filter(|p| p.levels.is_some()).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = good.iter().map(|p| (p.k3, p.area.unwrap_or(0.0))).unzip();
    let area_extrema = find_extrema(&x, &y).into_iter().map(ExtremumReport::from).collect();

    let (lo, hi) = opts.eps_window;
    let inside = |e: f64| e >= lo && e <= hi;
    let eps_of = |i: usize, n: u32| -> Option<f64> {
        good[i].levels.as_ref()?.entries.iter().find(|e| e.n == n).map(|e| e.eps)
    };
    let mut density = Vec::with_capacity(good.len());
    for i in 0..good.len() {
        let mut rho = 0.0;
        for entry in &good[i].levels.as_ref().expect("filtered").entries {
            if !inside(entry.eps) {
                continue;
            }
            let (a, b) = match (i.checked_sub(1), (i + 1 < good.len()).then_some(i + 1)) {
                (Some(a), Some(b)) => (a, b),
                (None, Some(b)) => (i, b),
                (Some(a), None) => (a, i),
                (None, None) => (i, i),
            };
            let slope = match (eps_of(a, entry.n), eps_of(b, entry.n)) {
                (Some(ea), Some(eb)) if a != b => (eb - ea) / (good[b].k3 - good[a].k3),
                _ => 0.0,
            };
            rho += 1.0 / slope.abs().max(opts.slope_floor);
        }
        density.push((good[i].k3, rho));
    }
    let histogram = if hi > lo && hi.is_finite() && opts.bins > 0 {
        let width = (hi - lo) / opts.bins as f64;
        let mut bins: Vec<DensityBin> = (0..opts.bins)
            .map(|b| DensityBin {
                eps_lo: lo + b as f64 * width,
                eps_hi: lo + (b + 1) as f64 * width,
                count: 0,
            })
            .collect();
        for p in &good {
            for e in &p.levels.as_ref().expect("filtered").entries {
                if inside(e.eps) {
                    let b = (((e.eps - lo) / width) as usize).min(opts.bins - 1);
                    bins[b].count += 1;
                }
            }
        }
        if bins.iter().all(|b| b.count == 0) {
            Vec::new()
        } else {
            bins
        }
    } else {
        Vec::new()
    };
    let peak_k3 = density
        .iter()
        .filter(|d| d.1 > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|d| d.0);
    if histogram.is_empty() {
        log::warn!("no magnetic levels fall inside the eps window [{lo}, {hi}]");
    }
    Ok(DensityReport {
        points,
        density,
        histogram,
        peak_k3,
        area_extrema,
    })
}
