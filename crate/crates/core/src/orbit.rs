//! Closed cyclotron orbits of the pseudo-momentum flow
//! `k̇ = μ(−∂E/∂k₂, ∂E/∂k₁)` at fixed `k₃`.

use rayon::prelude::*;

use crate::bloch::BandSampler;
use crate::error::{Error, Result};
use crate::ode::{DenseSegment, Dopri5, OdeOptions};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    pub mu: f64,
    /// Number of uniform samples per period.
    pub samples: usize,
    pub ode: OdeOptions,
    pub tol_level: f64,
    pub tol_close: f64,
    /// Smallest admissible `|∇E|` along the orbit.
    pub v_min: f64,
    pub s_max: f64,
    /// Search radius of the seed ray.
    pub seed_radius: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            mu: 1.0,
            samples: 256,
            ode: OdeOptions::default(),
            tol_level: 1e-8,
            tol_close: 1e-7,
            v_min: 1e-6,
            s_max: 1e3,
            seed_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSample {
    pub s: f64,
    pub k: [f64; 2],
    /// `ẏ = ∂E/∂(k₁, k₂)`.
    pub vy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub k3: f64,
    pub e0: f64,
    pub mu: f64,
    /// Uniform in `s` over one period, endpoint excluded.
    pub samples: Vec<OrbitSample>,
    pub period: f64,
    /// Enclosed area, always positive.
    pub area: f64,
    /// Sign of `∮ k₁ dk₂` in flow order.
    pub orientation: i8,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.period / self.samples.len() as f64
    }

    pub fn k3d(&self, j: usize) -> [f64; 3] {
        let k = self.samples[j].k;
        [k[0], k[1], self.k3]
    }

    /// `k̇ = μ(−E₂, E₁)` at sample `j`.
    pub fn kdot(&self, j: usize) -> [f64; 2] {
        let v = self.samples[j].vy;
        [-self.mu * v[1], self.mu * v[0]]
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// First crossing of the level `E0` along the ray `origin + t·direction`.
///
/// The ray is scanned outward up to `radius`; the bracket is refined by
/// bisection followed by Illinois false-position steps.
pub fn seed_point<S: BandSampler + ?Sized>(
    sampler: &S,
    k3: f64,
    e0: f64,
    origin: [f64; 2],
    direction: [f64; 2],
    radius: f64,
    tol_level: f64,
) -> Result<[f64; 2]> {
    let dn = norm2(direction);
    if !(dn > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidInput("seed ray needs a nonzero direction and radius".into()));
    }
    let dir = [direction[0] / dn, direction[1] / dn];
    let at = |t: f64| [origin[0] + t * dir[0], origin[1] + t * dir[1]];
    let f = |t: f64| -> Result<f64> {
        let p = at(t);
        Ok(sampler.energy([p[0], p[1], k3])? - e0)
    };
    const SCAN: usize = 64;
    let mut a = 0.0;
    let mut fa = f(a)?;
    if fa == 0.0 {
        return Ok(origin);
    }
    let mut bracket = None;
    for i in 1..=SCAN {
        let b = radius * i as f64 / SCAN as f64;
        let fb = f(b)?;
        if fa.signum() != fb.signum() {
            bracket = Some((a, fa, b, fb));
            break;
        }
        a = b;
        fa = fb;
    }
    let (mut a, mut fa, mut b, mut fb) = bracket.ok_or(Error::LevelSetNotFound { e0 })?;
    for _ in 0..20 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c)?;
        if fc.abs() <= 1e-3 * tol_level || (b - a).abs() <= 1e-15 * (1.0 + b.abs()) {
            return Ok(at(c));
        }
        if fc.signum() == fa.signum() {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let c = if fa.abs() < fb.abs() { a } else { b };
    if f(c)?.abs() <= tol_level {
        Ok(at(c))
    } else {
        Err(Error::Accuracy(format!("seed refinement stalled for E0 = {e0}")))
    }
}

fn velocity<S: BandSampler + ?Sized>(sampler: &S, k: [f64; 2], k3: f64, v_min: f64) -> Result<(f64, [f64; 2])> {
    let (e, g) = sampler.gradient([k[0], k[1], k3])?;
    let v = [g[0], g[1]];
    if !(norm2(v) >= v_min) {
        return Err(Error::Assumption(format!(
            "(H1) fails at k = ({:.6}, {:.6}, {k3:.6}): |dE/dk| = {:.3e} < {v_min:.3e}",
            k[0],
            k[1],
            norm2(v)
        )));
    }
    Ok((e, v))
}

fn eval_dense(segments: &[DenseSegment], t: f64) -> [f64; 2] {
    let i = segments.partition_point(|s| s.t1() < t).min(segments.len() - 1);
    let v = segments[i].eval(t);
    [v[0], v[1]]
}

/// Integrate the flow from `seed` until it returns to the section through
/// the seed orthogonal to the initial velocity, then resample uniformly.
pub fn trace_orbit<S: BandSampler + ?Sized>(
    sampler: &S,
    seed: [f64; 2],
    k3: f64,
    e0: f64,
    opts: &OrbitOptions,
) -> Result<Orbit> {
    if opts.samples < 16 {
        return Err(Error::InvalidInput(format!("need at least 16 orbit samples, got {}", opts.samples)));
    }
    if !(opts.mu > 0.0) {
        return Err(Error::InvalidInput(format!("mu must be positive, got {}", opts.mu)));
    }
    let mu = opts.mu;
    let (e_seed, v0) = velocity(sampler, seed, k3, opts.v_min)?;
    if (e_seed - e0).abs() > opts.tol_level {
        return Err(Error::InvalidInput(format!(
            "seed is off the level set by {:.3e}",
            (e_seed - e0).abs()
        )));
    }
    let kd0 = [-mu * v0[1], mu * v0[0]];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (_, v) = velocity(sampler, [y[0], y[1]], k3, opts.v_min)?;
        dy[0] = -mu * v[1];
        dy[1] = mu * v[0];
        Ok(())
    };
    let g = |k: [f64; 2]| (k[0] - seed[0]) * kd0[0] + (k[1] - seed[1]) * kd0[1];
    let mut ode = Dopri5::new(rhs, 0.0, &seed, opts.ode)?;
    let mut segments: Vec<DenseSegment> = Vec::new();
    let mut went_negative = false;
    let period = loop {
        if ode.t() >= opts.s_max {
            return Err(Error::NotClosed { s_max: opts.s_max });
        }
        let g_old = g([ode.y()[0], ode.y()[1]]);
        ode.step(opts.s_max, |_, _| true)?;
        let seg = ode.dense().expect("dense output after a step").clone();
        let g_new = g([ode.y()[0], ode.y()[1]]);
        segments.push(seg.clone());
        if g_new < 0.0 {
            went_negative = true;
        }
        if went_negative && g_old < 0.0 && g_new >= 0.0 {
            let (mut a, mut b) = (seg.t0, seg.t1());
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if g(eval_dense(&segments, m)) < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            break 0.5 * (a + b);
        }
    };
    let end = eval_dense(&segments, period);
    let gap = norm2([end[0] - seed[0], end[1] - seed[1]]);
    if gap > opts.tol_close {
        return Err(Error::Accuracy(format!(
            "orbit closes to {gap:.3e} > tol_close {:.3e}",
            opts.tol_close
        )));
    }
    let j_count = opts.samples;
    let mut samples = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let s = period * j as f64 / j_count as f64;
        let k = if j == 0 { seed } else { eval_dense(&segments, s) };
        let (e, vy) = velocity(sampler, k, k3, opts.v_min)?;
        if (e - e0).abs() > opts.tol_level {
            return Err(Error::Accuracy(format!(
                "energy drift {:.3e} at s = {s:.6} exceeds tol_level {:.3e}",
                (e - e0).abs(),
                opts.tol_level
            )));
        }
        samples.push(OrbitSample { s, k, vy });
    }
    check_simple(&samples)?;
    let signed = signed_area(&samples);
    Ok(Orbit {
        k3,
        e0,
        mu,
        samples,
        period,
        area: signed.abs(),
        orientation: if signed >= 0.0 { 1 } else { -1 },
    })
}

/// `∮ k₁ dk₂` in sample order.
pub fn signed_area(samples: &[OrbitSample]) -> f64 {
    let x: Vec<f64> = samples.iter().map(|s| s.k[0]).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.k[1]).collect();
    spectral::signed_area(&x, &y)
}

/// Enclosed area of the orbit, independent of orientation.
pub fn orbit_area(orbit: &Orbit) -> Result<f64> {
    if orbit.samples.len() < 3 {
        return Err(Error::InvalidInput("an orbit needs at least three samples".into()));
    }
    Ok(signed_area(&orbit.samples).abs())
}

fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let d1 = cross(r, s, p);
    let d2 = cross(r, s, q);
    let d3 = cross(p, q, r);
    let d4 = cross(p, q, s);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// (H2) at sample resolution: no two non-adjacent polygon edges intersect.
pub fn check_simple(samples: &[OrbitSample]) -> Result<()> {
    let n = samples.len();
    let p = |i: usize| samples[i % n].k;
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(p(i), p(i + 1), p(j), p(j + 1)) {
                return Err(Error::Assumption(format!(
                    "(H2) fails: orbit polygon self-intersects between samples {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub k3: f64,
    pub area: f64,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaPoint {
    pub k3: f64,
    pub result: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaProfile {
    pub points: Vec<AreaPoint>,
    pub extrema: Vec<Extremum>,
}

/// Where to start each orbit of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedRay {
    pub origin: [f64; 2],
    pub direction: [f64; 2],
}

impl Default for SeedRay {
    fn default() -> Self {
        SeedRay {
            origin: [0.0, 0.0],
            direction: [1.0, 0.0],
        }
    }
}

pub fn orbit_at<S: BandSampler + ?Sized>(
    sampler: &S,
    k3: f64,
    e0: f64,
    ray: &SeedRay,
    opts: &OrbitOptions,
) -> Result<Orbit> {
    let seed = seed_point(sampler, k3, e0, ray.origin, ray.direction, opts.seed_radius, opts.tol_level)?;
    trace_orbit(sampler, seed, k3, e0, opts)
}

/// Vertex of the parabola through three points.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d01 = (y[1] - y[0]) / (x[1] - x[0]);
    let d12 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d12 - d01) / (x[2] - x[0]);
    let b = d01 - a * (x[0] + x[1]);
    let c = y[0] - x[0] * (a * x[0] + b);
    if a == 0.0 {
        return (x[1], y[1]);
    }
    let xv = -b / (2.0 * a);
    (xv, c - b * b / (4.0 * a))
}

/// Interior extrema of a sampled profile, refined by a quadratic fit.
pub fn find_extrema(x: &[f64], y: &[f64]) -> Vec<Extremum> {
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        let dl = y[i] - y[i - 1];
        let dr = y[i + 1] - y[i];
        let kind = if dl > 0.0 && dr <= 0.0 {
            ExtremumKind::Max
        } else if dl < 0.0 && dr >= 0.0 {
            ExtremumKind::Min
        } else {
            continue;
        };
        let (xv, yv) = parabola_vertex([x[i - 1], x[i], x[i + 1]], [y[i - 1], y[i], y[i + 1]]);
        let xv = xv.clamp(x[i - 1], x[i + 1]);
        out.push(Extremum { k3: xv, area: yv, kind });
    }
    out
}

/// `S(k₃)` over a grid with its extremal points; failures are kept per point.
pub fn area_profile<S: BandSampler + ?Sized>(
    sampler: &S,
    e0: f64,
    k3_grid: &[f64],
    ray: &SeedRay,
    opts: &OrbitOptions,
) -> AreaProfile {
    let points: Vec<AreaPoint> = k3_grid
        .par_iter()
        .map(|&k3| AreaPoint {
            k3,
            result: orbit_at(sampler, k3, e0, ray, opts)
                .map(|o| o.area)
                .map_err(|e| e.to_string()),
        })
        .collect();
    let ok: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.result.as_ref().ok().map(|&s| (p.k3, s)))
        .collect();
    let x: Vec<f64> = ok.iter().map(|p| p.0).collect();
    let y: Vec<f64> = ok.iter().map(|p| p.1).collect();
    AreaProfile {
        extrema: find_extrema(&x, &y),
        points,
    }
}

/// Orbit lifted to Peierls coordinates `k₁ = p₁`, `k₂ = p₂ + μy₁`,
/// `y₂ = −p₁/μ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeierlsLift {
    pub p2_const: f64,
    pub c: f64,
    pub mu: f64,
    pub y: Vec<[f64; 2]>,
    pub p: Vec<[f64; 2]>,
    /// `ẏ = (E₁, E₂)`.
    pub ydot: Vec<[f64; 2]>,
    /// `ṗ = (−μE₂, 0)`.
    pub pdot: Vec<[f64; 2]>,
    pub period: f64,
}

pub fn peierls_lift(orbit: &Orbit, p2_const: f64, c: f64) -> PeierlsLift {
    let mu = orbit.mu;
    let mut lift = PeierlsLift {
        p2_const,
        c,
        mu,
        y: Vec::with_capacity(orbit.len()),
        p: Vec::with_capacity(orbit.len()),
        ydot: Vec::with_capacity(orbit.len()),
        pdot: Vec::with_capacity(orbit.len()),
        period: orbit.period,
    };
    for s in &orbit.samples {
        let p1 = s.k[0];
        lift.p.push([p1, p2_const]);
        lift.y.push([(s.k[1] - p2_const) / mu, -p1 / mu + c]);
        lift.ydot.push(s.vy);
        lift.pdot.push([-mu * s.vy[1], 0.0]);
    }
    lift
}
