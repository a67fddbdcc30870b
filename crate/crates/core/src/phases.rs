//! Berry and Wilkinson-Rammal phases, the action integral, and the
//! generalized Onsager quantization of magnetic levels.

use faer::c64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::bloch::sampler::anchor_index;
use crate::bloch::{BandGeometry, BandSampler};
use crate::error::{Error, Result};
use crate::orbit::{Orbit, PeierlsLift};
use crate::spectral;

/// Representative of `x mod 2π` in `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    // `+ 0.0` turns −0 into +0
    let y = x.rem_euclid(2.0 * PI) + 0.0;
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Band geometry at every orbit sample in one orbit-wide gauge.
#[derive(Debug, Clone)]
pub struct OrbitGeometry {
    /// Plane-wave index kept real and positive along the orbit.
    pub anchor: usize,
    pub states: Vec<Vec<c64>>,
    pub samples: Vec<BandGeometry>,
}

impl OrbitGeometry {
    /// Berry rate `a·k̇` at each sample.
    pub fn berry_rate(&self, orbit: &Orbit) -> Vec<f64> {
        (0..orbit.len())
            .map(|j| {
                let kd = orbit.kdot(j);
                let a = self.samples[j].connection;
                a[0] * kd[0] + a[1] * kd[1]
            })
            .collect()
    }

    /// Wilkinson-Rammal integrand at each sample.
    pub fn wr_rate(&self) -> Vec<f64> {
        self.samples.iter().map(|g| g.wr).collect()
    }
}

pub fn orbit_geometry<S: BandSampler + ?Sized>(orbit: &Orbit, sampler: &S) -> Result<OrbitGeometry> {
    let states = (0..orbit.len())
        .map(|j| sampler.bloch_vector(orbit.k3d(j)))
        .collect::<Result<Vec<_>>>()?;
    let anchor = anchor_index(&states);
    let samples = (0..orbit.len())
        .map(|j| sampler.geometry(orbit.k3d(j), anchor))
        .collect::<Result<Vec<_>>>()?;
    Ok(OrbitGeometry {
        anchor,
        states,
        samples,
    })
}

/// `−Im log Π⟨Φ_j, Φ_{j+1}⟩` over a closed loop, and the smallest overlap
/// modulus.
pub fn wilson_loop(states: &[Vec<c64>]) -> (f64, f64) {
    let n = states.len();
    let mut prod = c64::new(1.0, 0.0);
    let mut min_overlap = f64::INFINITY;
    for j in 0..n {
        let (a, b) = (&states[j], &states[(j + 1) % n]);
        let o: c64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        min_overlap = min_overlap.min(o.norm());
        prod *= o / o.norm();
    }
    (-prod.arg(), min_overlap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerryPhase {
    /// In `(−π, π]`.
    pub theta: f64,
    /// Loop points used by the accepted value.
    pub points: usize,
    /// Change at the last doubling.
    pub change: f64,
    pub min_overlap: f64,
}

const MAX_DOUBLINGS: usize = 4;

/// Berry phase from the discrete Wilson loop, doubling the loop resolution
/// until successive values agree to `tol_phase`.
pub fn berry_phase<S: BandSampler + ?Sized>(
    orbit: &Orbit,
    sampler: &S,
    states: Option<&[Vec<c64>]>,
    tol_phase: f64,
) -> Result<BerryPhase> {
    let mut s: Vec<f64> = orbit.samples.iter().map(|x| x.s).collect();
    let mut states: Vec<Vec<c64>> = match states {
        Some(st) => st.to_vec(),
        None => (0..orbit.len())
            .map(|j| sampler.bloch_vector(orbit.k3d(j)))
            .collect::<Result<_>>()?,
    };
    let k1: Vec<f64> = orbit.samples.iter().map(|x| x.k[0]).collect();
    let k2: Vec<f64> = orbit.samples.iter().map(|x| x.k[1]).collect();
    let (mut theta, mut min_overlap) = wilson_loop(&states);
    for _ in 0..MAX_DOUBLINGS {
        let mids: Vec<f64> = s.windows(2).map(|w| 0.5 * (w[0] + w[1])).chain([0.5 * (s[s.len() - 1] + orbit.period)]).collect();
        let mid_states = mids
            .iter()
            .map(|&t| {
                let k = [
                    spectral::interpolate(&k1, orbit.period, t),
                    spectral::interpolate(&k2, orbit.period, t),
                    orbit.k3,
                ];
                sampler.bloch_vector(k)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ns = Vec::with_capacity(2 * s.len());
        let mut nst = Vec::with_capacity(2 * s.len());
        for (i, (t, st)) in s.iter().zip(states).enumerate() {
            ns.push(*t);
            nst.push(st);
            ns.push(mids[i]);
            nst.push(mid_states[i].clone());
        }
        s = ns;
        states = nst;
        let (t_new, o_new) = wilson_loop(&states);
        let change = wrap_phase(t_new - theta).abs();
        theta = t_new;
        let coarse_ok = min_overlap >= 0.5;
        min_overlap = o_new;
        if coarse_ok && change <= tol_phase {
            return Ok(BerryPhase {
                theta: wrap_phase(theta),
                points: states.len(),
                change,
                min_overlap,
            });
        }
    }
    if min_overlap < 0.5 {
        return Err(Error::Accuracy(format!(
            "Bloch overlap {min_overlap:.3} < 0.5 along the orbit; band discontinuity suspected"
        )));
    }
    Err(Error::Accuracy(format!(
        "Berry phase not converged to {tol_phase:.1e} after {MAX_DOUBLINGS} doublings"
    )))
}

/// `Θ_rw = −∫₀ᵀ Im⟨(H0 − E)∂₁Φ, ∂₂Φ⟩ ds`.
pub fn wr_phase(orbit: &Orbit, geometry: &OrbitGeometry) -> f64 {
    -spectral::integrate(&geometry.wr_rate(), orbit.period)
}

/// `∮ p·dy` with `dy = ẏ ds` taken from the band velocity.
pub fn action_integral(lift: &PeierlsLift) -> f64 {
    let v: Vec<f64> = lift
        .p
        .iter()
        .zip(&lift.ydot)
        .map(|(p, yd)| p[0] * yd[0] + p[1] * yd[1])
        .collect();
    spectral::integrate(&v, lift.period)
}

/// Checks `∮ p·dy = ±S/μ` (sign from the orbit orientation).
pub fn check_action(orbit: &Orbit, action: f64, tol_action: f64) -> Result<()> {
    let want = orbit.orientation as f64 * orbit.area / orbit.mu;
    if (action - want).abs() > tol_action {
        return Err(Error::Consistency(format!(
            "action {action:.12} differs from S/mu = {want:.12} by more than {tol_action:.1e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseLedger {
    pub theta_b: f64,
    pub theta_rw: f64,
    pub n_m: i64,
    pub theta_m: f64,
    pub action: f64,
    pub area_over_mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelEntry {
    pub n: u32,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagneticLevelTable {
    pub k3: f64,
    pub gamma: f64,
    pub theta_b: f64,
    pub theta_rw: f64,
    pub n_m: i64,
    pub entries: Vec<LevelEntry>,
    /// Quantum numbers whose denominator was not positive.
    pub skipped: Vec<u32>,
}

/// `ε_n = S / (μ(2π(n+γ) + Θ_b + Θ_rw))` with `γ = ½` for odd `N_M`.
pub fn onsager_levels(
    k3: f64,
    area: f64,
    theta_b: f64,
    theta_rw: f64,
    n_m: i64,
    n_range: std::ops::RangeInclusive<u32>,
    mu: f64,
) -> Result<MagneticLevelTable> {
    if !(area > 0.0) || !(mu > 0.0) {
        return Err(Error::Domain(format!("need S > 0 and mu > 0, got S = {area}, mu = {mu}")));
    }
    let gamma = if n_m.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
    let mut table = MagneticLevelTable {
        k3,
        gamma,
        theta_b,
        theta_rw,
        n_m,
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for n in n_range {
        let denom = 2.0 * PI * (n as f64 + gamma) + theta_b + theta_rw;
        if !(denom > 0.0) {
            log::warn!("level n = {n} skipped: nonpositive denominator {denom:.3e}");
            table.skipped.push(n);
            continue;
        }
        table.entries.push(LevelEntry {
            n,
            eps: area / (mu * denom),
        });
    }
    Ok(table)
}

impl MagneticLevelTable {
    /// Largest `|S/(με) − 2π(n+γ) − Θ_b − Θ_rw|` over the entries.
    pub fn max_residual(&self, area: f64, mu: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                (area / (mu * e.eps) - 2.0 * PI * (e.n as f64 + self.gamma) - self.theta_b - self.theta_rw).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::ParabolicBand;
    use crate::orbit::{orbit_at, peierls_lift, OrbitOptions, SeedRay};

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_phase(0.0), 0.0);
    }

    #[test]
    fn landau_table() {
        let t = onsager_levels(0.0, 0.09 * PI, 0.0, 0.0, 1, 0..=2, 1.0).unwrap();
        assert_eq!(t.gamma, 0.5);
        let want = [0.09, 0.03, 0.018];
        for (e, w) in t.entries.iter().zip(want) {
            assert!((e.eps - w).abs() < 1e-15);
        }
        assert!(t.max_residual(0.09 * PI, 1.0) < 1e-12);
    }

    #[test]
    fn integer_levels_without_half() {
        let t = onsager_levels(0.0, 2.0 * PI, 0.0, 0.0, 2, 0..=4, 1.0).unwrap();
        assert_eq!(t.gamma, 0.0);
        assert_eq!(t.skipped, vec![0]);
        for e in &t.entries {
            assert!((e.eps - 1.0 / e.n as f64).abs() < 1e-15);
        }
        assert!(t.entries.windows(2).all(|w| w[0].eps > w[1].eps));
    }

    #[test]
    fn gauge_rephasing_leaves_wilson_loop() {
        let states: Vec<Vec<c64>> = (0..32)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / 32.0;
                vec![c64::new(t.cos(), 0.0), c64::from_polar(t.sin().abs(), 0.3 * t), c64::new(0.5, 0.0)]
            })
            .map(|v| {
                let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                v.into_iter().map(|z| z / n).collect()
            })
            .collect();
        let (a, _) = wilson_loop(&states);
        let rephased: Vec<Vec<c64>> = states
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let p = c64::from_polar(1.0, 1.7 * j as f64 + 0.4 * (j * j) as f64);
                v.iter().map(|z| z * p).collect()
            })
            .collect();
        let (b, _) = wilson_loop(&rephased);
        assert!(wrap_phase(a - b).abs() < 1e-12);
    }

    #[test]
    fn free_orbit_phases_and_action() {
        let band = ParabolicBand::free();
        let o = orbit_at(&band, 0.0, 0.09, &SeedRay::default(), &OrbitOptions::default()).unwrap();
        let g = orbit_geometry(&o, &band).unwrap();
        assert_eq!(wr_phase(&o, &g), 0.0);
        assert_eq!(berry_phase(&o, &band, None, 1e-10).unwrap().theta, 0.0);
        let a = action_integral(&peierls_lift(&o, 0.0, 0.0));
        assert!((a - 0.09 * PI).abs() < 1e-8);
        check_action(&o, a, 1e-7).unwrap();
        let b = action_integral(&peierls_lift(&o, 0.3, -1.1));
        assert!((a - b).abs() < 1e-10);
    }
}
