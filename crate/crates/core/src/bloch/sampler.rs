//! Uniform access to a single band for the orbit and beam machinery.

use faer::c64;
use nalgebra::Matrix2;

use super::derivatives::{band_derivatives, connection, gradient, reduced_resolvent_apply};
use super::solver::BlochSolver;
use crate::error::{Error, Result};

/// Energy with its gradient and Hessian at one k-point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandJet {
    pub energy: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

/// [`BandJet`] plus the Berry connection in a fixed gauge and the
/// Wilkinson-Rammal integrand `Im⟨(H0 − E)∂₁Φ, ∂₂Φ⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandGeometry {
    pub jet: BandJet,
    pub connection: [f64; 3],
    pub wr: f64,
}

pub trait BandSampler: Sync {
    fn energy(&self, k: [f64; 3]) -> Result<f64>;

    fn gradient(&self, k: [f64; 3]) -> Result<(f64, [f64; 3])>;

    fn jet(&self, k: [f64; 3]) -> Result<BandJet>;

    /// Gauge-fixed cell-periodic Bloch vector.
    fn bloch_vector(&self, k: [f64; 3]) -> Result<Vec<c64>>;

    /// Geometry in the gauge where entry `anchor` of the Bloch vector is real
    /// and positive.
    fn geometry(&self, k: [f64; 3], anchor: usize) -> Result<BandGeometry>;

    /// Analytic continuation of the band to complex `k`.
    fn continued_energy(&self, k: [c64; 3]) -> Result<c64>;

    /// `‖m₁⊥‖` for the leading term `m₀ = f₀Φ(K(y))`, given `∇f₀`, `f₀` and
    /// `J = ∂K/∂y`. Zero for bands whose Bloch vector does not depend on `k`.
    fn transverse_correction(&self, _k: [f64; 3], _grad_f: [c64; 2], _f0: c64, _jac: &Matrix2<c64>) -> Result<f64> {
        Ok(0.0)
    }
}

/// Entry index maximising the smallest modulus over all vectors, so that
/// fixing it real keeps the gauge smooth along the whole set.
pub fn anchor_index(states: &[Vec<c64>]) -> usize {
    let n = states.first().map_or(0, Vec::len);
    let mut best = 0;
    let mut best_val = -1.0;
    for i in 0..n {
        let m = states.iter().map(|s| s[i].norm()).fold(f64::INFINITY, f64::min);
        if m > best_val {
            best = i;
            best_val = m;
        }
    }
    best
}

/// One band of a [`BlochSolver`].
#[derive(Debug, Clone)]
pub struct PlaneWaveBand {
    pub solver: BlochSolver,
    /// 1-based band index.
    pub band: usize,
}

impl PlaneWaveBand {
    pub fn new(solver: BlochSolver, band: usize) -> Result<Self> {
        if band == 0 || band > solver.window_end() {
            return Err(Error::InvalidInput(format!(
                "band index {band} outside 1..={}",
                solver.window_end()
            )));
        }
        Ok(PlaneWaveBand { solver, band })
    }
}

impl BandSampler for PlaneWaveBand {
    fn energy(&self, k: [f64; 3]) -> Result<f64> {
        Ok(self.solver.solve_band(k, self.band)?.energy)
    }

    fn gradient(&self, k: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let st = self.solver.solve_band(k, self.band)?;
        Ok((st.energy, gradient(&self.solver, k, &st.coeffs)))
    }

    fn jet(&self, k: [f64; 3]) -> Result<BandJet> {
        let eig = self.solver.eigensystem(k)?;
        self.solver.band_state(&eig, self.band)?;
        let d = band_derivatives(&self.solver, &eig, self.band)?;
        Ok(BandJet {
            energy: d.energy,
            gradient: d.gradient,
            hessian: d.hessian,
        })
    }

    fn bloch_vector(&self, k: [f64; 3]) -> Result<Vec<c64>> {
        Ok(self.solver.solve_band(k, self.band)?.coeffs)
    }

    fn geometry(&self, k: [f64; 3], anchor: usize) -> Result<BandGeometry> {
        let eig = self.solver.eigensystem(k)?;
        self.solver.band_state(&eig, self.band)?;
        let d = band_derivatives(&self.solver, &eig, self.band)?;
        let a = connection(&eig, &d, anchor)?;
        Ok(BandGeometry {
            jet: BandJet {
                energy: d.energy,
                gradient: d.gradient,
                hessian: d.hessian,
            },
            connection: a,
            wr: d.wr_integrand(),
        })
    }

    fn continued_energy(&self, k: [c64; 3]) -> Result<c64> {
        self.solver.continued_energy(k, self.band)
    }

    fn transverse_correction(&self, k: [f64; 3], grad_f: [c64; 2], f0: c64, jac: &Matrix2<c64>) -> Result<f64> {
        let eig = self.solver.eigensystem(k)?;
        self.solver.band_state(&eig, self.band)?;
        let phi = eig.column(self.band - 1);
        let vel = |l: usize, v: &[c64]| -> Vec<c64> {
            self.solver
                .basis()
                .vectors
                .iter()
                .zip(v)
                .map(|(g, z)| z * (2.0 * (g[l] + k[l])))
                .collect()
        };
        let v_phi = [vel(0, &phi), vel(1, &phi)];
        // ∂Φ/∂k_m orthogonal to Φ
        let x = [
            reduced_resolvent_apply(&self.solver, &eig, self.band, &v_phi[0])?,
            reduced_resolvent_apply(&self.solver, &eig, self.band, &v_phi[1])?,
        ];
        let mut rhs = vec![c64::new(0.0, 0.0); phi.len()];
        for l in 0..2 {
            for (r, z) in rhs.iter_mut().zip(&v_phi[l]) {
                *r += grad_f[l] * z;
            }
            for m in 0..2 {
                let vx = vel(l, &x[m]);
                for (r, z) in rhs.iter_mut().zip(&vx) {
                    *r -= f0 * jac[(m, l)] * z;
                }
            }
        }
        rhs.iter_mut().for_each(|z| *z *= c64::new(0.0, 1.0));
        let m1 = reduced_resolvent_apply(&self.solver, &eig, self.band, &rhs)?;
        Ok(m1.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }
}

/// Analytic band `E = Σ c_l k_l² + offset` with a constant Bloch vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicBand {
    pub coef: [f64; 3],
    pub offset: f64,
}

impl ParabolicBand {
    /// The free-electron band `|k|²`.
    pub fn free() -> Self {
        ParabolicBand {
            coef: [1.0; 3],
            offset: 0.0,
        }
    }

    fn jet_at(&self, k: [f64; 3]) -> BandJet {
        let mut hessian = [[0.0; 3]; 3];
        for l in 0..3 {
            hessian[l][l] = 2.0 * self.coef[l];
        }
        BandJet {
            energy: (0..3).map(|l| self.coef[l] * k[l] * k[l]).sum::<f64>() + self.offset,
            gradient: std::array::from_fn(|l| 2.0 * self.coef[l] * k[l]),
            hessian,
        }
    }
}

impl BandSampler for ParabolicBand {
    fn energy(&self, k: [f64; 3]) -> Result<f64> {
        Ok(self.jet_at(k).energy)
    }

    fn gradient(&self, k: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let j = self.jet_at(k);
        Ok((j.energy, j.gradient))
    }

    fn jet(&self, k: [f64; 3]) -> Result<BandJet> {
        Ok(self.jet_at(k))
    }

    fn bloch_vector(&self, _k: [f64; 3]) -> Result<Vec<c64>> {
        Ok(vec![c64::new(1.0, 0.0)])
    }

    fn geometry(&self, k: [f64; 3], _anchor: usize) -> Result<BandGeometry> {
        Ok(BandGeometry {
            jet: self.jet_at(k),
            connection: [0.0; 3],
            wr: 0.0,
        })
    }

    fn continued_energy(&self, k: [c64; 3]) -> Result<c64> {
        Ok((0..3).map(|l| k[l] * k[l] * self.coef[l]).sum::<c64>() + self.offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::lattice::LatticeSpec;
    use crate::bloch::solver::SolverOptions;

    #[test]
    fn free_plane_wave_band_matches_parabola() {
        let s = BlochSolver::new(LatticeSpec::cubic(), SolverOptions { cutoff: 1.5, ..Default::default() }).unwrap();
        let pw = PlaneWaveBand::new(s, 1).unwrap();
        let pb = ParabolicBand::free();
        let k = [0.1, -0.2, 0.05];
        let anchor = crate::bloch::solver::dominant_index(&pw.bloch_vector(k).unwrap());
        let a = pw.geometry(k, anchor).unwrap();
        let b = pb.geometry(k, 0).unwrap();
        assert!((a.jet.energy - b.jet.energy).abs() < 1e-15);
        for l in 0..3 {
            assert!((a.jet.gradient[l] - b.jet.gradient[l]).abs() < 1e-15);
        }
        assert_eq!(a.connection, [0.0; 3]);
        assert_eq!(a.wr, 0.0);
    }

    #[test]
    fn anchor_prefers_uniformly_large_entry() {
        let z = |r: f64| c64::new(r, 0.0);
        let states = vec![vec![z(0.9), z(0.3)], vec![z(0.1), z(0.4)]];
        assert_eq!(anchor_index(&states), 1);
    }
}
