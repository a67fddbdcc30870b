//! k-derivatives of a simple band by sums over the other bands.

use faer::c64;

use super::solver::{BlochSolver, Eigensystem};
use crate::error::{Error, Result};

/// First and second derivatives of `E_n(k)` with the velocity matrix
/// elements they were built from.
#[derive(Debug, Clone)]
pub struct BandDerivatives {
    /// 1-based band index.
    pub band: usize,
    pub energy: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
    /// `⟨Φ_m, ∂H0/∂k_l Φ_n⟩` for `m` in the band window.
    pub velocity: Vec<[c64; 3]>,
    /// Largest contribution of the top tenth of the window to any sum.
    pub tail: f64,
    energies: Vec<f64>,
}

impl BandDerivatives {
    pub fn window(&self) -> usize {
        self.velocity.len()
    }

    /// Integrand `Im⟨(H0 − E)∂₁Φ, ∂₂Φ⟩` as a band sum.
    pub fn wr_integrand(&self) -> f64 {
        let n = self.band - 1;
        let en = self.energy;
        self.velocity
            .iter()
            .zip(&self.energies)
            .enumerate()
            .filter(|&(m, _)| m != n)
            .map(|(_, (v, &em))| (v[0].conj() * v[1]).im / (em - en))
            .sum()
    }

    fn tail_start(&self) -> usize {
        let w = self.window();
        w - (w / 10).max(1)
    }

    fn wr_tail(&self) -> f64 {
        let n = self.band - 1;
        let en = self.energy;
        (self.tail_start()..self.window())
            .filter(|&m| m != n)
            .map(|m| (self.velocity[m][0].conj() * self.velocity[m][1]).im / (self.energies[m] - en))
            .sum::<f64>()
            .abs()
    }
}

fn check_window(solver: &BlochSolver, eig: &Eigensystem, band: usize) -> Result<usize> {
    let w = solver.window_end().min(eig.dim());
    if band == 0 || band > w {
        return Err(Error::Accuracy(format!(
            "band {band} is outside the perturbation window of {w} bands"
        )));
    }
    Ok(w)
}

/// Hellmann-Feynman gradient `Σ_G 2(G+k)|c_G|²`.
pub fn gradient(solver: &BlochSolver, k: [f64; 3], coeffs: &[c64]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (gv, c) in solver.basis().vectors.iter().zip(coeffs) {
        let w = c.norm_sqr();
        for l in 0..3 {
            g[l] += 2.0 * (gv[l] + k[l]) * w;
        }
    }
    g
}

pub fn band_derivatives(solver: &BlochSolver, eig: &Eigensystem, band: usize) -> Result<BandDerivatives> {
    let w = check_window(solver, eig, band)?;
    let n = band - 1;
    let dim = eig.dim();
    let k = eig.k;
    let vecs = &eig.vectors;
    let mut weighted = vec![[c64::new(0.0, 0.0); 3]; dim];
    for (i, g) in solver.basis().vectors.iter().enumerate() {
        let c = vecs[(i, n)];
        for l in 0..3 {
            weighted[i][l] = c * (2.0 * (g[l] + k[l]));
        }
    }
    let mut velocity = vec![[c64::new(0.0, 0.0); 3]; w];
    for (m, vm) in velocity.iter_mut().enumerate() {
        for i in 0..dim {
            let u = vecs[(i, m)].conj();
            for l in 0..3 {
                vm[l] += u * weighted[i][l];
            }
        }
    }
    let en = eig.energies[n];
    let gradient = [velocity[n][0].re, velocity[n][1].re, velocity[n][2].re];
    let mut d = BandDerivatives {
        band,
        energy: en,
        gradient,
        hessian: [[0.0; 3]; 3],
        velocity,
        tail: 0.0,
        energies: eig.energies[..w].to_vec(),
    };
    let tail_start = d.tail_start();
    let mut sum = [[0.0; 3]; 3];
    let mut tail = [[0.0; 3]; 3];
    for m in (0..w).filter(|&m| m != n) {
        let v = &d.velocity[m];
        let de = en - eig.energies[m];
        for i in 0..3 {
            for j in i..3 {
                let t = 2.0 * (v[i].conj() * v[j]).re / de;
                sum[i][j] += t;
                if m >= tail_start {
                    tail[i][j] += t;
                }
            }
        }
    }
    let mut t_max: f64 = 0.0;
    for i in 0..3 {
        for j in i..3 {
            let h = if i == j { 2.0 } else { 0.0 } + sum[i][j];
            d.hessian[i][j] = h;
            d.hessian[j][i] = h;
            t_max = t_max.max(tail[i][j].abs());
        }
    }
    d.tail = t_max.max(d.wr_tail());
    if d.tail > solver.options().tol_deriv {
        return Err(Error::Accuracy(format!(
            "band-sum tail {:.3e} exceeds tol_deriv {:.3e}; raise the cutoff or lower the band margin",
            d.tail,
            solver.options().tol_deriv
        )));
    }
    Ok(d)
}

/// Berry connection `i⟨Φ, ∂_k Φ⟩` in the gauge where entry `anchor` of `Φ`
/// is real and positive.
pub fn connection(eig: &Eigensystem, d: &BandDerivatives, anchor: usize) -> Result<[f64; 3]> {
    let n = d.band - 1;
    let ca = eig.vectors[(anchor, n)];
    if ca.norm() < 1e-8 {
        return Err(Error::Accuracy(format!(
            "gauge anchor {anchor} has vanishing weight {:.3e}",
            ca.norm()
        )));
    }
    let mut a = [0.0; 3];
    for l in 0..3 {
        let mut x = c64::new(0.0, 0.0);
        for (m, v) in d.velocity.iter().enumerate() {
            if m != n {
                x += eig.vectors[(anchor, m)] * v[l] / (d.energy - eig.energies[m]);
            }
        }
        a[l] = (x / ca).im;
    }
    Ok(a)
}

/// `Σ_{m≠n} Φ_m ⟨Φ_m, rhs⟩ / (E_m − E_n)` over the band window.
pub fn reduced_resolvent_apply(
    solver: &BlochSolver,
    eig: &Eigensystem,
    band: usize,
    rhs: &[c64],
) -> Result<Vec<c64>> {
    let w = check_window(solver, eig, band)?;
    let dim = eig.dim();
    if rhs.len() != dim {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {}, basis has {dim}",
            rhs.len()
        )));
    }
    let n = band - 1;
    let en = eig.energies[n];
    let project = |m: usize| -> c64 { (0..dim).map(|i| eig.vectors[(i, m)].conj() * rhs[i]).sum() };
    let mut out = vec![c64::new(0.0, 0.0); dim];
    for m in (0..w).filter(|&m| m != n) {
        let coef = project(m) / (eig.energies[m] - en);
        for i in 0..dim {
            out[i] += eig.vectors[(i, m)] * coef;
        }
    }
    let tail: f64 = (w..dim)
        .map(|m| project(m).norm_sqr() / (eig.energies[m] - en).powi(2))
        .sum::<f64>()
        .sqrt();
    if tail > solver.options().tol_deriv {
        return Err(Error::Accuracy(format!(
            "resolvent tail {tail:.3e} exceeds tol_deriv {:.3e}",
            solver.options().tol_deriv
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::lattice::LatticeSpec;
    use crate::bloch::solver::SolverOptions;

    fn weak(cutoff: f64) -> BlochSolver {
        let lat = LatticeSpec::cubic().with_cosines(0.05, &[[1, 0, 0], [0, 1, 0]]);
        BlochSolver::new(
            lat,
            SolverOptions {
                cutoff,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn energy(s: &BlochSolver, k: [f64; 3]) -> f64 {
        s.solve_band(k, 1).unwrap().energy
    }

    #[test]
    fn free_band_derivatives_are_exact() {
        let s = BlochSolver::new(LatticeSpec::cubic(), SolverOptions { cutoff: 2.0, ..Default::default() }).unwrap();
        let eig = s.eigensystem([0.1, 0.2, 0.0]).unwrap();
        let d = band_derivatives(&s, &eig, 1).unwrap();
        let want = [0.2, 0.4, 0.0];
        for l in 0..3 {
            assert!((d.gradient[l] - want[l]).abs() < 1e-14);
            for m in 0..3 {
                let h = if l == m { 2.0 } else { 0.0 };
                assert_eq!(d.hessian[l][m], h);
            }
        }
        assert_eq!(d.wr_integrand(), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let s = weak(3.0);
        let k = [0.21, -0.13, 0.07];
        let eig = s.eigensystem(k).unwrap();
        let d = band_derivatives(&s, &eig, 1).unwrap();
        let h = 1e-4;
        let shift = |l: usize, a: f64, m: usize, b: f64| {
            let mut q = k;
            q[l] += a;
            q[m] += b;
            energy(&s, q)
        };
        let e0 = energy(&s, k);
        for l in 0..3 {
            let fd = (shift(l, h, l, 0.0) - shift(l, -h, l, 0.0)) / (2.0 * h);
            assert!((fd - d.gradient[l]).abs() < 1e-6, "grad {l}: {fd} vs {}", d.gradient[l]);
            for m in 0..3 {
                let fd2 = if l == m {
                    (shift(l, h, l, 0.0) - 2.0 * e0 + shift(l, -h, l, 0.0)) / (h * h)
                } else {
                    (shift(l, h, m, h) - shift(l, h, m, -h) - shift(l, -h, m, h) + shift(l, -h, m, -h))
                        / (4.0 * h * h)
                };
                assert!((fd2 - d.hessian[l][m]).abs() < 1e-4, "hess {l}{m}: {fd2} vs {}", d.hessian[l][m]);
            }
        }
    }

    #[test]
    fn resolvent_identities() {
        let s = weak(2.0);
        let eig = s.eigensystem([0.1, 0.05, 0.0]).unwrap();
        let dim = eig.dim();
        let phi = eig.column(0);
        let out = reduced_resolvent_apply(&s, &eig, 1, &phi).unwrap();
        assert!(out.iter().all(|z| z.norm() < 1e-13));

        let phi3 = eig.column(3);
        let out = reduced_resolvent_apply(&s, &eig, 1, &phi3).unwrap();
        let de = eig.energies[3] - eig.energies[0];
        for i in 0..dim {
            assert!((out[i] - phi3[i] / de).norm() < 1e-12);
        }

        let rhs: Vec<c64> = (0..dim)
            .map(|i| c64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let out = reduced_resolvent_apply(&s, &eig, 1, &rhs).unwrap();
        let h = s.hamiltonian(eig.k);
        let overlap: c64 = phi.iter().zip(&rhs).map(|(a, b)| a.conj() * b).sum();
        let ortho: c64 = phi.iter().zip(&out).map(|(a, b)| a.conj() * b).sum();
        assert!(ortho.norm() < 1e-12);
        let mut err = 0.0;
        for i in 0..dim {
            let mut hv = -out[i] * eig.energies[0];
            for j in 0..dim {
                hv += h[(i, j)] * out[j];
            }
            err += (hv - (rhs[i] - phi[i] * overlap)).norm_sqr();
        }
        assert!(err.sqrt() < 1e-10, "{}", err.sqrt());
    }

    #[test]
    fn connection_is_anchor_gauge_derivative() {
        // complex potential breaks time reversal so the connection is nonzero
        let lat = LatticeSpec::cubic()
            .with_fourier_pair([1, 0, 0], num_complex::Complex64::new(0.03, 0.04))
            .with_fourier_pair([0, 1, 0], num_complex::Complex64::new(0.05, 0.0))
            .with_fourier_pair([1, 1, 0], num_complex::Complex64::new(0.0, 0.02));
        let s = BlochSolver::new(lat, SolverOptions { cutoff: 2.0, ..Default::default() }).unwrap();
        let k = [0.15, 0.1, 0.0];
        let eig = s.eigensystem(k).unwrap();
        let d = band_derivatives(&s, &eig, 1).unwrap();
        let anchor = crate::bloch::solver::dominant_index(&eig.column(0));
        let a = connection(&eig, &d, anchor).unwrap();
        let gauge = |q: [f64; 3]| {
            let mut v = s.eigensystem(q).unwrap().column(0);
            let p = v[anchor].conj() / v[anchor].norm();
            v.iter_mut().for_each(|z| *z *= p);
            v
        };
        let h = 1e-5;
        let phi = gauge(k);
        for l in 0..2 {
            let mut kp = k;
            let mut km = k;
            kp[l] += h;
            km[l] -= h;
            let (p, m) = (gauge(kp), gauge(km));
            let dot: c64 = phi
                .iter()
                .zip(p.iter().zip(&m))
                .map(|(f, (a, b))| f.conj() * (a - b) / (2.0 * h))
                .sum();
            let fd = (c64::new(0.0, 1.0) * dot).re;
            assert!((fd - a[l]).abs() < 1e-7, "{l}: {fd} vs {}", a[l]);
        }
    }
}
