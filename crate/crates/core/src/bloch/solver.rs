use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};
use nalgebra::Vector3;

use super::lattice::{build_basis, LatticeSpec, PlaneWaveBasis};
use crate::error::{Error, Result};

/// Numerical settings of the plane-wave solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub cutoff: f64,
    /// Smallest admissible distance to the neighbouring bands.
    pub delta_gap: f64,
    pub tol_eig: f64,
    /// Largest admissible contribution of the truncated band tail.
    pub tol_deriv: f64,
    /// Number of top bands excluded from perturbation sums.
    pub band_margin: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cutoff: 3.0,
            delta_gap: 1e-6,
            tol_eig: 1e-9,
            tol_deriv: 1e-6,
            band_margin: 0,
        }
    }
}

/// One eigenpair of `H0(k)` with its gap margins.
#[derive(Debug, Clone, PartialEq)]
pub struct BandState {
    pub k: [f64; 3],
    /// 1-based band index.
    pub band: usize,
    pub energy: f64,
    pub coeffs: Vec<c64>,
    pub gap_below: f64,
    pub gap_above: f64,
}

/// Full spectrum of `H0(k)`, eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub k: [f64; 3],
    pub energies: Vec<f64>,
    pub vectors: Mat<c64>,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn column(&self, m: usize) -> Vec<c64> {
        (0..self.dim()).map(|i| self.vectors[(i, m)]).collect()
    }
}

/// Index of the entry of largest modulus; the first one wins ties.
pub fn dominant_index(v: &[c64]) -> usize {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, z) in v.iter().enumerate() {
        let a = z.norm();
        if a > best_abs {
            best = i;
            best_abs = a;
        }
    }
    best
}

/// Rotate `v` so that its dominant entry is real and positive.
pub fn fix_gauge(v: &mut [c64]) {
    let d = v[dominant_index(v)];
    let n = d.norm();
    if n > 0.0 {
        let phase = d.conj() / n;
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
}

pub fn assemble_h0(basis: &PlaneWaveBasis, lattice: &LatticeSpec, k: [f64; 3]) -> Result<Mat<c64>> {
    let entries = potential_entries(basis, lattice)?;
    Ok(assemble_with(basis, &entries, Vector3::from(k)))
}

fn assemble_with(basis: &PlaneWaveBasis, entries: &[(usize, usize, c64)], k: Vector3<f64>) -> Mat<c64> {
    let n = basis.len();
    let mut h = Mat::<c64>::zeros(n, n);
    for (i, g) in basis.vectors.iter().enumerate() {
        h[(i, i)] = c64::new((g + k).norm_squared(), 0.0);
    }
    for &(i, j, v) in entries {
        h[(i, j)] += v;
    }
    h
}

/// Nonzero potential entries `(row, col, V(G_row - G_col))`.
fn potential_entries(basis: &PlaneWaveBasis, lattice: &LatticeSpec) -> Result<Vec<(usize, usize, c64)>> {
    lattice.validate()?;
    for g in lattice.potential.keys() {
        if basis.index_of(g).is_none() {
            return Err(Error::InvalidInput(format!(
                "potential coefficient {g:?} lies outside the plane-wave cutoff {}",
                basis.cutoff
            )));
        }
    }
    let mut out = Vec::new();
    for (i, mi) in basis.millers.iter().enumerate() {
        for (j, mj) in basis.millers.iter().enumerate() {
            let d = [mi[0] - mj[0], mi[1] - mj[1], mi[2] - mj[2]];
            if let Some(v) = lattice.potential.get(&d) {
                if v.norm() != 0.0 {
                    out.push((i, j, c64::new(v.re, v.im)));
                }
            }
        }
    }
    Ok(out)
}

/// Dense plane-wave solver for `H0(k) = |G+k|^2 + V(G-G')`.
///
/// Immutable after construction and safe to share between threads.
#[derive(Debug, Clone)]
pub struct BlochSolver {
    lattice: LatticeSpec,
    basis: PlaneWaveBasis,
    entries: Vec<(usize, usize, c64)>,
    opts: SolverOptions,
}

impl BlochSolver {
    pub fn new(lattice: LatticeSpec, opts: SolverOptions) -> Result<Self> {
        for (name, v) in [
            ("delta_gap", opts.delta_gap),
            ("tol_eig", opts.tol_eig),
            ("tol_deriv", opts.tol_deriv),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        let basis = build_basis(&lattice, opts.cutoff)?;
        let entries = potential_entries(&basis, &lattice)?;
        if opts.band_margin >= basis.len() {
            return Err(Error::InvalidInput(format!(
                "band margin {} leaves no bands out of {}",
                opts.band_margin,
                basis.len()
            )));
        }
        Ok(BlochSolver {
            lattice,
            basis,
            entries,
            opts,
        })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn hamiltonian(&self, k: [f64; 3]) -> Mat<c64> {
        assemble_with(&self.basis, &self.entries, Vector3::from(k))
    }

    /// `H0` continued to complex `k`: the kinetic term is `(G+k)·(G+k)`
    /// without conjugation.
    pub fn hamiltonian_complex(&self, k: [c64; 3]) -> Mat<c64> {
        let n = self.basis.len();
        let mut h = Mat::<c64>::zeros(n, n);
        for (i, g) in self.basis.vectors.iter().enumerate() {
            h[(i, i)] = (0..3).map(|l| (k[l] + g[l]) * (k[l] + g[l])).sum();
        }
        for &(i, j, v) in &self.entries {
            h[(i, j)] += v;
        }
        h
    }

    pub fn eigensystem(&self, k: [f64; 3]) -> Result<Eigensystem> {
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite k-point {k:?}")));
        }
        let h = self.hamiltonian(k);
        let evd = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Accuracy(format!("eigensolver failed at k = {k:?}: {e:?}")))?;
        let s = evd.S().column_vector();
        let energies = (0..s.nrows()).map(|i| s[i].re).collect();
        Ok(Eigensystem {
            k,
            energies,
            vectors: evd.U().to_owned(),
        })
    }

    /// Band `band` (1-based) as a gauge-fixed [`BandState`].
    pub fn solve_band(&self, k: [f64; 3], band: usize) -> Result<BandState> {
        let eig = self.eigensystem(k)?;
        self.band_state(&eig, band)
    }

    pub fn band_state(&self, eig: &Eigensystem, band: usize) -> Result<BandState> {
        let n = eig.dim();
        if band == 0 || band > n {
            return Err(Error::InvalidInput(format!(
                "band index {band} outside 1..={n}"
            )));
        }
        let i = band - 1;
        let e = eig.energies[i];
        let gap_below = if i > 0 { e - eig.energies[i - 1] } else { f64::INFINITY };
        let gap_above = if i + 1 < n { eig.energies[i + 1] - e } else { f64::INFINITY };
        let gap = gap_below.min(gap_above);
        if !(gap > self.opts.delta_gap) {
            return Err(Error::Simplicity {
                k: eig.k,
                band,
                gap,
                delta_gap: self.opts.delta_gap,
            });
        }
        let mut coeffs = eig.column(i);
        fix_gauge(&mut coeffs);
        let res = self.eigen_residual(eig.k, e, &coeffs);
        if res > self.opts.tol_eig {
            return Err(Error::Accuracy(format!(
                "eigen-residual {res:.3e} exceeds tol_eig {:.3e}",
                self.opts.tol_eig
            )));
        }
        Ok(BandState {
            k: eig.k,
            band,
            energy: e,
            coeffs,
            gap_below,
            gap_above,
        })
    }

    /// `‖H0(k)c − Ec‖₂`.
    pub fn eigen_residual(&self, k: [f64; 3], e: f64, c: &[c64]) -> f64 {
        let k = Vector3::from(k);
        let mut r: Vec<c64> = self
            .basis
            .vectors
            .iter()
            .zip(c)
            .map(|(g, &z)| z * ((g + k).norm_squared() - e))
            .collect();
        for &(i, j, v) in &self.entries {
            r[i] += v * c[j];
        }
        r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Bands `0..window_end()` enter perturbation sums.
    pub fn window_end(&self) -> usize {
        self.basis.len() - self.opts.band_margin
    }

    /// Analytic continuation of band `band` to complex `k`.
    ///
    /// Newton iteration on the bordered system `[[H - λ, -x], [refᴴ, 0]]`
    /// started from the real eigenpair at `Re k`.
    pub fn continued_energy(&self, k: [c64; 3], band: usize) -> Result<c64> {
        let kr = [k[0].re, k[1].re, k[2].re];
        let state = self.solve_band(kr, band)?;
        if k.iter().all(|z| z.im == 0.0) {
            return Ok(c64::new(state.energy, 0.0));
        }
        let n = self.basis.len();
        let h = self.hamiltonian_complex(k);
        let r = &state.coeffs;
        let mut x = r.clone();
        let mut lambda = c64::new(state.energy, 0.0);
        let scale = 1.0 + state.energy.abs();
        for _ in 0..40 {
            let mut jac = Mat::<c64>::zeros(n + 1, n + 1);
            let mut rhs = Mat::<c64>::zeros(n + 1, 1);
            for i in 0..n {
                let mut acc = -lambda * x[i];
                for j in 0..n {
                    jac[(i, j)] = h[(i, j)];
                    acc += h[(i, j)] * x[j];
                }
                jac[(i, i)] -= lambda;
                jac[(i, n)] = -x[i];
                jac[(n, i)] = r[i].conj();
                rhs[(i, 0)] = -acc;
            }
            let proj: c64 = r.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
            rhs[(n, 0)] = -(proj - 1.0);
            let sol = jac.partial_piv_lu().solve(&rhs);
            for i in 0..n {
                x[i] += sol[(i, 0)];
            }
            let dl = sol[(n, 0)];
            lambda += dl;
            if !lambda.re.is_finite() || !lambda.im.is_finite() {
                break;
            }
            if dl.norm() <= 1e-15 * scale {
                return Ok(lambda);
            }
        }
        Err(Error::Accuracy(format!(
            "analytic continuation of band {band} did not converge at k = {k:?}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn free(cutoff: f64) -> BlochSolver {
        BlochSolver::new(
            LatticeSpec::cubic(),
            SolverOptions {
                cutoff,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn cosine(v: f64, cutoff: f64) -> BlochSolver {
        let lat = LatticeSpec::cubic().with_cosines(v, &[[1, 0, 0]]);
        BlochSolver::new(
            lat,
            SolverOptions {
                cutoff,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn free_hamiltonian_is_diagonal() {
        let s = free(2.0);
        let h = s.hamiltonian([0.1, 0.0, 0.0]);
        let i0 = s.basis().index_of(&[0, 0, 0]).unwrap();
        assert!((h[(i0, i0)].re - 0.01).abs() < 1e-16);
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                if i != j {
                    assert_eq!(h[(i, j)], c64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn cosine_couples_neighbours() {
        let s = cosine(0.3, 2.0);
        let h = s.hamiltonian([0.0; 3]);
        let a = s.basis().index_of(&[0, 1, 0]).unwrap();
        let b = s.basis().index_of(&[1, 1, 0]).unwrap();
        let c = s.basis().index_of(&[0, 0, 1]).unwrap();
        assert_eq!(h[(a, b)], c64::new(0.3, 0.0));
        assert_eq!(h[(b, a)], c64::new(0.3, 0.0));
        assert_eq!(h[(a, c)], c64::new(0.0, 0.0));
    }

    #[test]
    fn complex_potential_is_hermitian() {
        let lat = LatticeSpec::cubic()
            .with_fourier_pair([1, 0, 0], Complex64::new(0.1, 0.2))
            .with_fourier_pair([1, -1, 0], Complex64::new(-0.05, 0.07))
            .with_fourier_pair([0, 1, 1], Complex64::new(0.0, -0.3));
        let basis = build_basis(&lat, 2.0).unwrap();
        let h = assemble_h0(&basis, &lat, [0.13, -0.2, 0.31]).unwrap();
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
    }

    #[test]
    fn coefficient_outside_cutoff_is_rejected() {
        let lat = LatticeSpec::cubic().with_cosines(0.1, &[[2, 0, 0]]);
        let err = BlochSolver::new(
            lat,
            SolverOptions {
                cutoff: 1.5,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn free_lowest_band() {
        let st = free(2.0).solve_band([0.1, 0.2, 0.0], 1).unwrap();
        assert!((st.energy - 0.05).abs() < 1e-14);
        let norm: f64 = st.coeffs.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-14);
        let d = dominant_index(&st.coeffs);
        assert!(st.coeffs[d].im == 0.0 && st.coeffs[d].re > 0.0);
    }

    #[test]
    fn zone_boundary_degeneracy_is_reported() {
        let err = free(2.0).solve_band([0.5, 0.0, 0.0], 1).unwrap_err();
        assert!(matches!(err, Error::Simplicity { band: 1, .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn band_index_out_of_range() {
        let s = free(0.5);
        assert!(matches!(s.solve_band([0.1, 0.0, 0.0], 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn solve_band_is_bitwise_deterministic() {
        let s = cosine(0.2, 2.0);
        let a = s.solve_band([0.1, 0.05, -0.02], 1).unwrap();
        let b = s.solve_band([0.1, 0.05, -0.02], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lowest_band_under_cosine_potential() {
        // converged dense reference at cutoff 6
        let e = cosine(0.2, 4.0).solve_band([0.1, 0.0, 0.0], 1).unwrap().energy;
        assert!((e - REFERENCE_COSINE_E1).abs() < 1e-8, "{e}");
    }

    /// Lowest band of `0.2·2cos(x1)` at `k = (0.1, 0, 0)`, dense solve at cutoff 6.
    const REFERENCE_COSINE_E1: f64 = -0.067_675_064_846_610;

    #[test]
    fn energies_are_reciprocal_periodic() {
        let s = free(3.0);
        let k = [0.1, 0.2, -0.05];
        let e0 = s.solve_band(k, 1).unwrap().energy;
        let e1 = s.solve_band([k[0] + 1.0, k[1], k[2] - 1.0], 1).unwrap().energy;
        assert!((e0 - e1).abs() < 1e-12);
        let w = cosine(0.05, 4.0);
        let e0 = w.solve_band(k, 1).unwrap().energy;
        let e1 = w.solve_band([k[0] - 1.0, k[1], k[2]], 1).unwrap().energy;
        assert!((e0 - e1).abs() < 1e-9, "{}", (e0 - e1).abs());
    }

    #[test]
    fn continuation_matches_free_band() {
        let s = free(2.0);
        let k = [c64::new(0.2, 0.01), c64::new(0.1, -0.02), c64::new(0.0, 0.0)];
        let e = s.continued_energy(k, 1).unwrap();
        let want: c64 = k.iter().map(|z| z * z).sum();
        assert!((e - want).norm() < 1e-14, "{e} vs {want}");
    }

    #[test]
    fn continuation_is_analytic() {
        // Cauchy-Riemann along k1 for a weak potential band
        let s = cosine(0.05, 2.0);
        let base = [c64::new(0.12, 0.0), c64::new(0.07, 0.0), c64::new(0.0, 0.0)];
        let h = 1e-4;
        let f = |d: c64| {
            let mut k = base;
            k[0] += d;
            s.continued_energy(k, 1).unwrap()
        };
        let dre = (f(c64::new(h, 0.0)) - f(c64::new(-h, 0.0))) / (2.0 * h);
        let dim = (f(c64::new(0.0, h)) - f(c64::new(0.0, -h))) / c64::new(0.0, 2.0 * h);
        assert!((dre - dim).norm() < 1e-7, "{dre} {dim}");
    }
}
