use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Integer coordinates of a reciprocal vector in the basis `b1, b2, b3`.
pub type Miller = [i32; 3];

const HERMITIAN_TOL: f64 = 1e-12;

/// Direct lattice plus the Fourier coefficients of the periodic potential.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub a: [Vector3<f64>; 3],
    pub potential: BTreeMap<Miller, Complex64>,
}

impl LatticeSpec {
    pub fn new(a: [Vector3<f64>; 3], potential: BTreeMap<Miller, Complex64>) -> Result<Self> {
        let spec = LatticeSpec { a, potential };
        spec.validate()?;
        Ok(spec)
    }

    /// Simple cubic lattice with spacing `2π`, so that `b_i = e_i`.
    pub fn cubic() -> Self {
        LatticeSpec {
            a: [
                Vector3::new(2.0 * PI, 0.0, 0.0),
                Vector3::new(0.0, 2.0 * PI, 0.0),
                Vector3::new(0.0, 0.0, 2.0 * PI),
            ],
            potential: BTreeMap::new(),
        }
    }

    /// Adds `amp·e^{iG·x} + conj(amp)·e^{-iG·x}`.
    pub fn with_fourier_pair(mut self, g: Miller, amp: Complex64) -> Self {
        let neg = [-g[0], -g[1], -g[2]];
        if g == neg {
            *self.potential.entry(g).or_default() += Complex64::new(amp.re, 0.0);
        } else {
            *self.potential.entry(g).or_default() += amp;
            *self.potential.entry(neg).or_default() += amp.conj();
        }
        self
    }

    /// `v·(2 cos(b_i·x))` for each listed reciprocal direction.
    pub fn with_cosines(self, v: f64, dirs: &[Miller]) -> Self {
        dirs.iter()
            .fold(self, |s, &g| s.with_fourier_pair(g, Complex64::new(v, 0.0)))
    }

    pub fn basis_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.a[0].transpose(),
            self.a[1].transpose(),
            self.a[2].transpose(),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.basis_matrix();
        let scale = self.a.iter().map(|v| v.norm()).product::<f64>();
        let det = m.determinant();
        if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale {
            return Err(Error::Assumption(format!(
                "lattice basis is degenerate (det = {det:.3e})"
            )));
        }
        for (g, amp) in &self.potential {
            if !amp.re.is_finite() || !amp.im.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "potential coefficient {g:?} is not finite"
                )));
            }
            let neg = [-g[0], -g[1], -g[2]];
            match self.potential.get(&neg) {
                Some(partner) if (partner - amp.conj()).norm() <= HERMITIAN_TOL * (1.0 + amp.norm()) => {}
                Some(partner) => {
                    return Err(Error::InvalidInput(format!(
                        "potential coefficient {g:?} = {amp} has partner {neg:?} = {partner}, expected its conjugate"
                    )))
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "potential coefficient {g:?} has no Hermitian partner {neg:?}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Reciprocal basis with `a_i · b_j = 2π δ_ij`.
    pub fn reciprocal(&self) -> Result<[Vector3<f64>; 3]> {
        let inv = self.basis_matrix().try_inverse().ok_or_else(|| {
            Error::Assumption("lattice basis is degenerate".into())
        })?;
        let b = inv * (2.0 * PI);
        Ok([
            b.column(0).into_owned(),
            b.column(1).into_owned(),
            b.column(2).into_owned(),
        ])
    }
}

/// Plane waves `e^{iG·x}` with `|G| <= cutoff`, in lexicographic Miller order.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis {
    pub cutoff: f64,
    pub b: [Vector3<f64>; 3],
    pub millers: Vec<Miller>,
    pub vectors: Vec<Vector3<f64>>,
    index: HashMap<Miller, usize>,
}

impl PlaneWaveBasis {
    pub fn len(&self) -> usize {
        self.millers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.millers.is_empty()
    }

    pub fn index_of(&self, m: &Miller) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn cartesian(&self, m: &Miller) -> Vector3<f64> {
        self.b[0] * m[0] as f64 + self.b[1] * m[1] as f64 + self.b[2] * m[2] as f64
    }
}

pub fn build_basis(lattice: &LatticeSpec, cutoff: f64) -> Result<PlaneWaveBasis> {
    if !(cutoff >= 0.0) || !cutoff.is_finite() {
        return Err(Error::InvalidInput(format!(
            "plane-wave cutoff must be finite and >= 0, got {cutoff}"
        )));
    }
    lattice.validate()?;
    let b = lattice.reciprocal()?;
    // m_i = a_i·G / 2π, so |m_i| <= |a_i| cutoff / 2π
    let bound: Vec<i32> = lattice
        .a
        .iter()
        .map(|a| (a.norm() * cutoff / (2.0 * PI)).floor() as i32 + 1)
        .collect();
    let limit = cutoff * cutoff * (1.0 + 1e-12) + 1e-14;
    let mut millers = Vec::new();
    for i in -bound[0]..=bound[0] {
        for j in -bound[1]..=bound[1] {
            for k in -bound[2]..=bound[2] {
                let g = b[0] * i as f64 + b[1] * j as f64 + b[2] * k as f64;
                if g.norm_squared() <= limit {
                    millers.push([i, j, k]);
                }
            }
        }
    }
    millers.sort();
    let vectors = millers
        .iter()
        .map(|m| b[0] * m[0] as f64 + b[1] * m[1] as f64 + b[2] * m[2] as f64)
        .collect();
    let index = millers.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    Ok(PlaneWaveBasis {
        cutoff,
        b,
        millers,
        vectors,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_cutoff_one_and_a_half_has_19_vectors() {
        let basis = build_basis(&LatticeSpec::cubic(), 1.5).unwrap();
        assert_eq!(basis.len(), 19);
        for (i, b) in basis.b.iter().enumerate() {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            assert!((b - e).norm() < 1e-15);
        }
        assert!(basis.millers.windows(2).all(|w| w[0] < w[1]));
        for m in &basis.millers {
            assert!(basis.index_of(&[-m[0], -m[1], -m[2]]).is_some());
        }
    }

    #[test]
    fn sheared_lattice_reciprocal_basis() {
        let lat = LatticeSpec {
            a: [
                Vector3::new(2.0 * PI, 0.0, 0.0),
                Vector3::new(2.0 * PI, 2.0 * PI, 0.0),
                Vector3::new(0.0, 0.0, 2.0 * PI),
            ],
            potential: BTreeMap::new(),
        };
        let b = lat.reciprocal().unwrap();
        assert!((b[0] - Vector3::new(1.0, -1.0, 0.0)).norm() < 1e-14);
        assert!((b[1] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-14);
        assert!((b[2] - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 * PI } else { 0.0 };
                assert!((lat.a[i].dot(&b[j]) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_cutoff_keeps_only_origin() {
        let basis = build_basis(&LatticeSpec::cubic(), 0.0).unwrap();
        assert_eq!(basis.millers, vec![[0, 0, 0]]);
    }

    #[test]
    fn degenerate_lattice_is_rejected() {
        let mut lat = LatticeSpec::cubic();
        lat.a[2] = lat.a[0] + lat.a[1];
        assert!(matches!(build_basis(&lat, 1.0), Err(Error::Assumption(_))));
    }

    #[test]
    fn missing_partner_is_rejected() {
        let mut lat = LatticeSpec::cubic();
        lat.potential.insert([1, 0, 0], Complex64::new(0.1, 0.0));
        let err = lat.validate().unwrap_err();
        assert!(err.to_string().contains("[1, 0, 0]"));
    }
}
