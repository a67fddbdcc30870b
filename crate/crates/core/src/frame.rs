//! Gaussian-beam frame along an orbit: Hessian blocks of the Peierls
//! Hamiltonian, the linear system for `(Y, N)`, `M = N Y⁻¹`, and the winding
//! of `det Y`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::bloch::BandSampler;
use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeOptions};
use crate::orbit::{Orbit, PeierlsLift};
use crate::spectral;

pub type Mat2 = Matrix2<f64>;
pub type CMat2 = Matrix2<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn complexify(m: &Mat2) -> CMat2 {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Blocks `A = Ĥ_yy`, `B = Ĥ_py`, `C = Ĥ_pp` of
/// `Ĥ(y, p) = E(p₁, p₂ + μy₁, k₃)` at each orbit sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub a: Vec<Mat2>,
    pub b: Vec<Mat2>,
    pub c: Vec<Mat2>,
    pub period: f64,
}

impl HessianBlocks {
    /// Blocks from the `(k₁, k₂)` Hessians of `E` by the chain rule.
    pub fn from_hessians(hess: &[[[f64; 3]; 3]], mu: f64, period: f64) -> Self {
        let mut out = HessianBlocks {
            a: Vec::with_capacity(hess.len()),
            b: Vec::with_capacity(hess.len()),
            c: Vec::with_capacity(hess.len()),
            period,
        };
        for h in hess {
            let (e11, e12, e22) = (h[0][0], 0.5 * (h[0][1] + h[1][0]), h[1][1]);
            out.a.push(Mat2::new(mu * mu * e22, 0.0, 0.0, 0.0));
            out.b.push(Mat2::new(mu * e12, 0.0, mu * e22, 0.0));
            out.c.push(Mat2::new(e11, e12, e12, e22));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Periodic interpolation of the blocks at `s`.
    pub fn at(&self, s: f64) -> (Mat2, Mat2, Mat2) {
        (
            spectral::interpolate(&self.a, self.period, s),
            spectral::interpolate(&self.b, self.period, s),
            spectral::interpolate(&self.c, self.period, s),
        )
    }
}

pub fn hessian_blocks<S: BandSampler + ?Sized>(orbit: &Orbit, sampler: &S) -> Result<HessianBlocks> {
    let hess = (0..orbit.len())
        .map(|j| sampler.jet(orbit.k3d(j)).map(|jet| jet.hessian))
        .collect::<Result<Vec<_>>>()?;
    Ok(HessianBlocks::from_hessians(&hess, orbit.mu, orbit.period))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialFrame {
    pub y0: CMat2,
    pub n0: CMat2,
    pub m0: CMat2,
}

/// Unit normal obtained by turning `v` a quarter turn counterclockwise.
pub fn unit_normal(v: [f64; 2]) -> Vector2<f64> {
    Vector2::new(-v[1], v[0]) / v[0].hypot(v[1])
}

/// `M₀ = M_r + i n̂n̂ᵀ` with `M_r ẏ = ṗ` real symmetric.
pub fn init_frame(lift: &PeierlsLift) -> Result<InitialFrame> {
    let yd = Vector2::from(lift.ydot[0]);
    let pd = Vector2::from(lift.pdot[0]);
    let v2 = yd.norm_squared();
    if !(v2 > 0.0) {
        return Err(Error::Assumption("orbit velocity vanishes at s = 0".into()));
    }
    let mr = (pd * yd.transpose() + yd * pd.transpose()) / v2 - yd * yd.transpose() * (yd.dot(&pd) / (v2 * v2));
    let n = unit_normal(lift.ydot[0]);
    let m0 = complexify(&mr) + complexify(&(n * n.transpose())) * I;
    let asym = (m0 - m0.transpose()).norm();
    let res = (m0 * complexify(&Mat2::from_columns(&[yd, Vector2::zeros()]))).column(0).into_owned()
        - pd.map(|x| Complex64::new(x, 0.0));
    let pos = (n.transpose() * m0.map(|z| z.im) * n)[(0, 0)];
    let scale = 1.0 + pd.norm();
    if asym > 1e-14 || res.norm() > 1e-12 * scale || !(pos > 0.0) {
        return Err(Error::Consistency(format!(
            "initial frame fails its hypotheses: asymmetry {asym:.3e}, residual {:.3e}, transverse Im {pos:.3e}",
            res.norm()
        )));
    }
    Ok(InitialFrame {
        y0: CMat2::identity(),
        n0: m0,
        m0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOptions {
    pub ode: OdeOptions,
    pub tol_frame: f64,
    pub d_min: f64,
    pub p_min: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions {
            ode: OdeOptions::default(),
            tol_frame: 1e-7,
            d_min: 1e-8,
            p_min: 1e-6,
        }
    }
}

/// Worst-case deviations of the frame invariants over one period.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FrameDiagnostics {
    pub sigma12_drift: f64,
    pub sigma2bar_drift: f64,
    pub max_asymmetry: f64,
    pub max_tangent_residual: f64,
    pub min_transverse_im: f64,
    pub periodicity: f64,
    pub min_abs_det: f64,
}

/// Frame at `s_j = jT/J` for `j = 0..=J`; the last entry is `s = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamFrame {
    pub s: Vec<f64>,
    pub y: Vec<CMat2>,
    pub n: Vec<CMat2>,
    pub m: Vec<CMat2>,
    pub det_y: Vec<Complex64>,
    /// Continuous branch of `arg det Y`, starting at `arg det Y(0)`.
    pub arg_det_y: Vec<f64>,
    pub sigma12: Complex64,
    pub sigma2bar: Complex64,
    pub maslov: i64,
    pub period: f64,
    pub diagnostics: FrameDiagnostics,
}

impl BeamFrame {
    /// Number of samples per period (the endpoint is stored once more).
    pub fn samples(&self) -> usize {
        self.s.len() - 1
    }

    /// `M` at `s` by periodic interpolation.
    pub fn m_at(&self, s: f64) -> CMat2 {
        let j = self.samples();
        spectral::lagrange_weights(j, self.period, s)
            .into_iter()
            .fold(CMat2::zeros(), |acc, (i, w)| acc + self.m[i] * Complex64::new(w, 0.0))
    }
}

/// `σ((y,η),(w,ζ)) = y·ζ − w·η`.
pub fn sigma(y: &[Complex64; 2], eta: &[Complex64; 2], w: &[Complex64; 2], zeta: &[Complex64; 2]) -> Complex64 {
    y[0] * zeta[0] + y[1] * zeta[1] - w[0] * eta[0] - w[1] * eta[1]
}

fn column(m: &CMat2, c: usize) -> [Complex64; 2] {
    [m[(0, c)], m[(1, c)]]
}

fn conj2(v: [Complex64; 2]) -> [Complex64; 2] {
    [v[0].conj(), v[1].conj()]
}

/// `(σ(G₁, G₂), σ(G₂, Ḡ₂))` for the columns `G_i = (Y e_i, N e_i)`.
pub fn symplectic_invariants(y: &CMat2, n: &CMat2) -> (Complex64, Complex64) {
    let (y1, y2, n1, n2) = (column(y, 0), column(y, 1), column(n, 0), column(n, 1));
    (sigma(&y1, &n1, &y2, &n2), sigma(&y2, &n2, &conj2(y2), &conj2(n2)))
}

fn pack(y: &CMat2, n: &CMat2, out: &mut [f64]) {
    for (idx, z) in y.iter().chain(n.iter()).enumerate() {
        out[2 * idx] = z.re;
        out[2 * idx + 1] = z.im;
    }
}

fn unpack(v: &[f64]) -> (CMat2, CMat2) {
    let z = |i: usize| Complex64::new(v[2 * i], v[2 * i + 1]);
    (
        CMat2::from_iterator((0..4).map(z)),
        CMat2::from_iterator((4..8).map(z)),
    )
}

fn det(v: &[f64]) -> Complex64 {
    unpack(v).0.determinant()
}

/// Integrate `Ẏ = BY + CN`, `Ṅ = −AY − BᵀN` over one period.
///
/// Steps whose change of `arg det Y` reaches `π/2` are rejected, so the
/// running phase is unwrapped without ambiguity.
pub fn propagate_frame(
    blocks: &HessianBlocks,
    init: &InitialFrame,
    lift: &PeierlsLift,
    opts: &FrameOptions,
) -> Result<BeamFrame> {
    let period = blocks.period;
    let j_count = blocks.len();
    if lift.ydot.len() != j_count {
        return Err(Error::InvalidInput("blocks and lift have different sample counts".into()));
    }
    let rhs = |s: f64, v: &[f64], dv: &mut [f64]| -> Result<()> {
        let (a, b, c) = blocks.at(s);
        let (y, n) = unpack(v);
        let (a, b, c) = (complexify(&a), complexify(&b), complexify(&c));
        let dy = b * y + c * n;
        let dn = -(a * y) - b.transpose() * n;
        pack(&dy, &dn, dv);
        Ok(())
    };
    let mut v0 = [0.0; 16];
    pack(&init.y0, &init.n0, &mut v0);
    let mut ode = Dopri5::new(rhs, 0.0, &v0, opts.ode)?;

    let mut frame = BeamFrame {
        s: Vec::with_capacity(j_count + 1),
        y: Vec::with_capacity(j_count + 1),
        n: Vec::with_capacity(j_count + 1),
        m: Vec::with_capacity(j_count + 1),
        det_y: Vec::with_capacity(j_count + 1),
        arg_det_y: Vec::with_capacity(j_count + 1),
        sigma12: Complex64::new(0.0, 0.0),
        sigma2bar: Complex64::new(0.0, 0.0),
        maslov: 0,
        period,
        diagnostics: FrameDiagnostics {
            sigma12_drift: 0.0,
            sigma2bar_drift: 0.0,
            max_asymmetry: 0.0,
            max_tangent_residual: 0.0,
            min_transverse_im: f64::INFINITY,
            periodicity: 0.0,
            min_abs_det: f64::INFINITY,
        },
    };
    let mut arg = det(&v0).arg();
    let accept = |old: &[f64], new: &[f64]| (det(new) / det(old)).arg().abs() < 0.5 * PI;
    for j in 0..=j_count {
        let s_j = period * j as f64 / j_count as f64;
        while ode.t() < s_j {
            let before = det(ode.y());
            ode.step(s_j, accept)?;
            let after = det(ode.y());
            if after.norm() < opts.d_min {
                return Err(Error::FrameDegeneracy {
                    s: ode.t(),
                    det: after.norm(),
                    d_min: opts.d_min,
                });
            }
            arg += (after / before).arg();
        }
        let (y, n) = unpack(ode.y());
        let d = y.determinant();
        if d.norm() < opts.d_min {
            return Err(Error::FrameDegeneracy {
                s: s_j,
                det: d.norm(),
                d_min: opts.d_min,
            });
        }
        let m = n * y.try_inverse().expect("nonzero determinant");
        frame.s.push(s_j);
        frame.y.push(y);
        frame.n.push(n);
        frame.m.push(m);
        frame.det_y.push(d);
        frame.arg_det_y.push(arg);
    }
    frame.s[j_count] = period;
    check_frame(&mut frame, lift, opts)?;
    frame.maslov = maslov_index(&frame)?.0;
    Ok(frame)
}

fn check_frame(frame: &mut BeamFrame, lift: &PeierlsLift, opts: &FrameOptions) -> Result<()> {
    let j_count = frame.samples();
    let (s12, s2b) = symplectic_invariants(&frame.y[0], &frame.n[0]);
    frame.sigma12 = s12;
    frame.sigma2bar = s2b;
    let dg = &mut frame.diagnostics;
    for j in 0..=j_count {
        let (y, n, m) = (&frame.y[j], &frame.n[j], &frame.m[j]);
        let (a, b) = symplectic_invariants(y, n);
        dg.sigma12_drift = dg.sigma12_drift.max((a - s12).norm());
        dg.sigma2bar_drift = dg.sigma2bar_drift.max((b - s2b).norm());
        dg.max_asymmetry = dg.max_asymmetry.max((m - m.transpose()).norm());
        dg.min_abs_det = dg.min_abs_det.min(frame.det_y[j].norm());
        let jj = j % j_count;
        let yd = lift.ydot[jj];
        let pd = lift.pdot[jj];
        let r0 = m[(0, 0)] * yd[0] + m[(0, 1)] * yd[1] - pd[0];
        let r1 = m[(1, 0)] * yd[0] + m[(1, 1)] * yd[1] - pd[1];
        dg.max_tangent_residual = dg.max_tangent_residual.max(r0.norm().hypot(r1.norm()));
        let nh = unit_normal(yd);
        let im = m.map(|z| z.im);
        let t = (nh.transpose() * im * nh)[(0, 0)];
        dg.min_transverse_im = dg.min_transverse_im.min(t);
    }
    dg.periodicity = (frame.m[j_count] - frame.m[0]).norm();
    let dg = *dg;
    let tol = opts.tol_frame;
    let fails: Vec<String> = [
        ("sigma(G1,G2) drift", dg.sigma12_drift),
        ("sigma(G2,conj G2) drift", dg.sigma2bar_drift),
        ("M asymmetry", dg.max_asymmetry),
        ("M ydot - pdot", dg.max_tangent_residual),
        ("M(T) - M(0)", dg.periodicity),
    ]
    .iter()
    .filter(|(_, v)| !(*v <= tol))
    .map(|(name, v)| format!("{name} = {v:.3e}"))
    .collect();
    if !fails.is_empty() {
        return Err(Error::Accuracy(format!(
            "frame invariants exceed tol_frame {tol:.1e}: {}",
            fails.join(", ")
        )));
    }
    if !(dg.min_transverse_im >= opts.p_min) {
        return Err(Error::Accuracy(format!(
            "transverse Im M drops to {:.3e} < p_min {:.3e}",
            dg.min_transverse_im, opts.p_min
        )));
    }
    Ok(())
}

/// `N_M = Δ arg det Y / 2π` over one period and `Θ_M ∈ {0, π}` from its parity.
pub fn maslov_index(frame: &BeamFrame) -> Result<(i64, f64)> {
    let delta = frame.arg_det_y.last().copied().unwrap_or(0.0) - frame.arg_det_y[0];
    let w = delta / (2.0 * PI);
    let n = w.round();
    if (w - n).abs() > 0.01 {
        return Err(Error::Accuracy(format!(
            "winding of det Y is {w:.4}, not an integer; sampling too coarse"
        )));
    }
    let n = n as i64;
    Ok((n, if n.rem_euclid(2) == 1 { PI } else { 0.0 }))
}
