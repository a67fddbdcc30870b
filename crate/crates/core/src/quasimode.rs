//! Leading-order quasimode data along an orbit: transport amplitude, the
//! complex phase jet off the orbit, and the eikonal and residual checks.

use faer::c64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch::BandSampler;
use crate::error::{Error, Result};
use crate::frame::{unit_normal, BeamFrame, CMat2, HessianBlocks, Mat2};
use crate::ode::{Dopri5, OdeOptions};
use crate::orbit::PeierlsLift;
use crate::spectral;

const I: c64 = c64::new(0.0, 1.0);

fn cplx(x: f64) -> c64 {
    c64::new(x, 0.0)
}

fn complexify(m: &Mat2) -> CMat2 {
    m.map(cplx)
}

fn interp_c(values: &[c64], period: f64, s: f64) -> c64 {
    spectral::interpolate(values, period, s)
}

fn interp2(v: &[[f64; 2]], period: f64, s: f64) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (j, c) in spectral::lagrange_weights(v.len(), period, s) {
        out[0] += v[j][0] * c;
        out[1] += v[j][1] * c;
    }
    out
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub ode: OdeOptions,
    pub tol_amp: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            ode: OdeOptions {
                rtol: 1e-12,
                atol: 1e-14,
                ..OdeOptions::default()
            },
            tol_amp: 1e-7,
        }
    }
}

/// Leading amplitude `f₀` along the orbit, at `s_j` for `j = 0..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTrace {
    pub s: Vec<f64>,
    /// Solution of the transport ODE.
    pub f0: Vec<c64>,
    /// `√(det Y(0)/det Y(s)) e^{−iθ(s)}` on the continuous branch.
    pub closed_form: Vec<c64>,
    /// `θ(s) = ∫ (θ̇_b + θ̇_rw) ds`.
    pub theta: Vec<f64>,
    /// `τ = tr(B + CM) = d/ds ln det Y` at the `J` periodic samples.
    pub tau: Vec<c64>,
    /// `θ̇_b + θ̇_rw` at the `J` periodic samples.
    pub rate: Vec<f64>,
    pub period: f64,
    /// `max_j |f₀/closed_form − 1|`.
    pub max_mismatch: f64,
    /// Largest pointwise residual of the transport ODE.
    pub transport_residual: f64,
}

impl AmplitudeTrace {
    /// `f₀(T)/f₀(0)`.
    pub fn monodromy(&self) -> c64 {
        self.f0[self.f0.len() - 1] / self.f0[0]
    }

    /// Growth exponent `λ` with `f₀(s)e^{−λs}` periodic.
    pub fn floquet_exponent(&self) -> c64 {
        self.monodromy().ln() / self.period
    }

    /// `f₀` at any `s` from the periodic factor.
    pub fn f0_at(&self, s: f64) -> c64 {
        let lam = self.floquet_exponent();
        let j = self.s.len() - 1;
        let g: Vec<c64> = (0..j).map(|i| self.f0[i] * (-lam * self.s[i]).exp()).collect();
        interp_c(&g, self.period, s) * (lam * s).exp()
    }
}

/// Solve `ḟ₀ + (½τ + iθ̇)f₀ = 0`, `f₀(0) = 1`, and compare with the closed form.
///
/// `rate` is `θ̇_b + θ̇_rw` at the orbit samples.
pub fn transport_amplitude(
    frame: &BeamFrame,
    blocks: &HessianBlocks,
    rate: &[f64],
    opts: &TransportOptions,
) -> Result<AmplitudeTrace> {
    let j_count = frame.samples();
    let period = frame.period;
    if blocks.len() != j_count || rate.len() != j_count {
        return Err(Error::InvalidInput("frame, blocks and rates disagree on the sample count".into()));
    }
    let tau: Vec<c64> = (0..j_count)
        .map(|j| {
            let cm = complexify(&blocks.c[j]) * frame.m[j];
            cplx(blocks.b[j].trace()) + cm.trace()
        })
        .collect();
    let rhs = |s: f64, v: &[f64], dv: &mut [f64]| -> Result<()> {
        let t = interp_c(&tau, period, s);
        let r = spectral::interpolate(rate, period, s);
        let f = c64::new(v[0], v[1]);
        let df = -(t * 0.5 + I * r) * f;
        dv[0] = df.re;
        dv[1] = df.im;
        Ok(())
    };
    let mut ode = Dopri5::new(rhs, 0.0, &[1.0, 0.0], opts.ode)?;
    let accept = |a: &[f64], b: &[f64]| (c64::new(b[0], b[1]) / c64::new(a[0], a[1])).arg().abs() < 0.5 * std::f64::consts::PI;
    let mut theta = spectral::antiderivative(rate, period);
    theta.push(spectral::integrate(rate, period));
    let mut f0 = Vec::with_capacity(j_count + 1);
    let mut closed = Vec::with_capacity(j_count + 1);
    let mut mismatch: f64 = 0.0;
    let (d0, a0) = (frame.det_y[0].norm(), frame.arg_det_y[0]);
    for j in 0..=j_count {
        let s_j = frame.s[j];
        while ode.t() < s_j {
            ode.step(s_j, accept)?;
        }
        let f = c64::new(ode.y()[0], ode.y()[1]);
        let c = c64::from_polar((d0 / frame.det_y[j].norm()).sqrt(), 0.5 * (a0 - frame.arg_det_y[j]) - theta[j]);
        mismatch = mismatch.max((f / c - 1.0).norm());
        f0.push(f);
        closed.push(c);
    }
    let mut trace = AmplitudeTrace {
        s: frame.s.clone(),
        f0,
        closed_form: closed,
        theta,
        tau,
        rate: rate.to_vec(),
        period,
        max_mismatch: mismatch,
        transport_residual: 0.0,
    };
    trace.transport_residual = transport_residual(&trace);
    if !(mismatch <= opts.tol_amp) {
        return Err(Error::Accuracy(format!(
            "transport solution departs from the closed form by {mismatch:.3e} > tol_amp {:.1e}",
            opts.tol_amp
        )));
    }
    Ok(trace)
}

/// Pointwise residual of the transport ODE with `ḟ₀` from a spectral
/// derivative of the periodic factor `f₀e^{−λs}`.
pub fn transport_residual(tr: &AmplitudeTrace) -> f64 {
    let j = tr.s.len() - 1;
    let lam = tr.floquet_exponent();
    let g: Vec<c64> = (0..j).map(|i| tr.f0[i] * (-lam * tr.s[i]).exp()).collect();
    let gr: Vec<f64> = g.iter().map(|z| z.re).collect();
    let gi: Vec<f64> = g.iter().map(|z| z.im).collect();
    let dr = spectral::derivative(&gr, tr.period);
    let di = spectral::derivative(&gi, tr.period);
    (0..j)
        .map(|i| {
            let e = (lam * tr.s[i]).exp();
            let df = (c64::new(dr[i], di[i]) + lam * g[i]) * e;
            (df + (tr.tau[i] * 0.5 + I * tr.rate[i]) * tr.f0[i]).norm()
        })
        .fold(0.0, f64::max)
}

/// Second-order Taylor jet of the complex phase about the orbit.
#[derive(Debug, Clone)]
pub struct PhaseJet {
    pub period: f64,
    pub mu: f64,
    pub k3: f64,
    pub y: Vec<[f64; 2]>,
    pub p: Vec<[f64; 2]>,
    pub ydot: Vec<[f64; 2]>,
    pub pdot: Vec<[f64; 2]>,
    pub yddot: Vec<[f64; 2]>,
    pub m: Vec<CMat2>,
    pub mdot: Vec<CMat2>,
    /// `φ(ŷ(s_j)) − (action/T)s_j`, periodic.
    phi_periodic: Vec<f64>,
    pub action: f64,
    /// Largest admissible distance from the orbit.
    pub tube_radius: f64,
    /// Smallest transverse eigenvalue of `Im M` over the samples.
    pub lambda_min: f64,
    blocks: HessianBlocks,
}

/// Phase at an off-orbit point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetPoint {
    pub phi: c64,
    pub grad: [c64; 2],
    /// `K = (∂₁φ, ∂₂φ + μy₁)`.
    pub k: [c64; 2],
    pub s_star: f64,
    pub delta: [f64; 2],
    pub d: f64,
    pub grad_s: [f64; 2],
}

fn mv(m: &CMat2, v: [c64; 2]) -> [c64; 2] {
    [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]]
}

fn mv_r(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]]
}

impl PhaseJet {
    /// `tube_radius = None` picks three quarters of the smallest radius of
    /// curvature of the projected orbit.
    pub fn new(lift: &PeierlsLift, blocks: &HessianBlocks, frame: &BeamFrame, k3: f64, tube_radius: Option<f64>) -> Result<Self> {
        let j_count = frame.samples();
        let period = frame.period;
        let mut yddot = Vec::with_capacity(j_count);
        let mut mdot = Vec::with_capacity(j_count);
        let mut lambda_min = f64::INFINITY;
        let mut min_curv_radius = f64::INFINITY;
        for j in 0..j_count {
            let (a, b, c) = (blocks.a[j], blocks.b[j], blocks.c[j]);
            let yd = lift.ydot[j];
            let bu = mv_r(&b, yd);
            let cp = mv_r(&c, lift.pdot[j]);
            let ydd = [bu[0] + cp[0], bu[1] + cp[1]];
            yddot.push(ydd);
            let m = frame.m[j];
            let (ac, bc, cc) = (complexify(&a), complexify(&b), complexify(&c));
            mdot.push(-(m * cc * m + m * bc + bc.transpose() * m + ac));
            let n = unit_normal(yd);
            let im = m.map(|z| z.im);
            lambda_min = lambda_min.min((n.transpose() * im * n)[(0, 0)]);
            let speed = yd[0].hypot(yd[1]);
            let cross = (yd[0] * ydd[1] - yd[1] * ydd[0]).abs();
            if cross > 0.0 {
                min_curv_radius = min_curv_radius.min(speed.powi(3) / cross);
            }
        }
        let pv: Vec<f64> = (0..j_count)
            .map(|j| lift.p[j][0] * lift.ydot[j][0] + lift.p[j][1] * lift.ydot[j][1])
            .collect();
        let action = spectral::integrate(&pv, period);
        let phi = spectral::antiderivative(&pv, period);
        let phi_periodic = (0..j_count)
            .map(|j| phi[j] - action / period * frame.s[j])
            .collect();
        let tube_radius = match tube_radius {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(Error::InvalidInput(format!("tube radius must be positive, got {r}"))),
            None => 0.75 * min_curv_radius,
        };
        Ok(PhaseJet {
            period,
            mu: lift.mu,
            k3,
            y: lift.y.clone(),
            p: lift.p.clone(),
            ydot: lift.ydot.clone(),
            pdot: lift.pdot.clone(),
            yddot,
            m: frame.m[..j_count].to_vec(),
            mdot,
            phi_periodic,
            action,
            tube_radius,
            lambda_min,
            blocks: blocks.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn at2(&self, v: &[[f64; 2]], s: f64) -> [f64; 2] {
        interp2(v, self.period, s)
    }

    fn at_m(&self, v: &[CMat2], s: f64) -> CMat2 {
        spectral::lagrange_weights(v.len(), self.period, s)
            .into_iter()
            .fold(CMat2::zeros(), |acc, (j, c)| acc + v[j] * cplx(c))
    }

    pub fn y_at(&self, s: f64) -> [f64; 2] {
        self.at2(&self.y, s)
    }

    pub fn ydot_at(&self, s: f64) -> [f64; 2] {
        self.at2(&self.ydot, s)
    }

    pub fn p_at(&self, s: f64) -> [f64; 2] {
        self.at2(&self.p, s)
    }

    pub fn m_at(&self, s: f64) -> CMat2 {
        self.at_m(&self.m, s)
    }

    /// Orbit point `k(s) = (p₁, p₂ + μy₁)`.
    pub fn k_at(&self, s: f64) -> [f64; 2] {
        let p = self.p_at(s);
        let y = self.y_at(s);
        [p[0], p[1] + self.mu * y[0]]
    }

    /// `(A, B, C)` at `s`.
    pub fn blocks_at(&self, s: f64) -> (Mat2, Mat2, Mat2) {
        self.blocks.at(s)
    }

    /// `φ` on the orbit.
    pub fn phi_at(&self, s: f64) -> f64 {
        spectral::interpolate(&self.phi_periodic, self.period, s) + self.action / self.period * s
    }

    /// Nearest orbit parameter: discrete search, then Newton on
    /// `(y − ŷ(s))·ẏ(s) = 0`.
    pub fn nearest(&self, y: [f64; 2]) -> (f64, [f64; 2]) {
        let j = (0..self.len())
            .min_by(|&a, &b| {
                let da = (y[0] - self.y[a][0]).powi(2) + (y[1] - self.y[a][1]).powi(2);
                let db = (y[0] - self.y[b][0]).powi(2) + (y[1] - self.y[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        let h = self.period / self.len() as f64;
        let mut s = j as f64 * h;
        for _ in 0..12 {
            let yh = self.y_at(s);
            let yd = self.ydot_at(s);
            let ydd = self.at2(&self.yddot, s);
            let del = [y[0] - yh[0], y[1] - yh[1]];
            let g = del[0] * yd[0] + del[1] * yd[1];
            let dg = -(yd[0] * yd[0] + yd[1] * yd[1]) + del[0] * ydd[0] + del[1] * ydd[1];
            let step = (g / dg).clamp(-h, h);
            s -= step;
            if step.abs() <= 1e-15 * self.period {
                break;
            }
        }
        let yh = self.y_at(s);
        (s, [y[0] - yh[0], y[1] - yh[1]])
    }

    /// Phase, gradient and `K` at `y` from the jet about the nearest point.
    pub fn eval(&self, y: [f64; 2]) -> Result<JetPoint> {
        let (s, delta) = self.nearest(y);
        let d = delta[0].hypot(delta[1]);
        if d > self.tube_radius * (1.0 + 1e-9) {
            return Err(Error::Domain(format!(
                "point ({:.6}, {:.6}) lies {d:.3e} from the orbit, outside the tube radius {:.3e}",
                y[0], y[1], self.tube_radius
            )));
        }
        let p = self.p_at(s);
        let m = self.m_at(s);
        let md = self.at_m(&self.mdot, s);
        let yd = self.ydot_at(s);
        let ydd = self.at2(&self.yddot, s);
        let dc = [cplx(delta[0]), cplx(delta[1])];
        let mdl = mv(&m, dc);
        let quad = dc[0] * mdl[0] + dc[1] * mdl[1];
        let phi = cplx(self.phi_at(s) + p[0] * delta[0] + p[1] * delta[1]) + quad * 0.5;
        let denom = yd[0] * yd[0] + yd[1] * yd[1] - (delta[0] * ydd[0] + delta[1] * ydd[1]);
        let grad_s = [yd[0] / denom, yd[1] / denom];
        let mdd = mv(&md, dc);
        let curv = (dc[0] * mdd[0] + dc[1] * mdd[1]) * 0.5;
        let grad = [
            cplx(p[0]) + mdl[0] + curv * grad_s[0],
            cplx(p[1]) + mdl[1] + curv * grad_s[1],
        ];
        Ok(JetPoint {
            phi,
            grad,
            k: [grad[0], grad[1] + self.mu * y[0]],
            s_star: s,
            delta,
            d,
            grad_s,
        })
    }

    /// Unit normal at `s`.
    pub fn normal_at(&self, s: f64) -> [f64; 2] {
        let n = unit_normal(self.ydot_at(s));
        [n[0], n[1]]
    }
}

/// Evaluate the jet at `y`.
pub fn phase_jet_eval(jet: &PhaseJet, y: [f64; 2]) -> Result<JetPoint> {
    jet.eval(y)
}

/// `G(y) = E(K(y), k₃) − E₀` by analytic continuation of the band.
pub fn eikonal_defect<S: BandSampler + ?Sized>(jet: &PhaseJet, sampler: &S, pt: &JetPoint, e0: f64) -> Result<c64> {
    Ok(sampler.continued_energy([pt.k[0], pt.k[1], cplx(jet.k3)])? - e0)
}

const G_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EikonalReport {
    pub deltas: Vec<f64>,
    /// Largest `|G|` over fibres and both sides at each offset.
    pub g_max: Vec<f64>,
    pub slope: Option<f64>,
    /// Every `|G|` was below the floor.
    pub vacuous: bool,
    pub on_orbit_max: f64,
}

impl EikonalReport {
    pub fn check(&self, min_slope: f64) -> Result<()> {
        match self.slope {
            _ if self.vacuous => Ok(()),
            Some(s) if s >= min_slope => Ok(()),
            s => Err(Error::Accuracy(format!(
                "eikonal defect vanishes at order {s:?}, below {min_slope}"
            ))),
        }
    }
}

/// `|G|` along transverse rays `ŷ(s_j) ± δn̂(s_j)` and its fitted order of
/// vanishing in `δ`.
pub fn eikonal_residual<S: BandSampler + ?Sized>(
    jet: &PhaseJet,
    sampler: &S,
    e0: f64,
    fibres: &[usize],
    deltas: &[f64],
) -> Result<EikonalReport> {
    let h = jet.period / jet.len() as f64;
    let eval = |s: f64, delta: f64| -> Result<f64> {
        let y0 = jet.y_at(s);
        let n = jet.normal_at(s);
        let pt = jet.eval([y0[0] + delta * n[0], y0[1] + delta * n[1]])?;
        Ok(eikonal_defect(jet, sampler, &pt, e0)?.norm())
    };
    let on_orbit = fibres
        .par_iter()
        .map(|&j| eval(j as f64 * h, 0.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let g_max = deltas
        .iter()
        .map(|&d| {
            fibres
                .par_iter()
                .map(|&j| Ok(eval(j as f64 * h, d)?.max(eval(j as f64 * h, -d)?)))
                .collect::<Result<Vec<f64>>>()
                .map(|v| v.into_iter().fold(0.0, f64::max))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<(f64, f64)> = deltas
        .iter()
        .zip(&g_max)
        .filter(|(_, &g)| g > G_FLOOR)
        .map(|(&d, &g)| (d, g))
        .collect();
    let (slope, vacuous) = if kept.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
        (Some(loglog_slope(&x, &y)), false)
    } else {
        (None, true)
    };
    Ok(EikonalReport {
        deltas: deltas.to_vec(),
        g_max,
        slope,
        vacuous,
        on_orbit_max: on_orbit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    /// Tube half-width in units of `√ε`.
    pub tube_factor: f64,
    pub fibres: usize,
    /// Offsets on each side of the orbit.
    pub offsets: usize,
    pub include_m1perp: bool,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            tube_factor: 3.0,
            fibres: 32,
            offsets: 16,
            include_m1perp: false,
        }
    }
}

/// Orbit data off the samples that the residual needs besides the jet.
#[derive(Debug, Clone)]
pub struct OrbitFields {
    /// Berry connection `(a₁, a₂)` in the orbit gauge.
    pub connection: Vec<[f64; 2]>,
    /// Wilkinson-Rammal integrand.
    pub wr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TubeSample {
    pub s_star: f64,
    pub d: f64,
    pub g_term: f64,
    pub l_term: f64,
    pub m1perp_term: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsResidual {
    pub eps: f64,
    pub tube_radius: f64,
    pub sup_residual: f64,
    pub sup_g_term: f64,
    pub sup_l_term: f64,
    pub sup_m1perp_term: f64,
    pub argmax: TubeSample,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub eps_list: Vec<f64>,
    pub per_eps: Vec<EpsResidual>,
    pub slope: f64,
    pub slope_g: f64,
    pub slope_l: f64,
    pub monotone: bool,
}

impl ResidualReport {
    pub fn sup_residual(&self) -> Vec<f64> {
        self.per_eps.iter().map(|r| r.sup_residual).collect()
    }
}

/// Residual estimator terms at one tube point.
pub fn tube_sample<S: BandSampler + ?Sized>(
    jet: &PhaseJet,
    amp: &AmplitudeTrace,
    fields: &OrbitFields,
    sampler: &S,
    e0: f64,
    eps: f64,
    y: [f64; 2],
    include_m1perp: bool,
) -> Result<TubeSample> {
    let pt = jet.eval(y)?;
    let s = pt.s_star;
    let g = eikonal_defect(jet, sampler, &pt, e0)?;
    let f0 = amp.f0_at(s);
    let tau = interp_c(&amp.tau, amp.period, s);
    let rate = spectral::interpolate(&amp.rate, amp.period, s);
    let df0 = -(tau * 0.5 + I * rate) * f0;
    let grad_f = [df0 * pt.grad_s[0], df0 * pt.grad_s[1]];
    let (_, _, c) = jet.blocks_at(s);
    let cc = complexify(&c);
    let ks = jet.k_at(s);
    let dk = [pt.k[0] - ks[0], pt.k[1] - ks[1]];
    let yd = jet.ydot_at(s);
    let cdk = mv(&cc, dk);
    let grad_e = [cplx(yd[0]) + cdk[0], cplx(yd[1]) + cdk[1]];
    let mut jm = jet.m_at(s);
    jm[(1, 0)] += jet.mu;
    let a = interp2(&fields.connection, amp.period, s);
    let w = spectral::interpolate(&fields.wr, amp.period, s);
    let jge = mv(&jm, grad_e);
    let cal_a = (cc * jm).trace() * 0.5 + I * (jge[0] * a[0] + jge[1] * a[1] - w);
    let l = grad_e[0] * grad_f[0] + grad_e[1] * grad_f[1] + cal_a * f0;
    let weight = (-pt.phi.im / eps).exp();
    let g_term = (f0 * g).norm() * weight;
    let l_term = eps * l.norm() * weight;
    let m1perp_term = if include_m1perp {
        let k3d = [ks[0], ks[1], jet.k3];
        eps * g.norm() * sampler.transverse_correction(k3d, grad_f, f0, &jm)? * weight
    } else {
        0.0
    };
    Ok(TubeSample {
        s_star: s,
        d: pt.d,
        g_term,
        l_term,
        m1perp_term,
        residual: g_term + l_term + m1perp_term,
    })
}

/// Sup of the tube residual `(|f₀G| + ε|L|)e^{−Im φ/ε}` for each `ε` and the
/// log-log slope across `eps_list`.
pub fn residual_scaling<S: BandSampler + ?Sized>(
    jet: &PhaseJet,
    amp: &AmplitudeTrace,
    fields: &OrbitFields,
    sampler: &S,
    e0: f64,
    eps_list: &[f64],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    if eps_list.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "residual scaling needs at least 4 eps values, got {}",
            eps_list.len()
        )));
    }
    if !eps_list.windows(2).all(|w| w[0] > w[1]) || !eps_list.iter().all(|&e| e > 0.0) {
        return Err(Error::InvalidInput("eps_list must be positive and strictly decreasing".into()));
    }
    if opts.fibres == 0 || opts.offsets == 0 || !(opts.tube_factor > 0.0) {
        return Err(Error::InvalidInput("residual sampling needs fibres, offsets and a positive tube factor".into()));
    }
    let h = jet.period / opts.fibres as f64;
    let mut per_eps = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let radius = (opts.tube_factor * eps.sqrt()).min(jet.tube_radius);
        let points: Vec<(f64, f64)> = (0..opts.fibres)
            .flat_map(|f| {
                (-(opts.offsets as i64)..=opts.offsets as i64).map(move |i| (f as f64 * h, radius * i as f64 / opts.offsets as f64))
            })
            .collect();
        let samples = points
            .par_iter()
            .map(|&(s, d)| {
                let y0 = jet.y_at(s);
                let n = jet.normal_at(s);
                let y = [y0[0] + d * n[0], y0[1] + d * n[1]];
                tube_sample(jet, amp, fields, sampler, e0, eps, y, opts.include_m1perp)
            })
            .collect::<Result<Vec<_>>>()?;
        let argmax = *samples
            .iter()
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
            .expect("nonempty tube");
        let sup = |f: fn(&TubeSample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
        per_eps.push(EpsResidual {
            eps,
            tube_radius: radius,
            sup_residual: argmax.residual,
            sup_g_term: sup(|t| t.g_term),
            sup_l_term: sup(|t| t.l_term),
            sup_m1perp_term: sup(|t| t.m1perp_term),
            argmax,
            samples: samples.len(),
        });
    }
    let sups: Vec<f64> = per_eps.iter().map(|r| r.sup_residual).collect();
    let g: Vec<f64> = per_eps.iter().map(|r| r.sup_g_term).collect();
    let l: Vec<f64> = per_eps.iter().map(|r| r.sup_l_term).collect();
    let monotone = sups.windows(2).all(|w| w[0] > w[1]);
    if !monotone {
        log::warn!("tube residual is not monotone in eps: {sups:?}");
    }
    let slope_of = |v: &[f64]| {
        if v.iter().all(|&x| x > 0.0) {
            loglog_slope(eps_list, v)
        } else {
            f64::NAN
        }
    };
    Ok(ResidualReport {
        eps_list: eps_list.to_vec(),
        slope: slope_of(&sups),
        slope_g: slope_of(&g),
        slope_l: slope_of(&l),
        per_eps,
        monotone,
    })
}

/// Orbit fields from the sample geometry.
pub fn orbit_fields(connection: &[[f64; 3]], wr: &[f64]) -> OrbitFields {
    OrbitFields {
        connection: connection.iter().map(|a| [a[0], a[1]]).collect(),
        wr: wr.to_vec(),
    }
}

/// Minimum of `Im φ / d²` over tube points, for the Gaussian decay bound.
pub fn gaussian_decay(jet: &PhaseJet, fibres: usize, radius: f64, offsets: usize) -> Result<f64> {
    let h = jet.period / fibres as f64;
    let mut worst = f64::INFINITY;
    for f in 0..fibres {
        let s = f as f64 * h;
        let y0 = jet.y_at(s);
        let n = jet.normal_at(s);
        for i in 1..=offsets {
            for sign in [-1.0, 1.0] {
                let d = sign * radius * i as f64 / offsets as f64;
                let pt = jet.eval([y0[0] + d * n[0], y0[1] + d * n[1]])?;
                if pt.d > 0.0 {
                    worst = worst.min(pt.phi.im / (pt.d * pt.d));
                }
            }
        }
    }
    Ok(worst)
}
