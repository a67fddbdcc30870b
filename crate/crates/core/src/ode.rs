//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The stepper is driven by the caller one accepted step at a time so that
//! event detection and per-step validity checks stay in the calling code.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    rc: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rc[0][i]
                + th * (self.rc[1][i]
                    + th1 * (self.rc[2][i] + th * (self.rc[3][i] + th1 * self.rc[4][i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rc[0].len()];
        self.eval_into(t, &mut out);
        out
    }
}

pub struct Dopri5<F> {
    rhs: F,
    t: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    opts: OdeOptions,
    steps: usize,
    dense: Option<DenseSegment>,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(mut rhs: F, t0: f64, y0: &[f64], opts: OdeOptions) -> Result<Self> {
        let n = y0.len();
        let mut f = vec![0.0; n];
        rhs(t0, y0, &mut f)?;
        let mut s = Dopri5 {
            rhs,
            t: t0,
            y: y0.to_vec(),
            f,
            h: 0.0,
            opts,
            steps: 0,
            dense: None,
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    fn scaled_norm(&self, v: &[f64], reference: &[f64]) -> f64 {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(reference)
            .map(|(x, r)| {
                let sc = self.opts.atol + self.opts.rtol * r.abs();
                (x / sc).powi(2)
            })
            .sum::<f64>()
            / n)
            .sqrt()
    }

    fn initial_step(&mut self) -> Result<f64> {
        let d0 = self.scaled_norm(&self.y, &self.y);
        let d1 = self.scaled_norm(&self.f, &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.opts.h_max);
        let y1: Vec<f64> = self.y.iter().zip(&self.f).map(|(y, f)| y + h0 * f).collect();
        let mut f1 = vec![0.0; y1.len()];
        (self.rhs)(self.t + h0, &y1, &mut f1)?;
        let diff: Vec<f64> = f1.iter().zip(&self.f).map(|(a, b)| a - b).collect();
        let d2 = self.scaled_norm(&diff, &self.y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.opts.h_max))
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point.
    pub fn dy(&self) -> &[f64] {
        &self.f
    }

    pub fn dense(&self) -> Option<&DenseSegment> {
        self.dense.as_ref()
    }

    /// Take one accepted step without passing `t_limit`.
    ///
    /// `accept(y_old, y_new)` may veto a step that satisfies the error test;
    /// the step is then halved and retried.
    pub fn step<A>(&mut self, t_limit: f64, mut accept: A) -> Result<()>
    where
        A: FnMut(&[f64], &[f64]) -> bool,
    {
        let n = self.y.len();
        loop {
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(Error::Accuracy(format!(
                    "integrator exceeded {} steps",
                    self.opts.max_steps
                )));
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(self.opts.h_max);
            let clamped = h >= remaining;
            if clamped {
                h = remaining;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::Accuracy(format!(
                    "step size underflow at t = {}",
                    self.t
                )));
            }
            let t = self.t;
            let y = &self.y;
            self.k[0].copy_from_slice(&self.f);

            macro_rules! stage {
                ($dst:expr, $c:expr, [$($a:expr => $ki:expr),*]) => {{
                    for i in 0..n {
                        self.ytmp[i] = y[i] + h * (0.0 $(+ $a * self.k[$ki][i])*);
                    }
                    let (head, tail) = self.k.split_at_mut($dst);
                    let _ = head;
                    (self.rhs)(t + $c * h, &self.ytmp, &mut tail[0])?;
                }};
            }
            stage!(1, C2, [A21 => 0]);
            stage!(2, C3, [A31 => 0, A32 => 1]);
            stage!(3, C4, [A41 => 0, A42 => 1, A43 => 2]);
            stage!(4, C5, [A51 => 0, A52 => 1, A53 => 2, A54 => 3]);
            stage!(5, 1.0, [A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4]);
            for i in 0..n {
                self.ynew[i] = y[i]
                    + h * (A71 * self.k[0][i]
                        + A73 * self.k[2][i]
                        + A74 * self.k[3][i]
                        + A75 * self.k[4][i]
                        + A76 * self.k[5][i]);
            }
            {
                let (head, tail) = self.k.split_at_mut(6);
                let _ = head;
                (self.rhs)(t + h, &self.ynew, &mut tail[0])?;
            }
            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(self.ynew[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                if !accept(&self.y, &self.ynew) {
                    self.h = 0.5 * h;
                    continue;
                }
                let mut rc: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
                for i in 0..n {
                    let ydiff = self.ynew[i] - y[i];
                    let bspl = h * self.k[0][i] - ydiff;
                    rc[0][i] = y[i];
                    rc[1][i] = ydiff;
                    rc[2][i] = bspl;
                    rc[3][i] = ydiff - h * self.k[6][i] - bspl;
                    rc[4][i] = h
                        * (D1 * self.k[0][i]
                            + D3 * self.k[2][i]
                            + D4 * self.k[3][i]
                            + D5 * self.k[4][i]
                            + D6 * self.k[5][i]
                            + D7 * self.k[6][i]);
                }
                self.dense = Some(DenseSegment { t0: t, h, rc });
                self.t = if clamped { t_limit } else { t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.f.copy_from_slice(&self.k[6]);
                let next = h * fac;
                // keep the pre-clamp step size so landing on outputs does not shrink steps
                self.h = if clamped { self.h.max(next) } else { next };
                return Ok(());
            }
            self.h = h * fac.min(1.0);
        }
    }

    /// Advance until `t_end` is reached exactly.
    pub fn advance_to<A>(&mut self, t_end: f64, mut accept: A) -> Result<()>
    where
        A: FnMut(&[f64], &[f64]) -> bool,
    {
        while self.t < t_end {
            self.step(t_end, &mut accept)?;
        }
        Ok(())
    }
}
