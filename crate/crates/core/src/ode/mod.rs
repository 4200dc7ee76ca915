//! Adaptive Runge-Kutta integration with a Verner 9(8) pair.
//!
//! Dense output is a continuous extension by re-stepping: the state at an
//! interior time of an accepted step is the 9th-order update from the step's
//! left end with the shortened step. It costs one full step per query but is
//! as accurate as the step itself, which is what event polishing needs.

mod tableau;

use thiserror::Error;

use crate::roots::brent;
use tableau::{A, B, B_HAT, C, STAGES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

/// What the observer wants after seeing an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Continue,
    /// Stop at this time, which must lie inside the step just observed.
    Stop(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Solver {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Solver {
    pub fn new(tol: f64) -> Self {
        Solver {
            rtol: tol,
            atol: tol,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }

    /// Relative control with a separate absolute floor.
    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// Integrates from `t0` to `t_end` (either direction), handing every
    /// accepted step to `observer`.
    pub fn run<F, O, const N: usize>(
        &self,
        rhs: &F,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut observer: O,
    ) -> Result<Outcome<N>, OdeError>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        O: FnMut(&Step<'_, F, N>) -> Control,
    {
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let mut y = y0;
        let span = (t_end - t0).abs();
        if span == 0.0 {
            return Ok(Outcome { t, y, steps: 0, stopped: false });
        }
        let mut f0 = rhs(t, &y);
        if !all_finite(&f0) || !all_finite(&y) {
            return Err(OdeError::NonFinite(t));
        }
        let mut h = self.initial_step(rhs, t, &y, &f0, dir).min(span).min(self.h_max);
        let mut steps = 0usize;
        let mut reject_streak = 0usize;
        loop {
            if steps >= self.max_steps {
                return Err(OdeError::TooManySteps(self.max_steps));
            }
            let remaining = (t_end - t).abs();
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            let (y1, err) = self.step_with_k0(rhs, t, &y, &f0, dir * h_try);
            let finite = all_finite(&y1) && err.is_finite();
            if finite && err <= 1.0 {
                steps += 1;
                reject_streak = 0;
                let t1 = if last { t_end } else { t + dir * h_try };
                let step = Step {
                    rhs,
                    t0: t,
                    y0: y,
                    t1,
                    y1,
                };
                if let Control::Stop(ts) = observer(&step) {
                    let ys = step.eval(ts);
                    return Ok(Outcome {
                        t: ts,
                        y: ys,
                        steps,
                        stopped: true,
                    });
                }
                t = t1;
                y = y1;
                if last {
                    return Ok(Outcome {
                        t,
                        y,
                        steps,
                        stopped: false,
                    });
                }
                f0 = rhs(t, &y);
                if !all_finite(&f0) {
                    return Err(OdeError::NonFinite(t));
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 9.0)).clamp(0.2, 5.0) };
                h = (h_try * fac).min(self.h_max);
            } else {
                reject_streak += 1;
                if reject_streak > 60 {
                    return Err(if finite {
                        OdeError::StepUnderflow { t, h: h_try }
                    } else {
                        OdeError::NonFinite(t)
                    });
                }
                let fac = if finite { (0.9 * err.powf(-1.0 / 9.0)).clamp(0.1, 0.9) } else { 0.25 };
                h = h_try * fac;
                if h <= 8.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(OdeError::StepUnderflow { t, h });
                }
            }
        }
    }

    fn initial_step<F, const N: usize>(&self, rhs: &F, t: f64, y: &[f64; N], f0: &[f64; N], dir: f64) -> f64
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let norm = |v: &[f64; N]| -> f64 {
            (v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / N as f64).sqrt()
        };
        let d0 = norm(y);
        let d1 = norm(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut y1 = *y;
        for i in 0..N {
            y1[i] += dir * h0 * f0[i];
        }
        let f1 = rhs(t + dir * h0, &y1);
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - f0[i];
        }
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 9.0)
        };
        let h = (100.0 * h0).min(h1);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            1e-6
        }
    }
}

/// Final state of a run.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub steps: usize,
    /// True when the observer requested the stop.
    pub stopped: bool,
}

/// One accepted step, with dense output on `[t0, t1]`.
pub struct Step<'a, F, const N: usize> {
    rhs: &'a F,
    pub t0: f64,
    pub y0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
}

impl<F, const N: usize> Step<'_, F, N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t1 {
            return self.y1;
        }
        if t == self.t0 {
            return self.y0;
        }
        rk_step(self.rhs, self.t0, &self.y0, t - self.t0).0
    }

    /// First time in `(t0, t1]` where `g` changes sign from its value at
    /// `t0`. A zero at `t0` itself is not reported.
    pub fn locate<G: Fn(&[f64; N]) -> f64>(&self, g: G) -> Option<f64> {
        let g0 = g(&self.y0);
        let g1 = g(&self.y1);
        if g0 == 0.0 || g0.signum() == g1.signum() && g1 != 0.0 {
            return None;
        }
        if g1 == 0.0 {
            return Some(self.t1);
        }
        let xtol = 1e-13 * self.t1.abs().max(1.0);
        let r = brent(|t| g(&self.eval(t)), self.t0, self.t1, g0, g1, xtol, 200);
        Some(r)
    }
}

fn all_finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// A single step of size `h` from `(t, y)`. Returns the 9th-order update
/// and the raw embedded error vector.
pub fn rk_step<F, const N: usize>(rhs: &F, t: f64, y: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k0 = rhs(t, y);
    stages(rhs, t, y, &k0, h)
}

fn stages<F, const N: usize>(rhs: &F, t: f64, y: &[f64; N], k0: &[f64; N], h: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; STAGES];
    k[0] = *k0;
    for i in 1..STAGES {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            let a = A[i][j];
            if a != 0.0 {
                for n in 0..N {
                    yi[n] += h * a * kj[n];
                }
            }
        }
        k[i] = rhs(t + C[i] * h, &yi);
    }
    let mut y1 = *y;
    let mut err = [0.0; N];
    for (i, ki) in k.iter().enumerate() {
        let b = B[i];
        let e = B[i] - B_HAT[i];
        for n in 0..N {
            y1[n] += h * b * ki[n];
            err[n] += h * e * ki[n];
        }
    }
    (y1, err)
}

impl Solver {
    fn scaled_error<const N: usize>(&self, y0: &[f64; N], y1: &[f64; N], err: &[f64; N]) -> f64 {
        let mut acc = 0.0;
        for n in 0..N {
            let sc = self.atol + self.rtol * y0[n].abs().max(y1[n].abs());
            acc += (err[n] / sc).powi(2);
        }
        (acc / N as f64).sqrt()
    }
}

impl Solver {
    fn step_with_k0<F, const N: usize>(&self, rhs: &F, t: f64, y: &[f64; N], k0: &[f64; N], h: f64) -> ([f64; N], f64)
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let (y1, e) = stages(rhs, t, y, k0, h);
        (y1, self.scaled_error(y, &y1, &e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc(_t: f64, y: &[f64; 2]) -> [f64; 2] {
        [y[1], -y[0]]
    }

    #[test]
    fn harmonic_oscillator_long_run() {
        let out = Solver::new(1e-12).run(&osc, 0.0, [1.0, 0.0], 100.0, |_| Control::Continue).unwrap();
        assert!((out.y[0] - 100f64.cos()).abs() < 1e-9);
        assert!((out.y[1] + 100f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn backward_direction() {
        let f = |_t: f64, y: &[f64; 1]| [y[0]];
        let out = Solver::new(1e-12).run(&f, 0.0, [1.0], -3.0, |_| Control::Continue).unwrap();
        assert!((out.y[0] - (-3f64).exp()).abs() < 1e-12);
        assert_eq!(out.t, -3.0);
    }

    #[test]
    fn ninth_order_convergence() {
        // Error of a single step on y' = y*cos(t) shrinks like h^10.
        let f = |t: f64, y: &[f64; 1]| [y[0] * t.cos()];
        let exact = |t: f64| t.sin().exp();
        let e1 = (rk_step(&f, 0.0, &[1.0], 0.4).0[0] - exact(0.4)).abs();
        let e2 = (rk_step(&f, 0.0, &[1.0], 0.2).0[0] - exact(0.2)).abs();
        let rate = (e1 / e2).log2();
        assert!(rate > 9.0, "local order {rate}");
    }

    #[test]
    fn dense_output_and_event() {
        let mut hit = None;
        let out = Solver::new(1e-12)
            .run(&osc, 0.0, [1.0, 0.0], 10.0, |st| {
                let mid = 0.5 * (st.t0 + st.t1);
                let ym = st.eval(mid);
                assert!((ym[0] - mid.cos()).abs() < 1e-10);
                match st.locate(|y| y[0]) {
                    Some(r) => {
                        hit = Some(r);
                        Control::Stop(r)
                    }
                    None => Control::Continue,
                }
            })
            .unwrap();
        let r = hit.unwrap();
        assert!(out.stopped);
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }
}
