//! Test-side oracles that share no code with the library.
#![allow(dead_code)]

use flatstrip::geometry::{MetricModel, ProfileSpec};
use flatstrip::scaling::SmoothPiece;
use rand::Rng;

pub fn power(m: u32, c: f64) -> MetricModel {
    MetricModel::new(ProfileSpec::Power { m, c }, 2, 1.0, 1.0).unwrap()
}

pub fn constant(k: f64) -> MetricModel {
    MetricModel::new(ProfileSpec::ConstantCurvature { k }, 2, 1.0, 1.0).unwrap()
}

pub fn flat() -> MetricModel {
    MetricModel::new(ProfileSpec::Flat, 2, 1.0, 1.0).unwrap()
}

pub fn sdependent() -> MetricModel {
    MetricModel::new(
        ProfileSpec::SDependent {
            m: 2,
            c: 1.0,
            c_min: 0.5,
            gamma1: 0.4,
        },
        2,
        1.0,
        1.0,
    )
    .unwrap()
}

/// `B(a, b)` by tanh-sinh quadrature; the endpoint complements are formed
/// without cancellation so singular integrands are fine.
pub fn beta_tanh_sinh(a: f64, b: f64) -> f64 {
    let h = 1.0 / 64.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    for i in -(6 * 64)..=(6 * 64) {
        let t = i as f64 * h;
        let s = half_pi * t.sinh();
        let c = s.cosh();
        // x = (1 + tanh s)/2 = 1/(1 + e^{-2s}); 1 - x = 1/(1 + e^{2s}).
        let x = 1.0 / (1.0 + (-2.0 * s).exp());
        let y = 1.0 / (1.0 + (2.0 * s).exp());
        if x == 0.0 || y == 0.0 {
            continue;
        }
        let w = 0.5 * half_pi * t.cosh() / (c * c);
        sum += w * x.powf(a - 1.0) * y.powf(b - 1.0);
    }
    sum * h
}

/// Classic RK4 with fixed step.
pub fn rk4<F: Fn(f64, f64) -> f64>(f: F, x0: f64, y0: f64, x1: f64, n: usize) -> f64 {
    let h = (x1 - x0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        let x = x0 + i as f64 * h;
        let k1 = f(x, y);
        let k2 = f(x + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(x + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(x + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Brute-force `sup_α H(α) − αc` over a log grid on `[1e-12, 1/2]`
/// refined by golden section around the best cell.
pub fn gap_oracle(c: f64, xi: f64) -> f64 {
    let h = |a: f64| -a * a.ln() - (1.0 - a) * (1.0 - a).ln() - a * c;
    let n = 20_000;
    let (lo, hi) = (1e-12f64.ln(), 0.5f64.ln());
    let grid: Vec<f64> = (0..=n).map(|i| (lo + (hi - lo) * i as f64 / n as f64).exp()).collect();
    let best = (0..=n).max_by(|&i, &j| h(grid[i]).total_cmp(&h(grid[j]))).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if h(x1) < h(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    h(0.5 * (a + b)) / xi
}

/// Random instance of the discontinuous-ODE lemma hypothesis.
pub struct Synthetic {
    pub alpha: f64,
    pub beta: f64,
    pub q1: f64,
    pub q2: f64,
    pub pieces: Vec<SmoothPiece>,
}

/// Solves `f′ = −q(τ)(f^α − f_b^α)^β` backward from `f(b) = f_b` with `q`
/// piecewise constant in `[Q₁, Q₂]`, optionally with downward jumps at
/// the breakpoints. Works in `u = (f − f_b)^{1−β}`, which is regular at
/// `b`, and stops early if `f` reaches a cap. Derivatives are evaluated
/// from the formula at each sample.
pub fn synthetic_lemma_instance<R: Rng>(rng: &mut R, allow_jumps: bool) -> Synthetic {
    let beta = rng.gen_range(0.3..0.7);
    let alpha = rng.gen_range(1.0 / beta + 0.2..1.0 / beta + 4.0);
    let q1 = rng.gen_range(0.2..2.0);
    let q2 = q1 * rng.gen_range(1.1..5.0);
    let fb: f64 = rng.gen_range(0.05..0.5);
    let b = rng.gen_range(1.0..50.0);
    let nseg = rng.gen_range(1..=6);
    let mut cuts: Vec<f64> = (1..nseg).map(|_| rng.gen_range(0.0..b)).collect();
    cuts.push(0.0);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let fba = fb.powf(alpha);
    let ratio = |e: f64| {
        if e <= 0.0 {
            alpha * fb.powf(alpha - 1.0)
        } else {
            fba * (alpha * (e / fb).ln_1p()).exp_m1() / e
        }
    };
    let om = 1.0 - beta;
    // Backward integration blows up in finite time since αβ > 1.
    let f_cap = (10.0 * fb).min(3.0);
    // Backward in time: du/dτ = −(1−β)q(h/e)^β, integrated from the right.
    let mut u = 0.0f64;
    type Segment = (bool, Vec<(f64, f64, f64)>);
    let mut segs: Vec<Segment> = Vec::new();
    for w in cuts.windows(2).rev() {
        let (l, r) = (w[0], w[1]);
        let q = rng.gen_range(q1..=q2);
        let n = 200;
        let h = (r - l) / n as f64;
        let mut stopped = false;
        let du = |u: f64| -om * q * ratio(u.max(0.0).powf(1.0 / om)).powf(beta);
        let mut pts = Vec::with_capacity(n + 1);
        let push = |tau: f64, u: f64, pts: &mut Vec<(f64, f64, f64)>| {
            let e = u.max(0.0).powf(1.0 / om);
            let f = fb + e;
            let df = -q * (f.powf(alpha) - fba).max(0.0).powf(beta);
            pts.push((tau, f, df));
        };
        push(r, u, &mut pts);
        for i in 0..n {
            let k1 = du(u);
            let k2 = du(u - h / 2.0 * k1);
            let k3 = du(u - h / 2.0 * k2);
            let k4 = du(u - h * k3);
            u -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            // Also stops on NaN.
            if (fb + u.powf(1.0 / om)).partial_cmp(&f_cap) != Some(std::cmp::Ordering::Less) {
                // Blow-up ahead: the left endpoint moves to the last sample.
                stopped = true;
                break;
            }
            push(r - (i + 1) as f64 * h, u, &mut pts);
        }
        pts.reverse();
        if stopped {
            segs.push((false, pts));
            break;
        }
        let jump = allow_jumps && l > 0.0 && rng.gen_bool(0.4);
        segs.push((jump, pts));
        if jump {
            let e = u.powf(1.0 / om) + rng.gen_range(0.0..0.2) * fb;
            u = e.powf(om);
        }
    }
    segs.reverse();
    // Segments now run left to right; `segs[i].0` says whether a jump sits
    // at the left end of segment i.
    let mut pieces: Vec<SmoothPiece> = Vec::new();
    let mut cur = SmoothPiece {
        tau: vec![],
        f: vec![],
        df: vec![],
    };
    for (i, (jump_at_left, pts)) in segs.iter().enumerate() {
        if *jump_at_left && i > 0 {
            // The earlier segment ends strictly before the jump.
            cur.tau.pop();
            cur.f.pop();
            cur.df.pop();
            pieces.push(std::mem::replace(
                &mut cur,
                SmoothPiece {
                    tau: vec![],
                    f: vec![],
                    df: vec![],
                },
            ));
        } else if i > 0 {
            // Continuous join: drop the duplicate breakpoint sample.
            cur.tau.pop();
            cur.f.pop();
            cur.df.pop();
        }
        for &(t, f, d) in pts {
            cur.tau.push(t);
            cur.f.push(f);
            cur.df.push(d);
        }
    }
    pieces.push(cur);
    // Near `b` the excess `f − f_b` falls below one ulp of `f`, so samples
    // that f64 cannot tell apart are dropped, scanning from the right.
    let mut floor = f64::NEG_INFINITY;
    for pc in pieces.iter_mut().rev() {
        let keep: Vec<bool> = pc
            .f
            .iter()
            .rev()
            .map(|&f| {
                let k = f > floor;
                if k {
                    floor = f;
                }
                k
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let mut it = keep.iter();
        pc.tau.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        pc.f.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        pc.df.retain(|_| *it.next().unwrap());
    }
    Synthetic {
        alpha,
        beta,
        q1,
        q2,
        pieces,
    }
}
