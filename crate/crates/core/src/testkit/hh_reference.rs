//! Scalar Hodgkin-Huxley integrator written directly from the textbook rate
//! functions, sharing no code with the network dynamics. Used as an oracle.

/// Classical squid-axon constants (mS/cm², mV, µF/cm² = 1).
const G_NA: f64 = 120.0;
const G_K: f64 = 36.0;
const G_L: f64 = 0.3;
const E_NA: f64 = 50.0;
const E_K: f64 = -77.0;
const E_L: f64 = -54.4;

/// `x / (exp(x / k) - 1)`, continuous at 0.
fn vtrap(x: f64, k: f64) -> f64 {
    if x.abs() < 1e-7 {
        k * (1.0 - x / k / 2.0)
    } else {
        x / ((x / k).exp() - 1.0)
    }
}

/// `[a_m, b_m, a_h, b_h, a_n, b_n]` in 1/ms.
pub fn rates(v: f64) -> [f64; 6] {
    [
        0.1 * vtrap(-(v + 40.0), 10.0),
        4.0 * (-(v + 65.0) / 18.0).exp(),
        0.07 * (-(v + 65.0) / 20.0).exp(),
        1.0 / (1.0 + (-(v + 35.0) / 10.0).exp()),
        0.01 * vtrap(-(v + 55.0), 10.0),
        0.125 * (-(v + 65.0) / 80.0).exp(),
    ]
}

fn i_ion(v: f64, m: f64, h: f64, n: f64) -> f64 {
    G_NA * m.powi(3) * h * (v - E_NA) + G_K * n.powi(4) * (v - E_K) + G_L * (v - E_L)
}

fn deriv(s: [f64; 4], i: f64) -> [f64; 4] {
    let [v, m, h, n] = s;
    let [am, bm, ah, bh, an, bn] = rates(v);
    [
        i - i_ion(v, m, h, n),
        am * (1.0 - m) - bm * m,
        ah * (1.0 - h) - bh * h,
        an * (1.0 - n) - bn * n,
    ]
}

fn steady(v: f64) -> [f64; 4] {
    let [am, bm, ah, bh, an, bn] = rates(v);
    [v, am / (am + bm), ah / (ah + bh), an / (an + bn)]
}

/// Resting state `[V, m, h, n]`, by bisection on the steady-state current.
pub fn rest() -> [f64; 4] {
    let f = |v: f64| {
        let [_, m, h, n] = steady(v);
        i_ion(v, m, h, n)
    };
    let (mut lo, mut hi) = (-70.0, -60.0);
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    steady(0.5 * (lo + hi))
}

/// Classical RK4 from rest with injected current `i(t)` (µA/cm²). Returns V
/// after every step, starting with the value at t = 0.
pub fn run(dt: f64, steps: usize, i: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut s = rest();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s[0]);
    let add = |a: [f64; 4], b: [f64; 4], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]];
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = deriv(s, i(t));
        let k2 = deriv(add(s, k1, dt / 2.0), i(t + dt / 2.0));
        let k3 = deriv(add(s, k2, dt / 2.0), i(t + dt / 2.0));
        let k4 = deriv(add(s, k3, dt), i(t + dt));
        for j in 0..4 {
            s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(s[0]);
    }
    out
}

/// Times of upward zero crossings, stamped at the end of the step.
pub fn spike_times(v: &[f64], dt: f64) -> Vec<f64> {
    v.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(k, _)| (k + 1) as f64 * dt)
        .collect()
}
