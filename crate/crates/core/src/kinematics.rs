//! Angle helpers and the trigonometric moment integrals used to integrate
//! constant-acceleration, constant-turn-rate motion in closed form.
//!
//! For a step of length `dt` with turn increment `phi = omega * dt`:
//!
//! ```text
//! ∫_0^dt (v + a t) cos(theta + omega t) dt
//!     = dt * [v (cosθ C0 - sinθ S0) + a dt (cosθ C1 - sinθ S1)]
//! ```
//!
//! where `Cn(phi) = ∫_0^1 s^n cos(phi s) ds` and `Sn(phi) = ∫_0^1 s^n sin(phi s) ds`.
//! Both are entire functions of `phi`, so the straight-line limit needs no
//! special casing. Their derivatives close the family:
//! `Cn' = -S(n+1)`, `Sn' = C(n+1)`.

use std::f64::consts::PI;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shortest signed arc from `from` to `to`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

const SERIES_LIMIT: f64 = 8.0;

/// `∫_0^1 s^n cos(phi s) ds`.
pub fn cos_moment(n: u32, phi: f64) -> f64 {
    if phi.abs() <= SERIES_LIMIT {
        series(n, phi, false)
    } else {
        recurrence(n, phi).0
    }
}

/// `∫_0^1 s^n sin(phi s) ds`.
pub fn sin_moment(n: u32, phi: f64) -> f64 {
    if phi.abs() <= SERIES_LIMIT {
        series(n, phi, true)
    } else {
        recurrence(n, phi).1
    }
}

// cos: Σ (-1)^k φ^{2k} / ((2k)! (n+2k+1))
// sin: Σ (-1)^k φ^{2k+1} / ((2k+1)! (n+2k+2))
fn series(n: u32, phi: f64, odd: bool) -> f64 {
    let n = n as f64;
    let p2 = phi * phi;
    // term without the 1/(n+j+1) factor: φ^j / j!
    let (mut pow_fact, mut j) = if odd { (phi, 1.0) } else { (1.0, 0.0) };
    let mut sum = 0.0;
    let mut sign = 1.0;
    for _ in 0..80 {
        let term = sign * pow_fact / (n + j + 1.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && j > 4.0 {
            break;
        }
        pow_fact *= p2 / ((j + 1.0) * (j + 2.0));
        j += 2.0;
        sign = -sign;
    }
    sum
}

// Integration by parts, stable for |phi| large and small n.
fn recurrence(n: u32, phi: f64) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    let mut cm = s / phi;
    let mut sm = (1.0 - c) / phi;
    for k in 1..=n {
        let k = k as f64;
        let next_c = s / phi - k / phi * sm;
        let next_s = -c / phi + k / phi * cm;
        cm = next_c;
        sm = next_s;
    }
    (cm, sm)
}

/// Closed-form displacement of a constant-acceleration, constant-turn-rate
/// unicycle over `t` seconds, starting with heading `theta` and speed `v`.
pub fn ctra_displacement(theta: f64, v: f64, accel: f64, omega: f64, t: f64) -> [f64; 2] {
    let phi = omega * t;
    let (c0, s0) = (cos_moment(0, phi), sin_moment(0, phi));
    let (c1, s1) = (cos_moment(1, phi), sin_moment(1, phi));
    let (st, ct) = theta.sin_cos();
    let along = v * c0 + accel * t * c1;
    let across = v * s0 + accel * t * s1;
    [t * (ct * along - st * across), t * (st * along + ct * across)]
}
