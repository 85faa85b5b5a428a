//! Control-to-position integration for the unicycle model.
//!
//! Each step holds acceleration `a` and yaw rate `ω` constant over `dt`, so
//! the position increment is the exact arc
//! `∫₀^dt (v + a s)(cos(θ + ω s), sin(θ + ω s)) ds`, written with the moment
//! integrals `Cₙ(φ) = ∫₀¹ sⁿ cos(φ s) ds` and `Sₙ(φ) = ∫₀¹ sⁿ sin(φ s) ds`.
//! Covariances follow by linearizing that step map around the means.

use cab_autodiff::{Graph, Tensor, Var};

use crate::batch::InitialStates;

/// Per-step Gaussian controls, each entry a `[R]` vector.
#[derive(Debug, Clone)]
pub struct ControlGaussians<'g> {
    pub accel: Vec<Var<'g>>,
    pub yaw_rate: Vec<Var<'g>>,
    pub var_accel: Vec<Var<'g>>,
    pub var_yaw_rate: Vec<Var<'g>>,
    pub cov_accel_yaw_rate: Vec<Var<'g>>,
}

/// Per-step position Gaussians, each entry a `[R]` vector.
#[derive(Debug, Clone)]
pub struct PositionGaussians<'g> {
    pub mean_x: Vec<Var<'g>>,
    pub mean_y: Vec<Var<'g>>,
    pub var_x: Vec<Var<'g>>,
    pub cov_xy: Vec<Var<'g>>,
    pub var_y: Vec<Var<'g>>,
}

/// Scalar-or-tensor term that folds structural zeros and constants so the
/// covariance recursion only records the products that matter.
#[derive(Debug, Clone, Copy)]
enum Sym<'g> {
    Zero,
    Const(f64),
    Var(Var<'g>),
}

impl<'g> Sym<'g> {
    fn add(self, o: Sym<'g>) -> Sym<'g> {
        match (self, o) {
            (Sym::Zero, x) | (x, Sym::Zero) => x,
            (Sym::Const(a), Sym::Const(b)) => Sym::Const(a + b),
            (Sym::Const(c), Sym::Var(v)) | (Sym::Var(v), Sym::Const(c)) => Sym::Var(v.add_scalar(c)),
            (Sym::Var(a), Sym::Var(b)) => Sym::Var(a + b),
        }
    }

    fn mul(self, o: Sym<'g>) -> Sym<'g> {
        match (self, o) {
            (Sym::Zero, _) | (_, Sym::Zero) => Sym::Zero,
            (Sym::Const(a), Sym::Const(b)) => Sym::Const(a * b),
            (Sym::Const(c), Sym::Var(v)) | (Sym::Var(v), Sym::Const(c)) => {
                if c == 1.0 {
                    Sym::Var(v)
                } else {
                    Sym::Var(v.scale(c))
                }
            }
            (Sym::Var(a), Sym::Var(b)) => Sym::Var(a * b),
        }
    }

    fn into_var(self, g: &'g Graph<'g>, rows: usize) -> Var<'g> {
        match self {
            Sym::Zero => g.constant(Tensor::zeros(&[rows])),
            Sym::Const(c) => g.constant(Tensor::full(&[rows], c)),
            Sym::Var(v) => v,
        }
    }
}

type Mat<'g, const R: usize, const C: usize> = [[Sym<'g>; C]; R];

fn matmul<'g, const R: usize, const K: usize, const C: usize>(
    a: &Mat<'g, R, K>,
    b: &Mat<'g, K, C>,
) -> Mat<'g, R, C> {
    let mut out = [[Sym::Zero; C]; R];
    for i in 0..R {
        for j in 0..C {
            for k in 0..K {
                out[i][j] = out[i][j].add(a[i][k].mul(b[k][j]));
            }
        }
    }
    out
}

/// `A B Aᵀ` for symmetric `B`, computing the upper triangle once.
fn sandwich<'g, const R: usize, const K: usize>(a: &Mat<'g, R, K>, b: &Mat<'g, K, K>) -> Mat<'g, R, R> {
    let ab = matmul(a, b);
    let mut out = [[Sym::Zero; R]; R];
    for i in 0..R {
        for j in i..R {
            let mut s = Sym::Zero;
            for k in 0..K {
                s = s.add(ab[i][k].mul(a[j][k]));
            }
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}

/// Rolls the controls forward from `s0`. Covariances start at zero and
/// carry no floor; callers add one before evaluating densities.
pub fn integrate_dynamics<'g>(
    g: &'g Graph<'g>,
    s0: &InitialStates,
    controls: &ControlGaussians<'g>,
    dt: f64,
) -> PositionGaussians<'g> {
    let rows = s0.len();
    let vec = |v: &[f64]| g.constant(Tensor::vector(v.to_vec()));
    let (mut x, mut y, mut theta, mut v) = (vec(&s0.x), vec(&s0.y), vec(&s0.heading), vec(&s0.speed));
    let mut p: Mat<'g, 4, 4> = [[Sym::Zero; 4]; 4];
    let mut out = PositionGaussians {
        mean_x: Vec::new(),
        mean_y: Vec::new(),
        var_x: Vec::new(),
        cov_xy: Vec::new(),
        var_y: Vec::new(),
    };
    for t in 0..controls.accel.len() {
        let a = controls.accel[t];
        let w = controls.yaw_rate[t];
        let phi = w.scale(dt);
        let (c0, c1, c2) = (phi.cos_moment(0), phi.cos_moment(1), phi.cos_moment(2));
        let (s0m, s1, s2) = (phi.sin_moment(0), phi.sin_moment(1), phi.sin_moment(2));
        let (ct, st) = (theta.cos(), theta.sin());
        // rotated moments: (cosθ·Cn − sinθ·Sn, sinθ·Cn + cosθ·Sn)
        let ax0 = ct * c0 - st * s0m;
        let ay0 = st * c0 + ct * s0m;
        let ax1 = ct * c1 - st * s1;
        let ay1 = st * c1 + ct * s1;
        // derivatives of the rotated moments with respect to φ
        let bx1 = -(ct * s1 + st * c1);
        let by1 = ct * c1 - st * s1;
        let bx2 = -(ct * s2 + st * c2);
        let by2 = ct * c2 - st * s2;
        let adt = a.scale(dt);
        let dx = (v * ax0 + adt * ax1).scale(dt);
        let dy = (v * ay0 + adt * ay1).scale(dt);
        let g_xw = (v * bx1 + adt * bx2).scale(dt * dt);
        let g_yw = (v * by1 + adt * by2).scale(dt * dt);

        let f: Mat<'g, 4, 4> = [
            [Sym::Const(1.0), Sym::Zero, Sym::Var(-dy), Sym::Var(ax0.scale(dt))],
            [Sym::Zero, Sym::Const(1.0), Sym::Var(dx), Sym::Var(ay0.scale(dt))],
            [Sym::Zero, Sym::Zero, Sym::Const(1.0), Sym::Zero],
            [Sym::Zero, Sym::Zero, Sym::Zero, Sym::Const(1.0)],
        ];
        let gm: Mat<'g, 4, 2> = [
            [Sym::Var(ax1.scale(dt * dt)), Sym::Var(g_xw)],
            [Sym::Var(ay1.scale(dt * dt)), Sym::Var(g_yw)],
            [Sym::Zero, Sym::Const(dt)],
            [Sym::Const(dt), Sym::Zero],
        ];
        let q: Mat<'g, 2, 2> = [
            [Sym::Var(controls.var_accel[t]), Sym::Var(controls.cov_accel_yaw_rate[t])],
            [Sym::Var(controls.cov_accel_yaw_rate[t]), Sym::Var(controls.var_yaw_rate[t])],
        ];
        let fp = sandwich(&f, &p);
        let gq = sandwich(&gm, &q);
        for i in 0..4 {
            for j in 0..4 {
                p[i][j] = fp[i][j].add(gq[i][j]);
            }
        }

        x = x + dx;
        y = y + dy;
        theta = theta + phi;
        v = v + adt;
        out.mean_x.push(x);
        out.mean_y.push(y);
        out.var_x.push(p[0][0].into_var(g, rows));
        out.cov_xy.push(p[0][1].into_var(g, rows));
        out.var_y.push(p[1][1].into_var(g, rows));
    }
    out
}
