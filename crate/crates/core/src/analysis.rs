//! Treatment-free phase-plane analysis in the `(x1, x2) = (N, E)` plane.
//!
//! With no therapy on board the model reduces to
//!
//! ```text
//! f1 = alpha x1 (1 - beta x1) - x1 x2
//! f2 = zeta - lambda x2 + eta x1 x2 / (theta + x1)
//! ```
//!
//! in nondimensional units. The tumor nullclines are `x1 = 0` and
//! `x2 = h(x1) = alpha (1 - beta x1)`; the effector nullcline is
//! `x2 = j(x1) = zeta / (lambda - eta x1 / (theta + x1))`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::NondimParams;

pub type Matrix2 = [[f64; 2]; 2];

/// Log-spaced scan resolution used to bracket interior equilibria.
pub const ROOT_SCAN_POINTS: usize = 10_000;
const ROOT_SCAN_LOWER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    TumorFree,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    StableNode,
    UnstableNode,
    Saddle,
    StableSpiral,
    UnstableSpiral,
    /// At least one eigenvalue with zero real part; linearization is inconclusive.
    CenterDegenerate,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableSpiral)
    }

    pub fn label(self) -> &'static str {
        match self {
            Stability::StableNode => "stable-node",
            Stability::UnstableNode => "unstable-node",
            Stability::Saddle => "saddle",
            Stability::StableSpiral => "stable-spiral",
            Stability::UnstableSpiral => "unstable-spiral",
            Stability::CenterDegenerate => "center-degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub x1: f64,
    pub x2: f64,
    pub kind: EquilibriumKind,
    pub eigenvalues: [Complex64; 2],
    pub classification: Stability,
}

impl Equilibrium {
    fn at(x1: f64, x2: f64, kind: EquilibriumKind, params: &NondimParams) -> Self {
        let eigenvalues = eigenvalues_2x2(&jacobian(x1, x2, params));
        Self {
            x1,
            x2,
            kind,
            eigenvalues,
            classification: classify(&eigenvalues),
        }
    }

    /// Euclidean norm of the treatment-free right-hand side at this point.
    pub fn residual(&self, params: &NondimParams) -> f64 {
        let [f1, f2] = treatment_free_rhs(self.x1, self.x2, params);
        f1.hypot(f2)
    }
}

pub fn treatment_free_rhs(x1: f64, x2: f64, p: &NondimParams) -> [f64; 2] {
    [
        p.alpha * x1 * (1.0 - p.beta * x1) - x1 * x2,
        p.zeta - p.lambda * x2 + p.eta * x1 * x2 / (p.theta + x1),
    ]
}

pub fn nullcline_h(x1: f64, p: &NondimParams) -> f64 {
    p.alpha * (1.0 - p.beta * x1)
}

fn j_denominator(x1: f64, p: &NondimParams) -> f64 {
    p.lambda - p.eta * x1 / (p.theta + x1)
}

/// Abscissa where the denominator of `j` vanishes, if it lies in `x1 > 0`.
pub fn nullcline_j_pole(p: &NondimParams) -> Option<f64> {
    (p.eta > p.lambda).then(|| p.theta * p.lambda / (p.eta - p.lambda))
}

pub fn nullcline_j(x1: f64, p: &NondimParams) -> Result<f64> {
    let d = j_denominator(x1, p);
    let scale = p.lambda.abs().max(p.eta.abs());
    if d.abs() <= 1e-14 * scale {
        return Err(Error::Pole { x1 });
    }
    Ok(p.zeta / d)
}

/// Analytic Jacobian of the treatment-free system.
pub fn jacobian(x1: f64, x2: f64, p: &NondimParams) -> Matrix2 {
    let tx = p.theta + x1;
    [
        [p.alpha * (1.0 - 2.0 * p.beta * x1) - x2, -x1],
        [
            p.eta * p.theta * x2 / (tx * tx),
            -p.lambda + p.eta * x1 / tx,
        ],
    ]
}

/// Closed-form eigenvalues of a real 2x2 matrix, ordered by descending real part.
pub fn eigenvalues_2x2(m: &Matrix2) -> [Complex64; 2] {
    if m[0][1] == 0.0 || m[1][0] == 0.0 {
        let (a, b) = (m[0][0], m[1][1]);
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        return [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)];
    }
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    // (tr/2)^2 - det written without cancellation
    let disc = half_diff * half_diff + m[0][1] * m[1][0];
    if disc >= 0.0 {
        let s = disc.sqrt();
        // avoid cancellation in the smaller-magnitude root
        let big = if half_tr >= 0.0 {
            half_tr + s
        } else {
            half_tr - s
        };
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (hi, lo) = if big >= small {
            (big, small)
        } else {
            (small, big)
        };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(half_tr, s), Complex64::new(half_tr, -s)]
    }
}

pub fn classify(eig: &[Complex64; 2]) -> Stability {
    let scale = eig[0].norm().max(eig[1].norm()).max(f64::MIN_POSITIVE);
    let zero_tol = 1e-13 * scale;
    if eig.iter().any(|l| l.re.abs() <= zero_tol) {
        return Stability::CenterDegenerate;
    }
    let complex = eig[0].im.abs() > zero_tol;
    let (r0, r1) = (eig[0].re, eig[1].re);
    match (complex, r0 < 0.0, r1 < 0.0) {
        (true, true, _) => Stability::StableSpiral,
        (true, false, _) => Stability::UnstableSpiral,
        (false, true, true) => Stability::StableNode,
        (false, false, false) => Stability::UnstableNode,
        _ => Stability::Saddle,
    }
}

/// `(0, zeta/lambda)`, with eigenvalues `alpha - zeta/lambda` and `-lambda`.
/// It is stable exactly when `alpha < zeta/lambda`.
pub fn tumor_free_equilibrium(p: &NondimParams) -> Equilibrium {
    Equilibrium::at(0.0, p.zeta / p.lambda, EquilibriumKind::TumorFree, p)
}

/// Coefficients of `a x^2 + b x + c = 0`, obtained by clearing denominators in
/// `h(x) = j(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticCoefficients {
    /// `b = zeta/alpha + beta theta lambda + eta - lambda`, which is what the
    /// expansion of `h = j` actually produces.
    pub fn derived(p: &NondimParams) -> Self {
        Self {
            a: p.beta * (p.lambda - p.eta),
            b: p.zeta / p.alpha + p.beta * p.theta * p.lambda + p.eta - p.lambda,
            c: p.theta * (p.zeta / p.alpha - p.lambda),
        }
    }

    /// The variant with `b = zeta/alpha + beta lambda eta + eta - lambda`.
    /// It does not satisfy `h = j` in general; kept for comparison.
    pub fn with_printed_b(p: &NondimParams) -> Self {
        Self {
            b: p.zeta / p.alpha + p.beta * p.lambda * p.eta + p.eta - p.lambda,
            ..Self::derived(p)
        }
    }

    /// Real roots, ascending. A vanishing leading coefficient degrades to the linear case.
    pub fn real_roots(&self) -> Vec<f64> {
        let Self { a, b, c } = *self;
        let scale = a.abs().max(b.abs()).max(c.abs());
        if a.abs() <= 1e-15 * scale {
            return if b != 0.0 { vec![-c / b] } else { vec![] };
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return vec![];
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut roots = if q == 0.0 {
            vec![0.0, 0.0]
        } else {
            vec![q / a, c / q]
        };
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        roots
    }

    /// Roots with `x1 > 0` and `h(x1) > 0`.
    pub fn admissible_roots(&self, p: &NondimParams) -> Vec<f64> {
        self.real_roots()
            .into_iter()
            .filter(|&x| x > 0.0 && nullcline_h(x, p) > 0.0)
            .collect()
    }
}

/// Interior equilibria: all `x1 > 0` with `h(x1) = j(x1) > 0`.
///
/// Sign changes of `h - j` are bracketed on a log-spaced grid over
/// `(1e-12, 1/beta]`, with the grid split just either side of the pole of
/// `j`, and refined with Brent's method.
pub fn interior_equilibria(p: &NondimParams) -> Vec<Equilibrium> {
    interior_abscissae(p)
        .into_iter()
        .map(|x1| Equilibrium::at(x1, nullcline_h(x1, p), EquilibriumKind::Interior, p))
        .collect()
}

fn interior_abscissae(p: &NondimParams) -> Vec<f64> {
    let upper = 1.0 / p.beta;
    let pole = nullcline_j_pole(p);
    let g = |x: f64| nullcline_h(x, p) - p.zeta / j_denominator(x, p);
    let (lo_log, hi_log) = (ROOT_SCAN_LOWER.ln(), upper.ln());
    let mut grid: Vec<f64> = (0..ROOT_SCAN_POINTS)
        .map(|k| {
            if k + 1 == ROOT_SCAN_POINTS {
                upper
            } else {
                (lo_log + (hi_log - lo_log) * k as f64 / (ROOT_SCAN_POINTS - 1) as f64).exp()
            }
        })
        .collect();
    // roots can sit arbitrarily close to the pole, so it gets its own gap
    let gap = pole.filter(|xp| *xp > grid[0] && *xp < upper).map(|xp| {
        let (below, above) = (xp * (1.0 - 1e-12), xp * (1.0 + 1e-12));
        grid.retain(|x| *x < below || *x > above);
        let k = grid.partition_point(|x| *x < below);
        grid.splice(k..k, [below, above]);
        below
    });
    let mut roots: Vec<f64> = Vec::new();
    let push = |x: f64, roots: &mut Vec<f64>| {
        let x2 = nullcline_h(x, p);
        if x > 0.0 && x2 > 0.0 && !roots.iter().any(|r| (r - x).abs() <= 1e-12 * x) {
            roots.push(x);
        }
    };
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if gap == Some(a) {
            continue;
        }
        let (ga, gb) = (g(a), g(b));
        if ga == 0.0 {
            push(a, &mut roots);
        } else if ga * gb < 0.0 {
            // a sign change through the pole converges onto it with a huge residual
            if let Some(x) = brent(&g, a, b, ga, gb)
                .filter(|x| g(*x).abs() <= 1e-8 * nullcline_h(*x, p).abs().max(1.0))
            {
                push(x, &mut roots);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// Brent's method on a sign-changing bracket, iterated to machine precision.
pub fn brent(
    f: &dyn Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
) -> Option<f64> {
    if fa * fb > 0.0 {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut pn, mut q);
            if a == c {
                pn = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                pn = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if pn > 0.0 {
                q = -q;
            } else {
                pn = -pn;
            }
            if 2.0 * pn < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = pn / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// Weighted divergence `d/dx1 (phi_D f1) + d/dx2 (phi_D f2)` with the Dulac
/// weight `phi_D = 1/(x1 x2)`, which simplifies to
/// `-(alpha beta / x2 + zeta / (x1 x2^2))`.
pub fn dulac_expression(x1: f64, x2: f64, p: &NondimParams) -> f64 {
    -(p.alpha * p.beta / x2 + p.zeta / (x1 * x2 * x2))
}

/// Rectangle `[x1_lo, x1_hi] x [x2_lo, x2_hi]` in the open positive quadrant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
}

impl Region {
    pub fn square(lo: f64, hi: f64) -> Self {
        Self {
            x1: (lo, hi),
            x2: (lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DulacReport {
    pub max_value: f64,
    pub argmax: (f64, f64),
    pub points: usize,
    pub strictly_negative: bool,
}

/// Evaluates the Dulac expression on a `density x density` uniform grid
/// (endpoints included) and reports the largest value found.
pub fn dulac_scan(p: &NondimParams, region: Region, density: usize) -> Result<DulacReport> {
    let Region {
        x1: (a1, b1),
        x2: (a2, b2),
    } = region;
    for (lo, hi) in [(a1, b1), (a2, b2)] {
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 {
            return Err(Error::InvalidRegion(format!(
                "[{lo}, {hi}] touches or crosses an axis; the expression is singular there"
            )));
        }
        if hi < lo {
            return Err(Error::InvalidRegion(format!("empty interval [{lo}, {hi}]")));
        }
    }
    if density < 2 {
        return Err(Error::InvalidRegion(
            "grid density must be at least 2".into(),
        ));
    }
    let at = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (density - 1) as f64;
    let mut max_value = f64::NEG_INFINITY;
    let mut argmax = (a1, a2);
    for i in 0..density {
        let x1 = at(a1, b1, i);
        for k in 0..density {
            let x2 = at(a2, b2, k);
            let v = dulac_expression(x1, x2, p);
            if v > max_value {
                max_value = v;
                argmax = (x1, x2);
            }
        }
    }
    Ok(DulacReport {
        max_value,
        argmax,
        points: density * density,
        strictly_negative: max_value < 0.0,
    })
}

/// One sampled point of the two nontrivial nullclines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullclineSample {
    pub x1: f64,
    pub h: f64,
    /// `None` at the pole of `j`.
    pub j: Option<f64>,
}

/// Uniform samples of `h` and `j` on `[0, x1_max]`.
pub fn nullcline_samples(p: &NondimParams, x1_max: f64, count: usize) -> Vec<NullclineSample> {
    let count = count.max(2);
    (0..count)
        .map(|k| {
            let x1 = x1_max * k as f64 / (count - 1) as f64;
            NullclineSample {
                x1,
                h: nullcline_h(x1, p),
                j: nullcline_j(x1, p).ok(),
            }
        })
        .collect()
}
