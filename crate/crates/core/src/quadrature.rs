//! Quadrature on the reference triangle and on the unit interval.

use crate::error::{OseenError, Result};

/// Highest polynomial degree integrated exactly by [`triangle_rule`].
pub const MAX_TRIANGLE_DEGREE: usize = 10;
/// Highest polynomial degree integrated exactly by [`edge_rule`].
pub const MAX_EDGE_DEGREE: usize = 11;

/// A quadrature rule with points in barycentric coordinates.
///
/// Triangle weights sum to 1/2 (area of the reference triangle), edge
/// weights to 1.
#[derive(Debug, Clone)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

pub type TriangleRule = QuadratureRule<3>;
pub type EdgeRule = QuadratureRule<2>;

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

// Fully symmetric orbits, weights normalized to sum 1.
enum Orbit {
    Centroid(f64),
    /// (a, a, 1 - 2a) and permutations.
    Two(f64, f64),
    /// (a, b, 1 - a - b) and permutations.
    Three(f64, f64, f64),
}

use Orbit::*;

const DEGREE2: &[Orbit] = &[Two(1.0 / 6.0, 1.0 / 3.0)];

const DEGREE4: &[Orbit] = &[
    Two(0.445_948_490_915_965, 0.223_381_589_678_011),
    Two(0.091_576_213_509_771, 0.109_951_743_655_322),
];

const DEGREE6: &[Orbit] = &[
    Two(0.249_286_745_170_910, 0.116_786_275_726_379),
    Two(0.063_089_014_491_502, 0.050_844_906_370_207),
    Three(0.310_352_451_033_784, 0.053_145_049_844_817, 0.082_851_075_618_374),
];

const DEGREE8: &[Orbit] = &[
    Centroid(0.144_315_607_677_787),
    Two(0.459_292_588_292_723, 0.095_091_634_267_285),
    Two(0.170_569_307_751_760, 0.103_217_370_534_718),
    Two(0.050_547_228_317_031, 0.032_458_497_623_198),
    Three(0.263_112_829_634_638, 0.008_394_777_409_958, 0.027_230_314_174_435),
];

fn expand(orbits: &[Orbit], degree: usize) -> TriangleRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for orbit in orbits {
        match *orbit {
            Centroid(w) => {
                points.push([1.0 / 3.0; 3]);
                weights.push(w);
            }
            Two(a, w) => {
                let b = 1.0 - 2.0 * a;
                for p in [[a, a, b], [a, b, a], [b, a, a]] {
                    points.push(p);
                    weights.push(w);
                }
            }
            Three(a, b, w) => {
                let c = 1.0 - a - b;
                for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                    points.push(p);
                    weights.push(w);
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= 0.5 / total;
    }
    TriangleRule { points, weights, degree }
}

/// Collapsed (Duffy) Gauss product rule, symmetrized over the six
/// permutations of the barycentric coordinates.
fn symmetrized_product(degree: usize) -> TriangleRule {
    // The Duffy Jacobian adds one degree in the collapsed direction.
    let n = (degree + 2).div_ceil(2);
    let (gx, gw) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (&s, &ws) in gx.iter().zip(&gw) {
        for (&t, &wt) in gx.iter().zip(&gw) {
            // (x, y) = (s, t (1 - s)) maps the unit square onto the triangle.
            let x = s;
            let y = t * (1.0 - s);
            let w = ws * wt * (1.0 - s);
            let l = [1.0 - x - y, x, y];
            for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                points.push([l[perm[0]], l[perm[1]], l[perm[2]]]);
                weights.push(w / 6.0);
            }
        }
    }
    TriangleRule { points, weights, degree }
}

/// Symmetric triangle rule integrating polynomials up to `degree` exactly.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    match degree {
        0 | 1 => Ok(expand(&[Centroid(1.0)], degree)),
        2 => Ok(expand(DEGREE2, degree)),
        3 | 4 => Ok(expand(DEGREE4, degree)),
        5 | 6 => Ok(expand(DEGREE6, degree)),
        7 | 8 => Ok(expand(DEGREE8, degree)),
        9 | 10 => Ok(symmetrized_product(degree)),
        _ => Err(OseenError::invalid(format!(
            "no triangle rule of degree {degree} (maximum {MAX_TRIANGLE_DEGREE})"
        ))),
    }
}

/// Gauss–Legendre rule on the unit interval, in barycentric form.
pub fn edge_rule(degree: usize) -> Result<EdgeRule> {
    if degree > MAX_EDGE_DEGREE {
        return Err(OseenError::invalid(format!(
            "no edge rule of degree {degree} (maximum {MAX_EDGE_DEGREE})"
        )));
    }
    let n = (degree + 2) / 2;
    let (x, w) = gauss_legendre(n.max(1));
    Ok(EdgeRule {
        points: x.iter().map(|&t| [1.0 - t, t]).collect(),
        weights: w,
        degree,
    })
}

/// `n`-point Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n starting from the Chebyshev-like guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    // Newton starts from the right end; flip to ascending order.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
