//! Pointwise curvature kernels of an `(m + 2)`-point simplex tuple.
//!
//! Every kernel is a ratio of quantities of matched homogeneity, so it is
//! invariant under translations, rotations and dilations, and every kernel
//! is `0` on tuples of zero diameter.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{simplex_volume, SimplexTuple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    Kappa,
    KappaH,
    KappaMin,
    KappaMax,
    KappaDls,
}

impl CurvatureKind {
    pub const ALL: [CurvatureKind; 5] = [
        CurvatureKind::Kappa,
        CurvatureKind::KappaH,
        CurvatureKind::KappaMin,
        CurvatureKind::KappaMax,
        CurvatureKind::KappaDls,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CurvatureKind::Kappa => "kappa",
            CurvatureKind::KappaH => "kappa_h",
            CurvatureKind::KappaMin => "kappa_min",
            CurvatureKind::KappaMax => "kappa_max",
            CurvatureKind::KappaDls => "kappa_dls",
        }
    }

    pub fn eval(self, t: &SimplexTuple) -> f64 {
        match self {
            CurvatureKind::Kappa => kappa(t),
            CurvatureKind::KappaH => kappa_h(t),
            CurvatureKind::KappaMin => kappa_min(t),
            CurvatureKind::KappaMax => kappa_max(t),
            CurvatureKind::KappaDls => kappa_dls(t),
        }
    }
}

impl fmt::Display for CurvatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurvatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CurvatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown curvature kind `{s}`")))
    }
}

/// `H^{m+1}(△T) / diam(△T)^{m+1}`, or `0` when the diameter vanishes.
pub fn kappa(t: &SimplexTuple) -> f64 {
    let d = t.diam();
    if d <= 0.0 {
        return 0.0;
    }
    simplex_volume(t) / d.powi(t.len() as i32 - 1)
}

/// Smallest distance from a vertex to the affine hull of the remaining ones.
pub fn h_min(t: &SimplexTuple) -> f64 {
    (0..t.len())
        .map(|j| t.dist_to_opposite_hull(j))
        .fold(f64::INFINITY, f64::min)
}

pub fn kappa_h(t: &SimplexTuple) -> f64 {
    let d = t.diam();
    if d <= 0.0 {
        return 0.0;
    }
    h_min(t) / d
}

/// Polar sine at vertex `i`.
///
/// The numerator is the wedge of edges anchored at `a_0` for every `i`; its
/// norm is `(m+1)!` times the simplex volume, so only the denominator
/// `∏_{j≠i} |a_j − a_i|` depends on `i`.
pub fn pm_sin(t: &SimplexTuple, i: usize) -> Result<f64> {
    if i >= t.len() {
        return Err(Error::invalid(format!("vertex index {i} out of range")));
    }
    let mut denom = 1.0;
    for j in (0..t.len()).filter(|&j| j != i) {
        let d = t.distance(i, j);
        if d == 0.0 {
            return Err(Error::RepeatedVertex { index: j });
        }
        denom *= d;
    }
    Ok(t.wedge_norm() / denom)
}

fn pm_sin_extremes(t: &SimplexTuple) -> Option<(f64, f64)> {
    if h_min(t) <= 0.0 {
        return None;
    }
    let wedge = t.wedge_norm();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..t.len() {
        let mut denom = 1.0;
        for j in (0..t.len()).filter(|&j| j != i) {
            denom *= t.distance(i, j);
        }
        if denom == 0.0 {
            return None;
        }
        let s = wedge / denom;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Some((lo, hi))
}

pub fn kappa_min(t: &SimplexTuple) -> f64 {
    pm_sin_extremes(t).map_or(0.0, |(lo, _)| lo)
}

pub fn kappa_max(t: &SimplexTuple) -> f64 {
    pm_sin_extremes(t).map_or(0.0, |(_, hi)| hi)
}

/// Root-sum-square distance of the vertices to the best affine `m`-plane,
/// divided by the diameter.
///
/// The optimal plane passes through the centroid along the top `m`
/// principal directions, so the squared residual is the smallest nonzero
/// eigenvalue `λ_min` of the scatter restricted to the `(m+1)`-dimensional
/// hull. It is recovered as `det / ∏(top m eigenvalues)` where
/// `det = wedge² / (m+2)` is the exact scatter determinant of a simplex; this
/// keeps relative accuracy when the tuple is nearly flat.
pub fn kappa_dls(t: &SimplexTuple) -> f64 {
    let d = t.diam();
    if d <= 0.0 || h_min(t) <= 0.0 {
        return 0.0;
    }
    let k = t.len();
    let m = k - 2;
    let n = t.dim();
    let mut centroid = vec![0.0; n];
    for i in 0..k {
        for (c, x) in centroid.iter_mut().zip(t.point(i)) {
            *c += x / k as f64;
        }
    }
    // Gram matrix of centred points shares the nonzero spectrum of the scatter.
    let mut g = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v: f64 = t
                .point(i)
                .iter()
                .zip(t.point(j))
                .zip(&centroid)
                .map(|((a, b), c)| (a - c) * (b - c))
                .sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = eig[..m].iter().product();
    if top <= 0.0 {
        return 0.0;
    }
    let wedge = t.wedge_norm();
    let lambda_min = wedge * wedge / (k as f64 * top);
    lambda_min.max(0.0).sqrt() / d
}

/// `curvature(T)^p / diam(T)^{m(l−1)+αp}`, the integrand of the hybrid energy.
pub fn k_integrand(kind: CurvatureKind, t: &SimplexTuple, l: usize, p: f64, alpha: f64) -> f64 {
    let d = t.diam();
    if d <= 0.0 {
        return 0.0;
    }
    let c = kind.eval(t);
    if c == 0.0 {
        return 0.0;
    }
    let m = t.m() as f64;
    let exponent = m * (l as f64 - 1.0) + alpha * p;
    c.powf(p) / d.powf(exponent)
}

/// Validates `(l, p, alpha)` against the ranges the energy is defined for.
pub fn check_energy_params(m: usize, l: usize, p: f64, alpha: f64) -> Result<()> {
    if l < 1 || l > m + 2 {
        return Err(Error::invalid(format!("l must be in 1..={}, got {l}", m + 2)));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must be in [1, inf), got {p}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tuple<const N: usize>(pts: &[[f64; N]]) -> SimplexTuple {
        SimplexTuple::from_points(pts).unwrap()
    }

    fn right() -> SimplexTuple {
        tuple(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    }

    fn equilateral() -> SimplexTuple {
        tuple(&[[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]])
    }

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(kappa(&right()), 0.5 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(kappa(&equilateral()), 3f64.sqrt() / 4.0, epsilon = 1e-15);
        assert_eq!(kappa(&tuple(&[[0.0, 0.0], [1.0, 2.0], [1.0, 2.0]])), 0.0);
        assert_eq!(kappa(&tuple(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])), 0.0);
    }

    #[test]
    fn h_min_examples() {
        // distances: origin to hypotenuse 1/√2, (1,0) to y-axis 1, (0,1) to x-axis 1
        assert_relative_eq!(h_min(&right()), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(h_min(&tuple(&[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]])) < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let h = 0.5f64.powi(k);
            let v = h_min(&tuple(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]));
            // altitude from the apex is h, the smallest for small h
            assert_relative_eq!(v, h, max_relative = 1e-12);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn kappa_h_examples() {
        assert_relative_eq!(kappa_h(&right()), 0.5, epsilon = 1e-15);
        assert_eq!(kappa_h(&tuple(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])), 0.0);
        assert_relative_eq!(kappa_h(&equilateral()), 3f64.sqrt() / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn pm_sin_examples() {
        assert_relative_eq!(pm_sin(&right(), 0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(pm_sin(&right(), 1).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(pm_sin(&right(), 2).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        let rep = tuple(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(pm_sin(&rep, 1), Err(Error::RepeatedVertex { .. })));
        assert_eq!(kappa_min(&rep), 0.0);
    }

    #[test]
    fn kappa_min_max_examples() {
        assert_relative_eq!(kappa_min(&right()), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(kappa_max(&right()), 1.0, epsilon = 1e-15);
        let col = tuple(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(kappa_min(&col), 0.0);
        assert_eq!(kappa_max(&col), 0.0);
    }

    #[test]
    fn kappa_dls_examples() {
        // scatter eigenvalues {1, 1/3}
        assert_relative_eq!(kappa_dls(&right()), 1.0 / 6f64.sqrt(), epsilon = 1e-14);
        let flat = tuple(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.7, 0.2, 0.0],
        ]);
        assert_eq!(kappa_dls(&flat), 0.0);
    }

    #[test]
    fn k_integrand_examples() {
        let t = tuple(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let d = 2f64.sqrt();
        // l = m + 2, p = 2, alpha = 0: H^{m+1}² / diam^{(m+2)(m+1)}
        let menger = simplex_volume(&t).powi(2) / d.powi(6);
        assert_relative_eq!(k_integrand(CurvatureKind::Kappa, &t, 3, 2.0, 0.0), menger, epsilon = 1e-15);
        let deg = tuple(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(k_integrand(CurvatureKind::KappaH, &deg, 2, 1.0, 0.5), 0.0);
        // l = 1 leaves only alpha * p in the exponent
        let v = k_integrand(CurvatureKind::Kappa, &t, 1, 2.0, 0.5);
        assert_relative_eq!(v, kappa(&t).powi(2) / d.powf(1.0), epsilon = 1e-15);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in CurvatureKind::ALL {
            assert_eq!(k.as_str().parse::<CurvatureKind>().unwrap(), k);
        }
        assert!("kappa_x".parse::<CurvatureKind>().is_err());
    }
}
