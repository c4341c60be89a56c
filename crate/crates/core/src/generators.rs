//! Synthetic clouds with known geometry: flat patches, round spheres,
//! lacunary `C^{1,β}` graphs and the four-corner Cantor set.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Plane;
use crate::measure::{unit_ball_volume, PointCloud};
use crate::parallel::rng;
use crate::tangent::GraphMap;

/// Oracle metadata written next to a generated cloud.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub generator: String,
    pub m: usize,
    pub n: usize,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Upper bound for `‖Df(x) − Df(y)‖ / |x − y|^β`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hoelder_constant: Option<f64>,
    /// The same quotient maximized over a fine grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hoelder_realized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub total_mass: f64,
}

/// A generated cloud with the exact tangent plane at every point (when the
/// set has one).
#[derive(Clone, Debug)]
pub struct Fixture {
    pub cloud: PointCloud,
    pub tangents: Option<Vec<Plane>>,
    pub meta: FixtureMeta,
}

impl Fixture {
    pub fn write_sidecar<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.meta)?;
        Ok(())
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Ok(())
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m < 1 || m >= n {
        return Err(Error::invalid(format!("need 1 <= m < n, got m = {m}, n = {n}")));
    }
    Ok(())
}

/// Grid side `k` with `k^m <= count`, at least 1.
fn grid_side(count: usize, m: usize) -> usize {
    let mut k = (count as f64).powf(1.0 / m as f64).round() as usize;
    while k > 1 && k.pow(m as u32) > count {
        k -= 1;
    }
    while (k + 1).pow(m as u32) <= count {
        k += 1;
    }
    k.max(1)
}

/// Cell centres of the regular `k^m` grid on `[−1, 1]^m`.
fn grid_params(m: usize, k: usize) -> Vec<Vec<f64>> {
    let total = k.pow(m as u32);
    (0..total)
        .map(|mut t| {
            let mut x = vec![0.0; m];
            for slot in x.iter_mut().rev() {
                *slot = -1.0 + ((t % k) as f64 + 0.5) * 2.0 / k as f64;
                t /= k;
            }
            x
        })
        .collect()
}

/// The cube `[−1, 1]^m` in the first `m` coordinates of `R^n`, on a grid of
/// `⌊count^{1/m}⌋^m` cell centres.
pub fn gen_plane(m: usize, n: usize, count: usize) -> Result<Fixture> {
    check_count(count)?;
    check_dims(m, n)?;
    let k = grid_side(count, m);
    let params = grid_params(m, k);
    let total = params.len();
    let pts: Vec<Vec<f64>> = params
        .into_iter()
        .map(|mut x| {
            x.resize(n, 0.0);
            x
        })
        .collect();
    let area = 2f64.powi(m as i32);
    let cloud = PointCloud::new(pts, vec![area / total as f64; total], m)?;
    let t = Plane::coordinate(n, &(0..m).collect::<Vec<_>>());
    Ok(Fixture {
        tangents: Some(vec![t; total]),
        meta: FixtureMeta {
            generator: "plane".into(),
            m,
            n,
            count: total,
            total_mass: cloud.total_mass(),
            ..FixtureMeta::default()
        },
        cloud,
    })
}

/// `[−1, 1] × {0}^{n−1}` at equally spaced cell centres.
pub fn gen_segment(n: usize, count: usize) -> Result<Fixture> {
    check_count(count)?;
    check_dims(1, n)?;
    let mut f = gen_plane(1, n, count)?;
    f.meta.generator = "segment".into();
    Ok(f)
}

/// Area of the unit `m`-sphere.
pub fn sphere_area(m: usize) -> f64 {
    (m + 1) as f64 * unit_ball_volume(m + 1)
}

/// The unit `m`-sphere in the first `m + 1` coordinates of `R^n`:
/// equally spaced for `m = 1`, normalized Gaussians otherwise.
pub fn gen_sphere(m: usize, n: usize, count: usize, seed: u64) -> Result<Fixture> {
    check_count(count)?;
    check_dims(m, n)?;
    if n < m + 1 {
        return Err(Error::invalid("the m-sphere needs n >= m + 1"));
    }
    let mut pts = Vec::with_capacity(count);
    if m == 1 {
        for i in 0..count {
            let th = 2.0 * PI * i as f64 / count as f64;
            let mut p = vec![0.0; n];
            p[0] = th.cos();
            p[1] = th.sin();
            pts.push(p);
        }
    } else {
        let mut g = rng(seed, 0);
        while pts.len() < count {
            // Box-Muller
            let mut v: Vec<f64> = (0..m + 1)
                .map(|_| {
                    let u1: f64 = 1.0 - g.gen::<f64>();
                    let u2: f64 = g.gen();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
                })
                .collect();
            let r = crate::geom::norm(&v);
            if r < 1e-12 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= r);
            v.resize(n, 0.0);
            pts.push(v);
        }
    }
    let tangents = pts.iter().map(|p| sphere_tangent(p, m)).collect();
    let cloud = PointCloud::new(pts, vec![sphere_area(m) / count as f64; count], m)?;
    Ok(Fixture {
        tangents: Some(tangents),
        meta: FixtureMeta {
            generator: "sphere".into(),
            m,
            n,
            count,
            seed: (m > 1).then_some(seed),
            total_mass: cloud.total_mass(),
            ..FixtureMeta::default()
        },
        cloud,
    })
}

/// Orthogonal complement of `x` inside the first `m + 1` coordinates.
fn sphere_tangent(x: &[f64], m: usize) -> Plane {
    let n = x.len();
    let mut vs = Vec::with_capacity(m);
    for e in 0..=m {
        if vs.len() == m {
            break;
        }
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        let c = x[e];
        for (vi, xi) in v.iter_mut().zip(x) {
            *vi -= c * xi;
        }
        let mut cand = vs.clone();
        cand.push(v);
        if Plane::from_owned_vectors(&cand).is_ok() {
            vs = cand;
        }
    }
    Plane::from_owned_vectors(&vs).expect("tangent space of the sphere")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSampling {
    Grid,
    Random,
}

/// Graph of the lacunary series
/// `f_k(x) = A Σ_{j ≤ depth} 4^{−j(1+β)} Σ_i sin(2π(4^j x_i + c_{k,i})) / 2π`
/// over `[−1, 1]^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub m: usize,
    pub n: usize,
    pub beta: f64,
    pub depth: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub sampling: ParamSampling,
    pub count: usize,
    /// `phases[k][i] = c_{k,i}`.
    phases: Vec<Vec<f64>>,
}

impl GraphSpec {
    pub const DEFAULT_DEPTH: usize = 8;

    pub fn new(m: usize, n: usize, beta: f64, amplitude: f64, count: usize, seed: u64) -> Result<Self> {
        check_dims(m, n)?;
        check_count(count)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta must be in (0, 1], got {beta}")));
        }
        if !amplitude.is_finite() {
            return Err(Error::invalid("amplitude must be finite"));
        }
        let mut g = rng(seed, 0);
        let phases = (0..n - m).map(|_| (0..m).map(|_| g.gen::<f64>()).collect()).collect();
        Ok(Self {
            m,
            n,
            beta,
            depth: Self::DEFAULT_DEPTH,
            amplitude,
            seed,
            sampling: ParamSampling::Grid,
            count,
            phases,
        })
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_sampling(mut self, sampling: ParamSampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// `A Σ_j 4^{−jβ} min(2π 4^j t, 2)`, a bound on `|ΔDf_{k,i}|` over
    /// parameter steps of length `t`.
    fn increment_bound(&self, t: f64) -> f64 {
        self.amplitude.abs()
            * (0..=self.depth)
                .map(|j| {
                    let s = 4f64.powi(j as i32);
                    s.powf(-self.beta) * (2.0 * PI * s * t).min(2.0)
                })
                .sum::<f64>()
    }

    /// `sqrt(m(n−m)) sup_{0<t≤2√m} B(t)/t^β`, evaluated exactly: `B` is
    /// piecewise linear with kinks at `1/(π 4^j)`, so the supremum sits at a
    /// kink, an endpoint or a stationary point of `(c_1 t + c_0)/t^β`.
    pub fn hoelder_constant(&self) -> f64 {
        let b = self.beta;
        let t_max = 2.0 * (self.m as f64).sqrt();
        let mut cands = vec![t_max];
        let kinks: Vec<f64> = (0..=self.depth)
            .map(|j| 1.0 / (PI * 4f64.powi(j as i32)))
            .filter(|&t| t < t_max)
            .collect();
        cands.extend(&kinks);
        let mut edges = kinks.clone();
        edges.push(0.0);
        edges.push(t_max);
        edges.sort_by(f64::total_cmp);
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let (mut c1, mut c0) = (0.0, 0.0);
            for j in 0..=self.depth {
                let s = 4f64.powi(j as i32);
                if 2.0 * PI * s * mid < 2.0 {
                    c1 += s.powf(-b) * 2.0 * PI * s;
                } else {
                    c0 += s.powf(-b) * 2.0;
                }
            }
            if b < 1.0 && c1 > 0.0 && c0 > 0.0 {
                let t = b * c0 / ((1.0 - b) * c1);
                if t > lo && t < hi {
                    cands.push(t);
                }
            }
            if lo == 0.0 && b == 1.0 {
                // B(t)/t → c_1 as t → 0
                cands.push(lo.max(hi * 1e-9));
            }
        }
        let sup = cands
            .into_iter()
            .filter(|&t| t > 0.0)
            .map(|t| self.increment_bound(t) / t.powf(b))
            .fold(0.0, f64::max);
        ((self.m * (self.n - self.m)) as f64).sqrt() * sup
    }

    /// `max ‖Df(x) − Df(y)‖ / |x − y|^β` over pairs of a grid with `per_axis`
    /// points per axis.
    pub fn hoelder_realized(&self, per_axis: usize) -> f64 {
        let xs = grid_params(self.m, per_axis.max(2));
        let dfs: Vec<DMatrix<f64>> = xs.iter().map(|x| self.df(x)).collect();
        let mut best: f64 = 0.0;
        for i in 0..xs.len() {
            for j in (i + 1)..xs.len() {
                let d = crate::geom::distance(&xs[i], &xs[j]);
                let q = crate::geom::spectral_norm(&(&dfs[i] - &dfs[j])) / d.powf(self.beta);
                best = best.max(q);
            }
        }
        best
    }

    fn parameters(&self) -> Vec<(Vec<f64>, f64)> {
        let m = self.m;
        let cube = 2f64.powi(m as i32);
        match self.sampling {
            ParamSampling::Grid => {
                let k = grid_side(self.count, m);
                let cell = cube / k.pow(m as u32) as f64;
                grid_params(m, k).into_iter().map(|x| (x, cell)).collect()
            }
            ParamSampling::Random => {
                let mut g = rng(self.seed, 1);
                let cell = cube / self.count as f64;
                (0..self.count)
                    .map(|_| ((0..m).map(|_| g.gen_range(-1.0..1.0)).collect(), cell))
                    .collect()
            }
        }
    }

    /// `sqrt(det(I + Dfᵀ Df))`.
    pub fn area_element(&self, x: &[f64]) -> f64 {
        let d = self.df(x);
        let g = DMatrix::<f64>::identity(self.m, self.m) + d.transpose() * &d;
        g.determinant().max(0.0).sqrt()
    }

    pub fn generate(&self) -> Result<Fixture> {
        let params = self.parameters();
        let pts: Vec<Vec<f64>> = params.iter().map(|(x, _)| self.embed(x)).collect();
        let weights: Vec<f64> = params.iter().map(|(x, c)| c * self.area_element(x)).collect();
        let tangents = params.iter().map(|(x, _)| self.tangent(x)).collect();
        let cloud = PointCloud::new(pts, weights, self.m)?;
        let realized_axis = match self.m {
            1 => 400,
            2 => 24,
            _ => 8,
        };
        Ok(Fixture {
            tangents: Some(tangents),
            meta: FixtureMeta {
                generator: "c1beta".into(),
                m: self.m,
                n: self.n,
                count: cloud.len(),
                beta: Some(self.beta),
                amplitude: Some(self.amplitude),
                depth: Some(self.depth),
                seed: Some(self.seed),
                hoelder_constant: Some(self.hoelder_constant()),
                hoelder_realized: Some(self.hoelder_realized(realized_axis)),
                level: None,
                total_mass: cloud.total_mass(),
            },
            cloud,
        })
    }

    /// Parameter point of the `i`-th generated sample.
    pub fn parameter(&self, i: usize) -> Vec<f64> {
        self.parameters().swap_remove(i).0
    }
}

impl GraphMap for GraphSpec {
    fn m(&self) -> usize {
        self.m
    }

    fn codim(&self) -> usize {
        self.n - self.m
    }

    fn f(&self, x: &[f64]) -> Vec<f64> {
        self.phases
            .iter()
            .map(|c| {
                let mut s = 0.0;
                for j in 0..=self.depth {
                    let q = 4f64.powi(j as i32);
                    let amp = q.powf(-(1.0 + self.beta));
                    for (xi, ci) in x.iter().zip(c) {
                        s += amp * (2.0 * PI * (q * xi + ci)).sin();
                    }
                }
                self.amplitude * s / (2.0 * PI)
            })
            .collect()
    }

    fn df(&self, x: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n - self.m, self.m);
        for (k, c) in self.phases.iter().enumerate() {
            for (i, (xi, ci)) in x.iter().zip(c).enumerate() {
                let mut s = 0.0;
                for j in 0..=self.depth {
                    let q = 4f64.powi(j as i32);
                    s += q.powf(-self.beta) * (2.0 * PI * (q * xi + ci)).cos();
                }
                d[(k, i)] = self.amplitude * s;
            }
        }
        d
    }
}

/// Centres of the `4^level` squares of side `4^{−level}` kept by the
/// four-corner construction on `[0, 1]²`, each of weight `4^{−level}`.
pub fn gen_cantor4(level: usize) -> Result<Fixture> {
    if level < 1 {
        return Err(Error::invalid("cantor level must be at least 1"));
    }
    if level > 10 {
        return Err(Error::invalid("cantor level above 10 is not supported"));
    }
    let mut corners = vec![vec![0.0, 0.0]];
    let mut side = 1.0;
    for _ in 0..level {
        side /= 4.0;
        let big = side * 4.0;
        corners = corners
            .into_iter()
            .flat_map(|c| {
                let far = big - side;
                [
                    vec![c[0], c[1]],
                    vec![c[0] + far, c[1]],
                    vec![c[0], c[1] + far],
                    vec![c[0] + far, c[1] + far],
                ]
            })
            .collect();
    }
    let pts: Vec<Vec<f64>> = corners.into_iter().map(|c| vec![c[0] + side / 2.0, c[1] + side / 2.0]).collect();
    let count = pts.len();
    let cloud = PointCloud::new(pts, vec![1.0 / count as f64; count], 1)?;
    Ok(Fixture {
        tangents: None,
        meta: FixtureMeta {
            generator: "cantor4".into(),
            m: 1,
            n: 2,
            count,
            level: Some(level),
            total_mass: cloud.total_mass(),
            ..FixtureMeta::default()
        },
        cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{h_min, CurvatureKind};
    use crate::energy::{beta_number, k_energy, KParams, Sampling};
    use crate::geom::{plane_distance, tilt_norm, SimplexTuple};
    use crate::measure::density_profile;
    use approx::assert_relative_eq;

    #[test]
    fn plane_density_is_one_inside() {
        let f = gen_plane(2, 3, 10_000).unwrap();
        let prof = density_profile(&f.cloud, &[0.0, 0.0, 0.0], 0.5, 3).unwrap();
        for r in prof.ratios {
            assert!((r - 1.0).abs() < 0.05, "{r}");
        }
        assert!(gen_plane(1, 2, 0).is_err());
    }

    #[test]
    fn circle_tangents() {
        let f = gen_sphere(1, 2, 12, 0).unwrap();
        let tangents = f.tangents.unwrap();
        for (i, t) in tangents.iter().enumerate() {
            let th = 2.0 * PI * i as f64 / 12.0;
            let expect = Plane::from_vectors(&[&[-th.sin(), th.cos()]]).unwrap();
            assert!(plane_distance(t, &expect).unwrap() < 1e-12);
        }
        assert_relative_eq!(f.cloud.total_mass(), 2.0 * PI, epsilon = 1e-12);
        let s2 = gen_sphere(2, 4, 50, 3).unwrap();
        for (p, t) in s2.cloud.points().zip(s2.tangents.unwrap()) {
            assert!(t.reject_norm(p) > 1.0 - 1e-12);
            assert_eq!(t.dim(), 2);
        }
    }

    #[test]
    fn segment_kernels_vanish() {
        let f = gen_segment(3, 9).unwrap();
        for l in 1..=3 {
            let params = KParams::new(CurvatureKind::KappaH, l, 1.0, 0.0);
            let e = k_energy(&f.cloud, &params, f.cloud.point(4), 2.0, &Sampling::default()).unwrap();
            assert_eq!(e.value, 0.0);
        }
    }

    #[test]
    fn finite_differences_match_derivative() {
        let g = GraphSpec::new(2, 4, 0.5, 0.7, 100, 11).unwrap().with_depth(3);
        let h = 1e-5;
        for x in [[0.1, -0.3], [0.77, 0.2], [-0.9, 0.95]] {
            let d = g.df(&x);
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let (fp, fm) = (g.f(&xp), g.f(&xm));
                for k in 0..2 {
                    let fd = (fp[k] - fm[k]) / (2.0 * h);
                    assert!((fd - d[(k, i)]).abs() <= 1e-3 * d[(k, i)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn tilt_matches_derivative_norm() {
        let g = GraphSpec::new(1, 3, 0.8, 0.5, 10, 5).unwrap();
        let base = Plane::coordinate(3, &[0]);
        for x in [-0.8, -0.1, 0.33, 0.9] {
            let d = crate::geom::spectral_norm(&g.df(&[x]));
            let dist = plane_distance(&g.tangent(&[x]), &base).unwrap();
            assert!((dist - tilt_norm(d)).abs() <= 1e-8);
        }
    }

    #[test]
    fn hoelder_constant_bounds_realized_quotient() {
        for beta in [0.3, 0.5, 0.8, 1.0] {
            let g = GraphSpec::new(1, 2, beta, 0.3, 10, 7).unwrap();
            let bound = g.hoelder_constant();
            let realized = g.hoelder_realized(400);
            assert!(realized <= bound * (1.0 + 1e-12), "{beta}: {realized} > {bound}");
            if beta < 1.0 {
                assert!(realized >= 0.5 * bound, "{beta}: {realized} vs {bound}");
            }
        }
        for seed in 0..5 {
            let g = GraphSpec::new(1, 2, 0.5, 0.1, 10, seed).unwrap();
            let q = g.hoelder_realized(400) / g.hoelder_constant();
            assert!((0.5..=1.0).contains(&q), "{seed}: {q}");
        }
    }

    #[test]
    fn smooth_patch_obeys_hmin_bound() {
        let g = GraphSpec::new(1, 2, 1.0, 0.4, 30, 2).unwrap().with_depth(0);
        let f = g.generate().unwrap();
        let m_const = g.hoelder_constant();
        let c = &f.cloud;
        for i in (0..30).step_by(3) {
            for j in (1..30).step_by(4) {
                for k in (2..30).step_by(5) {
                    let t = SimplexTuple::new(&[c.point(i), c.point(j), c.point(k)]).unwrap();
                    assert!(h_min(&t) <= m_const * 3.0 * t.diam().powi(2) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let f = GraphSpec::new(1, 2, 0.5, 0.0, 40, 1).unwrap().generate().unwrap();
        let params = KParams::new(CurvatureKind::Kappa, 2, 2.0, 0.3);
        let e = k_energy(&f.cloud, &params, f.cloud.point(20), 0.5, &Sampling::default()).unwrap();
        assert_eq!(e.value, 0.0);
        assert_relative_eq!(f.cloud.total_mass(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_weights_follow_arc_length() {
        let g = GraphSpec::new(1, 2, 0.5, 0.3, 2000, 3).unwrap();
        let f = g.generate().unwrap();
        assert_eq!(f.cloud.len(), 2000);
        assert_relative_eq!(g.parameter(0)[0], -1.0 + 0.5 * 2.0 / 2000.0, epsilon = 1e-15);
        let poly: f64 = f.cloud.points().collect::<Vec<_>>().windows(2).map(|w| crate::geom::distance(w[0], w[1])).sum();
        assert!((f.cloud.total_mass() - poly).abs() < 0.02 * poly);
    }

    #[test]
    fn cantor_levels() {
        let f = gen_cantor4(1).unwrap();
        assert_eq!(f.cloud.len(), 4);
        assert_relative_eq!(f.cloud.point(3)[0], 7.0 / 8.0);
        let b = beta_number(&f.cloud, &[0.5, 0.5], 1.0, 2.0).unwrap();
        assert_relative_eq!(b.value, 0.375, epsilon = 1e-12);
        for level in 1..=5 {
            let f = gen_cantor4(level).unwrap();
            assert_eq!(f.cloud.len(), 4usize.pow(level as u32));
            assert_relative_eq!(f.cloud.total_mass(), 1.0, epsilon = 1e-12);
        }
    }
}
