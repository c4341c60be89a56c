//! Balanced-ball dichotomy and fat simplex statistics.
//!
//! A tuple `(b_1, ..., b_m)` of points in `B̄(a, r)` is δ-fat when
//! `|(b_1 − a) ∧ ... ∧ (b_m − a)| ≥ δ r^m`.

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::energy::{Mode, Sampling};
use crate::error::{Error, Result};
use crate::geom::{distance, gram_volume, Plane};
use crate::measure::PointCloud;
use crate::parallel::{map_indexed, pairwise_sum, rng};

const REL_SLACK: f64 = 1e-12;

/// Constant of the balanced alternative, `2^{n+1}`.
pub fn gamma_balanced(n: usize) -> f64 {
    2f64.powi(n as i32 + 1)
}

/// Constant of the concentrated alternative, `4 · 20^m`.
pub fn gamma_concentrated(m: usize) -> f64 {
    4.0 * 20f64.powi(m as i32)
}

/// Ball-radius factor keeping perturbed fat tuples fat: `(1 + γ^m/2)^{1/m} − 1`.
pub fn perturbation_factor(gamma: f64, m: usize) -> f64 {
    (1.0 + 0.5 * gamma.powi(m as i32)).powf(1.0 / m as f64) - 1.0
}

fn offsets(a: &[f64], tuple: &[&[f64]]) -> Vec<Vec<f64>> {
    tuple.iter().map(|b| crate::geom::sub(b, a)).collect()
}

fn wedge_from(a: &[f64], tuple: &[&[f64]]) -> Result<f64> {
    let vs = offsets(a, tuple);
    let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    gram_volume(&refs)
}

pub fn x_delta_member(a: &[f64], r: f64, delta: f64, tuple: &[&[f64]]) -> Result<bool> {
    Ok(wedge_from(a, tuple)? >= delta * r.powi(tuple.len() as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatSimplexStat {
    pub delta: f64,
    pub fraction: f64,
    pub stderr: f64,
    pub mode: Mode,
    pub tuples: u64,
}

/// Normalized wedge volumes `|∧(b_i − a)| / r^m` of the m-tuples from the
/// ball, with the probability of each under `(μ⌞B̄ / μ(B̄))^m`.
struct FatSample {
    volumes: Vec<f64>,
    probs: Vec<f64>,
    mode: Mode,
}

impl FatSample {
    fn collect(cloud: &PointCloud, a: &[f64], r: f64, sampling: &Sampling) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        let ball = cloud.ball_indices(a, r);
        if ball.is_empty() {
            return Err(Error::EmptyBall { radius: r });
        }
        let m = cloud.m();
        let mass = cloud.mass_of(&ball);
        let rm = r.powi(m as i32);
        let n = ball.len();
        let count = (n as u64).checked_pow(m as u32).unwrap_or(u64::MAX);
        let eval = |idx: &[usize]| {
            let pts: Vec<&[f64]> = idx.iter().map(|&i| cloud.point(i)).collect();
            wedge_from(a, &pts).unwrap_or(0.0) / rm
        };
        if count <= sampling.exhaustive_cap {
            let rows: Vec<(f64, f64)> = map_indexed(count as usize, |t| {
                let mut rest = t;
                let mut idx = vec![0usize; m];
                for slot in idx.iter_mut().rev() {
                    *slot = ball[rest % n];
                    rest /= n;
                }
                let p: f64 = idx.iter().map(|&i| cloud.weight(i) / mass).product();
                (eval(&idx), p)
            });
            let (volumes, probs) = rows.into_iter().unzip();
            return Ok(Self {
                volumes,
                probs,
                mode: Mode::Exhaustive,
            });
        }
        let weights: Vec<f64> = ball.iter().map(|&i| cloud.weight(i)).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        let mut g = rng(sampling.seed, 0xfa7);
        let draws: Vec<Vec<usize>> = (0..sampling.budget)
            .map(|_| (0..m).map(|_| ball[dist.sample(&mut g)]).collect())
            .collect();
        let volumes = map_indexed(draws.len(), |s| eval(&draws[s]));
        let p = 1.0 / draws.len() as f64;
        Ok(Self {
            probs: vec![p; volumes.len()],
            volumes,
            mode: Mode::MonteCarlo,
        })
    }

    fn stat(&self, delta: f64) -> FatSimplexStat {
        let hits: Vec<f64> = self
            .volumes
            .iter()
            .zip(&self.probs)
            .map(|(&v, &p)| if v >= delta { p } else { 0.0 })
            .collect();
        let fraction = (pairwise_sum(&hits) / pairwise_sum(&self.probs)).clamp(0.0, 1.0);
        let stderr = match self.mode {
            Mode::Exhaustive => 0.0,
            Mode::MonteCarlo => (fraction * (1.0 - fraction) / self.volumes.len() as f64).sqrt(),
        };
        FatSimplexStat {
            delta,
            fraction,
            stderr,
            mode: self.mode,
            tuples: self.volumes.len() as u64,
        }
    }
}

/// `μ^m(X_δ(a, r)) / μ(B̄(a, r))^m`.
pub fn fat_fraction(cloud: &PointCloud, a: &[f64], r: f64, delta: f64, sampling: &Sampling) -> Result<FatSimplexStat> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must be in [0, 1], got {delta}")));
    }
    Ok(FatSample::collect(cloud, a, r, sampling)?.stat(delta))
}

/// Largest δ (to resolution 1e-3) whose fat fraction is at least `sigma`.
pub fn fat_simplex_search(cloud: &PointCloud, a: &[f64], r: f64, sigma: f64, sampling: &Sampling) -> Result<f64> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::invalid(format!("sigma must be in (0, 1], got {sigma}")));
    }
    let sample = FatSample::collect(cloud, a, r, sampling)?;
    let ok = |d: f64| sample.stat(d).fraction >= sigma;
    if ok(1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum Dichotomy {
    /// Points `x_{k+1}, ..., x_m` and the planes `L_{k+1}, ..., L_m`
    /// (linear) they generate; `masses[i] = μ(B̄(x_i, tr) ∩ B̄(a, r))`.
    Balanced {
        points: Vec<Vec<f64>>,
        planes: Vec<Plane>,
        masses: Vec<f64>,
    },
    /// Centres `y_i ∈ b + L_λ` with `masses[i] = μ(B̄(y_i, 4γr))`.
    Concentrated {
        lambda: usize,
        plane: Plane,
        centers: Vec<Vec<f64>>,
        masses: Vec<f64>,
    },
}

/// Inputs of the dichotomy.
#[derive(Clone, Debug)]
pub struct DichotomyInput<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub r: f64,
    pub t: f64,
    pub gamma: f64,
    pub k: usize,
    /// Linear `k`-plane; `None` means the zero subspace.
    pub l_k: Option<&'a Plane>,
}

fn ge(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs * (1.0 - REL_SLACK)
}

fn mass_in_both(cloud: &PointCloud, x: &[f64], rx: f64, a: &[f64], r: f64) -> f64 {
    cloud
        .ball_indices(x, rx)
        .into_iter()
        .filter(|&i| distance(cloud.point(i), a) <= r)
        .map(|i| cloud.weight(i))
        .sum()
}

fn check_input(cloud: &PointCloud, inp: &DichotomyInput) -> Result<(Plane, f64)> {
    let n = cloud.ambient_dim();
    let m = cloud.m();
    for v in [inp.a, inp.b] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
    }
    if !(inp.r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    if !(inp.t > 0.0 && inp.t < 1.0 && inp.gamma > 0.0 && inp.gamma < 1.0) {
        return Err(Error::invalid("t and gamma must lie in (0, 1)"));
    }
    if inp.k >= m {
        return Err(Error::invalid(format!("need k < m, got k = {}", inp.k)));
    }
    let l_k = match inp.l_k {
        None => Plane::trivial(n),
        Some(p) => p.linear(),
    };
    if l_k.dim() != inp.k || l_k.ambient_dim() != n {
        return Err(Error::invalid("L_k must be a k-plane in the ambient space"));
    }
    let mass = cloud.ball_mass(inp.a, inp.r);
    if mass <= 0.0 {
        return Err(Error::EmptyBall { radius: inp.r });
    }
    Ok((l_k, mass))
}

/// Checks every invariant of the returned branch; `Err` holds the first
/// violated one.
pub fn verify_dichotomy(cloud: &PointCloud, inp: &DichotomyInput, d: &Dichotomy) -> std::result::Result<(), String> {
    let (l_k, mass) = check_input(cloud, inp).map_err(|e| e.to_string())?;
    let (n, m) = (cloud.ambient_dim(), cloud.m());
    let (r, gamma, t) = (inp.r, inp.gamma, inp.t);
    match d {
        Dichotomy::Balanced { points, planes, masses } => {
            if points.len() != m - inp.k || planes.len() != points.len() {
                return Err("balanced branch needs m − k points".into());
            }
            let floor = t.powi(n as i32) * mass / gamma_balanced(n);
            let mut prev = l_k;
            for (j, x) in points.iter().enumerate() {
                if distance(x, inp.a) > r {
                    return Err(format!("x_{} lies outside the ball", inp.k + j + 1));
                }
                let v = crate::geom::sub(x, inp.b);
                if prev.reject_norm(&v) <= gamma * r {
                    return Err(format!("x_{} is within γr of L_{}", inp.k + j + 1, inp.k + j));
                }
                let s = mass_in_both(cloud, x, t * r, inp.a, r);
                if (s - masses[j]).abs() > REL_SLACK * mass || !ge(s, floor) {
                    return Err(format!("x_{} carries too little mass", inp.k + j + 1));
                }
                let next = prev.extend(&v).map_err(|e| e.to_string())?;
                if crate::geom::plane_distance(&next, &planes[j]).map_err(|e| e.to_string())? > 1e-9 {
                    return Err(format!("L_{} does not match the chain", inp.k + j + 1));
                }
                prev = next;
            }
            Ok(())
        }
        Dichotomy::Concentrated { lambda, plane, centers, masses } => {
            let lambda = *lambda;
            if lambda < inp.k || lambda >= m || plane.dim() != lambda {
                return Err(format!("λ = {lambda} is outside k..m"));
            }
            for u in l_k.basis() {
                if plane.reject_norm(u) > 1e-9 {
                    return Err("L_k is not contained in L_λ".into());
                }
            }
            let g2 = gamma_concentrated(m);
            let big_n = centers.len();
            if big_n == 0 || big_n as f64 > g2 * gamma.powi(-(lambda as i32)) {
                return Err(format!("N = {big_n} violates 1 <= N <= Γ γ^-λ"));
            }
            let small = 4.0 * gamma * r;
            for (i, y) in centers.iter().enumerate() {
                if distance(y, inp.a) > r * (1.0 + REL_SLACK) {
                    return Err(format!("y_{} lies outside the ball", i + 1));
                }
                let v = crate::geom::sub(y, inp.b);
                if plane.reject_norm(&v) > 1e-9 * r.max(crate::geom::norm(&v)) {
                    return Err(format!("y_{} is off b + L_λ", i + 1));
                }
                for z in &centers[..i] {
                    if distance(y, z) <= 80.0 * gamma * r {
                        return Err("40γr-balls are not disjoint".into());
                    }
                }
                let s = cloud.ball_mass(y, small);
                if (s - masses[i]).abs() > REL_SLACK * mass {
                    return Err(format!("recorded mass of y_{} is stale", i + 1));
                }
                let density_floor = gamma.powi(-((m - lambda) as i32)) * mass / (g2 * r.powi(m as i32));
                if !ge(s / small.powi(m as i32), density_floor) {
                    return Err(format!("density at y_{} is too small", i + 1));
                }
            }
            if !ge(masses.iter().sum::<f64>(), mass / g2) {
                return Err("centres carry too little total mass".into());
            }
            Ok(())
        }
    }
}

fn concentrated(
    cloud: &PointCloud,
    inp: &DichotomyInput,
    lambda: usize,
    l_lambda: &Plane,
    mass: f64,
) -> Dichotomy {
    let (a, b, r, gamma) = (inp.a, inp.b, inp.r, inp.gamma);
    let affine = l_lambda.linear().with_offset(b);
    // b + L_λ meets B̄(a, r) in a disc around the foot of a
    let foot = affine.project_point(a);
    let disc = (r * r - distance(&foot, a).powi(2)).max(0.0).sqrt();
    let clamp = |z: Vec<f64>| {
        let d = distance(&z, &foot);
        if d <= disc {
            z
        } else {
            foot.iter().zip(&z).map(|(f, x)| f + (x - f) * disc / d).collect()
        }
    };
    let ball = cloud.ball_indices(a, r);
    let mut net: Vec<Vec<f64>> = Vec::new();
    for &i in &ball {
        let x = cloud.point(i);
        if affine.distance_to(x) > gamma * r {
            continue;
        }
        let z = clamp(affine.project_point(x));
        if net.iter().all(|q| distance(q, &z) > gamma * r) {
            net.push(z);
        }
    }
    let small = 4.0 * gamma * r;
    let kk = (4.0 * gamma).powi(-(lambda as i32));
    let mut pool: Vec<(Vec<f64>, f64)> = net
        .into_iter()
        .map(|z| {
            let s = cloud.ball_mass(&z, small);
            (z, s)
        })
        .filter(|(_, s)| *s >= mass / (4.0 * kk))
        .collect();
    let mut centers = Vec::new();
    let mut masses = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for (i, (_, s)) in pool.iter().enumerate() {
            if *s > pool[best].1 {
                best = i;
            }
        }
        let (y, s) = pool.swap_remove(best);
        pool.retain(|(z, _)| distance(z, &y) > 80.0 * gamma * r);
        centers.push(y);
        masses.push(s);
    }
    Dichotomy::Concentrated {
        lambda,
        plane: l_lambda.linear(),
        centers,
        masses,
    }
}

/// Greedy construction of one alternative, returned only once its invariants
/// verify on the cloud.
pub fn balanced_dichotomy(cloud: &PointCloud, inp: &DichotomyInput) -> Result<Dichotomy> {
    let (l_k, mass) = check_input(cloud, inp)?;
    let (n, m) = (cloud.ambient_dim(), cloud.m());
    let (a, b, r, t, gamma) = (inp.a, inp.b, inp.r, inp.t, inp.gamma);
    let eps = 0.5f64.powi(n as i32 + 1) * t.powi(n as i32);
    let ball = cloud.ball_indices(a, r);
    let s_of: Vec<f64> = map_indexed(ball.len(), |k| mass_in_both(cloud, cloud.point(ball[k]), t * r, a, r));

    let mut plane = l_k;
    let mut points = Vec::new();
    let mut planes = Vec::new();
    let mut masses = Vec::new();
    for j in inp.k + 1..=m {
        let mut best: Option<usize> = None;
        for (k, &i) in ball.iter().enumerate() {
            let v = crate::geom::sub(cloud.point(i), b);
            if plane.reject_norm(&v) <= gamma * r {
                continue;
            }
            if best.is_none_or(|q| s_of[k] > s_of[q]) {
                best = Some(k);
            }
        }
        let pick = best.filter(|&k| s_of[k] > eps * mass);
        let Some(k) = pick else {
            let d = concentrated(cloud, inp, j - 1, &plane, mass);
            return match verify_dichotomy(cloud, inp, &d) {
                Ok(()) => Ok(d),
                Err(reason) => Err(Error::NoValidBranch { radius: r, reason }),
            };
        };
        let x = cloud.point(ball[k]);
        plane = plane.extend(&crate::geom::sub(x, b))?;
        points.push(x.to_vec());
        planes.push(plane.clone());
        masses.push(s_of[k]);
    }
    let d = Dichotomy::Balanced { points, planes, masses };
    match verify_dichotomy(cloud, inp, &d) {
        Ok(()) => Ok(d),
        Err(reason) => Err(Error::NoValidBranch { radius: r, reason }),
    }
}

/// Halves γ from 1/2 until the dichotomy at `b = a`, `k = 0` certifies the
/// balanced alternative with `t = perturbation_factor(γ, m)`.
pub fn fat_gamma_search(cloud: &PointCloud, a: &[f64], r: f64, max_halvings: usize) -> Result<(f64, Dichotomy)> {
    let mut last = None;
    let mut gamma = 0.5;
    for _ in 0..max_halvings.max(1) {
        let inp = DichotomyInput {
            a,
            b: a,
            r,
            t: perturbation_factor(gamma, cloud.m()),
            gamma,
            k: 0,
            l_k: None,
        };
        match balanced_dichotomy(cloud, &inp) {
            Ok(d @ Dichotomy::Balanced { .. }) => return Ok((gamma, d)),
            Ok(d) => last = Some(Ok((gamma, d))),
            Err(e @ Error::NoValidBranch { .. }) => last = Some(Err(e)),
            Err(e) => return Err(e),
        }
        gamma *= 0.5;
    }
    last.unwrap_or_else(|| Err(Error::invalid("no γ tried")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn disc_cloud(k: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..k {
            for j in 0..k {
                let x = -1.0 + 2.0 * (i as f64 + 0.5) / k as f64;
                let y = -1.0 + 2.0 * (j as f64 + 0.5) / k as f64;
                if x * x + y * y <= 1.0 {
                    pts.push(vec![x, y, 0.0]);
                }
            }
        }
        let w = 4.0 / (k * k) as f64;
        let n = pts.len();
        PointCloud::new(pts, vec![w; n], 2).unwrap()
    }

    fn line_cloud_3d(k: usize) -> PointCloud {
        let pts: Vec<Vec<f64>> = (0..k).map(|i| vec![-1.0 + 2.0 * i as f64 / (k - 1) as f64, 0.0, 0.0]).collect();
        PointCloud::new(pts, vec![2.0 / k as f64; k], 2).unwrap()
    }

    #[test]
    fn membership_examples() {
        assert!(x_delta_member(&[0.0, 0.0], 1.0, 1.0, &[&[1.0, 0.0]]).unwrap());
        assert!(!x_delta_member(&[0.0, 0.0, 0.0], 1.0, 0.1, &[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]).unwrap());
        assert!(x_delta_member(&[0.0, 0.0, 0.0], 1.0, 1.0, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap());
    }

    #[test]
    fn fat_fraction_examples() {
        let c = disc_cloud(9);
        let s = Sampling::default();
        assert_eq!(fat_fraction(&c, &[0.0; 3], 1.0, 0.0, &s).unwrap().fraction, 1.0);
        let mut prev = 1.0;
        for d in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let f = fat_fraction(&c, &[0.0; 3], 1.0, d, &s).unwrap().fraction;
            assert!(f <= prev);
            prev = f;
        }
        assert!(fat_fraction(&c, &[0.0; 3], 1.0, 0.01, &s).unwrap().fraction > 0.5);
        let line = line_cloud_3d(15);
        assert_eq!(fat_fraction(&line, &[0.0; 3], 1.0, 1e-6, &s).unwrap().fraction, 0.0);
        assert_eq!(fat_simplex_search(&line, &[0.0; 3], 1.0, 0.1, &s).unwrap(), 0.0);
    }

    #[test]
    fn fat_search_is_monotone_in_sigma() {
        let c = disc_cloud(9);
        let s = Sampling::default();
        let mut prev = 1.0;
        for sigma in [0.05, 0.2, 0.5, 0.8] {
            let d = fat_simplex_search(&c, &[0.0; 3], 1.0, sigma, &s).unwrap();
            assert!(d <= prev);
            prev = d;
        }
        assert!(fat_simplex_search(&c, &[0.0; 3], 1.0, 0.2, &s).unwrap() > 0.05);
    }

    #[test]
    fn sampled_fraction_tracks_exhaustive() {
        let c = disc_cloud(9);
        let exact = fat_fraction(&c, &[0.0; 3], 1.0, 0.2, &Sampling::default()).unwrap();
        let mc = Sampling {
            exhaustive_cap: 10,
            budget: 20_000,
            seed: 3,
            ..Sampling::default()
        };
        let est = fat_fraction(&c, &[0.0; 3], 1.0, 0.2, &mc).unwrap();
        assert_eq!(est.mode, Mode::MonteCarlo);
        assert!((est.fraction - exact.fraction).abs() <= 4.0 * est.stderr);
    }

    #[test]
    fn disc_is_balanced() {
        let c = disc_cloud(21);
        let inp = DichotomyInput {
            a: &[0.0; 3],
            b: &[0.0; 3],
            r: 1.0,
            t: 0.2,
            gamma: 0.25,
            k: 0,
            l_k: None,
        };
        let d = balanced_dichotomy(&c, &inp).unwrap();
        let Dichotomy::Balanced { points, .. } = &d else {
            panic!("expected balanced, got {d:?}")
        };
        let tuple: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
        assert!(x_delta_member(&[0.0; 3], 1.0, 0.25f64.powi(2), &tuple).unwrap());
    }

    #[test]
    fn line_is_concentrated() {
        let c = line_cloud_3d(81);
        let inp = DichotomyInput {
            a: &[0.0; 3],
            b: &[0.0; 3],
            r: 1.0,
            t: 0.2,
            gamma: 0.05,
            k: 0,
            l_k: None,
        };
        match balanced_dichotomy(&c, &inp).unwrap() {
            Dichotomy::Concentrated { lambda, centers, .. } => {
                assert_eq!(lambda, 1);
                assert!(!centers.is_empty());
            }
            other => panic!("expected concentrated, got {other:?}"),
        }
    }

    #[test]
    fn empty_ball_is_reported() {
        let c = line_cloud_3d(5);
        let inp = DichotomyInput {
            a: &[0.0, 5.0, 0.0],
            b: &[0.0, 5.0, 0.0],
            r: 1.0,
            t: 0.2,
            gamma: 0.1,
            k: 0,
            l_k: None,
        };
        assert!(matches!(balanced_dichotomy(&c, &inp), Err(Error::EmptyBall { .. })));
    }

    #[test]
    fn constants() {
        assert_eq!(gamma_balanced(3), 16.0);
        assert_eq!(gamma_concentrated(2), 1600.0);
        let g: f64 = 0.3;
        let t = perturbation_factor(g, 2);
        assert_relative_eq!((1.0 + t).powi(2), 1.0 + 0.5 * g * g, epsilon = 1e-14);
    }
}
