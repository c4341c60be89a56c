//! Approximating planes at dyadic scales and the exponent of their decay.
//!
//! At each radius a fat tuple avoiding the Chebyshev bad sets is chosen and
//! its span is the plane for that scale. The spread of these planes across
//! scales estimates the Hölder exponent of the tangent map.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::kappa;
use crate::energy::{self, k_energy, table_energy, KParams, Mode, Sampling};
use crate::error::{Error, Result};
use crate::geom::{gram_volume, plane_distance, spectral_norm, sub, Plane, SimplexTuple};
use crate::measure::PointCloud;
use crate::parallel::{map_indexed, rng};

/// Drifts at or below this are treated as exact zeros by the fit.
pub const DRIFT_FLOOR: f64 = 1e-13;

const CERT_SLACK: f64 = 1e-9;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Default Chebyshev constant `(2^{m+m²} A^{2m} + 2) / σ`.
pub fn default_threshold(m: usize, a_const: f64, sigma: f64) -> f64 {
    (2f64.powi((m + m * m) as i32) * a_const.powi(2 * m as i32) + 2.0) / sigma
}

enum YValues {
    Empty,
    Table(Vec<f64>),
    Lazy,
}

/// Tuples whose kernel (or, for `l = m + 2`, tail integral) exceeds
/// `M K / μ(B̄)^{l−1}`.
pub struct BadSetY {
    params: KParams,
    a: Vec<f64>,
    ball: Vec<usize>,
    ball_mass: f64,
    energy: f64,
    threshold: f64,
    values: YValues,
    sampling: Sampling,
}

impl BadSetY {
    pub fn build(cloud: &PointCloud, params: &KParams, a: &[f64], r: f64, m_const: f64, sampling: &Sampling) -> Result<Self> {
        if !(m_const > 1.0) {
            return Err(Error::invalid(format!("Chebyshev constant must exceed 1, got {m_const}")));
        }
        let m = cloud.m();
        let ball = cloud.ball_indices(a, r);
        if ball.is_empty() {
            return Err(Error::EmptyBall { radius: r });
        }
        let ball_mass = cloud.mass_of(&ball);
        let n = ball.len();
        let total = (n as u64).checked_pow(m as u32 + 1).unwrap_or(u64::MAX);
        let l = params.l;
        let (energy, values) = if total <= sampling.exhaustive_cap {
            let table = energy::kernel_table(cloud, params, a, r, sampling)?;
            let k = table_energy(cloud, &table);
            let values = match l {
                1 => YValues::Empty,
                l if l <= m + 1 => YValues::Table(table.values),
                _ => {
                    let w: Vec<f64> = ball.iter().map(|&i| cloud.weight(i)).collect();
                    YValues::Table(
                        table
                            .values
                            .chunks(n)
                            .map(|row| row.iter().zip(&w).map(|(v, w)| v * w).sum())
                            .collect(),
                    )
                }
            };
            (k, values)
        } else {
            let e = k_energy(cloud, params, a, r, sampling)?;
            (e.value, if l == 1 { YValues::Empty } else { YValues::Lazy })
        };
        let power = if l == m + 2 { m } else { l - 1 };
        let threshold = m_const * energy / ball_mass.powi(power as i32);
        Ok(Self {
            params: *params,
            a: a.to_vec(),
            ball,
            ball_mass,
            energy,
            threshold,
            values,
            sampling: *sampling,
        })
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn ball(&self) -> &[usize] {
        &self.ball
    }

    pub fn is_exhaustive(&self) -> bool {
        !matches!(self.values, YValues::Lazy)
    }

    fn value_at(&self, cloud: &PointCloud, positions: &[usize]) -> f64 {
        let n = self.ball.len();
        let m = cloud.m();
        let is_full = self.params.l == m + 2;
        let lead = if is_full { m } else { self.params.l - 1 };
        match &self.values {
            YValues::Empty => 0.0,
            YValues::Table(v) => {
                let t = positions[..lead].iter().fold(0usize, |acc, &p| acc * n + p);
                v[t]
            }
            YValues::Lazy => {
                let idx: Vec<usize> = positions[..lead].iter().map(|&p| self.ball[p]).collect();
                if is_full {
                    self.ball
                        .iter()
                        .map(|&c| {
                            let mut rest = idx.clone();
                            rest.push(c);
                            cloud.weight(c) * energy::integrand_at(cloud, &self.params, &self.a, &rest)
                        })
                        .sum()
                } else {
                    let stream = positions.iter().fold(0u64, |acc, &p| acc.wrapping_mul(1_000_003).wrapping_add(p as u64));
                    energy::kernel_at(cloud, &self.params, &self.a, &self.ball, &idx, &self.sampling, stream)
                }
            }
        }
    }

    /// Whether the m-tuple at the given ball positions is filtered out.
    pub fn contains(&self, cloud: &PointCloud, positions: &[usize]) -> bool {
        match self.values {
            YValues::Empty => false,
            _ => self.value_at(cloud, positions) > self.threshold,
        }
    }

    /// `μ^m(Y) / μ(B̄)^m`, available when the values were enumerated.
    pub fn marked_fraction(&self, cloud: &PointCloud) -> Option<f64> {
        let n = self.ball.len();
        let w: Vec<f64> = self.ball.iter().map(|&i| cloud.weight(i) / self.ball_mass).collect();
        match &self.values {
            YValues::Empty => Some(0.0),
            YValues::Lazy => None,
            YValues::Table(v) => {
                let lead = if self.params.l == cloud.m() + 2 { cloud.m() } else { self.params.l - 1 };
                let mut pos = vec![0usize; lead];
                let mut total = 0.0;
                for (t, &val) in v.iter().enumerate() {
                    if val > self.threshold {
                        let mut rest = t;
                        for slot in pos.iter_mut().rev() {
                            *slot = rest % n;
                            rest /= n;
                        }
                        total += pos.iter().map(|&p| w[p]).product::<f64>();
                    }
                }
                Some(total)
            }
        }
    }
}

/// Points `c ∈ B̄(a, r)` with `dist(c − a, Q)^p > M · mean`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSetZ {
    pub members: Vec<usize>,
    pub mean: f64,
    pub threshold: f64,
    pub mass_fraction: f64,
}

pub fn bad_set_z(cloud: &PointCloud, a: &[f64], r: f64, q: &Plane, p: f64, m_const: f64) -> Result<BadSetZ> {
    let ball = cloud.ball_indices(a, r);
    if ball.is_empty() {
        return Err(Error::EmptyBall { radius: r });
    }
    let q = q.linear();
    let mass = cloud.mass_of(&ball);
    let d: Vec<f64> = ball.iter().map(|&i| q.reject_norm(&sub(cloud.point(i), a)).powf(p)).collect();
    let mean = ball.iter().zip(&d).map(|(&i, v)| cloud.weight(i) * v).sum::<f64>() / mass;
    let threshold = m_const * mean;
    let members: Vec<usize> = ball.iter().zip(&d).filter(|(_, v)| **v > threshold).map(|(&i, _)| i).collect();
    let mass_fraction = cloud.mass_of(&members) / mass;
    Ok(BadSetZ {
        members,
        mean,
        threshold,
        mass_fraction,
    })
}

/// The chosen fat tuple and the plane it spans at one radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePlane {
    pub r: f64,
    pub plane: Plane,
    /// Cloud indices of the tuple.
    pub tuple: Vec<usize>,
    /// `|(g_1 − a) ∧ ... ∧ (g_m − a)|`.
    pub gram: f64,
    pub candidates: usize,
}

/// Picks the fat tuple of largest wedge volume (lowest positions on ties)
/// that is in neither `y` nor, when given, contains a point of `exclude`.
pub fn plane_at_scale(
    cloud: &PointCloud,
    a: &[f64],
    r: f64,
    delta: f64,
    y: Option<&BadSetY>,
    exclude: &[usize],
    sampling: &Sampling,
) -> Result<ScalePlane> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must be in (0, 1], got {delta}")));
    }
    let m = cloud.m();
    let ball = match y {
        Some(y) => y.ball.clone(),
        None => cloud.ball_indices(a, r),
    };
    if ball.is_empty() {
        return Err(Error::EmptyBall { radius: r });
    }
    let n = ball.len();
    let rm = r.powi(m as i32);
    let diffs: Vec<Vec<f64>> = ball.iter().map(|&i| sub(cloud.point(i), a)).collect();
    let gram_of = |pos: &[usize]| {
        let vs: Vec<&[f64]> = pos.iter().map(|&p| diffs[p].as_slice()).collect();
        gram_volume(&vs).unwrap_or(0.0)
    };
    let count = (n as u64).checked_pow(m as u32).unwrap_or(u64::MAX);
    let tuples: Vec<Vec<usize>> = if count <= sampling.exhaustive_cap {
        (0..count as usize)
            .map(|t| {
                let mut pos = vec![0usize; m];
                let mut rest = t;
                for slot in pos.iter_mut().rev() {
                    *slot = rest % n;
                    rest /= n;
                }
                pos
            })
            .collect()
    } else {
        let mut g = rng(sampling.seed, 0x91a);
        (0..sampling.budget).map(|_| (0..m).map(|_| g.gen_range(0..n)).collect()).collect()
    };
    let grams = map_indexed(tuples.len(), |t| gram_of(&tuples[t]));
    let mut order: Vec<usize> = (0..tuples.len()).filter(|&t| grams[t] >= delta * rm).collect();
    order.sort_by(|&s, &t| grams[t].total_cmp(&grams[s]).then(s.cmp(&t)));
    let candidates = order.len();
    let excluded = |pos: &[usize]| pos.iter().any(|&p| exclude.binary_search(&ball[p]).is_ok());
    for t in order {
        let pos = &tuples[t];
        if excluded(pos) {
            continue;
        }
        if let Some(y) = y {
            if y.contains(cloud, pos) {
                continue;
            }
        }
        let vs: Vec<&[f64]> = pos.iter().map(|&p| diffs[p].as_slice()).collect();
        return Ok(ScalePlane {
            r,
            plane: Plane::from_vectors(&vs)?,
            tuple: pos.iter().map(|&p| ball[p]).collect(),
            gram: grams[t],
            candidates,
        });
    }
    Err(Error::NoFatTuple {
        radius: r,
        delta,
        threshold: y.map_or(f64::INFINITY, |y| y.threshold),
    })
}

/// Check of `κ(a, g_1, ..., g_m, c) ≥ δ dist(c − a, P) / (2^m (m+1)! 2r)`
/// over every cloud point `c ∈ B̄(a, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureLowerBound {
    pub holds: bool,
    /// Smallest `κ / bound` over points with a positive bound.
    pub worst_ratio: f64,
}

pub fn curvature_lower_bound(cloud: &PointCloud, a: &[f64], r: f64, delta: f64, tuple: &[usize]) -> CurvatureLowerBound {
    let m = cloud.m();
    let vs: Vec<Vec<f64>> = tuple.iter().map(|&i| sub(cloud.point(i), a)).collect();
    let plane = Plane::from_owned_vectors(&vs).unwrap_or_else(|_| Plane::trivial(cloud.ambient_dim()));
    let denom = 2f64.powi(m as i32) * factorial(m + 1) * 2.0 * r;
    let mut worst = f64::INFINITY;
    let mut holds = true;
    for c in cloud.ball_indices(a, r) {
        let h = plane.reject_norm(&sub(cloud.point(c), a));
        // points on the plane up to rounding carry no information
        if h <= 1e-12 * r {
            continue;
        }
        let bound = delta * h / denom;
        let mut pts: Vec<&[f64]> = vec![a];
        pts.extend(tuple.iter().map(|&i| cloud.point(i)));
        pts.push(cloud.point(c));
        let k = SimplexTuple::new(&pts).map(|t| kappa(&t)).unwrap_or(0.0);
        worst = worst.min(k / bound);
        if k < bound * (1.0 - CERT_SLACK) {
            holds = false;
        }
    }
    CurvatureLowerBound { holds, worst_ratio: worst }
}

/// `‖P − Q‖ ≤ m ε / δ` for `Q = span{v_i}`, `|v_i| ≤ r`,
/// `|v_1 ∧ ... ∧ v_m| ≥ δ r^m`, `|reject(P, v_i)| ≤ ε r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneTiltCertificate {
    pub r: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub bound: f64,
    pub distance: f64,
    /// The hypotheses (`ε < 1`, `|v_i| ≤ r`) hold.
    pub applicable: bool,
    pub holds: bool,
}

/// Plane tilt bound with the largest admissible `δ` and smallest
/// admissible `ε` for the given vectors.
pub fn plane_tilt_certificate(p: &Plane, vectors: &[Vec<f64>], r: f64) -> Result<PlaneTiltCertificate> {
    let m = vectors.len();
    let q = Plane::from_owned_vectors(vectors)?;
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    let delta = gram_volume(&refs)? / r.powi(m as i32);
    let p = p.linear();
    let epsilon = vectors.iter().map(|v| p.reject_norm(v)).fold(0.0, f64::max) / r;
    let distance = plane_distance(&p, &q)?;
    let bound = m as f64 * epsilon / delta;
    let applicable = epsilon < 1.0 && vectors.iter().all(|v| crate::geom::norm(v) <= r * (1.0 + 1e-12));
    let holds = !applicable || distance <= bound * (1.0 + CERT_SLACK) + 1e-14;
    Ok(PlaneTiltCertificate {
        r,
        epsilon,
        delta,
        bound,
        distance,
        applicable,
        holds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    Ok,
    /// Every usable drift is zero.
    Flat,
    /// Fewer than three usable scales.
    Insufficient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub used: usize,
    pub flag: FitFlag,
}

/// Ordinary least squares of `log y` against `log x` over pairs with
/// `y > DRIFT_FLOOR`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> AlphaFit {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **y > DRIFT_FLOOR && **x > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        let flag = if ys.iter().all(|y| *y <= DRIFT_FLOOR) {
            FitFlag::Flat
        } else {
            FitFlag::Insufficient
        };
        return AlphaFit {
            slope: None,
            intercept: None,
            r_squared: None,
            used: pts.len(),
            flag,
        };
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    AlphaFit {
        slope: Some(slope),
        intercept: Some(my - slope * mx),
        r_squared: Some(r2),
        used: pts.len(),
        flag: FitFlag::Ok,
    }
}

/// Settings of the plane construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentParams {
    pub kernel: KParams,
    pub delta: f64,
    /// Chebyshev constant `M`.
    pub threshold: f64,
    pub sampling: Sampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub r: f64,
    pub plane: Plane,
    pub tuple: Vec<usize>,
    pub gram: f64,
    pub energy: f64,
    pub energy_mode: Mode,
    pub y_fraction: Option<f64>,
    /// Mass fraction of the outlier set `Z_i` (only for `l = m + 2`).
    pub z_fraction: Option<f64>,
    pub lower_bound: CurvatureLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentEstimate {
    pub a: Vec<f64>,
    pub scales: Vec<ScaleRecord>,
    pub limit_plane: Plane,
    pub drift: Vec<f64>,
    pub alpha_fit: AlphaFit,
    pub certificates: Vec<PlaneTiltCertificate>,
}

impl TangentEstimate {
    pub fn radii(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s.r).collect()
    }

    /// Log-log fit of `‖P(a, ρ_i) − reference‖` against `ρ_i` over every scale.
    pub fn fit_against(&self, reference: &Plane) -> Result<AlphaFit> {
        let d = self
            .scales
            .iter()
            .map(|s| plane_distance(&s.plane, reference))
            .collect::<Result<Vec<f64>>>()?;
        Ok(loglog_fit(&self.radii(), &d))
    }

    /// Every recorded certificate holds.
    pub fn certified(&self) -> bool {
        self.certificates.iter().all(|c| c.holds) && self.scales.iter().all(|s| s.lower_bound.holds)
    }
}

/// Planes at `ρ_i = r0 2^{-i}`, `i < depth`, their drift from the deepest
/// plane, and the slope of `log drift` against `log ρ` over all but the
/// deepest two scales.
pub fn dyadic_plane_sequence(cloud: &PointCloud, a: &[f64], r0: f64, depth: usize, params: &TangentParams) -> Result<TangentEstimate> {
    if depth < 2 {
        return Err(Error::invalid("depth must be at least 2"));
    }
    if !(r0 > 0.0) {
        return Err(Error::invalid("r0 must be positive"));
    }
    let m = cloud.m();
    let full = params.kernel.l == m + 2;
    let mut scales: Vec<ScaleRecord> = Vec::with_capacity(depth);
    let mut z_prev: Vec<usize> = Vec::new();
    for i in 0..depth {
        let r = r0 * 0.5f64.powi(i as i32);
        let y = BadSetY::build(cloud, &params.kernel, a, r, params.threshold, &params.sampling)?;
        let sp = plane_at_scale(cloud, a, r, params.delta, Some(&y), &z_prev, &params.sampling)?;
        let z_fraction = if full {
            let z = bad_set_z(cloud, a, r, &sp.plane, params.kernel.p, params.threshold)?;
            let mut members = z.members;
            members.sort_unstable();
            z_prev = members;
            Some(z.mass_fraction)
        } else {
            None
        };
        let lower_bound = curvature_lower_bound(cloud, a, r, params.delta, &sp.tuple);
        scales.push(ScaleRecord {
            r,
            plane: sp.plane,
            tuple: sp.tuple,
            gram: sp.gram,
            energy: y.energy(),
            energy_mode: if y.is_exhaustive() { Mode::Exhaustive } else { Mode::MonteCarlo },
            y_fraction: y.marked_fraction(cloud),
            z_fraction,
            lower_bound,
        });
    }
    let limit_plane = scales[depth - 1].plane.clone();
    let drift = scales
        .iter()
        .map(|s| plane_distance(&s.plane, &limit_plane))
        .collect::<Result<Vec<f64>>>()?;
    let mut certificates = Vec::with_capacity(depth - 1);
    for w in scales.windows(2) {
        let vs: Vec<Vec<f64>> = w[1].tuple.iter().map(|&i| sub(cloud.point(i), a)).collect();
        certificates.push(plane_tilt_certificate(&w[0].plane, &vs, w[1].r)?);
    }
    let keep = depth.saturating_sub(2);
    let radii: Vec<f64> = scales.iter().map(|s| s.r).collect();
    let alpha_fit = loglog_fit(&radii[..keep], &drift[..keep]);
    Ok(TangentEstimate {
        a: a.to_vec(),
        scales,
        limit_plane,
        drift,
        alpha_fit,
        certificates,
    })
}

/// A sequence of scalar diagnostics at dyadic radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub max: f64,
    /// Slope of `log value` against `log r`, when defined.
    pub trend: Option<f64>,
}

impl ScaleProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Self {
        let max = values.iter().copied().fold(0.0, f64::max);
        let trend = loglog_fit(&radii, &values).slope;
        Self {
            radii,
            values,
            max,
            trend,
        }
    }
}

/// `r^{-m} Σ_{b ∈ B̄(a,r), b ≠ a} w_b |reject(T, b − a)| / |b − a|^{1+α}` at
/// `r = r0 2^{-k}`.
pub fn schatzle_diagnostic(cloud: &PointCloud, a: &[f64], t: &Plane, alpha: f64, r0: f64, depth: usize) -> Result<ScaleProfile> {
    if !(r0 > 0.0) || depth < 1 {
        return Err(Error::invalid("diagnostic needs r0 > 0 and depth >= 1"));
    }
    let t = t.linear();
    let m = cloud.m() as i32;
    let radii: Vec<f64> = (0..depth).map(|k| r0 * 0.5f64.powi(k as i32)).collect();
    let values = radii
        .iter()
        .map(|&r| {
            let s: f64 = cloud
                .ball_indices(a, r)
                .into_iter()
                .filter_map(|i| {
                    let u = sub(cloud.point(i), a);
                    let d = crate::geom::norm(&u);
                    (d > 0.0).then(|| cloud.weight(i) * t.reject_norm(&u) / d.powf(1.0 + alpha))
                })
                .sum();
            s / r.powi(m)
        })
        .collect();
    Ok(ScaleProfile::new(radii, values))
}

/// A graph `x ↦ (x, f(x))` over `R^m` with known derivative.
pub trait GraphMap {
    fn m(&self) -> usize;
    fn codim(&self) -> usize;
    fn f(&self, x: &[f64]) -> Vec<f64>;
    /// `(n − m) × m` Jacobian.
    fn df(&self, x: &[f64]) -> DMatrix<f64>;

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut p = x.to_vec();
        p.extend(self.f(x));
        p
    }

    /// Tangent plane at `F(x)`, spanned by `e_i + Df(x) e_i`.
    fn tangent(&self, x: &[f64]) -> Plane {
        let (m, c) = (self.m(), self.codim());
        let d = self.df(x);
        let vs: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut v = vec![0.0; m + c];
                v[i] = 1.0;
                for k in 0..c {
                    v[m + k] = d[(k, i)];
                }
                v
            })
            .collect();
        Plane::from_owned_vectors(&vs).expect("graph tangent vectors are independent")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorSandwich {
    /// `|reject(Tan, F(y) − F(x))|`
    pub lhs: f64,
    /// `|f(y) − f(x) − Df(x)(y − x)|`
    pub mid: f64,
    /// `1 − ‖Df(x)‖ / (1 + ‖Df(x)‖²)^{1/2}`
    pub factor: f64,
    pub holds: bool,
}

pub fn taylor_sandwich_check<G: GraphMap + ?Sized>(g: &G, x: &[f64], y: &[f64]) -> TaylorSandwich {
    let d = g.df(x);
    let (fx, fy) = (g.f(x), g.f(y));
    let step: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let lin = &d * nalgebra::DVector::from_column_slice(&step);
    let rem: Vec<f64> = (0..g.codim()).map(|k| fy[k] - fx[k] - lin[k]).collect();
    let mid = crate::geom::norm(&rem);
    let lhs = g.tangent(x).reject_norm(&sub(&g.embed(y), &g.embed(x)));
    let dn = spectral_norm(&d);
    let factor = 1.0 - dn / (1.0 + dn * dn).sqrt();
    let tol = 1e-12 * (1.0 + crate::geom::norm(&step));
    let holds = lhs <= mid * (1.0 + CERT_SLACK) + tol && lhs >= factor * mid * (1.0 - CERT_SLACK) - tol;
    TaylorSandwich { lhs, mid, factor, holds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::CurvatureKind;
    use approx::assert_relative_eq;

    fn plane_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                let (u, v) = (i as f64 / 4.0 - 1.0, j as f64 / 4.0 - 1.0);
                pts.push(vec![u, v, 0.5 * u - v]);
            }
        }
        let k = pts.len();
        PointCloud::new(pts, vec![4.0 / k as f64; k], 2).unwrap()
    }

    fn arc(k: usize) -> PointCloud {
        let pts: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let t = -1.0 + 2.0 * i as f64 / (k - 1) as f64;
                vec![t.sin(), 1.0 - t.cos()]
            })
            .collect();
        PointCloud::new(pts, vec![2.0 / k as f64; k], 1).unwrap()
    }

    fn params(l: usize) -> TangentParams {
        TangentParams {
            kernel: KParams::new(CurvatureKind::Kappa, l, 2.0, 0.5),
            delta: 0.25,
            threshold: 4.0,
            sampling: Sampling::default(),
        }
    }

    struct Parabola;

    impl GraphMap for Parabola {
        fn m(&self) -> usize {
            1
        }
        fn codim(&self) -> usize {
            1
        }
        fn f(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] * x[0]]
        }
        fn df(&self, x: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 * x[0])
        }
    }

    #[test]
    fn planar_cloud_marks_nothing_and_recovers_plane() {
        let c = plane_cloud();
        let a = c.point(40).to_vec();
        let truth = Plane::from_vectors(&[&[1.0, 0.0, 0.5], &[0.0, 1.0, -1.0]]).unwrap();
        for l in 1..=4 {
            let p = params(l);
            let y = BadSetY::build(&c, &p.kernel, &a, 0.6, p.threshold, &p.sampling).unwrap();
            assert_eq!(y.marked_fraction(&c), Some(0.0));
            let sp = plane_at_scale(&c, &a, 0.6, 0.25, Some(&y), &[], &p.sampling).unwrap();
            assert!(plane_distance(&sp.plane, &truth).unwrap() < 1e-12);
        }
    }

    #[test]
    fn l1_filter_is_empty() {
        let c = arc(15);
        let p = params(1);
        let y = BadSetY::build(&c, &p.kernel, c.point(7), 1.0, 1.5, &p.sampling).unwrap();
        assert!(!y.contains(&c, &[0]));
        assert_eq!(y.marked_fraction(&c), Some(0.0));
    }

    #[test]
    fn chebyshev_bounds_for_y_and_z() {
        let c = arc(25);
        for l in 2..=3 {
            for m_const in [1.5, 3.0, 10.0] {
                let p = params(l);
                let y = BadSetY::build(&c, &p.kernel, c.point(12), 0.8, m_const, &p.sampling).unwrap();
                assert!(y.marked_fraction(&c).unwrap() <= 1.0 / m_const + 1e-15);
            }
        }
        let q = Plane::coordinate(2, &[0]);
        let z = bad_set_z(&c, c.point(12), 0.8, &q, 2.0, 2.0).unwrap();
        assert!(z.mass_fraction <= 0.5 + 1e-15);
    }

    #[test]
    fn larger_delta_shrinks_candidates() {
        let c = arc(31);
        let a = c.point(15).to_vec();
        let mut prev = usize::MAX;
        for delta in [0.1, 0.3, 0.6, 0.9] {
            let sp = plane_at_scale(&c, &a, 0.5, delta, None, &[], &Sampling::default()).unwrap();
            assert!(sp.candidates <= prev);
            prev = sp.candidates;
        }
        assert!(matches!(
            plane_at_scale(&c, &a, 0.5, 1.0, None, &[], &Sampling::default()).map(|_| ()),
            Err(Error::NoFatTuple { .. }) | Ok(())
        ));
    }

    #[test]
    fn exact_plane_pipeline_is_flat() {
        let c = plane_cloud();
        let a = c.point(40).to_vec();
        for l in [2, 4] {
            let est = dyadic_plane_sequence(&c, &a, 2.0, 3, &params(l)).unwrap();
            assert!(est.drift.iter().all(|d| *d <= 1e-12));
            assert_eq!(est.alpha_fit.flag, FitFlag::Flat);
            assert!(est.certified());
        }
        let prof = schatzle_diagnostic(&c, &a, &est_plane(&c, &a), 0.5, 2.0, 3).unwrap();
        assert!(prof.values.iter().all(|v| *v <= 1e-12));
    }

    fn est_plane(c: &PointCloud, a: &[f64]) -> Plane {
        dyadic_plane_sequence(c, a, 2.0, 2, &params(2)).unwrap().limit_plane
    }

    #[test]
    fn arc_planes_approach_tangent() {
        let c = arc(201);
        let a = c.point(100).to_vec();
        let est = dyadic_plane_sequence(&c, &a, 0.5, 5, &params(2)).unwrap();
        let tangent = Plane::coordinate(2, &[0]);
        for s in &est.scales {
            assert!(plane_distance(&s.plane, &tangent).unwrap() <= s.r);
        }
        assert!(est.certified());
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let xs = [1.0, 0.5, 0.25, 0.125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        let f = loglog_fit(&xs, &ys);
        assert_relative_eq!(f.slope.unwrap(), 0.7, epsilon = 1e-12);
        assert_eq!(loglog_fit(&xs[..2], &ys[..2]).flag, FitFlag::Insufficient);
        assert_eq!(loglog_fit(&xs, &[0.0; 4]).flag, FitFlag::Flat);
    }

    #[test]
    fn taylor_sandwich_on_parabola() {
        let s = taylor_sandwich_check(&Parabola, &[0.0], &[1.0]);
        assert_relative_eq!(s.mid, 1.0);
        assert_relative_eq!(s.factor, 1.0);
        assert_relative_eq!(s.lhs, 1.0, epsilon = 1e-15);
        assert!(s.holds);
        let s = taylor_sandwich_check(&Parabola, &[0.7], &[-0.4]);
        assert!(s.holds && s.lhs > 0.0);
    }

    #[test]
    fn plane_tilt_on_tilted_vectors() {
        let p = Plane::coordinate(3, &[0, 1]);
        let vs = vec![vec![1.0, 0.0, 0.05], vec![0.0, 0.8, -0.03]];
        let c = plane_tilt_certificate(&p, &vs, 1.2).unwrap();
        assert!(c.applicable && c.holds);
        assert!(c.distance > 0.0);
    }
}
