//! Hybrid curvature energies, Menger curvature, β numbers and the
//! Jones-type square function of a weighted cloud.
//!
//! The essential supremum over tail variables becomes a maximum over cloud
//! atoms, which is exact for a discrete measure.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{check_energy_params, k_integrand, CurvatureKind};
use crate::error::{Error, Result};
use crate::geom::{distance, Plane, SimplexTuple};
use crate::measure::PointCloud;
use crate::parallel::{map_indexed, pairwise_sum, rng};

/// Tuple counts up to this size are enumerated.
pub const EXHAUSTIVE_CAP: u64 = 2_000_000;
/// Tail enumerations inside a sampled kernel are exhaustive up to this size.
pub const TAIL_CAP: u64 = 4096;

const DESCENT_MAX_ITER: usize = 200;
const DESCENT_REL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exhaustive,
    MonteCarlo,
}

/// Exponents and curvature of `K^{l,p,α}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KParams {
    pub kind: CurvatureKind,
    pub l: usize,
    pub p: f64,
    pub alpha: f64,
}

impl KParams {
    pub fn new(kind: CurvatureKind, l: usize, p: f64, alpha: f64) -> Self {
        Self { kind, l, p, alpha }
    }

    /// `l = m + 2`, `p = 2`, `α = 0` with `κ`: the Menger integrand.
    pub fn menger(m: usize) -> Self {
        Self::new(CurvatureKind::Kappa, m + 2, 2.0, 0.0)
    }
}

/// Sample sizes and seed for Monte Carlo fallbacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub budget: usize,
    pub seed: u64,
    pub exhaustive_cap: u64,
    pub tail_cap: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            budget: 100_000,
            seed: 0,
            exhaustive_cap: EXHAUSTIVE_CAP,
            tail_cap: TAIL_CAP,
        }
    }
}

impl Sampling {
    pub fn with_budget(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub kind: CurvatureKind,
    pub l: usize,
    pub p: f64,
    pub alpha: f64,
    pub a: Option<Vec<f64>>,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub tuples_evaluated: u64,
    pub mode: Mode,
    pub params: EnergyParams,
}

fn checked_pow(base: usize, exp: usize) -> u64 {
    (base as u64).checked_pow(exp as u32).unwrap_or(u64::MAX)
}

/// Writes the base-`base` digits of `t` (most significant first) into `out`.
fn decode(mut t: u64, base: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = (t % base as u64) as usize;
        t /= base as u64;
    }
}

fn integrand_of(cloud: &PointCloud, params: &KParams, prefix: &[&[f64]], tail: &[usize]) -> f64 {
    let mut pts: [&[f64]; crate::geom::MAX_TUPLE] = [&[]; crate::geom::MAX_TUPLE];
    let k = prefix.len() + tail.len();
    pts[..prefix.len()].copy_from_slice(prefix);
    for (slot, &i) in pts[prefix.len()..k].iter_mut().zip(tail) {
        *slot = cloud.point(i);
    }
    let t = SimplexTuple::from_slices_unchecked(&pts[..k], cloud.ambient_dim());
    k_integrand(params.kind, &t, params.l, params.p, params.alpha)
}

/// Maximum of the integrand over tail tuples from `ball`, completed by
/// `prefix = (a, a_1, ..., a_{l-1})`. Returns the maximum and the number of
/// tuples evaluated.
#[allow(clippy::too_many_arguments)]
fn tail_max(
    cloud: &PointCloud,
    params: &KParams,
    prefix: &[&[f64]],
    ball: &[usize],
    exhaustive_up_to: u64,
    samples: usize,
    seed: u64,
    stream: u64,
) -> (f64, u64) {
    let s = cloud.m() + 2 - prefix.len();
    if s == 0 {
        return (integrand_of(cloud, params, prefix, &[]), 1);
    }
    let n = ball.len();
    let count = checked_pow(n, s);
    if count <= exhaustive_up_to {
        let per_first = |i0: usize| {
            let mut idx = vec![0usize; s];
            let mut tail = vec![0usize; s];
            let rest = checked_pow(n, s - 1);
            let mut best: f64 = 0.0;
            for t in 0..rest {
                decode(t, n, &mut idx[1..]);
                idx[0] = i0;
                for (dst, &k) in tail.iter_mut().zip(&idx) {
                    *dst = ball[k];
                }
                best = best.max(integrand_of(cloud, params, prefix, &tail));
            }
            best
        };
        let best = if count > 4096 {
            map_indexed(n, per_first).into_iter().fold(0.0, f64::max)
        } else {
            (0..n).map(per_first).fold(0.0, f64::max)
        };
        (best, count)
    } else {
        let mut g = rng(seed, stream);
        let mut tail = vec![0usize; s];
        let mut best: f64 = 0.0;
        for _ in 0..samples {
            for slot in tail.iter_mut() {
                *slot = ball[g.gen_range(0..n)];
            }
            best = best.max(integrand_of(cloud, params, prefix, &tail));
        }
        (best, samples as u64)
    }
}

fn validate(cloud: &PointCloud, params: &KParams, a: &[f64]) -> Result<()> {
    check_energy_params(cloud.m(), params.l, params.p, params.alpha)?;
    if a.len() != cloud.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.ambient_dim(),
            found: a.len(),
        });
    }
    Ok(())
}

fn nonempty_ball(cloud: &PointCloud, a: &[f64], r: f64) -> Result<Vec<usize>> {
    if !(r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let ball = cloud.ball_indices(a, r);
    if ball.is_empty() {
        return Err(Error::EmptyBall { radius: r });
    }
    Ok(ball)
}

/// `κ^{l,p,α}_{μ,a,r}(a_1, ..., a_{l-1})` with the supremum taken over cloud
/// tail tuples in `B̄(a, r)`.
pub fn k_kernel(
    cloud: &PointCloud,
    params: &KParams,
    a: &[f64],
    r: f64,
    leading: &[&[f64]],
    sampling: &Sampling,
) -> Result<f64> {
    validate(cloud, params, a)?;
    if leading.len() != params.l - 1 {
        return Err(Error::invalid(format!(
            "kernel needs {} leading points, got {}",
            params.l - 1,
            leading.len()
        )));
    }
    for p in leading {
        if p.len() != a.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: p.len(),
            });
        }
        if distance(p, a) > r {
            return Err(Error::invalid("leading points must lie in the closed ball"));
        }
    }
    let ball = nonempty_ball(cloud, a, r)?;
    let mut prefix: Vec<&[f64]> = vec![a];
    prefix.extend_from_slice(leading);
    let (v, _) = tail_max(
        cloud,
        params,
        &prefix,
        &ball,
        sampling.exhaustive_cap,
        sampling.budget,
        sampling.seed,
        0,
    );
    Ok(v)
}

/// Kernel values for every leading tuple of ball points, in lexicographic
/// order of ball positions.
#[derive(Clone, Debug)]
pub struct KernelTable {
    /// Cloud indices of the points in `B̄(a, r)`, ascending.
    pub ball: Vec<usize>,
    pub leading_len: usize,
    pub values: Vec<f64>,
}

impl KernelTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cloud indices of the `t`-th leading tuple.
    pub fn tuple(&self, t: usize) -> Vec<usize> {
        let mut pos = vec![0usize; self.leading_len];
        decode(t as u64, self.ball.len(), &mut pos);
        pos.into_iter().map(|k| self.ball[k]).collect()
    }

    /// Product of the weights of the `t`-th leading tuple.
    pub fn weight(&self, cloud: &PointCloud, t: usize) -> f64 {
        self.tuple(t).iter().map(|&i| cloud.weight(i)).product()
    }
}

fn table_over(cloud: &PointCloud, params: &KParams, a: &[f64], ball: Vec<usize>, sampling: &Sampling) -> KernelTable {
    let lead = params.l - 1;
    let count = checked_pow(ball.len(), lead) as usize;
    let values = map_indexed(count, |t| {
        let mut pos = vec![0usize; lead];
        decode(t as u64, ball.len(), &mut pos);
        let mut prefix: Vec<&[f64]> = Vec::with_capacity(lead + 1);
        prefix.push(a);
        prefix.extend(pos.iter().map(|&k| cloud.point(ball[k])));
        tail_max(
            cloud,
            params,
            &prefix,
            &ball,
            u64::MAX,
            0,
            sampling.seed,
            t as u64,
        )
        .0
    });
    KernelTable {
        ball,
        leading_len: lead,
        values,
    }
}

/// Full kernel table; fails when the enumeration exceeds the exhaustive cap.
pub fn kernel_table(
    cloud: &PointCloud,
    params: &KParams,
    a: &[f64],
    r: f64,
    sampling: &Sampling,
) -> Result<KernelTable> {
    validate(cloud, params, a)?;
    let ball = nonempty_ball(cloud, a, r)?;
    let total = checked_pow(ball.len(), cloud.m() + 1);
    if total > sampling.exhaustive_cap {
        return Err(Error::invalid(format!(
            "{total} tuples exceed the exhaustive cap {}",
            sampling.exhaustive_cap
        )));
    }
    Ok(table_over(cloud, params, a, ball, sampling))
}

/// Kernel at a leading tuple of cloud indices, tails drawn from `ball`.
pub(crate) fn kernel_at(
    cloud: &PointCloud,
    params: &KParams,
    a: &[f64],
    ball: &[usize],
    leading: &[usize],
    sampling: &Sampling,
    stream: u64,
) -> f64 {
    let mut prefix: Vec<&[f64]> = Vec::with_capacity(leading.len() + 1);
    prefix.push(a);
    prefix.extend(leading.iter().map(|&i| cloud.point(i)));
    let samples = (sampling.exhaustive_cap / sampling.budget.max(1) as u64).max(64) as usize;
    tail_max(cloud, params, &prefix, ball, sampling.tail_cap, samples, sampling.seed, stream).0
}

/// Integrand at `(a, leading...)` for a full tuple of cloud indices.
pub(crate) fn integrand_at(cloud: &PointCloud, params: &KParams, a: &[f64], rest: &[usize]) -> f64 {
    integrand_of(cloud, params, &[a], rest)
}

/// `Σ_t w(t) κ(t)` over a kernel table; the exhaustive value of [`k_energy`].
pub fn table_energy(cloud: &PointCloud, table: &KernelTable) -> f64 {
    weighted_table_sum(cloud, table)
}

fn weighted_table_sum(cloud: &PointCloud, table: &KernelTable) -> f64 {
    let terms: Vec<f64> = (0..table.len())
        .map(|t| {
            let v = table.values[t];
            if v == 0.0 {
                0.0
            } else {
                table.weight(cloud, t) * v
            }
        })
        .collect();
    pairwise_sum(&terms)
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = pairwise_sum(samples) / k;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// `K^{l,p,α}_μ(a, r)`.
pub fn k_energy(cloud: &PointCloud, params: &KParams, a: &[f64], r: f64, sampling: &Sampling) -> Result<EnergyEstimate> {
    validate(cloud, params, a)?;
    if sampling.budget < 1 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    let ball = nonempty_ball(cloud, a, r)?;
    let record = EnergyParams {
        kind: params.kind,
        l: params.l,
        p: params.p,
        alpha: params.alpha,
        a: Some(a.to_vec()),
        r,
    };
    let n = ball.len();
    let total = checked_pow(n, cloud.m() + 1);
    if total <= sampling.exhaustive_cap {
        let table = table_over(cloud, params, a, ball, sampling);
        return Ok(EnergyEstimate {
            value: weighted_table_sum(cloud, &table),
            stderr: 0.0,
            tuples_evaluated: total,
            mode: Mode::Exhaustive,
            params: record,
        });
    }
    let lead = params.l - 1;
    let tail_samples = (sampling.exhaustive_cap / sampling.budget as u64).max(64) as usize;
    if lead == 0 {
        let (v, evaluated) = tail_max(
            cloud,
            params,
            &[a],
            &ball,
            sampling.tail_cap,
            sampling.budget,
            sampling.seed,
            0,
        );
        return Ok(EnergyEstimate {
            value: v,
            stderr: 0.0,
            tuples_evaluated: evaluated,
            mode: Mode::MonteCarlo,
            params: record,
        });
    }
    let mut g = rng(sampling.seed, u64::MAX);
    let draws: Vec<Vec<usize>> = (0..sampling.budget)
        .map(|_| (0..lead).map(|_| ball[g.gen_range(0..n)]).collect())
        .collect();
    let evaluated: Vec<(f64, u64)> = map_indexed(draws.len(), |s| {
        let tuple = &draws[s];
        let mut prefix: Vec<&[f64]> = Vec::with_capacity(lead + 1);
        prefix.push(a);
        prefix.extend(tuple.iter().map(|&i| cloud.point(i)));
        let (v, c) = tail_max(
            cloud,
            params,
            &prefix,
            &ball,
            sampling.tail_cap,
            tail_samples,
            sampling.seed,
            s as u64,
        );
        let w: f64 = tuple.iter().map(|&i| cloud.weight(i)).product();
        (w * v, c)
    });
    let terms: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let (mean, se) = mean_and_stderr(&terms);
    let scale = (n as f64).powi(lead as i32);
    Ok(EnergyEstimate {
        value: scale * mean,
        stderr: scale * se,
        tuples_evaluated: evaluated.iter().map(|e| e.1).sum(),
        mode: Mode::MonteCarlo,
        params: record,
    })
}

/// Integral Menger curvature `M_μ(B)` over `B = B̄(c, r)`, or over the whole
/// cloud when `ball` is `None`.
///
/// In exhaustive mode the value is `Σ_a w_a K^{m+2,2,0}_μ(a, ∞)` summed in
/// the same order as [`k_energy`], so the two agree bit for bit.
pub fn menger_energy(cloud: &PointCloud, ball: Option<(&[f64], f64)>, sampling: &Sampling) -> Result<EnergyEstimate> {
    let m = cloud.m();
    let params = KParams::menger(m);
    let (indices, record_a, record_r) = match ball {
        None => ((0..cloud.len()).collect::<Vec<_>>(), None, f64::INFINITY),
        Some((c, r)) => {
            validate(cloud, &params, c)?;
            (cloud.ball_indices(c, r), Some(c.to_vec()), r)
        }
    };
    let record = EnergyParams {
        kind: params.kind,
        l: params.l,
        p: params.p,
        alpha: params.alpha,
        a: record_a,
        r: record_r,
    };
    let n = indices.len();
    if n == 0 {
        return Ok(EnergyEstimate {
            value: 0.0,
            stderr: 0.0,
            tuples_evaluated: 0,
            mode: Mode::Exhaustive,
            params: record,
        });
    }
    let total = checked_pow(n, m + 2);
    if total <= sampling.exhaustive_cap {
        let per_a: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let table = table_over(cloud, &params, cloud.point(i), indices.clone(), sampling);
                cloud.weight(i) * weighted_table_sum(cloud, &table)
            })
            .collect();
        return Ok(EnergyEstimate {
            value: pairwise_sum(&per_a),
            stderr: 0.0,
            tuples_evaluated: total,
            mode: Mode::Exhaustive,
            params: record,
        });
    }
    let mut g = rng(sampling.seed, u64::MAX - 1);
    let draws: Vec<Vec<usize>> = (0..sampling.budget)
        .map(|_| (0..m + 2).map(|_| indices[g.gen_range(0..n)]).collect())
        .collect();
    let terms = map_indexed(draws.len(), |s| {
        let tuple = &draws[s];
        let prefix: Vec<&[f64]> = tuple.iter().map(|&i| cloud.point(i)).collect();
        let w: f64 = tuple.iter().map(|&i| cloud.weight(i)).product();
        w * integrand_of(cloud, &params, &prefix, &[])
    });
    let (mean, se) = mean_and_stderr(&terms);
    let scale = (n as f64).powi((m + 2) as i32);
    Ok(EnergyEstimate {
        value: scale * mean,
        stderr: scale * se,
        tuples_evaluated: draws.len() as u64,
        mode: Mode::MonteCarlo,
        params: record,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaNumber {
    pub value: f64,
    pub plane: Plane,
    pub p: f64,
    pub x: Vec<f64>,
    pub r: f64,
    /// Points of the cloud in `B̄(x, r)`.
    pub support: usize,
    /// Set when the plane came from local descent (`p ≠ 2`).
    pub upper_bound: bool,
}

/// Orthonormal frame: columns `0..m` span the plane, the rest its complement.
struct Frame {
    n: usize,
    m: usize,
    cols: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl Frame {
    fn dist(&self, y: &[f64]) -> f64 {
        let d: Vec<f64> = y.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        self.cols[self.m..]
            .iter()
            .map(|c| {
                let t = crate::geom::dot(&d, c);
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }

    fn rotate(&mut self, i: usize, k: usize, theta: f64) {
        let (s, c) = theta.sin_cos();
        for e in 0..self.n {
            let a = self.cols[i][e];
            let b = self.cols[k][e];
            self.cols[i][e] = c * a - s * b;
            self.cols[k][e] = s * a + c * b;
        }
    }

    fn plane(&self) -> Plane {
        Plane::from_orthonormal(self.n, self.cols[..self.m].to_vec(), Some(self.offset.clone()))
    }
}

fn pca_frame(pts: &[&[f64]], w: &[f64], n: usize, m: usize) -> Frame {
    let mass: f64 = w.iter().sum();
    let mut c = vec![0.0; n];
    for (p, wi) in pts.iter().zip(w) {
        for e in 0..n {
            c[e] += wi * p[e];
        }
    }
    c.iter_mut().for_each(|x| *x /= mass);
    let mut s = DMatrix::<f64>::zeros(n, n);
    for (p, wi) in pts.iter().zip(w) {
        for i in 0..n {
            let di = p[i] - c[i];
            for j in 0..n {
                s[(i, j)] += wi * di * (p[j] - c[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let cols = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    Frame { n, m, cols, offset: c }
}

fn power_sum(frame: &Frame, pts: &[&[f64]], w: &[f64], p: f64) -> f64 {
    let terms: Vec<f64> = pts.iter().zip(w).map(|(y, wi)| wi * frame.dist(y).powf(p)).collect();
    pairwise_sum(&terms)
}

/// Compass search over normal offsets and Givens rotations.
fn descend(frame: &mut Frame, pts: &[&[f64]], w: &[f64], p: f64, scale: f64) -> f64 {
    let (n, m) = (frame.n, frame.m);
    let mut best = power_sum(frame, pts, w, p);
    let mut step_off = 0.1 * scale;
    let mut step_rot = 0.1;
    for _ in 0..DESCENT_MAX_ITER {
        if best == 0.0 || step_rot < 1e-12 {
            break;
        }
        let start = best;
        for k in m..n {
            for sign in [1.0, -1.0] {
                let dir = frame.cols[k].clone();
                let old = frame.offset.clone();
                for (o, d) in frame.offset.iter_mut().zip(&dir) {
                    *o += sign * step_off * d;
                }
                let v = power_sum(frame, pts, w, p);
                if v < best {
                    best = v;
                } else {
                    frame.offset = old;
                }
            }
        }
        for i in 0..m {
            for k in m..n {
                for sign in [1.0, -1.0] {
                    frame.rotate(i, k, sign * step_rot);
                    let v = power_sum(frame, pts, w, p);
                    if v < best {
                        best = v;
                    } else {
                        frame.rotate(i, k, -sign * step_rot);
                    }
                }
            }
        }
        if best < start {
            if (start - best) / start < DESCENT_REL_TOL {
                break;
            }
        } else {
            step_off *= 0.5;
            step_rot *= 0.5;
        }
    }
    best
}

/// `β^m_{μ,p}(x, r)`: exact for `p = 2`, a descent upper bound otherwise.
pub fn beta_number(cloud: &PointCloud, x: &[f64], r: f64, p: f64) -> Result<BetaNumber> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must be in [1, inf), got {p}")));
    }
    if x.len() != cloud.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.ambient_dim(),
            found: x.len(),
        });
    }
    let ball = nonempty_ball(cloud, x, r)?;
    let (n, m) = (cloud.ambient_dim(), cloud.m());
    let pts: Vec<&[f64]> = ball.iter().map(|&i| cloud.point(i)).collect();
    let w: Vec<f64> = ball.iter().map(|&i| cloud.weight(i)).collect();
    let mut frame = pca_frame(&pts, &w, n, m);
    let exact = p == 2.0;
    let sum = if ball.len() <= m {
        0.0
    } else if exact {
        power_sum(&frame, &pts, &w, 2.0)
    } else {
        descend(&mut frame, &pts, &w, p, r)
    };
    let value = (sum / r.powi(m as i32)).powf(1.0 / p) / r;
    Ok(BetaNumber {
        value,
        plane: frame.plane(),
        p,
        x: x.to_vec(),
        r,
        support: ball.len(),
        upper_bound: !exact && ball.len() > m,
    })
}

/// `J_{μ,p,q}(B)` for `B = B̄(center, radius)` with `dr/r` sampled at
/// `diam B · 2^{-j}`, `j < depth`, each slice weighted by `ln 2`.
pub fn j_energy(cloud: &PointCloud, center: &[f64], radius: f64, p: f64, q: f64, depth: usize) -> Result<f64> {
    if depth < 1 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must be in [1, inf), got {p}")));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("ball radius must be positive"));
    }
    let members = cloud.ball_indices(center, radius);
    let diam = 2.0 * radius;
    let per_point: Vec<Result<f64>> = map_indexed(members.len(), |k| {
        let i = members[k];
        let mut s = 0.0;
        for j in 0..depth {
            let r = diam * 0.5f64.powi(j as i32);
            s += beta_number(cloud, cloud.point(i), r, q)?.value.powf(p);
        }
        Ok(cloud.weight(i) * s * std::f64::consts::LN_2)
    });
    let terms = per_point.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cloud(pts: &[[f64; 2]], m: usize) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| p.to_vec()).collect(), vec![1.0; pts.len()], m).unwrap()
    }

    fn circle(k: usize) -> PointCloud {
        let pts: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        cloud(&pts, 1)
    }

    #[test]
    fn collinear_kernel_vanishes() {
        let c = cloud(&[[0.0, 0.0], [1.0, 0.0], [2.5, 0.0], [3.0, 0.0]], 1);
        for l in 1..=3 {
            let params = KParams::new(CurvatureKind::Kappa, l, 2.0, 0.0);
            let leading: Vec<&[f64]> = (0..l - 1).map(|i| c.point(i + 1)).collect();
            let v = k_kernel(&c, &params, c.point(0), 10.0, &leading, &Sampling::default()).unwrap();
            assert_eq!(v, 0.0);
            let e = k_energy(&c, &params, c.point(0), 10.0, &Sampling::default()).unwrap();
            assert_eq!(e.value, 0.0);
            assert_eq!(e.mode, Mode::Exhaustive);
        }
    }

    #[test]
    fn full_tuple_kernel_is_the_integrand() {
        let c = circle(8);
        let params = KParams::new(CurvatureKind::KappaH, 3, 1.5, 0.25);
        let lead = [c.point(1), c.point(3)];
        let v = k_kernel(&c, &params, c.point(0), 5.0, &lead, &Sampling::default()).unwrap();
        let t = SimplexTuple::new(&[c.point(0), c.point(1), c.point(3)]).unwrap();
        assert_eq!(v, k_integrand(params.kind, &t, 3, 1.5, 0.25));
    }

    #[test]
    fn kernel_shrinks_with_radius() {
        let c = circle(10);
        let params = KParams::new(CurvatureKind::Kappa, 2, 2.0, 0.5);
        let lead = [c.point(1)];
        let mut prev = f64::INFINITY;
        for r in [2.5, 1.5, 1.0, 0.7] {
            let v = k_kernel(&c, &params, c.point(0), r, &lead, &Sampling::default()).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn empty_ball_is_an_error() {
        let c = circle(6);
        let params = KParams::new(CurvatureKind::Kappa, 2, 2.0, 0.0);
        assert!(matches!(
            k_energy(&c, &params, &[10.0, 10.0], 1.0, &Sampling::default()),
            Err(Error::EmptyBall { .. })
        ));
    }

    #[test]
    fn weights_scale_energy() {
        let c = circle(7);
        let double = c.scaled_weights(2.0).unwrap();
        for l in 1..=3 {
            let params = KParams::new(CurvatureKind::Kappa, l, 2.0, 0.0);
            let a = c.point(0);
            let e1 = k_energy(&c, &params, a, 3.0, &Sampling::default()).unwrap().value;
            let e2 = k_energy(&double, &params, a, 3.0, &Sampling::default()).unwrap().value;
            assert_relative_eq!(e2, 2f64.powi(l as i32 - 1) * e1, max_relative = 1e-13);
        }
    }

    #[test]
    fn menger_matches_triple_loop_on_circle() {
        let c = circle(12);
        let e = menger_energy(&c, None, &Sampling::default()).unwrap();
        let mut oracle = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    let (a, b, cc) = (c.point(i), c.point(j), c.point(k));
                    let ab = distance(a, b);
                    let bc = distance(b, cc);
                    let ca = distance(cc, a);
                    let d = ab.max(bc).max(ca);
                    if d == 0.0 {
                        continue;
                    }
                    // Heron
                    let s = 0.5 * (ab + bc + ca);
                    let area2 = (s * (s - ab) * (s - bc) * (s - ca)).max(0.0);
                    oracle += area2 / d.powi(6);
                }
            }
        }
        assert!(e.value > 0.0);
        assert_relative_eq!(e.value, oracle, max_relative = 1e-10);
        let seg = cloud(&[[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]], 1);
        assert_eq!(menger_energy(&seg, None, &Sampling::default()).unwrap().value, 0.0);
    }

    #[test]
    fn menger_equals_sum_of_point_energies_exactly() {
        let c = circle(9);
        let params = KParams::menger(1);
        let per_a: Vec<f64> = (0..c.len())
            .map(|i| {
                c.weight(i)
                    * k_energy(&c, &params, c.point(i), f64::INFINITY, &Sampling::default())
                        .unwrap()
                        .value
            })
            .collect();
        let total = menger_energy(&c, None, &Sampling::default()).unwrap();
        assert_eq!(pairwise_sum(&per_a).to_bits(), total.value.to_bits());
    }

    #[test]
    fn beta_three_points_eigenvalue_oracle() {
        let c = cloud(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1);
        let b = beta_number(&c, &[1.0 / 3.0, 1.0 / 3.0], 2.0, 2.0).unwrap();
        assert_relative_eq!(b.value, 0.5 * (1.0f64 / 6.0).sqrt(), epsilon = 1e-14);
        assert!(!b.upper_bound);
    }

    #[test]
    fn beta_on_line_is_zero() {
        let c = cloud(&[[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [3.0, 4.0]], 1);
        for p in [1.0, 2.0, 3.0] {
            let b = beta_number(&c, c.point(1), 5.0, p).unwrap();
            assert!(b.value < 1e-12, "p = {p}: {}", b.value);
        }
        let two = cloud(&[[0.0, 0.0], [5.0, 5.0]], 1);
        assert_eq!(beta_number(&two, &[0.0, 0.0], 1.0, 2.0).unwrap().value, 0.0);
    }

    #[test]
    fn general_p_descent_does_not_lose_to_pca() {
        let pts: Vec<[f64; 2]> = (0..15).map(|i| {
            let x = i as f64 / 7.0 - 1.0;
            [x, 0.3 * x * x + if i == 4 { 0.5 } else { 0.0 }]
        }).collect();
        let c = cloud(&pts, 1);
        for p in [1.0, 1.5, 3.0] {
            let b = beta_number(&c, &[0.0, 0.0], 2.0, p).unwrap();
            let pca = pca_frame(
                &(0..c.len()).map(|i| c.point(i)).collect::<Vec<_>>(),
                c.weights(),
                2,
                1,
            );
            let pca_val = (power_sum(&pca, &(0..c.len()).map(|i| c.point(i)).collect::<Vec<_>>(), c.weights(), p) / 2.0)
                .powf(1.0 / p)
                / 2.0;
            assert!(b.value <= pca_val + 1e-15);
            assert!(b.upper_bound);
        }
    }

    #[test]
    fn j_energy_grows_with_depth_and_vanishes_on_lines() {
        let line = cloud(&[[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [0.3, 0.0]], 1);
        assert_eq!(j_energy(&line, &[0.1, 0.0], 0.3, 2.0, 2.0, 4).unwrap(), 0.0);
        let c = circle(40);
        let mut prev = 0.0;
        for depth in 1..6 {
            let v = j_energy(&c, c.point(0), 0.8, 2.0, 2.0, depth).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }
}
