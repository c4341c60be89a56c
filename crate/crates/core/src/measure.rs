//! Weighted point clouds as discrete Radon measures.
//!
//! Balls are closed everywhere: a point at distance exactly `r` from the
//! centre belongs to `B̄(a, r)`.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dot, norm, Plane, MAX_DIM, MAX_TUPLE};

/// Below this many points ball queries scan the whole cloud.
const BRUTE_FORCE_BELOW: usize = 256;
/// Points used to estimate the median nearest-neighbour spacing.
const SPACING_SAMPLE: usize = 512;

/// Lebesgue measure of the unit ball in `R^m`.
pub fn unit_ball_volume(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(m - 2) * 2.0 * std::f64::consts::PI / m as f64,
    }
}

#[derive(Clone, Debug)]
struct GridIndex {
    origin: Vec<f64>,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    fn build(coords: &[f64], n: usize, cell: f64) -> Self {
        let count = coords.len() / n;
        let mut origin = vec![f64::INFINITY; n];
        for i in 0..count {
            for c in 0..n {
                origin[c] = origin[c].min(coords[i * n + c]);
            }
        }
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..count {
            let key = (0..n)
                .map(|c| ((coords[i * n + c] - origin[c]) / cell).floor() as i64)
                .collect();
            cells.entry(key).or_default().push(i);
        }
        Self {
            origin,
            cell,
            cells,
        }
    }

    fn key_range(&self, a: &[f64], r: f64) -> (Vec<i64>, Vec<i64>) {
        let lo = a
            .iter()
            .zip(&self.origin)
            .map(|(x, o)| ((x - r - o) / self.cell).floor() as i64)
            .collect();
        let hi = a
            .iter()
            .zip(&self.origin)
            .map(|(x, o)| ((x + r - o) / self.cell).floor() as i64)
            .collect();
        (lo, hi)
    }

    fn cell_min_distance_sq(&self, key: &[i64], a: &[f64]) -> f64 {
        key.iter()
            .zip(a)
            .zip(&self.origin)
            .map(|((&k, x), o)| {
                let lo = o + k as f64 * self.cell;
                let hi = lo + self.cell;
                let d = if *x < lo {
                    lo - x
                } else if *x > hi {
                    x - hi
                } else {
                    0.0
                };
                d * d
            })
            .sum()
    }

    /// Candidate point indices whose cells meet the ball.
    fn candidates(&self, a: &[f64], r: f64, out: &mut Vec<usize>) {
        let (lo, hi) = self.key_range(a, r);
        let span: f64 = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l + 1) as f64)
            .product();
        if span > self.cells.len() as f64 {
            let r2 = r * r;
            for (key, members) in &self.cells {
                if self.cell_min_distance_sq(key, a) <= r2 {
                    out.extend_from_slice(members);
                }
            }
            return;
        }
        let mut key = lo.clone();
        loop {
            if let Some(members) = self.cells.get(&key) {
                out.extend_from_slice(members);
            }
            let mut c = 0;
            loop {
                if c == key.len() {
                    return;
                }
                if key[c] < hi[c] {
                    key[c] += 1;
                    break;
                }
                key[c] = lo[c];
                c += 1;
            }
        }
    }
}

/// Indices and total weight of the cloud points in a closed ball.
#[derive(Clone, Debug, Default)]
pub struct BallSet {
    pub indices: Vec<usize>,
    pub mass: f64,
}

impl BallSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A weighted empirical measure `Σ w_i δ_{x_i}` in `R^n`, intended to model
/// an `m`-dimensional set.
#[derive(Clone, Debug)]
pub struct PointCloud {
    n: usize,
    m: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
    spacing: f64,
    index: Option<GridIndex>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, m: usize) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::EmptyCloud);
        };
        let n = first.len();
        if m < 1 || m >= n {
            return Err(Error::invalid(format!("need 1 <= m < n, got m = {m}, n = {n}")));
        }
        if n > MAX_DIM || m + 2 > MAX_TUPLE {
            return Err(Error::invalid(format!(
                "supported sizes are n <= {MAX_DIM} and m <= {}",
                MAX_TUPLE - 2
            )));
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        let mut coords = Vec::with_capacity(points.len() * n);
        for p in &points {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite coordinate"));
            }
            coords.extend_from_slice(p);
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weights must be positive and finite, got {w}")));
        }
        let total_mass = weights.iter().sum();
        let mut cloud = Self {
            n,
            m,
            coords,
            weights,
            total_mass,
            spacing: 0.0,
            index: None,
        };
        cloud.spacing = cloud.median_nn_spacing();
        if cloud.len() >= BRUTE_FORCE_BELOW {
            let cell = if cloud.spacing > 0.0 {
                cloud.spacing / 2.0
            } else {
                cloud.bbox_extent().max(1e-300) / (cloud.len() as f64)
            };
            cloud.index = Some(GridIndex::build(&cloud.coords, n, cell));
        }
        Ok(cloud)
    }

    /// Equal weights summing to `total_mass`.
    pub fn with_uniform_weights(points: Vec<Vec<f64>>, m: usize, total_mass: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let w = total_mass / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::new(points, weights, m)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.n)
    }

    /// Median nearest-neighbour distance; the finest scale the cloud resolves.
    pub fn typical_spacing(&self) -> f64 {
        self.spacing
    }

    /// Same cloud with every weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Result<Self> {
        let pts = self.points().map(|p| p.to_vec()).collect();
        let w = self.weights.iter().map(|w| w * factor).collect();
        Self::new(pts, w, self.m)
    }

    fn bbox_extent(&self) -> f64 {
        let mut ext: f64 = 0.0;
        for c in 0..self.n {
            let (lo, hi) = self
                .points()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[c]), hi.max(p[c])));
            ext = ext.max(hi - lo);
        }
        ext
    }

    fn median_nn_spacing(&self) -> f64 {
        let count = self.len();
        if count < 2 {
            return 0.0;
        }
        let stride = count.div_ceil(SPACING_SAMPLE).max(1);
        let mut nn: Vec<f64> = (0..count)
            .step_by(stride)
            .map(|i| {
                let a = self.point(i);
                (0..count)
                    .filter(|&j| j != i)
                    .map(|j| crate::geom::distance(a, self.point(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nn.sort_by(f64::total_cmp);
        nn[nn.len() / 2]
    }

    /// Indices (ascending) of the points in `B̄(a, r)`.
    pub fn ball_indices(&self, a: &[f64], r: f64) -> Vec<usize> {
        if r.is_infinite() {
            return (0..self.len()).collect();
        }
        if r < 0.0 {
            return Vec::new();
        }
        let r2 = r * r;
        let inside = |i: usize| {
            let p = self.point(i);
            let d2: f64 = p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
            d2 <= r2
        };
        match &self.index {
            None => (0..self.len()).filter(|&i| inside(i)).collect(),
            Some(grid) => {
                let mut cand = Vec::new();
                grid.candidates(a, r, &mut cand);
                let mut out: Vec<usize> = cand.into_iter().filter(|&i| inside(i)).collect();
                out.sort_unstable();
                out
            }
        }
    }

    /// Same as [`ball_indices`](Self::ball_indices) but always by full scan.
    pub fn ball_indices_brute(&self, a: &[f64], r: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| crate::geom::distance(self.point(i), a) <= r)
            .collect()
    }

    pub fn ball(&self, a: &[f64], r: f64) -> BallSet {
        let indices = self.ball_indices(a, r);
        let mass = indices.iter().map(|&i| self.weights[i]).sum();
        BallSet { indices, mass }
    }

    /// `μ(B̄(a, r))`.
    pub fn ball_mass(&self, a: &[f64], r: f64) -> f64 {
        self.ball(a, r).mass
    }

    /// Weighted mass of an index set.
    pub fn mass_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.weights[i]).sum()
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d = d.max(crate::geom::distance(self.point(i), self.point(j)));
            }
        }
        d
    }
}

/// Dyadic density ratios `μ(B̄(a, r_k)) / (ω_m r_k^m)` at `r_k = r0 2^{-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub omega_m: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Radii at which the ball carried no mass.
    pub empty_balls: usize,
}

pub fn density_profile(cloud: &PointCloud, a: &[f64], r0: f64, depth: usize) -> Result<DensityProfile> {
    if !(r0 > 0.0) || depth < 1 {
        return Err(Error::invalid("density profile needs r0 > 0 and depth >= 1"));
    }
    let m = cloud.m();
    let omega_m = unit_ball_volume(m);
    let radii: Vec<f64> = (0..depth).map(|k| r0 * 0.5f64.powi(k as i32)).collect();
    let ratios: Vec<f64> = radii
        .iter()
        .map(|&r| cloud.ball_mass(a, r) / (omega_m * r.powi(m as i32)))
        .collect();
    let empty_balls = ratios.iter().filter(|&&x| x == 0.0).count();
    Ok(DensityProfile {
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        radii,
        ratios,
        omega_m,
        empty_balls,
    })
}

/// Density stratum of a point: the smallest `j` whose two-sided density
/// bound holds at every tested radius below `1/j`, and then the smallest
/// `k` for the refined bound with respect to the stratum's own measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum Stratum {
    Bounded { j: usize, k: Option<usize> },
    Unbounded,
}

impl Stratum {
    pub fn j(&self) -> Option<usize> {
        match self {
            Stratum::Bounded { j, .. } => Some(*j),
            Stratum::Unbounded => None,
        }
    }
}

/// Dyadic radii `r0 2^{-i}` not below the cloud's sampling scale.
pub fn tested_radii(cloud: &PointCloud, r0: f64) -> Vec<f64> {
    let floor = cloud.typical_spacing();
    let mut radii = Vec::new();
    let mut r = r0;
    while r >= floor && radii.len() < 64 {
        radii.push(r);
        r *= 0.5;
    }
    if radii.is_empty() {
        radii.push(r0);
    }
    radii
}

pub fn stratify(cloud: &PointCloud, j_max: usize, k_max: usize, r0: f64) -> Result<Vec<Stratum>> {
    if j_max < 1 || k_max < 1 || !(r0 > 0.0) {
        return Err(Error::invalid("stratify needs j_max, k_max >= 1 and r0 > 0"));
    }
    let m = cloud.m() as i32;
    let omega = unit_ball_volume(cloud.m());
    let radii = tested_radii(cloud, r0);
    let balls: Vec<Vec<Vec<usize>>> = crate::parallel::map_indexed(cloud.len(), |i| {
        radii.iter().map(|&r| cloud.ball_indices(cloud.point(i), r)).collect()
    });

    let in_bounds = |ratio: f64, lo: f64, hi: f64| ratio > lo && ratio <= hi;

    let js: Vec<Option<usize>> = balls
        .iter()
        .map(|per_r| {
            (1..=j_max).find(|&j| {
                let jf = j as f64;
                radii.iter().zip(per_r).all(|(&r, idx)| {
                    r >= 1.0 / jf || in_bounds(cloud.mass_of(idx) / (omega * r.powi(m)), 1.0 / jf, jf)
                })
            })
        })
        .collect();

    let labels = balls
        .iter()
        .zip(&js)
        .map(|(per_r, j)| match *j {
            None => Stratum::Unbounded,
            Some(j) => {
                let jf = j as f64;
                // mass of the stratum B_j = A_j \ A_{j-1} only
                let k = (1..=k_max).find(|&k| {
                    radii.iter().zip(per_r).all(|(&r, idx)| {
                        if r >= 1.0 / k as f64 {
                            return true;
                        }
                        let mass: f64 = idx
                            .iter()
                            .filter(|&&b| js[b] == Some(j))
                            .map(|&b| cloud.weight(b))
                            .sum();
                        in_bounds(mass / (omega * r.powi(m)), 0.5 / jf, jf)
                    })
                });
                Stratum::Bounded { j, k }
            }
        })
        .collect();
    Ok(labels)
}

/// Membership in the cone `E(a, v, ε) = {b : ∃ t > 0, |t(b − a) − v| < ε}`.
///
/// The quantifier is eliminated exactly: for `u = b − a ≠ 0` the infimum of
/// `|t u − v|` over `t > 0` is `|v| sin θ` when `u · v > 0` and `|v|`
/// otherwise (approached as `t → 0`).
pub fn cone_contains(a: &[f64], v: &[f64], eps: f64, b: &[f64]) -> bool {
    let vn = norm(v);
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let un = norm(&u);
    if un == 0.0 {
        return vn < eps;
    }
    let c = dot(&u, v) / (un * vn);
    if c > 0.0 {
        let sin = (1.0 - c * c).max(0.0).sqrt();
        vn * sin < eps
    } else {
        vn < eps
    }
}

/// The inner-product characterization valid for `0 < ε < |v|`.
pub fn cone_contains_by_angle(a: &[f64], v: &[f64], eps: f64, b: &[f64]) -> bool {
    let vn = norm(v);
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let un = norm(&u);
    if un == 0.0 {
        return false;
    }
    dot(&u, v) / (un * vn) > (1.0 - eps * eps / (vn * vn)).sqrt()
}

pub fn cone_members(cloud: &PointCloud, a: &[f64], v: &[f64], eps: f64) -> Result<Vec<usize>> {
    if norm(v) == 0.0 {
        return Err(Error::ZeroDirection);
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("cone aperture must be positive"));
    }
    Ok((0..cloud.len())
        .filter(|&i| cone_contains(a, v, eps, cloud.point(i)))
        .collect())
}

/// Two normalizations of how far the mass near `a` sits from `a + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentDefect {
    /// `r^{-m} Σ w_b |reject(T, b − a)| / |b − a|`
    pub angular: f64,
    /// `r^{-m-1} Σ w_b |reject(T, b − a)|`
    pub height: f64,
}

pub fn tangent_containment_defect(cloud: &PointCloud, a: &[f64], t: &Plane, r: f64) -> Result<ContainmentDefect> {
    if !(r > 0.0) {
        return Err(Error::invalid("containment defect needs r > 0"));
    }
    let m = cloud.m() as i32;
    let mut angular = 0.0;
    let mut height = 0.0;
    for i in cloud.ball_indices(a, r) {
        let u: Vec<f64> = cloud.point(i).iter().zip(a).map(|(x, y)| x - y).collect();
        let un = norm(&u);
        if un == 0.0 {
            continue;
        }
        let h = t.reject_norm(&u);
        angular += cloud.weight(i) * h / un;
        height += cloud.weight(i) * h;
    }
    Ok(ContainmentDefect {
        angular: angular / r.powi(m),
        height: height / r.powi(m + 1),
    })
}

/// Outcome of Chebyshev's inequality on a region: the mass where `|f|`
/// exceeds `K` times its weighted mean, against the bound `mass / K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevCheck {
    pub exceeding_mass: f64,
    pub region_mass: f64,
    pub bound: f64,
}

impl ChebyshevCheck {
    pub fn holds(&self) -> bool {
        self.exceeding_mass <= self.bound * (1.0 + 1e-12)
    }
}

pub fn chebyshev_check(weights: &[f64], values: &[f64], k: f64) -> ChebyshevCheck {
    let region_mass: f64 = weights.iter().sum();
    let mean = if region_mass > 0.0 {
        weights.iter().zip(values).map(|(w, f)| w * f.abs()).sum::<f64>() / region_mass
    } else {
        0.0
    };
    let exceeding_mass = weights
        .iter()
        .zip(values)
        .filter(|(_, f)| f.abs() > k * mean)
        .map(|(w, _)| w)
        .sum();
    ChebyshevCheck {
        exceeding_mass,
        region_mass,
        bound: region_mass / k,
    }
}

/// Reads `x1,...,xn[,w]`. Rows without a weight column get
/// `reference_mass / rows`.
pub fn read_csv<R: Read>(reader: R, m: usize, reference_mass: f64) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            column: 0,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_w = cols.last() == Some(&"w");
    let n = if has_w { cols.len() - 1 } else { cols.len() };
    if n == 0 {
        return Err(Error::Csv {
            line: 1,
            column: 1,
            message: "no coordinate columns".into(),
        });
    }
    for (c, name) in cols[..n].iter().enumerate() {
        if *name != format!("x{}", c + 1) {
            return Err(Error::Csv {
                line: 1,
                column: c + 1,
                message: format!("expected header `x{}`, found `{name}`", c + 1),
            });
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != cols.len() {
            return Err(Error::Csv {
                line,
                column: rec.len().min(cols.len()) + 1,
                message: format!("expected {} fields, found {}", cols.len(), rec.len()),
            });
        }
        let mut p = Vec::with_capacity(n);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                line,
                column: c + 1,
                message: format!("not a number: `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            if c < n {
                p.push(v);
            } else if v <= 0.0 {
                return Err(Error::Csv {
                    line,
                    column: c + 1,
                    message: "weight must be positive".into(),
                });
            } else {
                weights.push(v);
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !has_w {
        weights = vec![reference_mass / points.len() as f64; points.len()];
    }
    PointCloud::new(points, weights, m)
}

pub fn write_csv<W: Write>(cloud: &PointCloud, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=cloud.ambient_dim()).map(|c| format!("x{c}")).collect();
    header.push("w".into());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for (i, p) in cloud.points().enumerate() {
        let mut row: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
        row.push(format!("{:?}", cloud.weight(i)));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}
