//! Small-dimension linear algebra: wedge norms, simplex tuples, planes and
//! the Grassmannian distance between them.
//!
//! Points and vectors are plain `&[f64]` slices. The hot paths (simplex
//! kernels evaluated millions of times) work on fixed-size stack buffers,
//! which caps the ambient dimension at [`MAX_DIM`] and tuple length at
//! [`MAX_TUPLE`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 16;
/// Largest supported number of points in a simplex tuple (so `m <= 6`).
pub const MAX_TUPLE: usize = 8;

const BUF: usize = MAX_TUPLE * MAX_DIM;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass over `k` rows of
/// length `n` stored contiguously in `buf`.
///
/// On return each row is either a unit vector orthogonal to the previous
/// nonzero rows or zero; `norms[i]` holds the residual length of row `i`.
/// Residuals at or below `drop_tol` are treated as dependent and zeroed.
fn mgs_rows(buf: &mut [f64], k: usize, n: usize, drop_tol: f64, norms: &mut [f64]) {
    for i in 0..k {
        let (done, rest) = buf.split_at_mut(i * n);
        let row = &mut rest[..n];
        for _pass in 0..2 {
            for j in 0..i {
                if norms[j] == 0.0 {
                    continue;
                }
                let q = &done[j * n..(j + 1) * n];
                let c = dot(row, q);
                for (x, y) in row.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let r = norm(row);
        if r <= drop_tol || r == 0.0 {
            norms[i] = 0.0;
            row.iter_mut().for_each(|x| *x = 0.0);
        } else {
            norms[i] = r;
            row.iter_mut().for_each(|x| *x /= r);
        }
    }
}

fn check_same_len(vectors: &[&[f64]]) -> Result<usize> {
    let n = vectors.first().map_or(0, |v| v.len());
    for v in vectors {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    Ok(n)
}

/// Norm of the wedge product `|v_1 ∧ ... ∧ v_k|`, i.e. `sqrt(det G)` with
/// `G_ij = <v_i, v_j>`.
///
/// Evaluated as the product of Gram-Schmidt residual lengths, which is the
/// same quantity but never produces a negative determinant to clamp.
pub fn gram_volume(vectors: &[&[f64]]) -> Result<f64> {
    let n = check_same_len(vectors)?;
    let k = vectors.len();
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    let mut buf = vec![0.0; k * n];
    for (i, v) in vectors.iter().enumerate() {
        buf[i * n..(i + 1) * n].copy_from_slice(v);
    }
    let mut norms = vec![0.0; k];
    mgs_rows(&mut buf, k, n, 0.0, &mut norms);
    Ok(norms.iter().product())
}

/// An ordered tuple of points (typically `m + 2` of them) with its pairwise
/// distance table.
#[derive(Clone, Debug)]
pub struct SimplexTuple {
    len: usize,
    dim: usize,
    coords: [f64; BUF],
    dist: [f64; MAX_TUPLE * MAX_TUPLE],
}

impl SimplexTuple {
    pub fn new(points: &[&[f64]]) -> Result<Self> {
        let dim = check_same_len(points)?;
        if points.is_empty() || points.len() > MAX_TUPLE {
            return Err(Error::invalid(format!(
                "simplex tuple needs 1..={MAX_TUPLE} points, got {}",
                points.len()
            )));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid(format!(
                "ambient dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        Ok(Self::from_slices_unchecked(points, dim))
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let refs: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
        Self::new(&refs)
    }

    /// Caller guarantees `1 <= points.len() <= MAX_TUPLE`, equal lengths `dim <= MAX_DIM`.
    pub(crate) fn from_slices_unchecked(points: &[&[f64]], dim: usize) -> Self {
        let len = points.len();
        let mut coords = [0.0; BUF];
        for (i, p) in points.iter().enumerate() {
            coords[i * dim..(i + 1) * dim].copy_from_slice(p);
        }
        let mut dist = [0.0; MAX_TUPLE * MAX_TUPLE];
        for i in 0..len {
            for j in (i + 1)..len {
                let d = distance(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]);
                dist[i * MAX_TUPLE + j] = d;
                dist[j * MAX_TUPLE + i] = d;
            }
        }
        Self {
            len,
            dim,
            coords,
            dist,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `m` for which this is an `(m + 2)`-tuple.
    pub fn m(&self) -> usize {
        self.len.saturating_sub(2)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * MAX_TUPLE + j]
    }

    /// Diameter of the convex hull, which is the largest vertex distance.
    pub fn diam(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len {
            for j in (i + 1)..self.len {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    /// `|(a_1 - a_0) ∧ ... ∧ (a_{k-1} - a_0)|`.
    pub fn wedge_norm(&self) -> f64 {
        let k = self.len - 1;
        if k == 0 {
            return 1.0;
        }
        if k > self.dim {
            return 0.0;
        }
        let n = self.dim;
        let mut buf = [0.0; BUF];
        let a0 = self.point(0);
        for i in 0..k {
            let p = self.point(i + 1);
            for c in 0..n {
                buf[i * n + c] = p[c] - a0[c];
            }
        }
        let mut norms = [0.0; MAX_TUPLE];
        mgs_rows(&mut buf, k, n, 1e-12 * self.diam(), &mut norms);
        norms[..k].iter().product()
    }

    /// Distance from vertex `j` to the affine hull of the other vertices,
    /// whatever the dimension of that hull.
    pub fn dist_to_opposite_hull(&self, j: usize) -> f64 {
        let n = self.dim;
        let others: Vec<usize> = (0..self.len).filter(|&i| i != j).collect();
        if others.is_empty() {
            return 0.0;
        }
        let base = self.point(others[0]);
        let k = others.len() - 1;
        let mut buf = [0.0; BUF];
        let mut scale: f64 = 0.0;
        for (row, &i) in others[1..].iter().enumerate() {
            let p = self.point(i);
            for c in 0..n {
                buf[row * n + c] = p[c] - base[c];
            }
            scale = scale.max(self.distance(i, others[0]));
        }
        let mut norms = [0.0; MAX_TUPLE];
        mgs_rows(&mut buf, k, n, 1e-12 * scale, &mut norms);
        let mut v = [0.0; MAX_DIM];
        let x = self.point(j);
        for c in 0..n {
            v[c] = x[c] - base[c];
        }
        let reach = scale.max(norm(&v[..n]));
        for _pass in 0..2 {
            for row in 0..k {
                if norms[row] == 0.0 {
                    continue;
                }
                let q = &buf[row * n..(row + 1) * n];
                let coef = dot(&v[..n], q);
                for c in 0..n {
                    v[c] -= coef * q[c];
                }
            }
        }
        let h = norm(&v[..n]);
        if h <= 1e-12 * reach {
            0.0
        } else {
            h
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `H^{k-1}` measure of the convex hull of a `k`-point tuple:
/// `|(a_1 - a_0) ∧ ... ∧ (a_{k-1} - a_0)| / (k-1)!`.
pub fn simplex_volume(t: &SimplexTuple) -> f64 {
    t.wedge_norm() / factorial(t.len() - 1)
}

pub fn diam(t: &SimplexTuple) -> f64 {
    t.diam()
}

/// A linear or affine subspace stored by an orthonormal basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    ambient: usize,
    basis: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<Vec<f64>>,
}

impl Plane {
    /// Linear span of `vs`, orthonormalized.
    ///
    /// Fails with [`Error::DegenerateSpan`] when the wedge norm is at most
    /// `1e-10 * (max |v_i|)^m`.
    pub fn from_vectors(vs: &[&[f64]]) -> Result<Self> {
        let n = check_same_len(vs)?;
        let m = vs.len();
        if m == 0 {
            return Ok(Self::trivial(n));
        }
        let scale = vs.iter().map(|v| norm(v)).fold(0.0, f64::max);
        let tolerance = 1e-10 * scale.powi(m as i32);
        let mut buf = vec![0.0; m * n];
        for (i, v) in vs.iter().enumerate() {
            buf[i * n..(i + 1) * n].copy_from_slice(v);
        }
        let mut norms = vec![0.0; m];
        mgs_rows(&mut buf, m, n, 0.0, &mut norms);
        let volume: f64 = norms.iter().product();
        if m > n || volume <= tolerance {
            return Err(Error::DegenerateSpan { volume, tolerance });
        }
        let basis = buf.chunks(n).map(|c| c.to_vec()).collect();
        Ok(Self {
            ambient: n,
            basis,
            offset: None,
        })
    }

    pub fn from_owned_vectors(vs: &[Vec<f64>]) -> Result<Self> {
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        Self::from_vectors(&refs)
    }

    /// Caller guarantees the rows of `basis` are orthonormal.
    pub(crate) fn from_orthonormal(ambient: usize, basis: Vec<Vec<f64>>, offset: Option<Vec<f64>>) -> Self {
        Self {
            ambient,
            basis,
            offset,
        }
    }

    /// The zero subspace of `R^n`.
    pub fn trivial(ambient: usize) -> Self {
        Self {
            ambient,
            basis: Vec::new(),
            offset: None,
        }
    }

    /// Span of the given coordinate axes.
    pub fn coordinate(ambient: usize, axes: &[usize]) -> Self {
        let basis = axes
            .iter()
            .map(|&a| {
                let mut e = vec![0.0; ambient];
                e[a] = 1.0;
                e
            })
            .collect();
        Self {
            ambient,
            basis,
            offset: None,
        }
    }

    /// Smallest affine plane containing `points`; its dimension is the affine
    /// rank of the set (relative tolerance `1e-12`).
    pub fn affine_hull(points: &[&[f64]]) -> Result<Self> {
        let n = check_same_len(points)?;
        let Some(base) = points.first() else {
            return Err(Error::invalid("affine hull of an empty set"));
        };
        let k = points.len() - 1;
        let mut buf = vec![0.0; k * n];
        let mut scale: f64 = 0.0;
        for (i, p) in points[1..].iter().enumerate() {
            for c in 0..n {
                buf[i * n + c] = p[c] - base[c];
            }
            scale = scale.max(norm(&buf[i * n..(i + 1) * n]));
        }
        let mut norms = vec![0.0; k];
        mgs_rows(&mut buf, k, n, 1e-12 * scale, &mut norms);
        let basis = buf
            .chunks(n)
            .zip(&norms)
            .filter(|(_, &r)| r > 0.0)
            .map(|(c, _)| c.to_vec())
            .collect();
        Ok(Self {
            ambient: n,
            basis,
            offset: Some(base.to_vec()),
        })
    }

    pub fn with_offset(mut self, offset: &[f64]) -> Self {
        self.offset = Some(offset.to_vec());
        self
    }

    /// The direction space (offset dropped).
    pub fn linear(&self) -> Self {
        Self {
            ambient: self.ambient,
            basis: self.basis.clone(),
            offset: None,
        }
    }

    /// `self + lin{v}`; fails if `v` lies (numerically) in `self`.
    pub fn extend(&self, v: &[f64]) -> Result<Self> {
        let mut vs: Vec<&[f64]> = self.basis.iter().map(|b| b.as_slice()).collect();
        vs.push(v);
        let mut p = Self::from_vectors(&vs)?;
        p.offset = self.offset.clone();
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn offset(&self) -> Option<&[f64]> {
        self.offset.as_deref()
    }

    /// Orthogonal projection of a vector onto the direction space.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient];
        for q in &self.basis {
            let c = dot(v, q);
            for (o, x) in out.iter_mut().zip(q) {
                *o += c * x;
            }
        }
        out
    }

    /// `v - project(v)`.
    pub fn reject(&self, v: &[f64]) -> Vec<f64> {
        let p = self.project(v);
        v.iter().zip(&p).map(|(x, y)| x - y).collect()
    }

    /// Length of `reject(v)` without allocating.
    pub fn reject_norm(&self, v: &[f64]) -> f64 {
        let n = self.ambient;
        if n > MAX_DIM {
            return norm(&self.reject(v));
        }
        // subtracting one direction at a time keeps small rejections accurate
        let mut buf = [0.0; MAX_DIM];
        buf[..n].copy_from_slice(v);
        for q in &self.basis {
            let c = dot(&buf[..n], q);
            for (x, y) in buf[..n].iter_mut().zip(q) {
                *x -= c * y;
            }
        }
        norm(&buf[..n])
    }

    /// Projection of a point onto the affine plane.
    pub fn project_point(&self, x: &[f64]) -> Vec<f64> {
        match &self.offset {
            None => self.project(x),
            Some(o) => {
                let p = self.project(&sub(x, o));
                p.iter().zip(o).map(|(a, b)| a + b).collect()
            }
        }
    }

    /// `x - offset` rejected from the direction space.
    pub fn reject_point(&self, x: &[f64]) -> Vec<f64> {
        match &self.offset {
            None => self.reject(x),
            Some(o) => self.reject(&sub(x, o)),
        }
    }

    /// Distance from a point to the affine plane.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        match &self.offset {
            None => self.reject_norm(x),
            Some(o) => self.reject_norm(&sub(x, o)),
        }
    }

    /// The `n x n` orthogonal projector onto the direction space.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.ambient;
        let mut p = DMatrix::zeros(n, n);
        for q in &self.basis {
            for i in 0..n {
                for j in 0..n {
                    p[(i, j)] += q[i] * q[j];
                }
            }
        }
        p
    }

    /// Largest pairwise deviation of the basis Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// `‖proj_P − proj_Q‖` in operator norm, comparing direction spaces.
pub fn plane_distance(p: &Plane, q: &Plane) -> Result<f64> {
    if p.ambient_dim() != q.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.ambient_dim(),
            found: q.ambient_dim(),
        });
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let diff = p.projector() - q.projector();
    Ok(spectral_norm(&diff).min(1.0))
}

pub fn dist_to_affine(x: &[f64], plane: &Plane) -> f64 {
    plane.distance_to(x)
}

/// `‖proj_S − proj_T‖` for the graph plane `S` of a linear map of norm `eta_norm`.
pub fn tilt_norm(eta_norm: f64) -> f64 {
    if eta_norm.is_infinite() {
        return 1.0;
    }
    eta_norm / (1.0 + eta_norm * eta_norm).sqrt()
}
