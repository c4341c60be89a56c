//! Analysis and sweep drivers behind the command-line tool, and the JSON and
//! CSV shapes they write.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::balanced::fat_simplex_search;
use crate::curvature::CurvatureKind;
use crate::energy::{beta_number, j_energy, k_energy, menger_energy, EnergyEstimate, KParams, Mode, Sampling};
use crate::error::{Error, Result};
use crate::generators::{GraphSpec, ParamSampling};
use crate::measure::{density_profile, stratify, DensityProfile, PointCloud, Stratum};
use crate::parallel::map_indexed;
use crate::tangent::{default_threshold, dyadic_plane_sequence, AlphaFit, GraphMap, ScaleProfile, TangentEstimate, TangentParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Chebyshev bounds are compared with this relative slack.
const CHEBYSHEV_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub kind: CurvatureKind,
    pub l: usize,
    pub p: f64,
    pub alpha: f64,
    pub r0: f64,
    pub depth: usize,
    pub budget: usize,
    pub seed: u64,
    /// Number of base points; all points when `None`.
    pub points: Option<usize>,
    /// Fat-simplex density target.
    pub sigma: f64,
    pub j_max: usize,
    pub k_max: usize,
    /// Exponent pair of the beta numbers and `J`.
    pub beta_p: f64,
}

impl AnalyzeConfig {
    pub fn new(m: usize) -> Self {
        Self {
            kind: CurvatureKind::KappaH,
            l: m + 1,
            p: 2.0,
            alpha: 0.0,
            r0: 0.5,
            depth: 6,
            budget: 100_000,
            seed: 0,
            points: Some(16),
            sigma: 0.5,
            j_max: 8,
            k_max: 8,
            beta_p: 2.0,
        }
    }

    fn sampling(&self) -> Sampling {
        Sampling::with_budget(self.budget, self.seed)
    }

    fn kernel(&self) -> KParams {
        KParams::new(self.kind, self.l, self.p, self.alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub count: usize,
    pub n: usize,
    pub m: usize,
    pub total_mass: f64,
}

/// A deterministic value, or a Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tagged {
    pub value: f64,
    pub stderr: f64,
    pub mode: Mode,
}

impl Tagged {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            mode: Mode::Exhaustive,
        }
    }
}

impl From<&EnergyEstimate> for Tagged {
    fn from(e: &EnergyEstimate) -> Self {
        Self {
            value: e.value,
            stderr: e.stderr,
            mode: e.mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentSummary {
    pub limit_plane: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub drift: Vec<f64>,
    pub alpha_fit: AlphaFit,
    pub delta: f64,
    pub threshold: f64,
    pub certified: bool,
    pub chebyshev_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub id: usize,
    pub point: Vec<f64>,
    pub stratum: Stratum,
    pub density: DensityProfile,
    pub fat_delta: Tagged,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangent: Option<TangentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangent_error: Option<String>,
    pub energy: Tagged,
    pub beta: ScaleProfile,
    pub beta_upper_bound: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            median: median_sorted(&v),
            max: v[v.len() - 1],
        })
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub menger_energy: Tagged,
    pub j_energy: Tagged,
    pub fat_delta: Option<Spread>,
    pub alpha_fit: Option<Spread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub chebyshev: bool,
    pub plane_tilt: bool,
    pub curvature_lower_bound: bool,
    pub failed_points: Vec<usize>,
}

impl CertificateSummary {
    pub fn passed(&self) -> bool {
        self.chebyshev && self.plane_tilt && self.curvature_lower_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: u32,
    pub version: String,
    pub timestamp: u64,
    pub input: InputDigest,
    pub config: AnalyzeConfig,
    pub points: Vec<PointRecord>,
    pub global: GlobalRecord,
    pub certificates: CertificateSummary,
    #[serde(skip)]
    pub estimates: Vec<Option<TangentEstimate>>,
}

/// `k` indices spread evenly over `0..n`.
pub fn base_points(n: usize, k: Option<usize>) -> Vec<usize> {
    match k {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn chebyshev_ok(est: &TangentEstimate, threshold: f64) -> bool {
    est.scales.iter().all(|s| match (s.y_fraction, s.energy_mode) {
        (Some(f), Mode::Exhaustive) => f <= (1.0 + CHEBYSHEV_SLACK) / threshold,
        _ => true,
    })
}

pub fn analyze(cloud: &PointCloud, path: &str, config: &AnalyzeConfig) -> Result<AnalysisReport> {
    let m = cloud.m();
    crate::curvature::check_energy_params(m, config.l, config.p, config.alpha)?;
    if config.depth < 2 || !(config.r0 > 0.0) {
        return Err(Error::invalid("analysis needs depth >= 2 and r0 > 0"));
    }
    if !(config.sigma > 0.0 && config.sigma <= 1.0) {
        return Err(Error::invalid("sigma must be in (0, 1]"));
    }
    let sampling = config.sampling();
    let strata = stratify(cloud, config.j_max, config.k_max, config.r0)?;
    let ids = base_points(cloud.len(), config.points);
    let results = map_indexed(ids.len(), |k| analyze_point(cloud, config, &sampling, ids[k], strata[ids[k]]));
    let mut points = Vec::with_capacity(ids.len());
    let mut estimates = Vec::with_capacity(ids.len());
    for r in results {
        let (rec, est) = r?;
        points.push(rec);
        estimates.push(est);
    }

    let menger = menger_energy(cloud, None, &sampling)?;
    let (lo, hi) = bounding_box(cloud);
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let radius = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).map(|h| h * h).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let j = j_energy(cloud, &center, radius, config.beta_p, config.beta_p, config.depth)?;

    let deltas: Vec<f64> = points.iter().map(|p| p.fat_delta.value).collect();
    let slopes: Vec<f64> = points.iter().filter_map(|p| p.tangent.as_ref()?.alpha_fit.slope).collect();
    let mut failed = Vec::new();
    let (mut cheb, mut tilt, mut lower) = (true, true, true);
    for (rec, est) in points.iter().zip(&estimates) {
        if let (Some(t), Some(est)) = (&rec.tangent, est) {
            let c = t.chebyshev_ok;
            let l = est.certificates.iter().all(|c| c.holds);
            let b = est.scales.iter().all(|s| s.lower_bound.holds);
            if !(c && l && b) {
                failed.push(rec.id);
            }
            cheb &= c;
            tilt &= l;
            lower &= b;
        }
    }
    Ok(AnalysisReport {
        schema: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: unix_time(),
        input: InputDigest {
            path: path.to_string(),
            count: cloud.len(),
            n: cloud.ambient_dim(),
            m,
            total_mass: cloud.total_mass(),
        },
        config: config.clone(),
        points,
        global: GlobalRecord {
            menger_energy: Tagged::from(&menger),
            j_energy: Tagged::exact(j),
            fat_delta: Spread::of(&deltas),
            alpha_fit: Spread::of(&slopes),
        },
        certificates: CertificateSummary {
            chebyshev: cheb,
            plane_tilt: tilt,
            curvature_lower_bound: lower,
            failed_points: failed,
        },
        estimates,
    })
}

fn bounding_box(cloud: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let n = cloud.ambient_dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in cloud.points() {
        for c in 0..n {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    (lo, hi)
}

fn analyze_point(
    cloud: &PointCloud,
    config: &AnalyzeConfig,
    sampling: &Sampling,
    id: usize,
    stratum: Stratum,
) -> Result<(PointRecord, Option<TangentEstimate>)> {
    let a = cloud.point(id);
    let m = cloud.m();
    let density = density_profile(cloud, a, config.r0, config.depth)?;
    let fat = fat_simplex_search(cloud, a, config.r0, config.sigma, sampling)?;
    let j = stratum.j().unwrap_or(config.j_max);
    let threshold = default_threshold(m, 2.0 * j as f64, config.sigma);
    let tp = TangentParams {
        kernel: config.kernel(),
        delta: (0.5 * fat).clamp(1e-3, 1.0),
        threshold,
        sampling: *sampling,
    };
    let (tangent, tangent_error, est) = match dyadic_plane_sequence(cloud, a, config.r0, config.depth, &tp) {
        Ok(est) => {
            let summary = TangentSummary {
                limit_plane: est.limit_plane.basis().to_vec(),
                radii: est.radii(),
                drift: est.drift.clone(),
                alpha_fit: est.alpha_fit,
                delta: tp.delta,
                threshold,
                certified: est.certified(),
                chebyshev_ok: chebyshev_ok(&est, threshold),
            };
            (Some(summary), None, Some(est))
        }
        Err(e @ (Error::NoFatTuple { .. } | Error::EmptyBall { .. })) => (None, Some(e.to_string()), None),
        Err(e) => return Err(e),
    };
    let energy = k_energy(cloud, &config.kernel(), a, config.r0, sampling)?;
    let radii: Vec<f64> = (0..config.depth).map(|k| config.r0 * 0.5f64.powi(k as i32)).collect();
    let mut betas = Vec::with_capacity(radii.len());
    let mut upper = false;
    for &r in &radii {
        let b = beta_number(cloud, a, r, config.beta_p)?;
        upper |= b.upper_bound;
        betas.push(b.value);
    }
    Ok((
        PointRecord {
            id,
            point: a.to_vec(),
            stratum,
            density,
            fat_delta: Tagged::exact(fat),
            tangent,
            tangent_error,
            energy: Tagged::from(&energy),
            beta: ScaleProfile::new(radii, betas),
            beta_upper_bound: upper,
        },
        est,
    ))
}

impl AnalysisReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One row per (base point, scale).
    pub fn write_scales_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "point", "scale", "r", "gram", "drift", "energy", "energy_mode", "y_fraction", "z_fraction", "lower_bound_holds",
        ])
        .map_err(csv_err)?;
        for (rec, est) in self.points.iter().zip(&self.estimates) {
            let Some(est) = est else { continue };
            for (i, (s, d)) in est.scales.iter().zip(&est.drift).enumerate() {
                let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
                out.write_record([
                    rec.id.to_string(),
                    i.to_string(),
                    s.r.to_string(),
                    s.gram.to_string(),
                    d.to_string(),
                    s.energy.to_string(),
                    mode_str(s.energy_mode).to_string(),
                    opt(s.y_fraction),
                    opt(s.z_fraction),
                    s.lower_bound.holds.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn mode_str(m: Mode) -> &'static str {
    match m {
        Mode::Exhaustive => "exhaustive",
        Mode::MonteCarlo => "monte_carlo",
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Refinement experiment over graphs of varying regularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub kinds: Vec<CurvatureKind>,
    pub counts: Vec<usize>,
    pub l: usize,
    pub p: f64,
    pub radius: f64,
    pub base_points: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub budget: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.5],
            alphas: vec![0.3, 0.8],
            kinds: vec![CurvatureKind::KappaH],
            counts: vec![250, 500, 1000, 2000],
            l: 3,
            p: 2.0,
            radius: 0.25,
            base_points: 9,
            amplitude: 0.3,
            seed: 0,
            budget: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub alpha: f64,
    pub kind: CurvatureKind,
    pub l: usize,
    pub p: f64,
    pub count: usize,
    /// Median of `K^{l,p,α}(a, radius)` over the base points.
    pub median_energy: f64,
    pub monte_carlo: bool,
    /// `median_energy` over its value at the coarsest count.
    pub ratio_to_first: f64,
}

/// Per-point energies at graph points over `x ∈ [−1/2, 1/2]` on grid clouds
/// of increasing size.
pub fn sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.betas.is_empty() || config.alphas.is_empty() || config.kinds.is_empty() || config.counts.is_empty() {
        return Err(Error::invalid("sweep grids must be nonempty"));
    }
    if config.base_points < 1 || !(config.radius > 0.0) {
        return Err(Error::invalid("sweep needs base_points >= 1 and radius > 0"));
    }
    let sampling = Sampling::with_budget(config.budget, config.seed);
    let mut rows = Vec::new();
    for &beta in &config.betas {
        let mut clouds = Vec::with_capacity(config.counts.len());
        let mut spec = None;
        for &count in &config.counts {
            let g = GraphSpec::new(1, 2, beta, config.amplitude, count, config.seed)?.with_sampling(ParamSampling::Grid);
            let f = g.generate()?;
            clouds.push(f.cloud);
            spec = Some(g);
        }
        let spec = spec.expect("nonempty counts");
        let k = config.base_points;
        let bases: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let x = if k == 1 { 0.0 } else { -0.5 + i as f64 / (k - 1) as f64 };
                spec.embed(&[x])
            })
            .collect();
        for &kind in &config.kinds {
            for &alpha in &config.alphas {
                let params = KParams::new(kind, config.l, config.p, alpha);
                let mut first = None;
                for (cloud, &count) in clouds.iter().zip(&config.counts) {
                    let mut values = Vec::with_capacity(k);
                    let mut mc = false;
                    for a in &bases {
                        let e = k_energy(cloud, &params, a, config.radius, &sampling)?;
                        mc |= e.mode == Mode::MonteCarlo;
                        values.push(e.value);
                    }
                    let med = median(&values).expect("base points");
                    let base = *first.get_or_insert(med);
                    rows.push(SweepRow {
                        beta,
                        alpha,
                        kind,
                        l: config.l,
                        p: config.p,
                        count,
                        median_energy: med,
                        monte_carlo: mc,
                        ratio_to_first: if base > 0.0 { med / base } else { f64::NAN },
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::gen_plane;

    #[test]
    fn base_points_are_spread() {
        assert_eq!(base_points(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(base_points(3, Some(5)), vec![0, 1, 2]);
        assert_eq!(base_points(4, None), vec![0, 1, 2, 3]);
    }

    #[test]
    fn plane_report_is_flat_and_zero() {
        let f = gen_plane(1, 2, 64).unwrap();
        let mut cfg = AnalyzeConfig::new(1);
        cfg.points = Some(4);
        cfg.r0 = 0.5;
        cfg.depth = 4;
        let rep = analyze(&f.cloud, "plane.csv", &cfg).unwrap();
        assert_eq!(rep.points.len(), 4);
        for p in &rep.points {
            assert_eq!(p.energy.value, 0.0);
            let t = p.tangent.as_ref().unwrap();
            assert_eq!(t.alpha_fit.flag, crate::tangent::FitFlag::Flat);
            assert!(p.beta.values.iter().all(|b| *b <= 1e-12));
        }
        assert_eq!(rep.global.menger_energy.value, 0.0);
        assert!(rep.global.j_energy.value <= 1e-12);
        assert!(rep.certificates.passed());
        let text = serde_json::to_string(&rep).unwrap();
        let back: AnalysisReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.points, rep.points);
        assert_eq!(back.global, rep.global);
    }

    #[test]
    fn sweep_rejects_empty_grids() {
        let cfg = SweepConfig {
            alphas: vec![],
            ..SweepConfig::default()
        };
        assert!(sweep(&cfg).is_err());
    }

    #[test]
    fn sweep_rows_cover_the_grid() {
        let cfg = SweepConfig {
            counts: vec![40, 80],
            base_points: 3,
            ..SweepConfig::default()
        };
        let rows = sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].ratio_to_first, 1.0);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("beta,alpha,kind,l,p,count,median_energy,monte_carlo,ratio_to_first"));
        assert_eq!(text.lines().count(), 5);
    }
}
