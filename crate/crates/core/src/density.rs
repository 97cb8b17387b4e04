//! Linear and thresholded needlet density estimates and Lᵖ discrepancies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coverage::Coverage;
use crate::error::{Error, Result};
use crate::harmonics::{build_grid, filter, HarmonicCoefficients, QuadratureGrid, ShtPlan};
use crate::needlet::{NeedletCoefficientSet, NeedletFrame, ScaleCoefficients, ScaleCubature, WindowFunction};
use crate::sphere::UnitDirection;

const FOUR_PI: f64 = 4.0 * PI;

/// How an estimate was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimateKind {
    Linear {
        scale: usize,
    },
    Thresholded {
        lambda: f64,
        rho: f64,
        jstar: i64,
        /// Surviving coefficients per scale `1..=jstar`.
        survivors: Vec<usize>,
        /// Set when `jstar < 1` and the estimate is the constant.
        degenerate: bool,
    },
}

/// A band-limited density estimate, constant term included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    coeffs: HarmonicCoefficients,
    kind: EstimateKind,
}

fn constant_coeffs(band_limit: usize) -> HarmonicCoefficients {
    let mut c = HarmonicCoefficients::zeros(band_limit);
    c.set(0, 0, 1.0 / FOUR_PI.sqrt());
    c
}

impl DensityEstimate {
    fn from_fluctuation(mut fluct: HarmonicCoefficients, kind: EstimateKind) -> Self {
        fluct.set(0, 0, 1.0 / FOUR_PI.sqrt());
        DensityEstimate { coeffs: fluct, kind }
    }

    pub fn coeffs(&self) -> &HarmonicCoefficients {
        &self.coeffs
    }

    pub fn kind(&self) -> &EstimateKind {
        &self.kind
    }

    pub fn band_limit(&self) -> usize {
        self.coeffs.band_limit()
    }

    pub fn evaluate(&self, u: &UnitDirection) -> f64 {
        crate::harmonics::evaluate(&self.coeffs, u)
    }

    /// `∫ f̂ dμ`, which is 1 by construction.
    pub fn integral(&self) -> f64 {
        self.coeffs.get(0, 0) * FOUR_PI.sqrt()
    }
}

/// Hard-threshold parameters of the plug-in estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub lambda: f64,
    pub rho: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            lambda: 1.0,
            rho: 1.0,
        }
    }
}

impl ThresholdRule {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        let rule = ThresholdRule { lambda, rho };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "occupancy rho must be finite and positive, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Keeps `β̂` when `|β̂| > λ √(ln n) σ̂/√n` and `δ > ρ ln n`.
    ///
    /// `σ̂²` is the empirical variance of `ψ(X)`, so `σ̂/√n` is the standard
    /// error of `β̂`.
    pub fn keeps(&self, beta: f64, sigma2: f64, delta: f64, n: usize) -> bool {
        let nf = n as f64;
        let ln = nf.ln();
        beta.abs() > self.lambda * ln.sqrt() * (sigma2 / nf).sqrt() && delta > self.rho * ln
    }

    /// `⌊½ log₂(n / (ρ ln n))⌋`, possibly below 1 for small samples.
    pub fn jstar(&self, n: usize) -> i64 {
        let nf = n as f64;
        (0.5 * (nf / (self.rho * nf.ln())).log2()).floor() as i64
    }
}

/// `f̂_J` summed over needlets of scales `0..=J`.
pub fn linear_estimate(
    coeffs: &NeedletCoefficientSet,
    frame: &NeedletFrame,
    scale: usize,
) -> Result<DensityEstimate> {
    let band = frame.scale(scale)?.band().1;
    let mut fluct = HarmonicCoefficients::zeros(band);
    for j in 0..=scale {
        let s = frame.scale(j)?;
        fluct.add_scaled(&s.reconstruct(&coeffs.scale(j)?.beta).resized(band), 1.0);
    }
    Ok(DensityEstimate::from_fluctuation(
        fluct,
        EstimateKind::Linear { scale },
    ))
}

/// `f̂_J` as the low-pass filter `Σ_{j≤J} b(B^{-j} l)` applied to the
/// event multipoles `Â_lm = Σ_i Y_lm(X_i)`.
pub fn linear_estimate_lowpass(
    window: &WindowFunction,
    multipoles: &HarmonicCoefficients,
    n: usize,
    scale: usize,
) -> DensityEstimate {
    let band = window.scale_range(scale).1;
    let nf = n as f64;
    let a = multipoles.resized(band);
    let fluct = filter(&a, |l| if l == 0 { 0.0 } else { window.lowpass(scale, l) / nf });
    DensityEstimate::from_fluctuation(fluct.resized(band), EstimateKind::Linear { scale })
}

/// Reconstruction of the surviving coefficients of one scale, with their count.
pub fn thresholded_scale(
    coeffs: &ScaleCoefficients,
    cubature: &ScaleCubature,
    rule: &ThresholdRule,
    n: usize,
) -> (HarmonicCoefficients, usize) {
    let mut kept = 0;
    let masked: Vec<f64> = coeffs
        .beta
        .iter()
        .zip(&coeffs.sigma2)
        .zip(&coeffs.delta)
        .map(|((&b, &s), &d)| {
            if rule.keeps(b, s, d, n) {
                kept += 1;
                b
            } else {
                0.0
            }
        })
        .collect();
    let c = if kept == 0 {
        HarmonicCoefficients::zeros(0)
    } else {
        cubature.reconstruct(&masked)
    };
    (c, kept)
}

/// Hard-thresholded estimate over scales `1..=J*`.
///
/// `J*` defaults to [`ThresholdRule::jstar`]; when it is below 1 the
/// estimate is the constant and flagged as degenerate.
pub fn plugin_estimate(
    coeffs: &NeedletCoefficientSet,
    frame: &NeedletFrame,
    rule: &ThresholdRule,
    jstar: Option<usize>,
) -> Result<DensityEstimate> {
    rule.validate()?;
    let n = coeffs.n;
    if n < 2 {
        return Err(Error::TooFewEvents { needed: 2, got: n });
    }
    let jstar = jstar.map(|j| j as i64).unwrap_or_else(|| rule.jstar(n));
    if jstar < 1 {
        return Ok(DensityEstimate {
            coeffs: constant_coeffs(0),
            kind: EstimateKind::Thresholded {
                lambda: rule.lambda,
                rho: rule.rho,
                jstar,
                survivors: Vec::new(),
                degenerate: true,
            },
        });
    }
    let top = jstar as usize;
    let band = frame.scale(top)?.band().1;
    let mut fluct = HarmonicCoefficients::zeros(band);
    let mut survivors = Vec::with_capacity(top);
    for j in 1..=top {
        let (c, kept) = thresholded_scale(coeffs.scale(j)?, frame.scale(j)?, rule, n);
        fluct.add_scaled(&c.resized(band), 1.0);
        survivors.push(kept);
    }
    Ok(DensityEstimate::from_fluctuation(
        fluct,
        EstimateKind::Thresholded {
            lambda: rule.lambda,
            rho: rule.rho,
            jstar,
            survivors,
            degenerate: false,
        },
    ))
}

/// Discrepancy norms: `L2Star` is the unbiased L² estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "2*")]
    L2Star,
    #[serde(rename = "inf")]
    LInf,
}

impl Norm {
    pub const ALL: [Norm; 4] = [Norm::L1, Norm::L2, Norm::L2Star, Norm::LInf];

    pub fn label(&self) -> &'static str {
        match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::L2Star => "2*",
            Norm::LInf => "inf",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "2*" | "2star" | "l2*" | "l2star" => Ok(Norm::L2Star),
            "inf" | "linf" | "infinity" | "max" => Ok(Norm::LInf),
            other => Err(Error::UnsupportedNorm(other.to_string())),
        }
    }
}

/// `(Σ_k λ_k |d_k|^p)^{1/p}` or `max |d_k|` of mesh values.
pub fn mesh_norm(grid: &QuadratureGrid, diff: &[f64], norm: Norm) -> Result<f64> {
    assert_eq!(diff.len(), grid.len());
    match norm {
        Norm::L1 => {
            let a: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
            Ok(grid.integrate(&a))
        }
        Norm::L2 => {
            let a: Vec<f64> = diff.iter().map(|d| d * d).collect();
            Ok(grid.integrate(&a).max(0.0).sqrt())
        }
        Norm::LInf => Ok(diff.iter().fold(0.0, |m, d| m.max(d.abs()))),
        Norm::L2Star => Err(Error::UnsupportedNorm(
            "2* is not a mesh norm; use the unbiased estimate".into(),
        )),
    }
}

/// A fixed mesh with the reference density sampled at its nodes.
pub struct EvaluationMesh {
    plan: ShtPlan,
    g_values: Vec<f64>,
}

impl EvaluationMesh {
    /// Mesh of degree `4 × band_limit` for estimates up to `band_limit`.
    pub fn new(g: &Coverage, band_limit: usize) -> Self {
        Self::with_degree(g, band_limit, (4 * band_limit).max(4))
    }

    pub fn with_degree(g: &Coverage, band_limit: usize, degree: usize) -> Self {
        let grid = Arc::new(build_grid(degree));
        let g_values = grid.points().iter().map(|u| g.density(u)).collect();
        EvaluationMesh {
            plan: ShtPlan::new(grid, band_limit),
            g_values,
        }
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.plan.grid()
    }

    pub fn plan(&self) -> &ShtPlan {
        &self.plan
    }

    pub fn band_limit(&self) -> usize {
        self.plan.lmax()
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    /// Values of the estimate at the mesh nodes.
    pub fn values(&self, est: &DensityEstimate) -> Result<Vec<f64>> {
        if est.band_limit() > self.band_limit() {
            return Err(Error::GridTooSmall {
                degree: self.band_limit(),
                band_limit: est.band_limit(),
            });
        }
        Ok(self.plan.synthesis(est.coeffs()))
    }

    /// `‖f − g‖_p` from mesh values of `f`.
    pub fn distance_of_values(&self, f_values: &[f64], norm: Norm) -> Result<f64> {
        let diff: Vec<f64> = f_values
            .iter()
            .zip(&self.g_values)
            .map(|(f, g)| f - g)
            .collect();
        mesh_norm(self.grid(), &diff, norm)
    }
}

/// `‖f̂ − g‖_p` on the mesh.
pub fn lp_distance(est: &DensityEstimate, mesh: &EvaluationMesh, norm: Norm) -> Result<f64> {
    let v = mesh.values(est)?;
    mesh.distance_of_values(&v, norm)
}

/// `Σ_{j ≤ J+1} Σ_k ζ_jk`; may be negative.
pub fn unbiased_l2(coeffs: &NeedletCoefficientSet, scale: usize) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..=scale + 1 {
        let z = coeffs.scale(j)?.zeta.as_ref().ok_or_else(|| {
            Error::InvalidParameter("coefficient set was computed without zeta".into())
        })?;
        total += z.iter().sum::<f64>();
    }
    Ok(total)
}

/// Per-scale `Σ_k ζ_jk` in closed form from the event multipoles `Â` and
/// the multipoles `G` of the reference density, for scales `0..=max_scale`.
///
/// Uses `Σ_k ψ_jk(x) ψ_jk(y) = Σ_l b(B^{-j} l) L_l(x·y)`.
pub fn zeta_scale_sums(
    window: &WindowFunction,
    multipoles: &HarmonicCoefficients,
    g: &HarmonicCoefficients,
    n: usize,
    max_scale: usize,
) -> Vec<f64> {
    let nf = n as f64;
    let pair = nf * (nf - 1.0);
    let band = window.scale_range(max_scale).1;
    let per_degree: Vec<f64> = (0..=band)
        .map(|l| {
            let aa = multipoles.degree_power(l);
            let (mut ga, mut gg) = (0.0, 0.0);
            for m in -(l as i64)..=(l as i64) {
                let gv = g.get(l, m);
                ga += gv * multipoles.get(l, m);
                gg += gv * gv;
            }
            (aa - nf * (2 * l + 1) as f64 / FOUR_PI) / pair - 2.0 * ga / nf + gg
        })
        .collect();
    (0..=max_scale)
        .map(|j| {
            let (lo, hi) = window.scale_range(j);
            (lo..=hi.min(band))
                .map(|l| window.band_weight(j, l) * per_degree[l])
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::CoverageModel;
    use crate::harmonics::point_multipoles;
    use crate::needlet::{build_frame, empirical_coefficients, make_window, zeta_coefficients};
    use crate::sphere::sample_uniform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(jmax: usize) -> NeedletFrame {
        build_frame(make_window(2.0, 15).unwrap(), jmax)
    }

    fn uniform_catalog(n: usize, seed: u64) -> Vec<UnitDirection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_uniform(&mut rng)).collect()
    }

    fn probe_points(seed: u64) -> Vec<UnitDirection> {
        uniform_catalog(50, seed)
    }

    #[test]
    fn zero_coefficients_give_constant() {
        let f = frame(3);
        let g = Coverage::uniform();
        let mut set = empirical_coefficients(&f, &uniform_catalog(10, 1), &g).unwrap();
        for s in &mut set.scales {
            s.beta.iter_mut().for_each(|b| *b = 0.0);
        }
        let est = linear_estimate(&set, &f, 3).unwrap();
        for u in probe_points(2) {
            assert!((est.evaluate(&u) - 1.0 / FOUR_PI).abs() < 1e-15);
        }
        assert!((est.integral() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn needlet_sum_matches_lowpass() {
        let f = frame(4);
        let g = Coverage::uniform();
        for seed in 0..3 {
            let cat = uniform_catalog(30 + 20 * seed as usize, seed);
            let set = empirical_coefficients(&f, &cat, &g).unwrap();
            let a = point_multipoles(f.band_limit(), &cat);
            for j in 0..=4 {
                let e1 = linear_estimate(&set, &f, j).unwrap();
                let e2 = linear_estimate_lowpass(f.window(), &a, cat.len(), j);
                assert!((e1.integral() - 1.0).abs() < 1e-10);
                for u in probe_points(9) {
                    assert!((e1.evaluate(&u) - e2.evaluate(&u)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn telescoping() {
        let f = frame(4);
        let cat = uniform_catalog(40, 3);
        let a = point_multipoles(f.band_limit(), &cat);
        let set = empirical_coefficients(&f, &cat, &Coverage::uniform()).unwrap();
        for j in 0..4 {
            let lo = linear_estimate_lowpass(f.window(), &a, 40, j);
            let hi = linear_estimate_lowpass(f.window(), &a, 40, j + 1);
            let band = f.scale(j + 1).unwrap().reconstruct(&set.scale(j + 1).unwrap().beta);
            for u in probe_points(4) {
                let d = hi.evaluate(&u) - crate::harmonics::evaluate(&band, &u);
                assert!((lo.evaluate(&u) - d).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_estimate_is_unbiased_under_null() {
        let w = make_window(2.0, 15).unwrap();
        let pts = probe_points(5);
        let reps = 10_000;
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut sum = vec![0.0; pts.len()];
        let mut sum2 = vec![0.0; pts.len()];
        let mut cat = vec![UnitDirection::north_pole(); n];
        for _ in 0..reps {
            cat.iter_mut().for_each(|u| *u = sample_uniform(&mut rng));
            let est = linear_estimate_lowpass(&w, &point_multipoles(7, &cat), n, 2);
            let v = crate::harmonics::sht_inverse(est.coeffs(), &pts);
            for (i, x) in v.iter().enumerate() {
                sum[i] += x;
                sum2[i] += x * x;
            }
        }
        let r = reps as f64;
        for i in 0..pts.len() {
            let mean = sum[i] / r;
            let se = ((sum2[i] / r - mean * mean) / r).sqrt();
            assert!((mean - 1.0 / FOUR_PI).abs() < 3.0 * se + 1e-15, "point {i}");
        }
    }

    #[test]
    fn plugin_extremes() {
        let f = frame(3);
        let cat = uniform_catalog(80, 7);
        let set = empirical_coefficients(&f, &cat, &Coverage::uniform()).unwrap();
        let huge = ThresholdRule::new(1e300, 1.0).unwrap();
        let est = plugin_estimate(&set, &f, &huge, Some(3)).unwrap();
        for u in probe_points(8) {
            assert!((est.evaluate(&u) - 1.0 / FOUR_PI).abs() < 1e-15);
        }
        let all = ThresholdRule::new(0.0, 1e-12).unwrap();
        let kept = plugin_estimate(&set, &f, &all, Some(3)).unwrap();
        let full = linear_estimate(&set, &f, 3).unwrap();
        let s0 = f.scale(0).unwrap().reconstruct(&set.scale(0).unwrap().beta);
        for u in probe_points(8) {
            let want = full.evaluate(&u) - crate::harmonics::evaluate(&s0, &u);
            assert!((kept.evaluate(&u) - want).abs() < 1e-12);
        }
        match kept.kind() {
            EstimateKind::Thresholded { survivors, .. } => {
                for j in 1..=3 {
                    assert_eq!(survivors[j - 1], f.scale(j).unwrap().len());
                }
            }
            other => panic!("unexpected kind {other:?}"),
        }
        assert!(plugin_estimate(&set, &f, &all, Some(4)).is_err());
        let single = empirical_coefficients(&f, &cat[..1], &Coverage::uniform()).unwrap();
        assert!(plugin_estimate(&single, &f, &all, Some(1)).is_err());
    }

    #[test]
    fn plugin_degenerate_when_jstar_below_one() {
        let f = frame(3);
        let cat = uniform_catalog(5, 9);
        let set = empirical_coefficients(&f, &cat, &Coverage::uniform()).unwrap();
        let rule = ThresholdRule::default();
        assert_eq!(rule.jstar(5), 0);
        assert_eq!(rule.jstar(10), 1);
        let est = plugin_estimate(&set, &f, &rule, None).unwrap();
        assert!(matches!(est.kind(), EstimateKind::Thresholded { degenerate: true, .. }));
        assert_eq!(est.band_limit(), 0);
        assert_eq!(rule.jstar(100), 2);
        assert_eq!(rule.jstar(400), 3);
        assert!(ThresholdRule::new(-1.0, 1.0).is_err());
        assert!(ThresholdRule::new(1.0, 0.0).is_err());
    }

    #[test]
    fn injected_coefficient_survives() {
        let f = frame(2);
        let n = 100;
        let rule = ThresholdRule::default();
        let ln = (n as f64).ln();
        let scales = (0..=2)
            .map(|j| {
                let len = f.scale(j).unwrap().len();
                ScaleCoefficients {
                    scale: j,
                    beta: vec![0.0; len],
                    sigma2: vec![0.01; len],
                    delta: vec![2.0 * ln; len],
                    zeta: None,
                }
            })
            .collect();
        let mut set = NeedletCoefficientSet {
            n,
            reference: "uniform".into(),
            degenerate_variance: false,
            scales,
        };
        let thr = rule.lambda * ln.sqrt() * 0.1 / (n as f64).sqrt();
        set.scales[2].beta[5] = 10.0 * thr;
        set.scales[2].beta[6] = -0.1 * thr;
        let est = plugin_estimate(&set, &f, &rule, Some(2)).unwrap();
        match est.kind() {
            EstimateKind::Thresholded { survivors, .. } => assert_eq!(survivors, &vec![0, 1]),
            other => panic!("unexpected kind {other:?}"),
        }
        let mut only = vec![0.0; f.scale(2).unwrap().len()];
        only[5] = 10.0 * thr;
        let want = f.scale(2).unwrap().reconstruct(&only);
        for u in probe_points(10) {
            let v = est.evaluate(&u) - 1.0 / FOUR_PI;
            assert!((v - crate::harmonics::evaluate(&want, &u)).abs() < 1e-14);
        }
        // Large coefficient but low occupancy is dropped.
        set.scales[2].delta[5] = 0.5 * ln;
        let est = plugin_estimate(&set, &f, &rule, Some(2)).unwrap();
        assert!(matches!(est.kind(), EstimateKind::Thresholded { survivors, .. } if survivors == &vec![0, 0]));
    }

    fn offset_estimate(c: f64) -> DensityEstimate {
        let mut coeffs = constant_coeffs(3);
        coeffs.set(0, 0, (1.0 / FOUR_PI + c) * FOUR_PI.sqrt());
        DensityEstimate {
            coeffs,
            kind: EstimateKind::Linear { scale: 0 },
        }
    }

    #[test]
    fn lp_of_constant_offset() {
        let g = Coverage::uniform();
        let mesh = EvaluationMesh::new(&g, 3);
        assert!(lp_distance(&offset_estimate(0.0), &mesh, Norm::L2).unwrap() < 1e-15);
        let c = -0.013;
        let e = offset_estimate(c);
        assert!((lp_distance(&e, &mesh, Norm::L1).unwrap() - FOUR_PI * c.abs()).abs() < 1e-13);
        assert!((lp_distance(&e, &mesh, Norm::L2).unwrap() - FOUR_PI.sqrt() * c.abs()).abs() < 1e-13);
        assert!((lp_distance(&e, &mesh, Norm::LInf).unwrap() - c.abs()).abs() < 1e-15);
        assert!(lp_distance(&e, &mesh, Norm::L2Star).is_err());
        let big = linear_estimate_lowpass(
            &make_window(2.0, 15).unwrap(),
            &point_multipoles(15, &uniform_catalog(5, 1)),
            5,
            3,
        );
        assert!(lp_distance(&big, &mesh, Norm::L1).is_err());
    }

    #[test]
    fn l2_matches_parseval_and_holder_order() {
        let w = make_window(2.0, 15).unwrap();
        let g = Coverage::uniform();
        let mesh = EvaluationMesh::new(&g, 15);
        for seed in 0..5 {
            let cat = uniform_catalog(20, 100 + seed);
            let est = linear_estimate_lowpass(&w, &point_multipoles(15, &cat), 20, 3);
            let mut diff = est.coeffs().clone();
            diff.set(0, 0, 0.0);
            let l2 = lp_distance(&est, &mesh, Norm::L2).unwrap();
            assert!((l2 * l2 - diff.dot(&diff)).abs() < 1e-9);
            let l1 = lp_distance(&est, &mesh, Norm::L1).unwrap();
            let li = lp_distance(&est, &mesh, Norm::LInf).unwrap();
            assert!(li >= l2 / FOUR_PI.sqrt() - 1e-15);
            assert!(l2 / FOUR_PI.sqrt() >= l1 / FOUR_PI - 1e-15);
        }
    }

    #[test]
    fn norm_parsing() {
        for n in Norm::ALL {
            assert_eq!(n.label().parse::<Norm>().unwrap(), n);
            let js = serde_json::to_string(&n).unwrap();
            assert_eq!(serde_json::from_str::<Norm>(&js).unwrap(), n);
        }
        assert!("3".parse::<Norm>().is_err());
    }

    #[test]
    fn closed_form_zeta_matches_cubature_sum() {
        let f = frame(3);
        let g = Coverage::new(CoverageModel::auger()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cat: Vec<_> = (0..60).map(|_| g.sample(&mut rng)).collect();
        let set = zeta_coefficients(&f, &cat, &g).unwrap();
        let a = point_multipoles(f.band_limit(), &cat);
        let gm = g.multipoles(f.band_limit());
        let sums = zeta_scale_sums(f.window(), &a, &gm, cat.len(), 3);
        for (j, s) in sums.iter().enumerate() {
            let direct: f64 = set.scale(j).unwrap().zeta.as_ref().unwrap().iter().sum();
            assert!((s - direct).abs() < 1e-10 * (1.0 + direct.abs()), "j={j}");
        }
        let total = unbiased_l2(&set, 2).unwrap();
        assert!((total - sums.iter().sum::<f64>()).abs() < 1e-10);
        assert!(unbiased_l2(&set, 3).is_err());
        let plain = empirical_coefficients(&f, &cat, &g).unwrap();
        assert!(unbiased_l2(&plain, 1).is_err());
    }

    #[test]
    fn zero_zeta_gives_zero() {
        let f = frame(2);
        let mut set = zeta_coefficients(&f, &uniform_catalog(5, 1), &Coverage::uniform()).unwrap();
        for s in &mut set.scales {
            s.zeta.as_mut().unwrap().iter_mut().for_each(|z| *z = 0.0);
        }
        assert_eq!(unbiased_l2(&set, 1).unwrap(), 0.0);
    }

    fn mc_unbiased(f_cov: &Coverage, g: &Coverage, jstar: usize, seed: u64) -> (f64, f64) {
        let w = make_window(2.0, 15).unwrap();
        let band = w.scale_range(jstar + 1).1;
        let gm = g.multipoles(band);
        let n = 100;
        let reps = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut s2) = (0.0, 0.0);
        let mut cat = vec![UnitDirection::north_pole(); n];
        for _ in 0..reps {
            cat.iter_mut().for_each(|u| *u = f_cov.sample(&mut rng));
            let a = point_multipoles(band, &cat);
            let v: f64 = zeta_scale_sums(&w, &a, &gm, n, jstar + 1).iter().sum();
            s += v;
            s2 += v * v;
        }
        let r = reps as f64;
        let mean = s / r;
        (mean, ((s2 / r - mean * mean) / r).sqrt())
    }

    #[test]
    fn unbiased_l2_has_zero_mean_under_null() {
        let g = Coverage::new(CoverageModel::auger()).unwrap();
        let (mean, se) = mc_unbiased(&g, &g, 2, 12);
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn unbiased_l2_tracks_truncated_distance() {
        let f_cov = Coverage::new(CoverageModel::auger()).unwrap();
        let g = Coverage::uniform();
        let w = make_window(2.0, 15).unwrap();
        let jstar = 2;
        let band = w.scale_range(jstar + 1).1;
        let fm = f_cov.multipoles(band);
        let gm = g.multipoles(band);
        let truth: f64 = (0..=jstar + 1)
            .map(|j| {
                let (lo, hi) = w.scale_range(j);
                (lo..=hi)
                    .map(|l| {
                        let d: f64 = (-(l as i64)..=l as i64)
                            .map(|m| (fm.get(l, m) - gm.get(l, m)).powi(2))
                            .sum();
                        w.band_weight(j, l) * d
                    })
                    .sum::<f64>()
            })
            .sum();
        let (mean, se) = mc_unbiased(&f_cov, &g, jstar, 13);
        assert!(truth > 10.0 * se);
        assert!((mean - truth).abs() < 3.0 * se, "mean {mean} truth {truth} se {se}");
    }

    #[test]
    fn random_rule_keeps_subset() {
        let f = frame(3);
        let cat = uniform_catalog(120, 14);
        let set = empirical_coefficients(&f, &cat, &Coverage::uniform()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..5 {
            let rule = ThresholdRule::new(rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0 + 0.01).unwrap();
            let est = plugin_estimate(&set, &f, &rule, Some(3)).unwrap();
            if let EstimateKind::Thresholded { survivors, .. } = est.kind() {
                for j in 1..=3 {
                    assert!(survivors[j - 1] <= f.scale(j).unwrap().len());
                }
            }
        }
    }
}
