//! Detector coverage densities g used as the null hypothesis.
//!
//! All densities here are expressed in the equatorial frame, where a
//! ground-based detector's exposure depends on declination only.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{gauss_legendre, AssocLegendre, HarmonicCoefficients};
use crate::sphere::{sample_uniform, UnitDirection};

const FOUR_PI: f64 = 4.0 * PI;

/// Serializable description of a coverage model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoverageModel {
    /// The isotropic density 1/(4π).
    Uniform,
    /// Geometric exposure of a detector at latitude `site_latitude_deg`
    /// accepting zenith angles up to `max_zenith_deg`.
    Exposure {
        site_latitude_deg: f64,
        max_zenith_deg: f64,
    },
    /// Piecewise-constant table on an equiangular declination × right
    /// ascension mesh. `values[i * n_ra + k]` covers declination band `i`
    /// (counted from −90°) and right-ascension sector `k` (from 0°).
    Gridded {
        n_dec: usize,
        n_ra: usize,
        values: Vec<f64>,
    },
}

impl CoverageModel {
    /// Exposure with the default site parameters of the southern Auger array.
    pub fn auger() -> Self {
        CoverageModel::Exposure {
            site_latitude_deg: -35.2,
            max_zenith_deg: 60.0,
        }
    }

    /// Short human-readable identifier.
    pub fn id(&self) -> String {
        match self {
            CoverageModel::Uniform => "uniform".to_string(),
            CoverageModel::Exposure {
                site_latitude_deg,
                max_zenith_deg,
            } => format!("exposure(a0={site_latitude_deg},zmax={max_zenith_deg})"),
            CoverageModel::Gridded { n_dec, n_ra, .. } => format!("gridded({n_dec}x{n_ra})"),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, CoverageModel::Uniform)
    }
}

/// Unnormalized relative exposure at declination `dec` (radians).
pub fn relative_exposure(dec: f64, site_latitude: f64, max_zenith: f64) -> f64 {
    let (sa, ca) = site_latitude.sin_cos();
    let (sd, cd) = dec.sin_cos();
    let num = max_zenith.cos() - sa * sd;
    let den = ca * cd;
    let alpha_m = if den.abs() < 1e-300 {
        if num > 0.0 {
            0.0
        } else if num < 0.0 {
            PI
        } else {
            FRAC_PI_2
        }
    } else {
        (num / den).clamp(-1.0, 1.0).acos()
    };
    (ca * cd * alpha_m.sin() + alpha_m * sa * sd).max(0.0)
}

/// A coverage model with its normalization and sampling envelope resolved.
#[derive(Debug, Clone)]
pub struct Coverage {
    model: CoverageModel,
    norm: f64,
    max_density: f64,
    /// Quadrature in x = sin(dec) for zonal models, split at the kinks.
    zonal_rule: Vec<(f64, f64)>,
}

impl Coverage {
    pub fn new(model: CoverageModel) -> Result<Self> {
        let mut cov = Coverage {
            model,
            norm: 1.0,
            max_density: 1.0 / FOUR_PI,
            zonal_rule: Vec::new(),
        };
        match cov.model.clone() {
            CoverageModel::Uniform => {}
            CoverageModel::Exposure {
                site_latitude_deg,
                max_zenith_deg,
            } => {
                if !(site_latitude_deg.abs() <= 90.0)
                    || !(0.0..=180.0).contains(&max_zenith_deg)
                {
                    return Err(Error::InvalidParameter(format!(
                        "exposure needs |a0| ≤ 90° and 0 ≤ θmax ≤ 180°, got a0={site_latitude_deg}, θmax={max_zenith_deg}"
                    )));
                }
                let a0 = site_latitude_deg.to_radians();
                let tz = max_zenith_deg.to_radians();
                let mut breaks = vec![-1.0, 1.0];
                for d in [a0 + tz, a0 - tz, -PI + tz - a0, PI - tz - a0] {
                    if d > -FRAC_PI_2 && d < FRAC_PI_2 {
                        breaks.push(d.sin());
                    }
                }
                breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
                breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
                cov.zonal_rule = graded_rule(&breaks);
                let mass: f64 = cov
                    .zonal_rule
                    .iter()
                    .map(|&(x, w)| w * relative_exposure(x.asin(), a0, tz))
                    .sum::<f64>()
                    * 2.0
                    * PI;
                if !(mass > 0.0) {
                    return Err(Error::ZeroCoverage);
                }
                cov.norm = mass;
                // Density is declination-only: scan then refine around the best node.
                let f = |d: f64| relative_exposure(d, a0, tz);
                let steps = 20_000;
                let (mut best_d, mut best) = (0.0, f64::MIN);
                for i in 0..=steps {
                    let d = -FRAC_PI_2 + PI * i as f64 / steps as f64;
                    let v = f(d);
                    if v > best {
                        best = v;
                        best_d = d;
                    }
                }
                let h = PI / steps as f64;
                for i in 0..=2000 {
                    let d = (best_d - h + 2.0 * h * i as f64 / 2000.0).clamp(-FRAC_PI_2, FRAC_PI_2);
                    best = best.max(f(d));
                }
                cov.max_density = best / mass * (1.0 + 1e-6);
            }
            CoverageModel::Gridded {
                n_dec,
                n_ra,
                ref values,
            } => {
                if n_dec == 0 || n_ra == 0 || values.len() != n_dec * n_ra {
                    return Err(Error::InvalidParameter(format!(
                        "gridded coverage needs {n_dec}×{n_ra} values, got {}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "gridded coverage values must be finite and non-negative".into(),
                    ));
                }
                let dra = 2.0 * PI / n_ra as f64;
                let mut mass = 0.0;
                for i in 0..n_dec {
                    let (lo, hi) = gridded_band(i, n_dec);
                    let band = dra * (hi.sin() - lo.sin());
                    mass += band * values[i * n_ra..(i + 1) * n_ra].iter().sum::<f64>();
                }
                if !(mass > 0.0) {
                    return Err(Error::ZeroCoverage);
                }
                cov.norm = mass;
                let vmax = values.iter().cloned().fold(0.0, f64::max);
                cov.max_density = vmax / mass;
            }
        }
        Ok(cov)
    }

    pub fn uniform() -> Self {
        Self::new(CoverageModel::Uniform).expect("uniform coverage is always valid")
    }

    pub fn model(&self) -> &CoverageModel {
        &self.model
    }

    pub fn is_uniform(&self) -> bool {
        self.model.is_uniform()
    }

    /// Upper bound on the density used as the rejection envelope.
    pub fn max_density(&self) -> f64 {
        self.max_density
    }

    /// Normalized density at an equatorial direction.
    pub fn density(&self, u: &UnitDirection) -> f64 {
        match &self.model {
            CoverageModel::Uniform => 1.0 / FOUR_PI,
            CoverageModel::Exposure { .. } => self.density_at_sin_dec(u.z()),
            CoverageModel::Gridded { n_dec, n_ra, values } => {
                let (lon, lat) = u.lon_lat_deg();
                let i = (((lat + 90.0) / 180.0 * *n_dec as f64).floor() as usize).min(n_dec - 1);
                let k = ((lon / 360.0 * *n_ra as f64).floor() as usize).min(n_ra - 1);
                values[i * n_ra + k] / self.norm
            }
        }
    }

    /// Density of a zonal model as a function of `x = sin(dec)`.
    pub fn density_at_sin_dec(&self, x: f64) -> f64 {
        match &self.model {
            CoverageModel::Uniform => 1.0 / FOUR_PI,
            CoverageModel::Exposure {
                site_latitude_deg,
                max_zenith_deg,
            } => {
                relative_exposure(
                    x.clamp(-1.0, 1.0).asin(),
                    site_latitude_deg.to_radians(),
                    max_zenith_deg.to_radians(),
                ) / self.norm
            }
            CoverageModel::Gridded { .. } => {
                panic!("gridded coverage is not zonal")
            }
        }
    }

    /// Harmonic coefficients `G_lm = ∫ g Y_lm dμ` up to `lmax`.
    pub fn multipoles(&self, lmax: usize) -> HarmonicCoefficients {
        let mut out = HarmonicCoefficients::zeros(lmax);
        match &self.model {
            CoverageModel::Uniform => out.set(0, 0, 1.0 / FOUR_PI.sqrt()),
            CoverageModel::Exposure { .. } => {
                let leg = AssocLegendre::new(lmax);
                let mut acc = vec![0.0; lmax + 1];
                for &(x, w) in &self.zonal_rule {
                    let gx = self.density_at_sin_dec(x) * w * 2.0 * PI;
                    let s = (1.0 - x * x).max(0.0).sqrt();
                    leg.for_each_order(x, s, |m, vals| {
                        if m == 0 {
                            for (a, p) in acc.iter_mut().zip(vals) {
                                *a += gx * p;
                            }
                        }
                    });
                }
                for (l, a) in acc.into_iter().enumerate() {
                    out.set(l, 0, a);
                }
            }
            CoverageModel::Gridded { n_dec, n_ra, values } => {
                // Separable cell integrals: ∫ P̄_lm(x) dx × ∫ trig(mφ) dφ.
                let leg = AssocLegendre::new(lmax);
                let (gx, gw) = gauss_legendre(lmax / 2 + 12);
                let dra = 2.0 * PI / *n_ra as f64;
                let sqrt2 = std::f64::consts::SQRT_2;
                let mut pint = vec![0.0; crate::harmonics::tri_len(lmax)];
                for i in 0..*n_dec {
                    let row = &values[i * n_ra..(i + 1) * n_ra];
                    if row.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let (lo, hi) = gridded_band(i, *n_dec);
                    let (xa, xb) = (lo.sin(), hi.sin());
                    pint.iter_mut().for_each(|v| *v = 0.0);
                    for (t, w) in gx.iter().zip(&gw) {
                        let x = 0.5 * (xa + xb) + 0.5 * (xb - xa) * t;
                        let wx = 0.5 * (xb - xa) * w;
                        let s = (1.0 - x * x).max(0.0).sqrt();
                        leg.for_each_order(x, s, |m, vals| {
                            let off = crate::harmonics::tri_offset(lmax, m);
                            for (a, p) in pint[off..off + vals.len()].iter_mut().zip(vals) {
                                *a += wx * p;
                            }
                        });
                    }
                    for m in 0..=lmax {
                        let (mut ci, mut si) = (0.0, 0.0);
                        for (k, &v) in row.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let (p0, p1) = (k as f64 * dra, (k + 1) as f64 * dra);
                            let (c, s) = if m == 0 {
                                (p1 - p0, 0.0)
                            } else {
                                let mf = m as f64;
                                (
                                    ((mf * p1).sin() - (mf * p0).sin()) / mf,
                                    ((mf * p0).cos() - (mf * p1).cos()) / mf,
                                )
                            };
                            ci += v * c;
                            si += v * s;
                        }
                        let off = crate::harmonics::tri_offset(lmax, m);
                        for l in m..=lmax {
                            let p = pint[off + l - m] / self.norm;
                            if m == 0 {
                                let cur = out.get(l, 0);
                                out.set(l, 0, cur + p * ci);
                            } else {
                                let mi = m as i64;
                                let cur = out.get(l, mi);
                                out.set(l, mi, cur + sqrt2 * p * ci);
                                let cur = out.get(l, -mi);
                                out.set(l, -mi, cur + sqrt2 * p * si);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Draws one direction from g by rejection from the uniform law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitDirection {
        if self.is_uniform() {
            return sample_uniform(rng);
        }
        loop {
            let u = sample_uniform(rng);
            if rng.random::<f64>() * self.max_density < self.density(&u) {
                return u;
            }
        }
    }

    /// Acceptance test used when thinning an arbitrary proposal by g.
    pub fn accept<R: Rng + ?Sized>(&self, u: &UnitDirection, rng: &mut R) -> bool {
        self.is_uniform() || rng.random::<f64>() * self.max_density < self.density(u)
    }
}

/// Declination band `i` of an equiangular table, radians.
fn gridded_band(i: usize, n_dec: usize) -> (f64, f64) {
    let h = PI / n_dec as f64;
    (-FRAC_PI_2 + i as f64 * h, -FRAC_PI_2 + (i + 1) as f64 * h)
}

/// Composite Gauss-Legendre rule on [-1, 1] with uniform panels of width
/// ≤ 0.01 between breakpoints, and geometric refinement toward every
/// breakpoint where the exposure has a square-root kink.
fn graded_rule(breaks: &[f64]) -> Vec<(f64, f64)> {
    let (gx, gw) = gauss_legendre(16);
    let mut rule = Vec::new();
    let mut push = |a: f64, b: f64| {
        for (t, w) in gx.iter().zip(&gw) {
            rule.push((0.5 * (a + b) + 0.5 * (b - a) * t, 0.5 * (b - a) * w));
        }
    };
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let pieces = ((b - a) / 0.01).ceil().max(2.0) as usize;
        let h = (b - a) / pieces as f64;
        for p in 0..pieces {
            let lo = a + p as f64 * h;
            let hi = lo + h;
            if p == 0 || p == pieces - 1 {
                // Grade toward the segment end.
                let toward_lo = p == 0;
                let mut edges = vec![];
                for k in 0..40 {
                    let r = 0.5f64.powi(k);
                    edges.push(if toward_lo { lo + h * r } else { hi - h * r });
                }
                edges.push(if toward_lo { lo } else { hi });
                for e in edges.windows(2) {
                    let (x0, x1) = if e[0] < e[1] { (e[0], e[1]) } else { (e[1], e[0]) };
                    push(x0, x1);
                }
            } else {
                push(lo, hi);
            }
        }
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::{build_grid, sht_inverse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn integrate(cov: &Coverage, degree: usize) -> f64 {
        let g = build_grid(degree);
        let vals: Vec<f64> = g.points().iter().map(|u| cov.density(u)).collect();
        g.integrate(&vals)
    }

    #[test]
    fn exposure_normalized_and_zero_north_of_horizon() {
        let cov = Coverage::new(CoverageModel::auger()).unwrap();
        assert!((integrate(&cov, 1000) - 1.0).abs() < 1e-4);
        let mass: f64 = cov
            .zonal_rule
            .iter()
            .map(|&(x, w)| w * cov.density_at_sin_dec(x))
            .sum::<f64>()
            * 2.0
            * PI;
        assert!((mass - 1.0).abs() < 1e-12);
        for dec in [25.0f64, 30.0, 60.0, 89.0] {
            assert_eq!(cov.density_at_sin_dec(dec.to_radians().sin()), 0.0);
        }
        for dec in [24.0f64, 0.0, -40.0, -84.8, -89.9] {
            assert!(cov.density_at_sin_dec(dec.to_radians().sin()) > 0.0, "{dec}");
        }
    }

    #[test]
    fn exposure_clamp_branches() {
        // Never visible: ζ ≥ 1.
        assert_eq!(relative_exposure(80f64.to_radians(), (-35.2f64).to_radians(), 60f64.to_radians()), 0.0);
        // Always visible: ζ ≤ −1 gives α_m = π.
        let (a0, d) = ((-35.2f64).to_radians(), (-88f64).to_radians());
        let v = relative_exposure(d, a0, 60f64.to_radians());
        assert!((v - PI * a0.sin() * d.sin()).abs() < 1e-12);
        // Polar site sees a fixed cap.
        let v = relative_exposure((-60f64).to_radians(), -FRAC_PI_2, 60f64.to_radians());
        assert!(v > 0.0);
    }

    #[test]
    fn envelope_bounds_density() {
        let cov = Coverage::new(CoverageModel::auger()).unwrap();
        for i in 0..=10_000 {
            let x = -1.0 + 2.0 * i as f64 / 10_000.0;
            assert!(cov.density_at_sin_dec(x) <= cov.max_density());
        }
    }

    #[test]
    fn exposure_multipoles_reconstruct_density() {
        let cov = Coverage::new(CoverageModel::auger()).unwrap();
        let g = cov.multipoles(64);
        assert!((g.get(0, 0) - 1.0 / FOUR_PI.sqrt()).abs() < 1e-12);
        assert!(g.get(3, 1).abs() == 0.0);
        // Band-limited reconstruction is close away from the kinks.
        let pts: Vec<_> = [-60.0, -30.0, 0.0, 10.0]
            .iter()
            .map(|&d: &f64| UnitDirection::from_lon_lat_deg(12.0, d))
            .collect();
        for (u, v) in pts.iter().zip(sht_inverse(&g, &pts)) {
            assert!((v - cov.density(u)).abs() < 2e-3, "{v} vs {}", cov.density(u));
        }
    }

    #[test]
    fn gridded_matches_uniform_when_flat() {
        let cov = Coverage::new(CoverageModel::Gridded {
            n_dec: 18,
            n_ra: 36,
            values: vec![3.0; 18 * 36],
        })
        .unwrap();
        let u = UnitDirection::from_lon_lat_deg(100.0, 20.0);
        assert!((cov.density(&u) - 1.0 / FOUR_PI).abs() < 1e-14);
        let g = cov.multipoles(10);
        assert!((g.get(0, 0) - 1.0 / FOUR_PI.sqrt()).abs() < 1e-12);
        assert!(g.as_slice()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gridded_multipoles_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..6 * 8).map(|_| rng.random::<f64>()).collect();
        let cov = Coverage::new(CoverageModel::Gridded {
            n_dec: 6,
            n_ra: 8,
            values,
        })
        .unwrap();
        assert!((integrate(&cov, 800) - 1.0).abs() < 1e-2);
        let g = cov.multipoles(4);
        // Monte-Carlo-free check: uniform sampling estimate of ∫ g Y.
        let grid = build_grid(2000);
        let pts = grid.points();
        for (l, m) in [(1usize, 0i64), (2, 1), (3, -2)] {
            let mut c = HarmonicCoefficients::zeros(l);
            c.set(l, m, 1.0);
            let y = sht_inverse(&c, &pts);
            let q: f64 = pts
                .iter()
                .enumerate()
                .map(|(k, u)| grid.weight(k) * y[k] * cov.density(u))
                .sum();
            assert!((q - g.get(l, m)).abs() < 2e-3, "({l},{m}) {q} vs {}", g.get(l, m));
        }
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(matches!(
            Coverage::new(CoverageModel::Gridded { n_dec: 2, n_ra: 2, values: vec![0.0; 4] }),
            Err(Error::ZeroCoverage)
        ));
        assert!(Coverage::new(CoverageModel::Gridded { n_dec: 2, n_ra: 2, values: vec![1.0; 3] }).is_err());
        assert!(Coverage::new(CoverageModel::Exposure { site_latitude_deg: 100.0, max_zenith_deg: 60.0 }).is_err());
    }

    #[test]
    fn exposure_sampling_declination_histogram() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cov = Coverage::new(CoverageModel::auger()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        // Bins in x = sin(dec) over the visible range.
        let x_max = 24.8f64.to_radians().sin();
        let bins = 30;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let u = cov.sample(&mut rng);
            assert!(u.z() <= x_max + 1e-9);
            let b = (((u.z() + 1.0) / (x_max + 1.0)) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let mut chi2 = 0.0;
        for (b, &c) in counts.iter().enumerate() {
            let lo = -1.0 + (x_max + 1.0) * b as f64 / bins as f64;
            let hi = lo + (x_max + 1.0) / bins as f64;
            let p: f64 = crate::harmonics::composite_gauss(lo, hi, 8, 16)
                .iter()
                .map(|&(x, w)| w * cov.density_at_sin_dec(x) * 2.0 * PI)
                .sum();
            let e = p * n as f64;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        let pval = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(pval > 1e-3, "chi2={chi2}");
    }

    #[test]
    fn sampling_reproducible() {
        let cov = Coverage::new(CoverageModel::auger()).unwrap();
        let a = cov.sample(&mut ChaCha8Rng::seed_from_u64(5));
        let b = cov.sample(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
