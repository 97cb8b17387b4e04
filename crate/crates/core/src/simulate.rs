//! Simulated cosmic-ray skies: the alternatives Ha, Hb and Hc.
//!
//! Ha is a uniform density plus one Gaussian bump, Hb a mixture of bumps
//! centred on fixed random sources, and Hc a toy propagation model with
//! sources in a 70 Mpc ball, a power-law spectrum and magnetic deflections.
//! Every generator thins its proposals by the detector coverage, so the
//! observed density is proportional to `g · f`.
//!
//! Sources and deflections live in Galactic coordinates; the catalogs that
//! come out are equatorial like everything else in the analysis.

use std::f64::consts::{PI, TAU};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::coverage::{Coverage, CoverageModel};
use crate::error::{Error, Result};
use crate::harmonics::composite_gauss;
use crate::sphere::{
    convert, cross, deflect, geodesic_distance, rotate_towards, sample_uniform, FrameOfReference,
    UnitDirection,
};

/// Proposals rejected in a row before the coverage is declared empty.
const MAX_REJECTIONS: usize = 1_000_000;

const EV_REF: f64 = 1e20;

/// Truncated power law `n(E) ∝ E^{-α}` on `[e_min, e_max]` (eV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySpectrum {
    pub alpha: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl Default for EnergySpectrum {
    fn default() -> Self {
        EnergySpectrum {
            alpha: 4.2,
            e_min: 4e19,
            e_max: 1e21,
        }
    }
}

impl EnergySpectrum {
    pub fn new(alpha: f64, e_min: f64, e_max: f64) -> Result<Self> {
        let s = EnergySpectrum { alpha, e_min, e_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spectral index must exceed 1, got {}",
                self.alpha
            )));
        }
        if !(self.e_min > 0.0 && self.e_min < self.e_max && self.e_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < e_min < e_max, got [{}, {}]",
                self.e_min, self.e_max
            )));
        }
        Ok(())
    }

    /// Inverse CDF at `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = 1.0 - self.alpha;
        let lo = self.e_min.powf(k);
        let hi = self.e_max.powf(k);
        (lo - u * (lo - hi)).powf(1.0 / k).clamp(self.e_min, self.e_max)
    }

    pub fn cdf(&self, e: f64) -> f64 {
        let k = 1.0 - self.alpha;
        let lo = self.e_min.powf(k);
        let hi = self.e_max.powf(k);
        ((lo - e.clamp(self.e_min, self.e_max).powf(k)) / (lo - hi)).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// One source: Galactic direction and distance in Mpc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub direction: UnitDirection,
    pub distance_mpc: f64,
}

#[derive(Debug, Clone)]
pub struct SourceSet {
    sources: Vec<Source>,
    r_max: f64,
    selector: WeightedIndex<f64>,
}

impl SourceSet {
    pub fn new(sources: Vec<Source>, r_max: f64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidParameter("at least one source is required".into()));
        }
        if sources
            .iter()
            .any(|s| !(s.distance_mpc > 0.0 && s.distance_mpc <= r_max))
        {
            return Err(Error::InvalidParameter(format!(
                "source distances must lie in (0, {r_max}] Mpc"
            )));
        }
        let weights = sources.iter().map(|s| s.distance_mpc.powi(-2));
        let selector = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidParameter(format!("source weights: {e}")))?;
        Ok(SourceSet {
            sources,
            r_max,
            selector,
        })
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }
}

/// `n_s` sources uniform in the ball of radius `r_max` Mpc.
pub fn sample_sources<R: Rng + ?Sized>(n_s: usize, r_max: f64, rng: &mut R) -> Result<SourceSet> {
    if n_s == 0 {
        return Err(Error::InvalidParameter("at least one source is required".into()));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::InvalidParameter("r_max must be positive".into()));
    }
    let sources = (0..n_s)
        .map(|_| {
            let direction = sample_uniform(rng);
            // 1 - u keeps the distance away from zero.
            let u: f64 = 1.0 - rng.random::<f64>();
            Source {
                direction,
                distance_mpc: r_max * u.cbrt(),
            }
        })
        .collect();
    SourceSet::new(sources, r_max)
}

/// Picks a source with probability proportional to `D^{-2}`.
///
/// The detector acceptance is applied later, by thinning on the arrival
/// direction, so it does not enter the weights here.
pub fn select_source<R: Rng + ?Sized>(sources: &SourceSet, rng: &mut R) -> usize {
    sources.selector.sample(rng)
}

/// Regular, turbulent and extragalactic magnetic field parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MagneticFieldModel {
    /// Regular Galactic field, µG.
    pub b_reg: f64,
    /// Turbulent Galactic field, µG.
    pub b_turb: f64,
    /// Extragalactic field, nG.
    pub b_ext: f64,
    /// Galactic coherence length, pc.
    pub l_gal: f64,
    /// Extragalactic coherence length, pc.
    pub l_ext: f64,
    /// Path length through the disc at normal incidence, kpc.
    pub r_perp: f64,
    /// Maximum path length through the disc, kpc.
    pub r_cap: f64,
    /// Atomic number.
    pub z: u32,
}

impl Default for MagneticFieldModel {
    fn default() -> Self {
        MagneticFieldModel {
            b_reg: 2.0,
            b_turb: 4.0,
            b_ext: 1.0,
            l_gal: 50.0,
            l_ext: 50.0,
            r_perp: 3.0,
            r_cap: 10.0,
            z: 1,
        }
    }
}

impl MagneticFieldModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.b_reg, self.b_turb, self.b_ext, self.l_gal, self.l_ext, self.r_perp, self.r_cap,
        ];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("field parameters must be non-negative".into()));
        }
        if self.r_perp <= 0.0 || self.r_cap <= 0.0 || self.z == 0 {
            return Err(Error::InvalidParameter(
                "path lengths must be positive and Z at least 1".into(),
            ));
        }
        Ok(())
    }

    fn rigidity_factor(&self, energy: f64) -> f64 {
        EV_REF / (energy / self.z as f64)
    }

    /// Path length (kpc) through the disc at Galactic latitude `b` (radians).
    pub fn path_length(&self, b: f64) -> f64 {
        let s = b.sin().abs();
        if s * self.r_cap <= self.r_perp {
            self.r_cap
        } else {
            self.r_perp / s
        }
    }

    /// Regular deflection angle (degrees) over a path of `r` kpc.
    pub fn regular_deg(&self, energy: f64, r: f64) -> f64 {
        3.25 * self.rigidity_factor(energy) * (self.b_reg / 2.0) * (r / 3.0)
    }

    /// Turbulent deflection scale (degrees) over a path of `r` kpc.
    pub fn turbulent_deg(&self, energy: f64, r: f64) -> f64 {
        0.56 * self.rigidity_factor(energy)
            * (self.b_turb / 4.0)
            * (r / 3.0).sqrt()
            * (self.l_gal / 50.0).sqrt()
    }

    /// Extragalactic deflection scale (degrees) for a source `d` Mpc away.
    pub fn extragalactic_deg(&self, energy: f64, d: f64) -> f64 {
        2.4 * self.rigidity_factor(energy)
            * (self.b_ext / 1.0)
            * (d / 100.0).sqrt()
            * (self.l_ext / 50.0).sqrt()
    }
}

/// Galactic latitude of a Galactic-frame direction, radians.
pub fn galactic_latitude(dir: &UnitDirection) -> f64 {
    dir.z().clamp(-1.0, 1.0).asin()
}

/// Regular deflection with the path length taken from `dir`'s latitude.
pub fn deflect_regular(dir: &UnitDirection, energy: f64, model: &MagneticFieldModel) -> UnitDirection {
    let r = model.path_length(galactic_latitude(dir));
    deflect_regular_over(dir, energy, model, r)
}

/// Rotates the Galactic direction `dir` by the regular deflection towards
/// `v × B`, with `v = -dir` the particle velocity and `B` along the Galactic
/// y axis. No deflection when `v` is parallel to `B`.
pub fn deflect_regular_over(
    dir: &UnitDirection,
    energy: f64,
    model: &MagneticFieldModel,
    r: f64,
) -> UnitDirection {
    let v = [-dir.x(), -dir.y(), -dir.z()];
    let t = cross(v, [0.0, 1.0, 0.0]);
    let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    let angle = model.regular_deg(energy, r).to_radians();
    if norm < 1e-12 || angle == 0.0 {
        return *dir;
    }
    rotate_towards(dir, [t[0] / norm, t[1] / norm, t[2] / norm], angle)
}

/// Two-dimensional Gaussian scatter in the tangent plane: each tangent
/// component has standard deviation `sigma` (radians).
pub fn gaussian_scatter<R: Rng + ?Sized>(dir: &UnitDirection, sigma: f64, rng: &mut R) -> UnitDirection {
    if sigma == 0.0 {
        return *dir;
    }
    let a: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    let b: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    deflect(dir, a.hypot(b), b.atan2(a))
}

pub fn deflect_turbulent<R: Rng + ?Sized>(
    dir: &UnitDirection,
    energy: f64,
    model: &MagneticFieldModel,
    rng: &mut R,
) -> UnitDirection {
    let r = model.path_length(galactic_latitude(dir));
    gaussian_scatter(dir, model.turbulent_deg(energy, r).to_radians(), rng)
}

pub fn deflect_extragalactic<R: Rng + ?Sized>(
    dir: &UnitDirection,
    energy: f64,
    distance_mpc: f64,
    model: &MagneticFieldModel,
    rng: &mut R,
) -> UnitDirection {
    gaussian_scatter(dir, model.extragalactic_deg(energy, distance_mpc).to_radians(), rng)
}

/// Full propagation of one event from a source: extragalactic scatter,
/// then the regular and turbulent Galactic deflections, both using the
/// path length at the latitude the particle enters the Galaxy with.
pub fn propagate<R: Rng + ?Sized>(
    source: &Source,
    energy: f64,
    model: &MagneticFieldModel,
    rng: &mut R,
) -> UnitDirection {
    let d = deflect_extragalactic(&source.direction, energy, source.distance_mpc, model, rng);
    let r = model.path_length(galactic_latitude(&d));
    let d = deflect_regular_over(&d, energy, model, r);
    gaussian_scatter(&d, model.turbulent_deg(energy, r).to_radians(), rng)
}

/// Axisymmetric Gaussian bump `C_θ exp(-γ²/2θ²)` in the geodesic angle γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    theta: f64,
    norm: f64,
}

impl Bump {
    /// `theta` in radians.
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bump width must be positive, got {theta}"
            )));
        }
        // Split the integral where the Gaussian lives and where it has died out.
        let knee = (12.0 * theta).min(PI);
        let mut mass = 0.0;
        for (a, b) in [(0.0, knee), (knee, PI)] {
            if b > a {
                for (g, w) in composite_gauss(a, b, 64, 16) {
                    mass += w * (-g * g / (2.0 * theta * theta)).exp() * g.sin();
                }
            }
        }
        Ok(Bump {
            theta,
            norm: 1.0 / (TAU * mass),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The constant `C_θ` making the bump a probability density.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Density at geodesic angle `gamma` from the centre.
    pub fn density(&self, gamma: f64) -> f64 {
        self.norm * (-gamma * gamma / (2.0 * self.theta * self.theta)).exp()
    }

    /// Exact draw: a tangent-plane Gaussian radius, accepted with
    /// probability `sin γ / γ` to account for the area element.
    pub fn sample<R: Rng + ?Sized>(&self, center: &UnitDirection, rng: &mut R) -> UnitDirection {
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let gamma = self.theta * (-2.0 * u.ln()).sqrt();
            if gamma > PI {
                continue;
            }
            let accept = if gamma < 1e-8 { 1.0 } else { gamma.sin() / gamma };
            if rng.random::<f64>() < accept {
                return deflect(center, gamma, TAU * rng.random::<f64>());
            }
        }
    }
}

fn default_center() -> [f64; 2] {
    [0.0, 0.0]
}

fn default_r_max() -> f64 {
    70.0
}

/// Alternative hypotheses. Angles are in degrees; `center` is Galactic
/// (longitude, latitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum AlternativeSpec {
    Ha {
        delta: f64,
        theta_deg: f64,
        #[serde(default = "default_center")]
        center: [f64; 2],
    },
    Hb {
        n_sources: usize,
        theta_deg: f64,
    },
    Hc {
        n_sources: usize,
        #[serde(default)]
        spectrum: EnergySpectrum,
        #[serde(default)]
        field: MagneticFieldModel,
        #[serde(default = "default_r_max")]
        r_max_mpc: f64,
    },
}

impl AlternativeSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AlternativeSpec::Ha { delta, theta_deg, center } => {
                if !(0.0..=1.0).contains(delta) {
                    return Err(Error::InvalidParameter(format!("mixture weight {delta} outside [0, 1]")));
                }
                Bump::new(theta_deg.to_radians())?;
                if !(-90.0..=90.0).contains(&center[1]) {
                    return Err(Error::InvalidParameter("centre latitude outside [-90, 90]".into()));
                }
                Ok(())
            }
            AlternativeSpec::Hb { n_sources, theta_deg } => {
                if *n_sources == 0 {
                    return Err(Error::InvalidParameter("at least one source is required".into()));
                }
                Bump::new(theta_deg.to_radians()).map(|_| ())
            }
            AlternativeSpec::Hc {
                n_sources,
                spectrum,
                field,
                r_max_mpc,
            } => {
                if *n_sources == 0 {
                    return Err(Error::InvalidParameter("at least one source is required".into()));
                }
                if !(*r_max_mpc > 0.0) {
                    return Err(Error::InvalidParameter("r_max must be positive".into()));
                }
                spectrum.validate()?;
                field.validate()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            AlternativeSpec::Ha { delta, theta_deg, .. } => format!("Ha(delta={delta},theta={theta_deg})"),
            AlternativeSpec::Hb { n_sources, theta_deg } => format!("Hb(ns={n_sources},theta={theta_deg})"),
            AlternativeSpec::Hc { n_sources, spectrum, .. } => {
                format!("Hc(ns={n_sources},emin={:e})", spectrum.e_min)
            }
        }
    }
}

/// A complete simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub alternative: AlternativeSpec,
    #[serde(default = "uniform_model")]
    pub coverage: CoverageModel,
    /// Seed for the sources of Hb and Hc, drawn once and held fixed.
    #[serde(default)]
    pub source_seed: u64,
}

fn uniform_model() -> CoverageModel {
    CoverageModel::Uniform
}

/// Prepared generator: coverage resolved, sources drawn.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimulationConfig,
    coverage: Coverage,
    kind: Prepared,
}

#[derive(Debug, Clone)]
enum Prepared {
    Ha { delta: f64, bump: Bump, center: UnitDirection },
    Hb { bump: Bump, centers: Vec<UnitDirection> },
    Hc { sources: SourceSet, spectrum: EnergySpectrum, field: MagneticFieldModel },
}

impl Simulator {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        config.alternative.validate()?;
        let coverage = Coverage::new(config.coverage.clone())?;
        let mut src_rng = ChaCha8Rng::seed_from_u64(config.source_seed);
        let kind = match &config.alternative {
            AlternativeSpec::Ha { delta, theta_deg, center } => Prepared::Ha {
                delta: *delta,
                bump: Bump::new(theta_deg.to_radians())?,
                center: convert(
                    &UnitDirection::from_lon_lat_deg(center[0].rem_euclid(360.0), center[1]),
                    FrameOfReference::Galactic,
                    FrameOfReference::Equatorial,
                ),
            },
            AlternativeSpec::Hb { n_sources, theta_deg } => Prepared::Hb {
                bump: Bump::new(theta_deg.to_radians())?,
                centers: (0..*n_sources).map(|_| sample_uniform(&mut src_rng)).collect(),
            },
            AlternativeSpec::Hc {
                n_sources,
                spectrum,
                field,
                r_max_mpc,
            } => Prepared::Hc {
                sources: sample_sources(*n_sources, *r_max_mpc, &mut src_rng)?,
                spectrum: *spectrum,
                field: *field,
            },
        };
        Ok(Simulator { config, coverage, kind })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    /// Hb bump centres (equatorial), empty for other models.
    pub fn centers(&self) -> &[UnitDirection] {
        match &self.kind {
            Prepared::Hb { centers, .. } => centers,
            _ => &[],
        }
    }

    /// Hc sources (Galactic), if any.
    pub fn sources(&self) -> Option<&SourceSet> {
        match &self.kind {
            Prepared::Hc { sources, .. } => Some(sources),
            _ => None,
        }
    }

    /// Draws one catalog of `n` events.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Catalog> {
        match &self.kind {
            Prepared::Ha { delta, bump, center } => {
                let dirs = thinned(n, &self.coverage, rng, |rng| {
                    if rng.random::<f64>() < *delta {
                        bump.sample(center, rng)
                    } else {
                        sample_uniform(rng)
                    }
                })?;
                Ok(Catalog::from_directions(dirs))
            }
            Prepared::Hb { bump, centers } => {
                let dirs = thinned(n, &self.coverage, rng, |rng| {
                    let i = rng.random_range(0..centers.len());
                    bump.sample(&centers[i], rng)
                })?;
                Ok(Catalog::from_directions(dirs))
            }
            Prepared::Hc {
                sources,
                spectrum,
                field,
            } => {
                let mut dirs = Vec::with_capacity(n);
                let mut energies = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut tries = 0;
                    loop {
                        let e = spectrum.sample(rng);
                        let s = &sources.sources()[select_source(sources, rng)];
                        let gal = propagate(s, e, field, rng);
                        let eq = convert(&gal, FrameOfReference::Galactic, FrameOfReference::Equatorial);
                        if self.coverage.accept(&eq, rng) {
                            dirs.push(eq);
                            energies.push(e);
                            break;
                        }
                        tries += 1;
                        if tries >= MAX_REJECTIONS {
                            return Err(Error::ZeroCoverage);
                        }
                    }
                }
                Catalog::new(dirs, Some(energies))
            }
        }
    }

    /// Density of the observed law at `u` (equatorial), up to the
    /// normalization of `g · f`. Available for Ha and Hb.
    pub fn unnormalized_density(&self, u: &UnitDirection) -> Option<f64> {
        let f = match &self.kind {
            Prepared::Ha { delta, bump, center } => {
                (1.0 - delta) / (4.0 * PI) + delta * bump.density(geodesic_distance(u, center))
            }
            Prepared::Hb { bump, centers } => {
                centers
                    .iter()
                    .map(|c| bump.density(geodesic_distance(u, c)))
                    .sum::<f64>()
                    / centers.len() as f64
            }
            Prepared::Hc { .. } => return None,
        };
        Some(f * self.coverage.density(u))
    }
}

fn thinned<R, F>(n: usize, coverage: &Coverage, rng: &mut R, mut propose: F) -> Result<Vec<UnitDirection>>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> UnitDirection,
{
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        let u = propose(rng);
        if coverage.accept(&u, rng) {
            out.push(u);
            tries = 0;
        } else {
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::ZeroCoverage);
            }
        }
    }
    Ok(out)
}
