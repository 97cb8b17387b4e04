//! Needlet windows, frames and the empirical per-(j,k) statistics.
//!
//! Scale j collects multipoles `B^{j-1} < l < B^{j+1}` through the filter
//! `√b(B^{-j} l)`. Each scale carries a Gauss-Legendre product cubature
//! `{ξ_jk, λ_jk}` and the needlets are
//! `ψ_jk(x) = √λ_jk Σ_l √b(B^{-j} l) L_l(x·ξ_jk)`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::Coverage;
use crate::error::{Error, Result};
use crate::harmonics::{
    build_grid, filter, gauss_legendre, legendre_polynomials, point_multipoles,
    HarmonicCoefficients, QuadratureGrid, ShtPlan,
};
use crate::sphere::UnitDirection;

const FOUR_PI: f64 = 4.0 * PI;

/// Smooth partition-of-unity window built from a beta-type transition.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFunction {
    bandwidth: f64,
    spline_order: usize,
    /// Binomial coefficients C(2p+1, k).
    binom: Vec<f64>,
}

/// Builds the window with bandwidth `B` and transition order `p`.
///
/// On `[1/B, 1]`, `a(t) = 1 − I_s(p+1, p+1)` with `s = (t − 1/B)/(1 − 1/B)`
/// and `I` the regularized incomplete beta function, i.e. the normalized
/// integral of `u^p (1−u)^p`.
pub fn make_window(bandwidth: f64, spline_order: usize) -> Result<WindowFunction> {
    if !(bandwidth > 1.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must exceed 1, got {bandwidth}"
        )));
    }
    if spline_order < 3 {
        return Err(Error::InvalidParameter(format!(
            "spline order must be at least 3, got {spline_order}"
        )));
    }
    let n = 2 * spline_order + 1;
    let mut binom = vec![1.0; n + 1];
    for k in 1..=n {
        binom[k] = binom[k - 1] * (n + 1 - k) as f64 / k as f64;
    }
    Ok(WindowFunction {
        bandwidth,
        spline_order,
        binom,
    })
}

impl WindowFunction {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn spline_order(&self) -> usize {
        self.spline_order
    }

    /// The low-pass profile: 1 on `[0, 1/B]`, 0 on `[1, ∞)`.
    pub fn a(&self, t: f64) -> f64 {
        let lo = 1.0 / self.bandwidth;
        if t <= lo {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let s = (t - lo) / (1.0 - lo);
        let p = self.spline_order;
        let n = 2 * p + 1;
        // Sum whichever binomial tail is small to keep relative accuracy.
        let term = |k: usize| self.binom[k] * s.powi(k as i32) * (1.0 - s).powi((n - k) as i32);
        if s <= 0.5 {
            1.0 - (p + 1..=n).map(term).sum::<f64>()
        } else {
            (0..=p).map(term).sum::<f64>()
        }
    }

    /// `b(x) = a(x/B) − a(x)`, supported on `[1/B, B]`.
    pub fn b(&self, x: f64) -> f64 {
        (self.a(x / self.bandwidth) - self.a(x)).max(0.0)
    }

    pub fn sqrt_b(&self, x: f64) -> f64 {
        self.b(x).sqrt()
    }

    /// `b(B^{-j} l)`.
    pub fn band_weight(&self, j: usize, l: usize) -> f64 {
        self.b(l as f64 / self.bandwidth.powi(j as i32))
    }

    /// Inclusive multipole range `(l_min, l_max)` where scale j is nonzero.
    pub fn scale_range(&self, j: usize) -> (usize, usize) {
        let upper = self.bandwidth.powi(j as i32 + 1).ceil() as usize + 1;
        let support: Vec<usize> = (0..=upper).filter(|&l| self.band_weight(j, l) > 0.0).collect();
        match (support.first(), support.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (1, 0),
        }
    }

    /// Low-pass transfer `Σ_{j ≤ J} b(B^{-j} l)`.
    pub fn lowpass(&self, jmax: usize, l: usize) -> f64 {
        (0..=jmax).map(|j| self.band_weight(j, l)).sum()
    }
}

/// Cubature and filter data for one scale.
pub struct ScaleCubature {
    j: usize,
    l_min: usize,
    l_max: usize,
    grid: Arc<QuadratureGrid>,
    sqrt_b: Vec<f64>,
    /// Legendre coefficients of `D_j(t)²` in the kernel basis `L_l`.
    square_coeffs: Vec<f64>,
    /// `D_j(1) = Σ √b (2l+1)/(4π)`.
    peak: f64,
    plan: OnceLock<ShtPlan>,
}

impl ScaleCubature {
    fn new(window: &WindowFunction, j: usize) -> Self {
        let (l_min, l_max) = window.scale_range(j);
        let exact = window.bandwidth.powi(j as i32 + 2);
        let degree = ((exact * (1.0 - 1e-12)).ceil() as usize).max(2 * l_max);
        let grid = Arc::new(build_grid(degree));
        let sqrt_b: Vec<f64> = (0..=l_max).map(|l| window.band_weight(j, l).sqrt()).collect();
        let peak = sqrt_b
            .iter()
            .enumerate()
            .map(|(l, s)| s * (2 * l + 1) as f64 / FOUR_PI)
            .sum();
        // c_l = 2π ∫ D(t)² P_l(t) dt, exact with 2 l_max + 1 Gauss nodes.
        let (t, w) = gauss_legendre(2 * l_max + 1);
        let mut square_coeffs = vec![0.0; 2 * l_max + 1];
        for (ti, wi) in t.iter().zip(&w) {
            let p = legendre_polynomials(2 * l_max, *ti);
            let d: f64 = (0..=l_max)
                .map(|l| sqrt_b[l] * (2 * l + 1) as f64 / FOUR_PI * p[l])
                .sum();
            for (c, pl) in square_coeffs.iter_mut().zip(&p) {
                *c += 2.0 * PI * wi * d * d * pl;
            }
        }
        ScaleCubature {
            j,
            l_min,
            l_max,
            grid,
            sqrt_b,
            square_coeffs,
            peak,
            plan: OnceLock::new(),
        }
    }

    pub fn scale(&self) -> usize {
        self.j
    }

    /// Inclusive multipole support `(l_min, l_max)`.
    pub fn band(&self) -> (usize, usize) {
        (self.l_min, self.l_max)
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn sqrt_filter(&self, l: usize) -> f64 {
        self.sqrt_b.get(l).copied().unwrap_or(0.0)
    }

    /// `ψ_jk(ξ_jk)` for node `k`.
    pub fn peak_value(&self, k: usize) -> f64 {
        self.grid.weight(k).sqrt() * self.peak
    }

    /// Band limit of `ψ_jk²`.
    pub fn square_band_limit(&self) -> usize {
        2 * self.l_max
    }

    /// Transform plan on this scale's grid, band-limited at `2 l_max`.
    pub fn plan(&self) -> &ShtPlan {
        self.plan
            .get_or_init(|| ShtPlan::new(self.grid.clone(), 2 * self.l_max))
    }

    /// Values `Σ_l h_l Σ_m a_lm Y_lm(ξ_k)` at all nodes, for `h` the
    /// needlet filter `√b` (`square = false`) or the `ψ²` expansion.
    fn synthesize(&self, a: &HarmonicCoefficients, square: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        if square {
            assert!(
                a.band_limit() >= self.square_band_limit(),
                "need multipoles to l = {}",
                self.square_band_limit()
            );
            let f = filter(&a.resized(self.square_band_limit()), |l| self.square_coeffs[l]);
            self.plan()
                .synthesis_band_into(&f, 0, self.square_band_limit(), &mut out);
        } else {
            let f = filter(&a.resized(self.l_max), |l| self.sqrt_b[l]);
            self.plan()
                .synthesis_band_into(&f, self.l_min, self.l_max, &mut out);
        }
        out
    }

    /// `⟨f, ψ_jk⟩` for a band-limited `f` at all nodes.
    pub fn analyze(&self, f: &HarmonicCoefficients) -> Vec<f64> {
        let mut v = self.synthesize(f, false);
        for (k, x) in v.iter_mut().enumerate() {
            *x *= self.grid.weight(k).sqrt();
        }
        v
    }

    /// Harmonic coefficients of `Σ_k c_k ψ_jk`.
    pub fn reconstruct(&self, c: &[f64]) -> HarmonicCoefficients {
        assert_eq!(c.len(), self.grid.len());
        // Σ_k c_k √λ_k Y(ξ_k) = analysis of c_k / √λ_k.
        let scaled: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(k, v)| v / self.grid.weight(k).sqrt())
            .collect();
        let raw = self.plan().analysis(&scaled).resized(self.l_max);
        filter(&raw, |l| self.sqrt_b[l]).resized(self.l_max)
    }

    /// Evaluates `ψ_jk(x)` directly from the Legendre sum.
    pub fn eval(&self, k: usize, x: &UnitDirection) -> f64 {
        let t = self.grid.point(k).dot(x);
        self.grid.weight(k).sqrt() * self.profile(t)
    }

    /// `D_j(t) = Σ_l √b(B^{-j} l) L_l(t)`.
    pub fn profile(&self, t: f64) -> f64 {
        let p = legendre_polynomials(self.l_max, t.clamp(-1.0, 1.0));
        (self.l_min..=self.l_max)
            .map(|l| self.sqrt_b[l] * (2 * l + 1) as f64 / FOUR_PI * p[l])
            .sum()
    }

    /// Bound on `sup |∇ψ_jk|` from Bernstein's inequality per degree.
    pub fn gradient_bound(&self) -> f64 {
        let max_w = (0..self.grid.n_rings())
            .map(|r| self.grid.ring_weight(r))
            .fold(0.0, f64::max);
        max_w.sqrt()
            * (self.l_min..=self.l_max)
                .map(|l| self.sqrt_b[l] * (2 * l + 1) as f64 / FOUR_PI * l as f64)
                .sum::<f64>()
    }
}

/// A needlet frame over scales `0..=max_scale`.
pub struct NeedletFrame {
    window: WindowFunction,
    scales: Vec<ScaleCubature>,
}

/// Builds the frame and its per-scale cubatures.
pub fn build_frame(window: WindowFunction, max_scale: usize) -> NeedletFrame {
    let scales = (0..=max_scale).map(|j| ScaleCubature::new(&window, j)).collect();
    NeedletFrame { window, scales }
}

/// Versioned description of a frame, used to key calibration tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub format_version: u32,
    pub bandwidth: f64,
    pub spline_order: usize,
    pub max_scale: usize,
    pub grid_degrees: Vec<usize>,
}

impl FrameDescriptor {
    pub const VERSION: u32 = 1;

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("descriptor serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

impl NeedletFrame {
    pub fn window(&self) -> &WindowFunction {
        &self.window
    }

    pub fn max_scale(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn scale(&self, j: usize) -> Result<&ScaleCubature> {
        self.scales.get(j).ok_or(Error::ScaleOutOfRange {
            scale: j,
            max_scale: self.max_scale(),
        })
    }

    pub fn scales(&self) -> &[ScaleCubature] {
        &self.scales
    }

    /// Highest multipole touched by any scale.
    pub fn band_limit(&self) -> usize {
        self.scales.last().map(|s| s.l_max).unwrap_or(0)
    }

    pub fn descriptor(&self) -> FrameDescriptor {
        FrameDescriptor {
            format_version: FrameDescriptor::VERSION,
            bandwidth: self.window.bandwidth,
            spline_order: self.window.spline_order,
            max_scale: self.max_scale(),
            grid_degrees: self.scales.iter().map(|s| s.grid.degree()).collect(),
        }
    }
}

/// `ψ_jk(x)`.
pub fn needlet_eval(frame: &NeedletFrame, j: usize, k: usize, x: &UnitDirection) -> Result<f64> {
    let s = frame.scale(j)?;
    if k >= s.len() {
        return Err(Error::InvalidParameter(format!(
            "node {k} out of range for scale {j} ({} nodes)",
            s.len()
        )));
    }
    Ok(s.eval(k, x))
}

/// Empirical statistics of one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCoefficients {
    pub scale: usize,
    /// `β̂_jk = (1/n) Σ_i ψ_jk(X_i)`.
    pub beta: Vec<f64>,
    /// `σ̂²_jk = (1/n) Σ_i ψ_jk²(X_i) − β̂²_jk`, clamped at zero.
    pub sigma2: Vec<f64>,
    /// `δ_jk = Σ_i ψ_jk²(X_i) / ψ_jk²(ξ_jk)`.
    pub delta: Vec<f64>,
    /// Unbiased centered products, when requested.
    pub zeta: Option<Vec<f64>>,
}

/// Per-(j,k) statistics of a catalog against a reference density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedletCoefficientSet {
    pub n: usize,
    pub reference: String,
    /// With a single event the variance estimate is identically zero.
    pub degenerate_variance: bool,
    pub scales: Vec<ScaleCoefficients>,
}

impl NeedletCoefficientSet {
    pub fn scale(&self, j: usize) -> Result<&ScaleCoefficients> {
        self.scales
            .iter()
            .find(|s| s.scale == j)
            .ok_or(Error::ScaleOutOfRange {
                scale: j,
                max_scale: self.scales.last().map(|s| s.scale).unwrap_or(0),
            })
    }
}

/// `β_jk(g) = ∫ g ψ_jk` at every node, from the multipoles of g.
pub fn reference_coefficients(scale: &ScaleCubature, g_multipoles: &HarmonicCoefficients) -> Vec<f64> {
    scale.analyze(g_multipoles)
}

/// Statistics of one scale from the event multipoles `Â_lm = Σ_i Y_lm(X_i)`.
///
/// `a` must reach degree `2 l_max` of the scale. When `g_beta` is given the
/// unbiased products ζ are filled in as well.
pub fn scale_statistics(
    scale: &ScaleCubature,
    a: &HarmonicCoefficients,
    n: usize,
    g_beta: Option<&[f64]>,
) -> ScaleCoefficients {
    let nf = n as f64;
    let sums = scale.synthesize(a, false);
    let squares = scale.synthesize(a, true);
    let len = scale.len();
    let mut beta = Vec::with_capacity(len);
    let mut sigma2 = Vec::with_capacity(len);
    let mut delta = Vec::with_capacity(len);
    let mut zeta = g_beta.map(|_| Vec::with_capacity(len));
    for k in 0..len {
        let w = scale.grid.weight(k);
        let s1 = w.sqrt() * sums[k];
        let s2 = w * squares[k];
        let b = s1 / nf;
        beta.push(b);
        sigma2.push((s2 / nf - b * b).max(0.0));
        delta.push(squares[k] / (scale.peak * scale.peak));
        if let (Some(z), Some(gb)) = (zeta.as_mut(), g_beta) {
            z.push(zeta_from_sums(s1, s2, n, gb[k]));
        }
    }
    ScaleCoefficients {
        scale: scale.j,
        beta,
        sigma2,
        delta,
        zeta,
    }
}

/// `ζ = (S₁² − S₂)/(n(n−1))` with centered sums built from `Σψ` and `Σψ²`.
pub fn zeta_from_sums(sum_psi: f64, sum_psi2: f64, n: usize, beta_g: f64) -> f64 {
    let nf = n as f64;
    let s1 = sum_psi - nf * beta_g;
    let s2 = sum_psi2 - 2.0 * beta_g * sum_psi + nf * beta_g * beta_g;
    (s1 * s1 - s2) / (nf * (nf - 1.0))
}

/// Empirical coefficients for all frame scales via exact event multipoles.
pub fn empirical_coefficients(
    frame: &NeedletFrame,
    catalog: &[UnitDirection],
    g: &Coverage,
) -> Result<NeedletCoefficientSet> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let a = point_multipoles(2 * frame.band_limit(), catalog);
    Ok(coefficients_from_multipoles(frame, &a, catalog.len(), g, false))
}

/// Same as [`empirical_coefficients`] with ζ filled in (needs n ≥ 2).
pub fn zeta_coefficients(
    frame: &NeedletFrame,
    catalog: &[UnitDirection],
    g: &Coverage,
) -> Result<NeedletCoefficientSet> {
    if catalog.len() < 2 {
        return Err(Error::TooFewEvents {
            needed: 2,
            got: catalog.len(),
        });
    }
    let a = point_multipoles(2 * frame.band_limit(), catalog);
    Ok(coefficients_from_multipoles(frame, &a, catalog.len(), g, true))
}

pub(crate) fn coefficients_from_multipoles(
    frame: &NeedletFrame,
    a: &HarmonicCoefficients,
    n: usize,
    g: &Coverage,
    with_zeta: bool,
) -> NeedletCoefficientSet {
    let gm = with_zeta.then(|| g.multipoles(frame.band_limit()));
    let scales = frame
        .scales
        .iter()
        .map(|s| {
            let gb = gm.as_ref().map(|gm| reference_coefficients(s, gm));
            scale_statistics(s, a, n, gb.as_deref())
        })
        .collect();
    NeedletCoefficientSet {
        n,
        reference: g.model().id(),
        degenerate_variance: n == 1,
        scales,
    }
}

/// Reference path: β̂, σ̂², δ by direct summation over events and nodes.
pub fn empirical_coefficients_direct(
    frame: &NeedletFrame,
    catalog: &[UnitDirection],
    g: &Coverage,
) -> Result<NeedletCoefficientSet> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let nf = catalog.len() as f64;
    let scales = frame
        .scales
        .iter()
        .map(|s| {
            let mut beta = Vec::with_capacity(s.len());
            let mut sigma2 = Vec::with_capacity(s.len());
            let mut delta = Vec::with_capacity(s.len());
            for k in 0..s.len() {
                let (mut s1, mut s2) = (0.0, 0.0);
                for x in catalog {
                    let v = s.eval(k, x);
                    s1 += v;
                    s2 += v * v;
                }
                let b = s1 / nf;
                beta.push(b);
                sigma2.push((s2 / nf - b * b).max(0.0));
                let peak = s.peak_value(k);
                delta.push(s2 / (peak * peak));
            }
            ScaleCoefficients {
                scale: s.j,
                beta,
                sigma2,
                delta,
                zeta: None,
            }
        })
        .collect();
    Ok(NeedletCoefficientSet {
        n: catalog.len(),
        reference: g.model().id(),
        degenerate_variance: catalog.len() == 1,
        scales,
    })
}

/// Binned path: events are moved to their assigned node on an analysis grid,
/// whose count map is transformed and filtered at every scale.
pub fn empirical_coefficients_binned(
    frame: &NeedletFrame,
    catalog: &[UnitDirection],
    g: &Coverage,
    analysis_grid: &QuadratureGrid,
) -> Result<NeedletCoefficientSet> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut counts = vec![0usize; analysis_grid.len()];
    for x in catalog {
        counts[analysis_grid.nearest_node(x)] += 1;
    }
    let mut acc = crate::harmonics::MultipoleAccumulator::new(2 * frame.band_limit());
    for (p, &c) in counts.iter().enumerate() {
        if c > 0 {
            acc.add(&analysis_grid.point(p), c as f64);
        }
    }
    Ok(coefficients_from_multipoles(
        frame,
        &acc.finish(),
        catalog.len(),
        g,
        false,
    ))
}

/// Default analysis grid for the binned path: degree `4 B^{J_max+1}`.
pub fn default_analysis_grid(frame: &NeedletFrame) -> QuadratureGrid {
    let degree = 4.0 * frame.window.bandwidth.powi(frame.max_scale() as i32 + 1);
    build_grid(degree.ceil() as usize)
}

/// Documented bound on `|β̂_jk(binned) − β̂_jk(direct)|` for scale j.
pub fn binning_bound(frame: &NeedletFrame, j: usize, analysis_grid: &QuadratureGrid) -> Result<f64> {
    Ok(frame.scale(j)?.gradient_bound() * analysis_grid.max_assignment_distance())
}
