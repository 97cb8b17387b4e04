//! Real spherical harmonics, Gauss-Legendre product grids and transforms.
//!
//! Basis convention (no Condon-Shortley phase):
//! `Y_l0 = P̄_l0(cos θ)`, `Y_lm = √2 P̄_lm cos(mφ)` and `Y_l,-m = √2 P̄_lm sin(mφ)`
//! for `m > 0`, where `P̄_lm` is normalized so that the basis is orthonormal on
//! the sphere. Coefficients are stored at index `l² + l + m`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::UnitDirection;

const FOUR_PI: f64 = 4.0 * PI;

/// Classical Legendre polynomials `P_0(x) .. P_lmax(x)`.
pub fn legendre_polynomials(lmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = x;
    }
    for l in 2..=lmax {
        let lf = l as f64;
        p[l] = ((2.0 * lf - 1.0) * x * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
    }
    p
}

/// `L_l(x) = (2l+1)/(4π) P_l(x)`, the reproducing kernel of degree-l harmonics.
pub fn legendre_kernel(l: usize, cos_gamma: f64) -> f64 {
    let x = cos_gamma.clamp(-1.0, 1.0);
    let (mut p0, mut p1) = (1.0, x);
    let pl = match l {
        0 => 1.0,
        1 => x,
        _ => {
            for k in 2..=l {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    };
    (2 * l + 1) as f64 / FOUR_PI * pl
}

/// Coefficients of a band-limited function in the real harmonic basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoefficients {
    band_limit: usize,
    data: Vec<f64>,
}

impl HarmonicCoefficients {
    pub fn zeros(band_limit: usize) -> Self {
        Self {
            band_limit,
            data: vec![0.0; (band_limit + 1) * (band_limit + 1)],
        }
    }

    /// Wraps a vector of `(L+1)²` coefficients.
    pub fn from_vec(band_limit: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != (band_limit + 1) * (band_limit + 1) {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients for band limit {band_limit}, got {}",
                (band_limit + 1) * (band_limit + 1),
                data.len()
            )));
        }
        Ok(Self { band_limit, data })
    }

    #[inline]
    pub fn index(l: usize, m: i64) -> usize {
        debug_assert!(m.unsigned_abs() as usize <= l);
        ((l * l + l) as i64 + m) as usize
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.band_limit {
            0.0
        } else {
            self.data[Self::index(l, m)]
        }
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        let i = Self::index(l, m);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Coefficients of degree `l`, ordered `m = -l..=l`.
    pub fn degree(&self, l: usize) -> &[f64] {
        &self.data[l * l..(l + 1) * (l + 1)]
    }

    pub fn degree_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.data[l * l..(l + 1) * (l + 1)]
    }

    /// Copy with a different band limit (zero-padded or truncated).
    pub fn resized(&self, band_limit: usize) -> Self {
        let mut out = Self::zeros(band_limit);
        let n = out.data.len().min(self.data.len());
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    /// Sum over coefficients of the product, i.e. the L² inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Power per degree: `Σ_m a_lm²`.
    pub fn degree_power(&self, l: usize) -> f64 {
        self.degree(l).iter().map(|a| a * a).sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|a| *a *= c);
    }

    /// `self += c * other` over the common band.
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        let n = self.data.len().min(other.data.len());
        for (a, b) in self.data[..n].iter_mut().zip(&other.data[..n]) {
            *a += c * b;
        }
    }
}

/// Multiplies each degree-`l` block by `h(l)`.
///
/// The band limit of the result is the largest `l` with `h(l) ≠ 0`.
pub fn filter(coeffs: &HarmonicCoefficients, h: impl Fn(usize) -> f64) -> HarmonicCoefficients {
    let gains: Vec<f64> = (0..=coeffs.band_limit).map(&h).collect();
    let top = gains.iter().rposition(|&g| g != 0.0).unwrap_or(0);
    let mut out = HarmonicCoefficients::zeros(top);
    for (l, &g) in gains.iter().enumerate().take(top + 1) {
        for (o, a) in out.degree_mut(l).iter_mut().zip(coeffs.degree(l)) {
            *o = g * a;
        }
    }
    out
}

/// Offset of order `m` in an m-major triangular table of band limit `lmax`.
#[inline]
pub(crate) fn tri_offset(lmax: usize, m: usize) -> usize {
    m * (lmax + 1) - m * (m.saturating_sub(1)) / 2
}

#[inline]
pub(crate) fn tri_len(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 2) / 2
}

/// Threshold below which the m-sectoral seed is rescaled (2^-400).
const SCALE_DOWN: f64 = 3.872_591_914_849_318e-121;
const SCALE_UP_EXP: i32 = 400;

/// Recurrence coefficients for normalized associated Legendre functions.
#[derive(Debug, Clone)]
pub struct AssocLegendre {
    lmax: usize,
    /// `a_lm`, m-major triangular layout.
    a: Vec<f64>,
    /// `b_lm`, m-major triangular layout.
    b: Vec<f64>,
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl AssocLegendre {
    pub fn new(lmax: usize) -> Self {
        let mut a = vec![0.0; tri_len(lmax)];
        let mut b = vec![0.0; tri_len(lmax)];
        for m in 0..=lmax {
            let off = tri_offset(lmax, m);
            let mf = m as f64;
            for l in (m + 2)..=lmax {
                let lf = l as f64;
                let i = off + (l - m);
                a[i] = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let l1 = lf - 1.0;
                b[i] = ((l1 * l1 - mf * mf) / (4.0 * l1 * l1 - 1.0)).sqrt();
            }
        }
        let diag = (0..=lmax)
            .map(|m| {
                if m == 0 {
                    1.0
                } else {
                    ((2 * m + 1) as f64 / (2 * m) as f64).sqrt()
                }
            })
            .collect();
        let sub = (0..=lmax).map(|m| ((2 * m + 3) as f64).sqrt()).collect();
        Self {
            lmax,
            a,
            b,
            diag,
            sub,
        }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// Fills `out` (m-major triangular, length `tri_len(lmax)`) with
    /// `P̄_lm(x)` for `0 ≤ m ≤ l ≤ lmax`, where `s = sin θ = √(1-x²)`.
    pub fn fill(&self, x: f64, s: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), tri_len(self.lmax));
        self.for_each_order(x, s, |m, vals| {
            let off = tri_offset(self.lmax, m);
            out[off..off + vals.len()].copy_from_slice(vals);
        });
    }

    /// Runs the recurrence and hands `P̄_lm` for `l = m..=lmax` to `f(m, values)`.
    ///
    /// The sectoral seed `P̄_mm ∝ sin^m θ` underflows near the poles at high
    /// order; it is carried with a binary exponent and the recurrence is run
    /// on rescaled values, so entries only become exactly zero once the true
    /// value is below the smallest subnormal.
    pub fn for_each_order(&self, x: f64, s: f64, mut f: impl FnMut(usize, &[f64])) {
        let lmax = self.lmax;
        let mut buf = vec![0.0; lmax + 1];
        let mut pmm = 1.0 / FOUR_PI.sqrt();
        let mut pmm_exp: i32 = 0;
        for m in 0..=lmax {
            if m > 0 {
                pmm *= self.diag[m] * s;
                if pmm != 0.0 && pmm.abs() < SCALE_DOWN {
                    pmm *= pow2(SCALE_UP_EXP);
                    pmm_exp -= SCALE_UP_EXP;
                }
            }
            let len = lmax - m + 1;
            let vals = &mut buf[..len];
            if pmm_exp == 0 {
                vals[0] = pmm;
                if len > 1 {
                    vals[1] = self.sub[m] * x * pmm;
                }
                let off = tri_offset(lmax, m);
                for k in 2..len {
                    let i = off + k;
                    vals[k] = self.a[i] * (x * vals[k - 1] - self.b[i] * vals[k - 2]);
                }
            } else {
                let mut exp = pmm_exp;
                let mut p2 = pmm;
                let mut p1 = if len > 1 { self.sub[m] * x * pmm } else { 0.0 };
                vals[0] = p2 * pow2(exp);
                if len > 1 {
                    vals[1] = p1 * pow2(exp);
                }
                let off = tri_offset(lmax, m);
                for k in 2..len {
                    let i = off + k;
                    let p = self.a[i] * (x * p1 - self.b[i] * p2);
                    p2 = p1;
                    p1 = p;
                    if exp < 0 && p.abs() > 1.0 / SCALE_DOWN {
                        p1 *= SCALE_DOWN;
                        p2 *= SCALE_DOWN;
                        exp += SCALE_UP_EXP;
                    }
                    vals[k] = p1 * pow2(exp);
                }
            }
            f(m, vals);
        }
    }
}

#[inline]
fn pow2(e: i32) -> f64 {
    if e < -1074 {
        0.0
    } else {
        2f64.powi(e)
    }
}

/// All real harmonics `Y_lm(u)` for `l ≤ lmax`, at index `l² + l + m`.
pub fn real_harmonics(lmax: usize, u: &UnitDirection) -> Vec<f64> {
    let mut acc = MultipoleAccumulator::new(lmax);
    acc.add(u, 1.0);
    acc.finish().data
}

/// Accumulates `Σ_i w_i Y_lm(X_i)` over many points.
///
/// Work is done in m-major order so the inner loops are contiguous.
pub struct MultipoleAccumulator {
    legendre: Arc<AssocLegendre>,
    cos_part: Vec<f64>,
    sin_part: Vec<f64>,
}

impl MultipoleAccumulator {
    pub fn new(lmax: usize) -> Self {
        Self::with_legendre(Arc::new(AssocLegendre::new(lmax)))
    }

    pub fn with_legendre(legendre: Arc<AssocLegendre>) -> Self {
        let n = tri_len(legendre.lmax());
        Self {
            legendre,
            cos_part: vec![0.0; n],
            sin_part: vec![0.0; n],
        }
    }

    pub fn reset(&mut self) {
        self.cos_part.iter_mut().for_each(|v| *v = 0.0);
        self.sin_part.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add(&mut self, u: &UnitDirection, weight: f64) {
        let x = u.z().clamp(-1.0, 1.0);
        let rho = (u.x() * u.x() + u.y() * u.y()).sqrt();
        let (c1, s1) = if rho > 0.0 {
            (u.x() / rho, u.y() / rho)
        } else {
            (1.0, 0.0)
        };
        let lmax = self.legendre.lmax();
        let (mut cm, mut sm) = (1.0, 0.0);
        let sqrt2 = std::f64::consts::SQRT_2;
        let cos_part = &mut self.cos_part;
        let sin_part = &mut self.sin_part;
        self.legendre.for_each_order(x, rho, |m, vals| {
            if m > 0 {
                let c = cm * c1 - sm * s1;
                sm = sm * c1 + cm * s1;
                cm = c;
            }
            let off = tri_offset(lmax, m);
            let (wc, ws) = if m == 0 {
                (weight, 0.0)
            } else {
                (weight * sqrt2 * cm, weight * sqrt2 * sm)
            };
            let cp = &mut cos_part[off..off + vals.len()];
            for (a, p) in cp.iter_mut().zip(vals) {
                *a += wc * p;
            }
            if m > 0 {
                let sp = &mut sin_part[off..off + vals.len()];
                for (a, p) in sp.iter_mut().zip(vals) {
                    *a += ws * p;
                }
            }
        });
    }

    pub fn finish(&self) -> HarmonicCoefficients {
        let lmax = self.legendre.lmax();
        let mut out = HarmonicCoefficients::zeros(lmax);
        for m in 0..=lmax {
            let off = tri_offset(lmax, m);
            for l in m..=lmax {
                out.set(l, m as i64, self.cos_part[off + l - m]);
                if m > 0 {
                    out.set(l, -(m as i64), self.sin_part[off + l - m]);
                }
            }
        }
        out
    }
}

/// Multipoles of an empirical measure: `Σ_i Y_lm(X_i)`.
pub fn point_multipoles(lmax: usize, points: &[UnitDirection]) -> HarmonicCoefficients {
    let mut acc = MultipoleAccumulator::new(lmax);
    for p in points {
        acc.add(p, 1.0);
    }
    acc.finish()
}

/// Gauss-Legendre nodes (descending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // P_n(z) and P_{n-1}(z).
    let eval = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        (p1, p0)
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (pn, pn1) = eval(z);
            let dp = nf * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (pn, pn1) = eval(z);
        let dp = if n > 1 {
            nf * (z * pn - pn1) / (z * z - 1.0)
        } else {
            1.0
        };
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `pieces` equal panels.
pub fn composite_gauss(a: f64, b: f64, pieces: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / pieces as f64;
    let mut out = Vec::with_capacity(pieces * order);
    for p in 0..pieces {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// Smallest 5-smooth integer ≥ n (cheap FFT lengths).
fn smooth_length(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Gauss-Legendre colatitudes × equispaced longitudes, exact to a degree.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    degree: usize,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
    ring_weight: Vec<f64>,
    n_phi: usize,
}

/// Builds a grid integrating every spherical polynomial of degree ≤ `degree`.
pub fn build_grid(degree: usize) -> QuadratureGrid {
    let rings = degree / 2 + 1;
    let (x, w) = gauss_legendre(rings);
    let n_phi = smooth_length(degree + 1);
    let dphi = 2.0 * PI / n_phi as f64;
    QuadratureGrid {
        degree,
        sin_theta: x.iter().map(|&c| (1.0 - c * c).max(0.0).sqrt()).collect(),
        cos_theta: x,
        ring_weight: w.iter().map(|wi| wi * dphi).collect(),
        n_phi,
    }
}

impl QuadratureGrid {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_rings(&self) -> usize {
        self.cos_theta.len()
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.n_rings() * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cos_theta(&self) -> &[f64] {
        &self.cos_theta
    }

    pub fn sin_theta(&self) -> &[f64] {
        &self.sin_theta
    }

    /// Combined weight `w_GL · 2π/N_φ` shared by all nodes of a ring.
    pub fn ring_weight(&self, ring: usize) -> f64 {
        self.ring_weight[ring]
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.ring_weight[index / self.n_phi]
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_phi as f64
    }

    pub fn point(&self, index: usize) -> UnitDirection {
        let (r, k) = (index / self.n_phi, index % self.n_phi);
        let (sp, cp) = self.phi(k).sin_cos();
        let s = self.sin_theta[r];
        UnitDirection::from_xyz(s * cp, s * sp, self.cos_theta[r])
    }

    pub fn points(&self) -> Vec<UnitDirection> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Quadrature of sampled values (ring-major layout).
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        assert_eq!(samples.len(), self.len());
        samples
            .chunks(self.n_phi)
            .zip(&self.ring_weight)
            .map(|(ring, w)| w * ring.iter().sum::<f64>())
            .sum()
    }

    /// Index of the node assigned to `u`: the ring closest in colatitude,
    /// then the closest longitude on that ring.
    pub fn nearest_node(&self, u: &UnitDirection) -> usize {
        let theta = u.colatitude();
        let thetas = |r: usize| self.cos_theta[r].clamp(-1.0, 1.0).acos();
        let n = self.n_rings();
        let mut lo = 0usize;
        let mut hi = n;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if thetas(mid) < theta {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let ring = if lo == 0 {
            0
        } else if lo == n {
            n - 1
        } else if (thetas(lo) - theta) < (theta - thetas(lo - 1)) {
            lo
        } else {
            lo - 1
        };
        let k = ((u.longitude() / (2.0 * PI) * self.n_phi as f64).round() as usize) % self.n_phi;
        ring * self.n_phi + k
    }

    /// Upper bound on the distance between any point and its assigned node.
    pub fn max_assignment_distance(&self) -> f64 {
        let thetas: Vec<f64> = self
            .cos_theta
            .iter()
            .map(|c| c.clamp(-1.0, 1.0).acos())
            .collect();
        let mut gap: f64 = thetas[0].max(PI - thetas[thetas.len() - 1]);
        for w in thetas.windows(2) {
            gap = gap.max(0.5 * (w[1] - w[0]));
        }
        gap + PI / self.n_phi as f64
    }
}

/// Precomputed transform plan for a grid and band limit.
pub struct ShtPlan {
    grid: Arc<QuadratureGrid>,
    lmax: usize,
    legendre: Arc<AssocLegendre>,
    /// Per-ring `P̄_lm` tables when they fit the memory budget.
    cache: Option<Vec<f64>>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

/// Default memory budget for cached Legendre tables, in f64 entries.
pub const DEFAULT_LEGENDRE_CACHE: usize = 8 << 20;

impl ShtPlan {
    pub fn new(grid: Arc<QuadratureGrid>, lmax: usize) -> Self {
        Self::with_cache_budget(grid, lmax, DEFAULT_LEGENDRE_CACHE)
    }

    pub fn with_cache_budget(grid: Arc<QuadratureGrid>, lmax: usize, budget: usize) -> Self {
        let legendre = Arc::new(AssocLegendre::new(lmax));
        let per_ring = tri_len(lmax);
        let cache = if per_ring * grid.n_rings() <= budget {
            let mut table = vec![0.0; per_ring * grid.n_rings()];
            for (r, chunk) in table.chunks_mut(per_ring).enumerate() {
                legendre.fill(grid.cos_theta[r], grid.sin_theta[r], chunk);
            }
            Some(table)
        } else {
            None
        };
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(grid.n_phi);
        let fft_inverse = planner.plan_fft_inverse(grid.n_phi);
        Self {
            grid,
            lmax,
            legendre,
            cache,
            fft_forward,
            fft_inverse,
        }
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn legendre(&self) -> &Arc<AssocLegendre> {
        &self.legendre
    }

    fn with_ring_table<T>(&self, ring: usize, scratch: &mut Vec<f64>, f: impl FnOnce(&[f64]) -> T) -> T {
        let per_ring = tri_len(self.lmax);
        match &self.cache {
            Some(table) => f(&table[ring * per_ring..(ring + 1) * per_ring]),
            None => {
                scratch.resize(per_ring, 0.0);
                self.legendre
                    .fill(self.grid.cos_theta[ring], self.grid.sin_theta[ring], scratch);
                f(scratch)
            }
        }
    }

    /// Analysis `a_lm = Σ_k λ_k Y_lm(ξ_k) f_k` up to the plan's band limit.
    pub fn analysis(&self, samples: &[f64]) -> HarmonicCoefficients {
        assert_eq!(samples.len(), self.grid.len());
        let lmax = self.lmax;
        let n_phi = self.grid.n_phi;
        let mut cos_acc = vec![0.0; tri_len(lmax)];
        let mut sin_acc = vec![0.0; tri_len(lmax)];
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n_phi];
        let mut scratch = Vec::new();
        let sqrt2 = std::f64::consts::SQRT_2;
        for ring in 0..self.grid.n_rings() {
            let row = &samples[ring * n_phi..(ring + 1) * n_phi];
            for (z, &v) in spectrum.iter_mut().zip(row) {
                *z = Complex64::new(v, 0.0);
            }
            self.fft_forward.process(&mut spectrum);
            let w = self.grid.ring_weight[ring];
            self.with_ring_table(ring, &mut scratch, |table| {
                for m in 0..=lmax {
                    let z = spectrum[m % n_phi];
                    // Σ f cos(mφ) = Re Z, Σ f sin(mφ) = -Im Z.
                    let (c, s) = if m == 0 {
                        (w * z.re, 0.0)
                    } else {
                        (w * sqrt2 * z.re, -w * sqrt2 * z.im)
                    };
                    let off = tri_offset(lmax, m);
                    let len = lmax - m + 1;
                    let p = &table[off..off + len];
                    for (a, pv) in cos_acc[off..off + len].iter_mut().zip(p) {
                        *a += c * pv;
                    }
                    if m > 0 {
                        for (a, pv) in sin_acc[off..off + len].iter_mut().zip(p) {
                            *a += s * pv;
                        }
                    }
                }
            });
        }
        let mut out = HarmonicCoefficients::zeros(lmax);
        for m in 0..=lmax {
            let off = tri_offset(lmax, m);
            for l in m..=lmax {
                out.set(l, m as i64, cos_acc[off + l - m]);
                if m > 0 {
                    out.set(l, -(m as i64), sin_acc[off + l - m]);
                }
            }
        }
        out
    }

    /// Synthesis on the grid of all degrees in `l_lo..=l_hi` (clipped to
    /// the plan and coefficient band limits), added into `out`.
    pub fn synthesis_band_into(
        &self,
        coeffs: &HarmonicCoefficients,
        l_lo: usize,
        l_hi: usize,
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), self.grid.len());
        let lmax = self.lmax;
        let l_hi = l_hi.min(lmax).min(coeffs.band_limit());
        if l_lo > l_hi {
            return;
        }
        // Repack into m-major order matching the Legendre tables.
        let mut cos_c = vec![0.0; tri_len(lmax)];
        let mut sin_c = vec![0.0; tri_len(lmax)];
        let sqrt2 = std::f64::consts::SQRT_2;
        for l in l_lo..=l_hi {
            let block = coeffs.degree(l);
            for m in 0..=l {
                let off = tri_offset(lmax, m) + l - m;
                if m == 0 {
                    cos_c[off] = block[l];
                } else {
                    cos_c[off] = sqrt2 * block[l + m];
                    sin_c[off] = sqrt2 * block[l - m];
                }
            }
        }
        let n_phi = self.grid.n_phi;
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n_phi];
        let mut scratch = Vec::new();
        for ring in 0..self.grid.n_rings() {
            spectrum.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            self.with_ring_table(ring, &mut scratch, |table| {
                for m in 0..=l_hi {
                    let off = tri_offset(lmax, m);
                    let start = l_lo.max(m) - m;
                    let end = l_hi - m + 1;
                    let p = &table[off + start..off + end];
                    let cc: f64 = cos_c[off + start..off + end]
                        .iter()
                        .zip(p)
                        .map(|(a, b)| a * b)
                        .sum();
                    let ss: f64 = if m > 0 {
                        sin_c[off + start..off + end]
                            .iter()
                            .zip(p)
                            .map(|(a, b)| a * b)
                            .sum()
                    } else {
                        0.0
                    };
                    // f(φ) = Re Σ_m (C_m − i S_m) e^{imφ}.
                    spectrum[m % n_phi] += Complex64::new(cc, -ss);
                }
            });
            self.fft_inverse.process(&mut spectrum);
            for (o, z) in out[ring * n_phi..(ring + 1) * n_phi].iter_mut().zip(&spectrum) {
                *o += z.re;
            }
        }
    }

    /// Synthesis of the full band on the grid.
    pub fn synthesis(&self, coeffs: &HarmonicCoefficients) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.synthesis_band_into(coeffs, 0, coeffs.band_limit(), &mut out);
        out
    }
}

/// Harmonic analysis of grid samples up to band limit `lmax`.
pub fn sht_forward(
    samples: &[f64],
    grid: &QuadratureGrid,
    lmax: usize,
) -> Result<HarmonicCoefficients> {
    if lmax > grid.degree() {
        return Err(Error::GridTooSmall {
            degree: grid.degree(),
            band_limit: lmax,
        });
    }
    if samples.len() != grid.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} samples, got {}",
            grid.len(),
            samples.len()
        )));
    }
    let plan = ShtPlan::with_cache_budget(Arc::new(grid.clone()), lmax, 0);
    Ok(plan.analysis(samples))
}

/// Evaluates `Σ a_lm Y_lm` at arbitrary points.
pub fn sht_inverse(coeffs: &HarmonicCoefficients, points: &[UnitDirection]) -> Vec<f64> {
    let legendre = AssocLegendre::new(coeffs.band_limit());
    points
        .iter()
        .map(|u| evaluate_with(&legendre, coeffs, u))
        .collect()
}

/// Evaluates one band-limited function at one point.
pub fn evaluate(coeffs: &HarmonicCoefficients, u: &UnitDirection) -> f64 {
    evaluate_with(&AssocLegendre::new(coeffs.band_limit()), coeffs, u)
}

fn evaluate_with(legendre: &AssocLegendre, coeffs: &HarmonicCoefficients, u: &UnitDirection) -> f64 {
    let x = u.z().clamp(-1.0, 1.0);
    let rho = (u.x() * u.x() + u.y() * u.y()).sqrt();
    let (c1, s1) = if rho > 0.0 {
        (u.x() / rho, u.y() / rho)
    } else {
        (1.0, 0.0)
    };
    let (mut cm, mut sm) = (1.0, 0.0);
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut total = 0.0;
    legendre.for_each_order(x, rho, |m, vals| {
        if m > 0 {
            let c = cm * c1 - sm * s1;
            sm = sm * c1 + cm * s1;
            cm = c;
        }
        for (k, p) in vals.iter().enumerate() {
            let l = m + k;
            let block = coeffs.degree(l);
            if m == 0 {
                total += block[l] * p;
            } else {
                total += sqrt2 * p * (block[l + m] * cm + block[l - m] * sm);
            }
        }
    });
    total
}
