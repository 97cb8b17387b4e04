//! Geometry of the unit sphere.
//!
//! Directions are stored as Cartesian unit vectors. Colatitude/longitude
//! accessors are provided for convenience; catalog I/O works in degrees of
//! longitude/latitude and lives in [`crate::catalog`].

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDirection {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitDirection {
    /// Normalizes an arbitrary non-zero vector.
    ///
    /// Panics if the vector has zero or non-finite length.
    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        let norm = (x * x + y * y + z * z).sqrt();
        assert!(
            norm.is_finite() && norm > 0.0,
            "cannot normalize vector ({x}, {y}, {z})"
        );
        Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
    }

    /// Builds a direction from colatitude `theta` in [0, π] and longitude `phi`.
    pub fn from_colat_lon(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self::from_xyz(st * cp, st * sp, ct)
    }

    /// Builds a direction from longitude and latitude, both in degrees.
    pub fn from_lon_lat_deg(lon: f64, lat: f64) -> Self {
        Self::from_colat_lon(FRAC_PI_2 - lat.to_radians(), lon.to_radians())
    }

    pub fn north_pole() -> Self {
        Self { x: 0.0, y: 0.0, z: 1.0 }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Colatitude in [0, π].
    pub fn colatitude(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).acos()
    }

    /// Longitude in [0, 2π).
    pub fn longitude(&self) -> f64 {
        let phi = self.y.atan2(self.x);
        if phi < 0.0 {
            let wrapped = phi + TAU;
            if wrapped >= TAU {
                0.0
            } else {
                wrapped
            }
        } else {
            phi
        }
    }

    /// (longitude, latitude) in degrees, longitude in [0, 360).
    pub fn lon_lat_deg(&self) -> (f64, f64) {
        let lon = self.longitude().to_degrees();
        let lon = if lon >= 360.0 { 0.0 } else { lon };
        (lon, 90.0 - self.colatitude().to_degrees())
    }

    pub fn dot(&self, other: &UnitDirection) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn antipode(&self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Orthonormal tangent pair (e_θ, e_φ) at this point.
    ///
    /// Within 1e-12 of a pole the longitude basis is undefined and the
    /// Cartesian pair (e_x, e_y) is returned instead.
    pub fn tangent_basis(&self) -> ([f64; 3], [f64; 3]) {
        if self.z.abs() > 1.0 - 1e-12 {
            return ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        }
        let rho = (self.x * self.x + self.y * self.y).sqrt();
        let (cp, sp) = (self.x / rho, self.y / rho);
        let e_theta = [self.z * cp, self.z * sp, -rho];
        let e_phi = [-sp, cp, 0.0];
        (e_theta, e_phi)
    }

    /// Applies a 3×3 matrix and renormalizes.
    pub fn rotate(&self, m: &Rotation) -> Self {
        let v = m.apply(self.xyz());
        Self::from_xyz(v[0], v[1], v[2])
    }
}

/// Great-circle distance in [0, π].
pub fn geodesic_distance(u: &UnitDirection, v: &UnitDirection) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos()
}

/// Draws a direction from the uniform density 1/(4π).
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> UnitDirection {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi: f64 = TAU * rng.random::<f64>();
    let rho = (1.0 - z * z).max(0.0).sqrt();
    UnitDirection::from_xyz(rho * phi.cos(), rho * phi.sin(), z)
}

/// Moves `u` along the great circle leaving it in the tangent direction at
/// `azimuth` (measured from e_θ towards e_φ) by `angle` radians.
///
/// This is the exponential map, so angles outside [0, π] wrap around the
/// great circle; for 0 ≤ angle ≤ π the geodesic distance to `u` is `angle`.
pub fn deflect(u: &UnitDirection, angle: f64, azimuth: f64) -> UnitDirection {
    if angle == 0.0 {
        return *u;
    }
    let (e1, e2) = u.tangent_basis();
    let (sa, ca) = azimuth.sin_cos();
    let t = [
        ca * e1[0] + sa * e2[0],
        ca * e1[1] + sa * e2[1],
        ca * e1[2] + sa * e2[2],
    ];
    rotate_towards(u, t, angle)
}

/// Rotates `u` by `angle` towards the unit tangent vector `t` (t ⟂ u).
pub(crate) fn rotate_towards(u: &UnitDirection, t: [f64; 3], angle: f64) -> UnitDirection {
    let (s, c) = angle.sin_cos();
    UnitDirection::from_xyz(
        c * u.x + s * t[0],
        c * u.y + s * t[1],
        c * u.z + s * t[2],
    )
}

/// A 3×3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub fn identity() -> Self {
        Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Rotation(t)
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Rotation(out)
    }

    /// Rotation by `angle` about the unit `axis` (Rodrigues).
    pub fn about_axis(axis: &UnitDirection, angle: f64) -> Self {
        let [x, y, z] = axis.xyz();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// A uniformly random rotation (random axis, angle with Haar density).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Compose z-rotation, y-rotation, z-rotation with Haar-distributed Euler angles.
        let a = TAU * rng.random::<f64>();
        let g = TAU * rng.random::<f64>();
        let b = (2.0 * rng.random::<f64>() - 1.0).acos();
        let z = UnitDirection::north_pole();
        let y = UnitDirection::from_xyz(0.0, 1.0, 0.0);
        Rotation::about_axis(&z, a)
            .compose(&Rotation::about_axis(&y, b))
            .compose(&Rotation::about_axis(&z, g))
    }
}

/// Celestial reference frames handled by the catalog layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOfReference {
    Galactic,
    Equatorial,
}

impl std::str::FromStr for FrameOfReference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "galactic" | "gal" => Ok(Self::Galactic),
            "equatorial" | "eq" | "icrs" | "j2000" => Ok(Self::Equatorial),
            other => Err(format!("unknown frame '{other}'")),
        }
    }
}

impl std::fmt::Display for FrameOfReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Galactic => write!(f, "galactic"),
            Self::Equatorial => write!(f, "equatorial"),
        }
    }
}

/// J2000 right ascension of the north Galactic pole, degrees.
pub const NGP_RA_DEG: f64 = 192.859_48;
/// J2000 declination of the north Galactic pole, degrees.
pub const NGP_DEC_DEG: f64 = 27.128_25;
/// Galactic longitude of the north celestial pole, degrees.
pub const NCP_L_DEG: f64 = 122.931_92;

/// Rotation taking equatorial (J2000) Cartesian vectors to Galactic ones.
///
/// Rows are the Galactic axes expressed in equatorial coordinates, built
/// from the three defining angles so the matrix is orthogonal to rounding.
pub fn equatorial_to_galactic() -> &'static Rotation {
    static ROT: OnceLock<Rotation> = OnceLock::new();
    ROT.get_or_init(|| {
        let (ra, dec) = (NGP_RA_DEG.to_radians(), NGP_DEC_DEG.to_radians());
        let l_ncp = NCP_L_DEG.to_radians();
        let zg = [dec.cos() * ra.cos(), dec.cos() * ra.sin(), dec.sin()];
        // Projection of the celestial pole onto the Galactic plane.
        let p = [
            -dec.sin() * zg[0] / dec.cos(),
            -dec.sin() * zg[1] / dec.cos(),
            (1.0 - dec.sin() * zg[2]) / dec.cos(),
        ];
        let q = cross(zg, p);
        let (sl, cl) = l_ncp.sin_cos();
        let xg = [
            cl * p[0] - sl * q[0],
            cl * p[1] - sl * q[1],
            cl * p[2] - sl * q[2],
        ];
        let yg = cross(zg, xg);
        Rotation([normalize(xg), normalize(yg), normalize(zg)])
    })
}

/// Converts a direction between frames. Equal frames are the identity.
pub fn convert(u: &UnitDirection, from: FrameOfReference, to: FrameOfReference) -> UnitDirection {
    match (from, to) {
        (a, b) if a == b => *u,
        (FrameOfReference::Equatorial, FrameOfReference::Galactic) => {
            u.rotate(equatorial_to_galactic())
        }
        (FrameOfReference::Galactic, FrameOfReference::Equatorial) => {
            u.rotate(&equatorial_to_galactic().transpose())
        }
        _ => unreachable!(),
    }
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Solid angle of the spherical cap {x : x·c ≥ cos(radius)}.
pub fn cap_area(radius: f64) -> f64 {
    2.0 * PI * (1.0 - radius.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm_err(u: &UnitDirection) -> f64 {
        (u.dot(u).sqrt() - 1.0).abs()
    }

    #[test]
    fn distance_special_cases() {
        let u = UnitDirection::from_colat_lon(0.7, 2.1);
        assert_eq!(geodesic_distance(&u, &u), 0.0);
        assert!((geodesic_distance(&u, &u.antipode()) - PI).abs() < 1e-12);
        let a = UnitDirection::from_xyz(1.0, 0.0, 0.0);
        let b = UnitDirection::from_xyz(0.0, 0.0, 1.0);
        assert!((geodesic_distance(&a, &b) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn distance_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let u = sample_uniform(&mut rng);
            let v = sample_uniform(&mut rng);
            let r = Rotation::random(&mut rng);
            let d0 = geodesic_distance(&u, &v);
            let d1 = geodesic_distance(&u.rotate(&r), &v.rotate(&r));
            assert!((d0 - d1).abs() < 1e-12, "{d0} vs {d1}");
            let w = sample_uniform(&mut rng);
            assert!(
                geodesic_distance(&u, &w)
                    <= geodesic_distance(&u, &v) + geodesic_distance(&v, &w) + 1e-12
            );
        }
    }

    #[test]
    fn uniform_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut sx, mut sy, mut sz, mut cap) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..n {
            let u = sample_uniform(&mut rng);
            assert!(norm_err(&u) < 1e-12);
            sx += u.x();
            sy += u.y();
            sz += u.z();
            if u.z() > 0.5 {
                cap += 1;
            }
        }
        let nf = n as f64;
        for m in [sx / nf, sy / nf, sz / nf] {
            assert!(m.abs() < 0.01, "mean {m}");
        }
        assert!((cap as f64 / nf - 0.25).abs() < 0.005);
    }

    #[test]
    fn uniform_sampling_chi_square_48_cells() {
        // 4 equal-area latitude bands × 12 longitude sectors.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let mut counts = [0usize; 48];
        for _ in 0..n {
            let u = sample_uniform(&mut rng);
            let band = (((u.z() + 1.0) / 0.5).floor() as usize).min(3);
            let sector = ((u.longitude() / TAU * 12.0).floor() as usize).min(11);
            counts[band * 12 + sector] += 1;
        }
        let expected = n as f64 / 48.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 1.0 - ChiSquared::new(47.0).unwrap().cdf(chi2);
        assert!(p > 1e-3, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_uniform(&mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_uniform(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn deflect_moves_by_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = sample_uniform(&mut rng);
        assert_eq!(deflect(&u, 0.0, 1.0), u);
        for _ in 0..100 {
            let u = sample_uniform(&mut rng);
            let az = TAU * rng.random::<f64>();
            let v = deflect(&u, 0.1, az);
            assert!((geodesic_distance(&u, &v) - 0.1).abs() < 1e-10);
            assert!(norm_err(&v) < 1e-12);
        }
        let eq = deflect(&UnitDirection::north_pole(), FRAC_PI_2, 0.3);
        assert!(eq.z().abs() < 1e-12);
    }

    #[test]
    fn rotation_matrix_is_orthogonal() {
        let r = equatorial_to_galactic();
        let rtr = r.transpose().compose(r);
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((rtr.0[i][j] - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_published_matrix() {
        // Hipparcos / ESA (1997) equatorial → Galactic matrix.
        let published = [
            [-0.054_875_560_4, -0.873_437_090_2, -0.483_835_015_5],
            [0.494_109_427_9, -0.444_829_630_0, 0.746_982_244_5],
            [-0.867_666_149_0, -0.198_076_373_4, 0.455_983_776_2],
        ];
        let r = equatorial_to_galactic();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.0[i][j] - published[i][j]).abs() < 1e-8, "{i},{j}");
            }
        }
    }

    #[test]
    fn galactic_pole_lands_at_ngp() {
        let ngp = convert(
            &UnitDirection::north_pole(),
            FrameOfReference::Galactic,
            FrameOfReference::Equatorial,
        );
        let (ra, dec) = ngp.lon_lat_deg();
        assert!((ra - NGP_RA_DEG).abs() < 1e-9);
        assert!((dec - NGP_DEC_DEG).abs() < 1e-9);
        // Galactic centre sits near RA 266.40°, Dec −28.94°.
        let gc = convert(
            &UnitDirection::from_lon_lat_deg(0.0, 0.0),
            FrameOfReference::Galactic,
            FrameOfReference::Equatorial,
        );
        let (ra, dec) = gc.lon_lat_deg();
        assert!((ra - 266.405).abs() < 0.01 && (dec + 28.936).abs() < 0.01);
    }

    #[test]
    fn frame_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = sample_uniform(&mut rng);
        assert_eq!(
            convert(&u, FrameOfReference::Galactic, FrameOfReference::Galactic),
            u
        );
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u = sample_uniform(&mut rng);
            let g = convert(&u, FrameOfReference::Equatorial, FrameOfReference::Galactic);
            let back = convert(&g, FrameOfReference::Galactic, FrameOfReference::Equatorial);
            let d = ((u.x() - back.x()).powi(2)
                + (u.y() - back.y()).powi(2)
                + (u.z() - back.z()).powi(2))
            .sqrt();
            worst = worst.max(d);
        }
        assert!(worst < 1e-12, "{worst}");
    }
}
