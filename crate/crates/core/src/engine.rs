//! Precomputed state for evaluating one method's statistics on many catalogs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calibration::MethodSpec;
use crate::coverage::Coverage;
use crate::density::{thresholded_scale, zeta_scale_sums, EvaluationMesh, Norm, ThresholdRule};
use crate::error::{Error, Result};
use crate::harmonics::{filter, point_multipoles, HarmonicCoefficients};
use crate::isotropy::{nn_statistic, twopc_counts};
use crate::needlet::{build_frame, coefficients_from_multipoles, make_window, FrameDescriptor, NeedletFrame};
use crate::sphere::UnitDirection;

/// Needlet window parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub bandwidth: f64,
    pub spline_order: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            bandwidth: 2.0,
            spline_order: 15,
        }
    }
}

impl FrameConfig {
    pub fn build(&self, max_scale: usize) -> Result<NeedletFrame> {
        Ok(build_frame(make_window(self.bandwidth, self.spline_order)?, max_scale))
    }
}

/// Evaluates the statistic row of a method (one value per table column).
///
/// Catalogs are expected in the equatorial frame, like the coverage.
pub struct StatisticEngine {
    spec: MethodSpec,
    coverage: Coverage,
    frame_config: FrameConfig,
    frame: Option<NeedletFrame>,
    g_multipoles: Option<HarmonicCoefficients>,
    mesh: Option<EvaluationMesh>,
    deltas: Vec<f64>,
}

impl StatisticEngine {
    pub fn new(spec: MethodSpec, frame_config: FrameConfig, coverage: Coverage) -> Result<Self> {
        spec.validate()?;
        let mut engine = StatisticEngine {
            spec: spec.clone(),
            coverage,
            frame_config,
            frame: None,
            g_multipoles: None,
            mesh: None,
            deltas: Vec::new(),
        };
        match &spec {
            MethodSpec::Multiple { norm, jmax } => {
                if *norm == Norm::L2Star {
                    let frame = frame_config.build(jmax + 1)?;
                    engine.g_multipoles = Some(engine.coverage.multipoles(frame.band_limit()));
                    engine.frame = Some(frame);
                } else {
                    let frame = frame_config.build(*jmax)?;
                    engine.mesh = Some(EvaluationMesh::new(&engine.coverage, frame.band_limit()));
                    engine.frame = Some(frame);
                }
            }
            MethodSpec::Plugin { jmax, .. } => {
                let frame = frame_config.build(*jmax)?;
                engine.mesh = Some(EvaluationMesh::new(&engine.coverage, frame.band_limit()));
                engine.frame = Some(frame);
            }
            MethodSpec::Nn => {}
            MethodSpec::TwoPc { deltas_deg } => {
                engine.deltas = deltas_deg.iter().map(|d| d.to_radians()).collect();
            }
        }
        Ok(engine)
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    pub fn frame_config(&self) -> FrameConfig {
        self.frame_config
    }

    pub fn frame(&self) -> Option<&NeedletFrame> {
        self.frame.as_ref()
    }

    pub fn frame_descriptor(&self) -> Option<FrameDescriptor> {
        self.frame.as_ref().map(|f| f.descriptor())
    }

    pub fn columns(&self) -> Vec<String> {
        self.spec.columns()
    }

    /// The statistic row of `catalog`.
    pub fn row(&self, catalog: &[UnitDirection]) -> Result<Vec<f64>> {
        let n = catalog.len();
        match &self.spec {
            MethodSpec::Multiple { norm, jmax } => {
                if n < 2 {
                    return Err(Error::TooFewEvents { needed: 2, got: n });
                }
                let frame = self.frame.as_ref().expect("frame built");
                if *norm == Norm::L2Star {
                    let g = self.g_multipoles.as_ref().expect("multipoles built");
                    let a = point_multipoles(frame.band_limit(), catalog);
                    let sums = zeta_scale_sums(frame.window(), &a, g, n, jmax + 1);
                    Ok((1..=*jmax)
                        .map(|j| sums[..=j + 1].iter().sum())
                        .collect())
                } else {
                    self.multiple_mesh(frame, catalog, *norm, *jmax)
                }
            }
            MethodSpec::Plugin {
                norm,
                jmax,
                lambda,
                rho,
            } => {
                if n < 2 {
                    return Err(Error::TooFewEvents { needed: 2, got: n });
                }
                let frame = self.frame.as_ref().expect("frame built");
                let rule = ThresholdRule::new(*lambda, *rho)?;
                self.plugin_mesh(frame, catalog, *norm, *jmax, &rule)
            }
            MethodSpec::Nn => Ok(vec![nn_statistic(catalog)?]),
            MethodSpec::TwoPc { .. } => Ok(twopc_counts(catalog, &self.deltas)?
                .into_iter()
                .map(|c| c as f64)
                .collect()),
        }
    }

    /// Mesh distances of `f̂_J`, `J = 1..=jmax`, built by adding one band at a time.
    fn multiple_mesh(
        &self,
        frame: &NeedletFrame,
        catalog: &[UnitDirection],
        norm: Norm,
        jmax: usize,
    ) -> Result<Vec<f64>> {
        let mesh = self.mesh.as_ref().expect("mesh built");
        let nf = catalog.len() as f64;
        let a = point_multipoles(frame.band_limit(), catalog);
        let window = frame.window();
        let mut values = vec![1.0 / (4.0 * PI); mesh.grid().len()];
        let mut out = Vec::with_capacity(jmax);
        for j in 0..=jmax {
            let (lo, hi) = frame.scale(j)?.band();
            let c = filter(&a.resized(hi), |l| window.band_weight(j, l) / nf);
            mesh.plan().synthesis_band_into(&c, lo, hi, &mut values);
            if j >= 1 {
                out.push(mesh.distance_of_values(&values, norm)?);
            }
        }
        Ok(out)
    }

    /// Mesh distances of the thresholded estimate for `J* = 1..=jmax`.
    fn plugin_mesh(
        &self,
        frame: &NeedletFrame,
        catalog: &[UnitDirection],
        norm: Norm,
        jmax: usize,
        rule: &ThresholdRule,
    ) -> Result<Vec<f64>> {
        let mesh = self.mesh.as_ref().expect("mesh built");
        let n = catalog.len();
        let a = point_multipoles(2 * frame.band_limit(), catalog);
        let set = coefficients_from_multipoles(frame, &a, n, &self.coverage, false);
        let mut values = vec![1.0 / (4.0 * PI); mesh.grid().len()];
        let mut out = Vec::with_capacity(jmax);
        for j in 1..=jmax {
            let s = frame.scale(j)?;
            let (c, kept) = thresholded_scale(set.scale(j)?, s, rule, n);
            if kept > 0 {
                let (lo, hi) = s.band();
                mesh.plan().synthesis_band_into(&c, lo, hi, &mut values);
            }
            out.push(mesh.distance_of_values(&values, norm)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::CoverageModel;
    use crate::density::{linear_estimate, lp_distance, plugin_estimate, unbiased_l2};
    use crate::needlet::{empirical_coefficients, reference_coefficients, zeta_coefficients};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn auger() -> Coverage {
        Coverage::new(CoverageModel::auger()).unwrap()
    }

    fn sample(g: &Coverage, n: usize, seed: u64) -> Vec<UnitDirection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| g.sample(&mut rng)).collect()
    }

    #[test]
    fn multiple_rows_match_estimates() {
        let g = auger();
        let cat = sample(&g, 40, 1);
        for norm in [Norm::L1, Norm::L2, Norm::LInf] {
            let e = StatisticEngine::new(MethodSpec::Multiple { norm, jmax: 3 }, FrameConfig::default(), g.clone()).unwrap();
            let row = e.row(&cat).unwrap();
            let frame = e.frame().unwrap();
            let set = empirical_coefficients(frame, &cat, &g).unwrap();
            let mesh = EvaluationMesh::new(&g, frame.band_limit());
            for j in 1..=3 {
                let est = linear_estimate(&set, frame, j).unwrap();
                let want = lp_distance(&est, &mesh, norm).unwrap();
                assert!((row[j - 1] - want).abs() < 1e-9 * want.max(1.0), "{norm} j={j}");
            }
        }
    }

    #[test]
    fn unbiased_rows_match_cubature_sums() {
        let g = auger();
        let cat = sample(&g, 30, 2);
        let e = StatisticEngine::new(
            MethodSpec::Multiple { norm: Norm::L2Star, jmax: 2 },
            FrameConfig::default(),
            g.clone(),
        )
        .unwrap();
        let row = e.row(&cat).unwrap();
        let set = zeta_coefficients(e.frame().unwrap(), &cat, &g).unwrap();
        for j in 1..=2 {
            let want = unbiased_l2(&set, j).unwrap();
            assert!((row[j - 1] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn zeta_relates_to_plain_coefficients() {
        // ζ = (n²(β̂ − β_g)² − S₂)/(n(n−1)), S₂ = Σ(ψ − β_g)² from σ̂² and β̂.
        let g = auger();
        let cat = sample(&g, 25, 3);
        let frame = FrameConfig::default().build(3).unwrap();
        let with = zeta_coefficients(&frame, &cat, &g).unwrap();
        let gm = g.multipoles(frame.band_limit());
        let nf = 25.0;
        for sc in &with.scales {
            let bg = reference_coefficients(frame.scale(sc.scale).unwrap(), &gm);
            for k in 0..sc.beta.len() {
                let b = sc.beta[k];
                let s2 = nf * (sc.sigma2[k] + b * b) - 2.0 * bg[k] * nf * b + nf * bg[k] * bg[k];
                let want = (nf * nf * (b - bg[k]).powi(2) - s2) / (nf * (nf - 1.0));
                let z = sc.zeta.as_ref().unwrap()[k];
                assert!((z - want).abs() < 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn plugin_rows_match_estimates() {
        let g = auger();
        let cat = sample(&g, 60, 4);
        let spec = MethodSpec::Plugin {
            norm: Norm::L2,
            jmax: 3,
            lambda: 0.5,
            rho: 0.3,
        };
        let e = StatisticEngine::new(spec, FrameConfig::default(), g.clone()).unwrap();
        let row = e.row(&cat).unwrap();
        let frame = e.frame().unwrap();
        let set = empirical_coefficients(frame, &cat, &g).unwrap();
        let mesh = EvaluationMesh::new(&g, frame.band_limit());
        let rule = ThresholdRule::new(0.5, 0.3).unwrap();
        for j in 1..=3 {
            let est = plugin_estimate(&set, frame, &rule, Some(j)).unwrap();
            let want = lp_distance(&est, &mesh, Norm::L2).unwrap();
            assert!((row[j - 1] - want).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn baseline_rows() {
        let g = Coverage::uniform();
        let cat = sample(&g, 50, 5);
        let nn = StatisticEngine::new(MethodSpec::Nn, FrameConfig::default(), g.clone()).unwrap();
        assert_eq!(nn.row(&cat).unwrap(), vec![nn_statistic(&cat).unwrap()]);
        let tp = StatisticEngine::new(
            MethodSpec::TwoPc { deltas_deg: vec![5.0, 10.0] },
            FrameConfig::default(),
            g,
        )
        .unwrap();
        let row = tp.row(&cat).unwrap();
        assert_eq!(row.len(), 2);
        assert!(row[0] <= row[1]);
        assert!(nn.frame_descriptor().is_none());
    }
}
