//! Test statistics and calibrated decisions for the four procedures.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{MethodSpec, NullDistributionTable};
use crate::density::Norm;
use crate::error::{Error, Result};
use crate::sphere::{geodesic_distance, UnitDirection};

/// `max(1, ⌊½ log₂(n / ln n)⌋)`, natural logarithm.
pub fn jstar(n: usize) -> usize {
    if n < 3 {
        return 1;
    }
    let nf = n as f64;
    let j = (0.5 * (nf / nf.ln()).log2()).floor();
    if j < 1.0 {
        1
    } else {
        j as usize
    }
}

/// How ties between an observed statistic and null replicates are broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties count against the observation: `(#≥ + 1)/(R + 1)`.
    #[default]
    Conservative,
    /// `(#> + U·(#= + 1))/(R + 1)` with `U` uniform on (0, 1).
    Randomized,
}

/// A tie rule with its uniform draw resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TieBreak {
    Conservative,
    Randomized(f64),
}

impl TieBreak {
    pub fn from_rule<R: rand::Rng + ?Sized>(rule: TieRule, rng: &mut R) -> Self {
        match rule {
            TieRule::Conservative => TieBreak::Conservative,
            TieRule::Randomized => TieBreak::Randomized(rng.random::<f64>()),
        }
    }
}

/// Empirical upper-tail p-value from tail counts among `total` replicates.
pub fn empirical_pvalue(greater: usize, equal: usize, total: usize, tie: TieBreak) -> f64 {
    let denom = (total + 1) as f64;
    match tie {
        TieBreak::Conservative => (greater + equal + 1) as f64 / denom,
        TieBreak::Randomized(u) => (greater as f64 + u * (equal + 1) as f64) / denom,
    }
}

/// `φ(y) = 1 − ((1 + cos y)/2)^{n−1}`, the null CDF of a nearest-neighbour distance.
pub fn nn_phi(y: f64, n: usize) -> f64 {
    1.0 - ((1.0 + y.cos()) / 2.0).powi(n as i32 - 1)
}

/// Nearest-neighbour distance of every event.
pub fn nearest_neighbour_distances(catalog: &[UnitDirection]) -> Vec<f64> {
    let n = catalog.len();
    let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = catalog[i].dot(&catalog[j]);
            if d > best[i].0 {
                best[i] = (d, j);
            }
            if d > best[j].0 {
                best[j] = (d, i);
            }
        }
    }
    best.iter()
        .enumerate()
        .map(|(i, &(_, j))| geodesic_distance(&catalog[i], &catalog[j]))
        .collect()
}

/// Wilcoxon-type statistic `W = √(12n)(½ − (1/n) Σ φ(Y_i))`; large under clustering.
pub fn nn_statistic(catalog: &[UnitDirection]) -> Result<f64> {
    let n = catalog.len();
    if n < 2 {
        return Err(Error::TooFewEvents { needed: 2, got: n });
    }
    let mean = nearest_neighbour_distances(catalog)
        .iter()
        .map(|&y| nn_phi(y, n))
        .sum::<f64>()
        / n as f64;
    Ok((12.0 * n as f64).sqrt() * (0.5 - mean))
}

/// Upper-tail standard normal p-value of `W`.
pub fn nn_asymptotic_pvalue(w: f64) -> f64 {
    Normal::standard().sf(w)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=std::f64::consts::PI).contains(&delta) {
        return Err(Error::InvalidParameter(format!(
            "pair separation must lie in [0, π], got {delta}"
        )));
    }
    Ok(())
}

/// Pair separations not exceeding `max_delta`, via a colatitude sweep.
fn close_pair_distances(catalog: &[UnitDirection], max_delta: f64) -> Vec<f64> {
    let mut order: Vec<(f64, usize)> = catalog
        .iter()
        .enumerate()
        .map(|(i, u)| (u.colatitude(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    // |Δθ| never exceeds the geodesic distance; the slack absorbs rounding.
    let reach = max_delta + 1e-9;
    let mut out = Vec::new();
    for a in 0..order.len() {
        let (ta, ia) = order[a];
        for &(tb, ib) in &order[a + 1..] {
            if tb - ta > reach {
                break;
            }
            let d = geodesic_distance(&catalog[ia], &catalog[ib]);
            if d <= max_delta {
                out.push(d);
            }
        }
    }
    out
}

/// `ŵ_n(δ₀) = #{i < j : Δ(X_i, X_j) ≤ δ₀}`.
pub fn twopc_statistic(catalog: &[UnitDirection], delta: f64) -> Result<u64> {
    check_delta(delta)?;
    Ok(close_pair_distances(catalog, delta).len() as u64)
}

/// Pair counts at every separation of `deltas` (radians).
pub fn twopc_counts(catalog: &[UnitDirection], deltas: &[f64]) -> Result<Vec<u64>> {
    for &d in deltas {
        check_delta(d)?;
    }
    let max = deltas.iter().copied().fold(0.0, f64::max);
    let mut d = close_pair_distances(catalog, max);
    d.sort_by(f64::total_cmp);
    Ok(deltas
        .iter()
        .map(|&x| d.partition_point(|&v| v <= x) as u64)
        .collect())
}

/// Outcome of a calibrated test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub method: String,
    pub norm: Option<Norm>,
    pub jstar: Option<usize>,
    pub statistics: Vec<f64>,
    /// Per-scale (or per-separation) marginal p-values, when several.
    pub component_pvalues: Vec<f64>,
    /// Index (1-based scale, or grid position) with the smallest marginal p-value.
    pub fired: Option<usize>,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub table_id: Option<String>,
    pub config_hash: Option<String>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("level must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn decision(
    table: &NullDistributionTable,
    method: &str,
    norm: Option<Norm>,
    jstar: Option<usize>,
    statistics: Vec<f64>,
    component_pvalues: Vec<f64>,
    fired: Option<usize>,
    p_value: f64,
    alpha: f64,
) -> TestDecision {
    TestDecision {
        method: method.to_string(),
        norm,
        jstar,
        statistics,
        component_pvalues,
        fired,
        p_value,
        alpha,
        reject: p_value <= alpha,
        table_id: Some(table.table_id()),
        config_hash: Some(table.header().config_hash.clone()),
    }
}

/// Min-p combination of the per-scale statistics `j = 1..=J*` against a
/// Multiple table.
///
/// With a single scale this is the plain upper-tail test of that scale.
pub fn multiple_decide(
    stats: &[f64],
    table: &NullDistributionTable,
    alpha: f64,
    tie: TieBreak,
) -> Result<TestDecision> {
    check_alpha(alpha)?;
    let norm = match &table.header().method {
        MethodSpec::Multiple { norm, .. } => *norm,
        other => {
            return Err(Error::TableMismatch(format!(
                "expected a Multiple table, got {}",
                other.label()
            )))
        }
    };
    let k = stats.len();
    if k == 0 || k > table.n_columns() {
        return Err(Error::TableMismatch(format!(
            "{k} scales requested but the table holds {}",
            table.n_columns()
        )));
    }
    if k == 1 {
        let p = table.pvalue(0, stats[0], tie);
        return Ok(decision(table, "multiple", Some(norm), Some(1), stats.to_vec(), vec![p], Some(1), p, alpha));
    }
    let r = table.min_p(stats);
    Ok(decision(
        table,
        "multiple",
        Some(norm),
        Some(k),
        stats.to_vec(),
        r.component_pvalues,
        Some(r.argmin + 1),
        r.p_value,
        alpha,
    ))
}

fn scalar_column(table: &NullDistributionTable, column: usize) -> Result<()> {
    if column >= table.n_columns() {
        return Err(Error::TableMismatch(format!(
            "column {column} requested but the table holds {}",
            table.n_columns()
        )));
    }
    Ok(())
}

/// Upper-tail test of the plug-in distance at `J*` (column `J* − 1`).
pub fn plugin_decide(
    stat: f64,
    jstar: usize,
    table: &NullDistributionTable,
    alpha: f64,
    tie: TieBreak,
) -> Result<TestDecision> {
    check_alpha(alpha)?;
    let norm = match &table.header().method {
        MethodSpec::Plugin { norm, .. } => *norm,
        other => {
            return Err(Error::TableMismatch(format!(
                "expected a PlugIn table, got {}",
                other.label()
            )))
        }
    };
    if jstar == 0 {
        return Err(Error::InvalidParameter("J* must be at least 1".into()));
    }
    scalar_column(table, jstar - 1)?;
    let p = table.pvalue(jstar - 1, stat, tie);
    Ok(decision(table, "plugin", Some(norm), Some(jstar), vec![stat], vec![], None, p, alpha))
}

/// NN calibration source.
pub enum NnCalibration<'a> {
    Table(&'a NullDistributionTable),
    /// Standard normal tail; only valid for uniform coverage.
    Asymptotic { uniform_coverage: bool },
}

/// One-sided NN test rejecting for large `W`.
pub fn nn_decide(w: f64, calibration: NnCalibration<'_>, alpha: f64, tie: TieBreak) -> Result<TestDecision> {
    check_alpha(alpha)?;
    match calibration {
        NnCalibration::Asymptotic { uniform_coverage } => {
            if !uniform_coverage {
                return Err(Error::AsymptoticRequiresUniform);
            }
            let p = nn_asymptotic_pvalue(w);
            Ok(TestDecision {
                method: "nn".into(),
                norm: None,
                jstar: None,
                statistics: vec![w],
                component_pvalues: vec![],
                fired: None,
                p_value: p,
                alpha,
                reject: p <= alpha,
                table_id: None,
                config_hash: None,
            })
        }
        NnCalibration::Table(table) => {
            if table.header().method != MethodSpec::Nn {
                return Err(Error::TableMismatch(format!(
                    "expected an NN table, got {}",
                    table.header().method.label()
                )));
            }
            let p = table.pvalue(0, w, tie);
            Ok(decision(table, "nn", None, None, vec![w], vec![], None, p, alpha))
        }
    }
}

/// Upper-tail pair-count test at the table's separation `column`.
pub fn twopc_decide(
    count: u64,
    column: usize,
    table: &NullDistributionTable,
    alpha: f64,
    tie: TieBreak,
) -> Result<TestDecision> {
    check_alpha(alpha)?;
    if !matches!(table.header().method, MethodSpec::TwoPc { .. }) {
        return Err(Error::TableMismatch(format!(
            "expected a TwoPC table, got {}",
            table.header().method.label()
        )));
    }
    scalar_column(table, column)?;
    let p = table.pvalue(column, count as f64, tie);
    Ok(decision(table, "twopc", None, None, vec![count as f64], vec![], None, p, alpha))
}

/// Result of scanning pair counts over a separation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Smallest marginal p-value over the grid ("naive").
    pub min_p: f64,
    /// Separation (degrees) where it occurs.
    pub argmin_deg: f64,
    /// Same scan applied to every null replicate.
    pub adjusted_p: f64,
    pub pvalues: Vec<f64>,
}

/// Scans the TwoPC table's separation grid for the most significant count.
pub fn twopc_scan_pvalue(counts: &[u64], table: &NullDistributionTable) -> Result<ScanResult> {
    let deltas = match &table.header().method {
        MethodSpec::TwoPc { deltas_deg } => deltas_deg.clone(),
        other => {
            return Err(Error::TableMismatch(format!(
                "expected a TwoPC table, got {}",
                other.label()
            )))
        }
    };
    if counts.len() != deltas.len() {
        return Err(Error::TableMismatch(format!(
            "{} counts for a grid of {} separations",
            counts.len(),
            deltas.len()
        )));
    }
    let stats: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    if stats.len() == 1 {
        let p = table.pvalue(0, stats[0], TieBreak::Conservative);
        return Ok(ScanResult {
            min_p: p,
            argmin_deg: deltas[0],
            adjusted_p: p,
            pvalues: vec![p],
        });
    }
    let r = table.min_p(&stats);
    Ok(ScanResult {
        min_p: r.min_p,
        argmin_deg: deltas[r.argmin],
        adjusted_p: r.p_value,
        pvalues: r.component_pvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{sample_uniform, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn catalog(n: usize, seed: u64) -> Vec<UnitDirection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_uniform(&mut rng)).collect()
    }

    #[test]
    fn jstar_values() {
        assert_eq!(jstar(69), 2);
        assert_eq!(jstar(100), 2);
        assert_eq!(jstar(2), 1);
        assert_eq!(jstar(25), 1);
        assert_eq!(jstar(400), 3);
    }

    #[test]
    fn phi_endpoints() {
        for n in [2, 10, 100] {
            assert_eq!(nn_phi(0.0, n), 0.0);
            assert!((nn_phi(std::f64::consts::PI, n) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nn_statistic_cases() {
        assert!(nn_statistic(&catalog(1, 0)).is_err());
        // Two antipodal points: φ(π) = 1 each.
        let u = UnitDirection::north_pole();
        let w = nn_statistic(&[u, u.antipode()]).unwrap();
        assert!((w - 24f64.sqrt() * (0.5 - 1.0)).abs() < 1e-12);
        let cat = catalog(50, 1);
        let r = Rotation::about_axis(&UnitDirection::from_lon_lat_deg(30.0, 10.0), 0.7);
        let rot: Vec<_> = cat.iter().map(|u| u.rotate(&r)).collect();
        assert!((nn_statistic(&cat).unwrap() - nn_statistic(&rot).unwrap()).abs() < 1e-9);
        let brute: Vec<f64> = (0..cat.len())
            .map(|i| {
                (0..cat.len())
                    .filter(|&j| j != i)
                    .map(|j| geodesic_distance(&cat[i], &cat[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        assert_eq!(brute, nearest_neighbour_distances(&cat));
    }

    #[test]
    fn asymptotic_pvalues() {
        assert!((nn_asymptotic_pvalue(0.0) - 0.5).abs() < 1e-15);
        assert!((nn_asymptotic_pvalue(1.6449) - 0.05).abs() < 1e-4);
        assert!(nn_decide(0.0, NnCalibration::Asymptotic { uniform_coverage: false }, 0.05, TieBreak::Conservative).is_err());
        let d = nn_decide(1.7, NnCalibration::Asymptotic { uniform_coverage: true }, 0.05, TieBreak::Conservative).unwrap();
        assert!(d.reject);
    }

    fn brute_pairs(cat: &[UnitDirection], delta: f64) -> u64 {
        let mut c = 0;
        for i in 0..cat.len() {
            for j in i + 1..cat.len() {
                if geodesic_distance(&cat[i], &cat[j]) <= delta {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn pair_counts_match_brute_force() {
        for seed in 0..100 {
            let cat = catalog(60, seed);
            let deltas = [0.0, 0.05, 0.1745, 0.5, 3.0];
            let fast = twopc_counts(&cat, &deltas).unwrap();
            for (d, c) in deltas.iter().zip(&fast) {
                assert_eq!(*c, brute_pairs(&cat, *d));
                assert_eq!(*c, twopc_statistic(&cat, *d).unwrap());
            }
        }
        let cat = catalog(30, 7);
        assert_eq!(twopc_statistic(&cat, std::f64::consts::PI).unwrap(), 30 * 29 / 2);
        assert!(twopc_statistic(&cat, -0.1).is_err());
    }

    #[test]
    fn pair_count_boundary_and_rotation() {
        let a = UnitDirection::from_lon_lat_deg(0.0, 0.0);
        let b = UnitDirection::from_lon_lat_deg(1.0, 0.0);
        let c = UnitDirection::from_lon_lat_deg(0.5, 0.5);
        assert_eq!(twopc_statistic(&[a, b, c], 2f64.to_radians()).unwrap(), 3);
        let d = geodesic_distance(&a, &b);
        assert_eq!(twopc_statistic(&[a, b], d).unwrap(), 1);
        let cat = catalog(80, 3);
        let r = Rotation::about_axis(&UnitDirection::from_lon_lat_deg(100.0, -20.0), 2.1);
        let rot: Vec<_> = cat.iter().map(|u| u.rotate(&r)).collect();
        let delta = 0.3;
        // Rotation moves distances by rounding only; compare away from ties.
        assert_eq!(brute_pairs(&cat, delta), twopc_statistic(&rot, delta).unwrap());
    }

    #[test]
    fn empirical_pvalue_rules() {
        assert_eq!(empirical_pvalue(0, 0, 99, TieBreak::Conservative), 0.01);
        assert_eq!(empirical_pvalue(99, 0, 99, TieBreak::Conservative), 1.0);
        assert_eq!(empirical_pvalue(3, 2, 99, TieBreak::Randomized(0.0)), 0.03);
        assert!((empirical_pvalue(3, 2, 99, TieBreak::Randomized(1.0)) - 0.06).abs() < 1e-15);
    }
}
