//! Power studies: p-values of calibrated procedures over batches of
//! simulated catalogs, rejection rates and ROC curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{replicate_rng, MethodSpec, NullDistributionTable};
use crate::density::Norm;
use crate::engine::StatisticEngine;
use crate::error::{Error, Result};
use crate::isotropy::{
    multiple_decide, nn_decide, plugin_decide, twopc_decide, twopc_scan_pvalue, NnCalibration,
    TieBreak, TieRule,
};
use crate::sphere::UnitDirection;

/// Stream offset separating tie-breaking draws from catalog draws.
const TIE_STREAM: u64 = 1 << 62;

/// A single decision rule read off one calibrated method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "procedure", rename_all = "snake_case")]
pub enum Procedure {
    Multiple { norm: Norm, jstar: usize },
    Plugin { norm: Norm, jstar: usize },
    Nn,
    #[serde(rename = "twopc")]
    TwoPc { delta_deg: f64 },
    /// Smallest pair-count p-value over the whole separation grid, adjusted.
    #[serde(rename = "twopc_scan")]
    TwoPcScan,
    /// Same scan without adjustment (the naive minimum).
    #[serde(rename = "twopc_scan_naive")]
    TwoPcScanNaive,
}

impl Procedure {
    pub fn label(&self) -> String {
        match self {
            Procedure::Multiple { norm, jstar } => format!("multiple,{norm},{jstar}"),
            Procedure::Plugin { norm, jstar } => format!("plugin,{norm},{jstar}"),
            Procedure::Nn => "nn,,".into(),
            Procedure::TwoPc { delta_deg } => format!("twopc,{delta_deg},"),
            Procedure::TwoPcScan => "twopc_scan,,".into(),
            Procedure::TwoPcScanNaive => "twopc_scan_naive,,".into(),
        }
    }
}

/// A statistic engine together with its null table.
pub struct CalibratedMethod {
    pub engine: StatisticEngine,
    pub table: NullDistributionTable,
}

impl CalibratedMethod {
    pub fn new(engine: StatisticEngine, table: NullDistributionTable, n: usize) -> Result<Self> {
        table.check_compatible(&engine, n)?;
        Ok(CalibratedMethod { engine, table })
    }

    /// Every procedure this table supports.
    pub fn procedures(&self) -> Vec<Procedure> {
        match self.engine.spec() {
            MethodSpec::Multiple { norm, jmax } => (1..=*jmax)
                .map(|j| Procedure::Multiple { norm: *norm, jstar: j })
                .collect(),
            MethodSpec::Plugin { norm, jmax, .. } => (1..=*jmax)
                .map(|j| Procedure::Plugin { norm: *norm, jstar: j })
                .collect(),
            MethodSpec::Nn => vec![Procedure::Nn],
            MethodSpec::TwoPc { deltas_deg } => {
                let mut v: Vec<Procedure> = deltas_deg
                    .iter()
                    .map(|d| Procedure::TwoPc { delta_deg: *d })
                    .collect();
                if deltas_deg.len() > 1 {
                    v.push(Procedure::TwoPcScan);
                    v.push(Procedure::TwoPcScanNaive);
                }
                v
            }
        }
    }

    /// p-value of `procedure` for a statistic row of this method.
    pub fn pvalue(&self, procedure: &Procedure, row: &[f64], tie: TieBreak) -> Result<f64> {
        let t = &self.table;
        let d = match procedure {
            Procedure::Multiple { jstar, .. } => {
                if *jstar == 0 || *jstar > row.len() {
                    return Err(Error::InvalidParameter(format!("J* = {jstar} outside the table")));
                }
                multiple_decide(&row[..*jstar], t, 1.0, tie)?
            }
            Procedure::Plugin { jstar, .. } => {
                if *jstar == 0 || *jstar > row.len() {
                    return Err(Error::InvalidParameter(format!("J* = {jstar} outside the table")));
                }
                plugin_decide(row[jstar - 1], *jstar, t, 1.0, tie)?
            }
            Procedure::Nn => nn_decide(row[0], NnCalibration::Table(t), 1.0, tie)?,
            Procedure::TwoPc { delta_deg } => {
                let col = self.twopc_column(*delta_deg)?;
                twopc_decide(row[col] as u64, col, t, 1.0, tie)?
            }
            Procedure::TwoPcScan | Procedure::TwoPcScanNaive => {
                let counts: Vec<u64> = row.iter().map(|&c| c as u64).collect();
                let s = twopc_scan_pvalue(&counts, t)?;
                return Ok(if *procedure == Procedure::TwoPcScan {
                    s.adjusted_p
                } else {
                    s.min_p
                });
            }
        };
        Ok(d.p_value)
    }

    fn twopc_column(&self, delta_deg: f64) -> Result<usize> {
        match self.engine.spec() {
            MethodSpec::TwoPc { deltas_deg } => deltas_deg
                .iter()
                .position(|d| (d - delta_deg).abs() < 1e-9)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("separation {delta_deg}° is not in the table grid"))
                }),
            _ => Err(Error::TableMismatch("not a TwoPC table".into())),
        }
    }
}

/// p-values of every procedure on every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueMatrix {
    pub procedures: Vec<Procedure>,
    /// `pvalues[p][r]`: procedure `p`, replicate `r`.
    pub pvalues: Vec<Vec<f64>>,
    /// Null replicates behind each procedure's table.
    pub table_replicates: Vec<usize>,
}

impl PValueMatrix {
    pub fn replicates(&self) -> usize {
        self.pvalues.first().map_or(0, Vec::len)
    }

    pub fn find(&self, procedure: &Procedure) -> Option<&[f64]> {
        self.procedures
            .iter()
            .position(|p| p == procedure)
            .map(|i| self.pvalues[i].as_slice())
    }

    pub fn power(&self, procedure: &Procedure, alpha: f64) -> Option<Rejections> {
        self.find(procedure).map(|p| rejections(p, alpha))
    }
}

/// Rejection count at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejections {
    pub rejected: usize,
    pub total: usize,
}

impl Rejections {
    pub fn rate(&self) -> f64 {
        self.rejected as f64 / self.total as f64
    }

    /// Binomial standard error of the rate.
    pub fn std_error(&self) -> f64 {
        let p = self.rate();
        (p * (1.0 - p) / self.total as f64).sqrt()
    }
}

pub fn rejections(pvalues: &[f64], alpha: f64) -> Rejections {
    Rejections {
        rejected: pvalues.iter().filter(|&&p| p <= alpha).count(),
        total: pvalues.len(),
    }
}

/// Levels at which an `R`-replicate table can change its decision:
/// `k/(R+1)` for `k = 0..=R+1`.
pub fn roc_levels(table_replicates: usize) -> Vec<f64> {
    let d = (table_replicates + 1) as f64;
    (0..=table_replicates + 1).map(|k| k as f64 / d).collect()
}

/// `(α, power)` at each level. Nondecreasing in α by construction.
pub fn roc_curve(pvalues: &[f64], levels: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    levels
        .iter()
        .map(|&a| (a, sorted.partition_point(|&p| p <= a) as f64 / n))
        .collect()
}

/// Draws `replicates` catalogs and evaluates every procedure of every
/// method on each.
///
/// Replicate `r` is drawn with [`replicate_rng`]`(seed, r)`; tie-breaking
/// uniforms use an independent stream of the same seed.
pub fn run_study<F>(
    methods: &[CalibratedMethod],
    sampler: F,
    replicates: usize,
    seed: u64,
    tie: TieRule,
) -> Result<PValueMatrix>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<Vec<UnitDirection>> + Sync,
{
    let procs: Vec<(usize, Procedure)> = methods
        .iter()
        .enumerate()
        .flat_map(|(i, m)| m.procedures().into_iter().map(move |p| (i, p)))
        .collect();
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let cat = sampler(&mut rng)?;
            let stats: Vec<Vec<f64>> = methods
                .iter()
                .map(|m| m.engine.row(&cat))
                .collect::<Result<_>>()?;
            let mut tie_rng = replicate_rng(seed, r ^ TIE_STREAM);
            procs
                .iter()
                .map(|(i, p)| {
                    let u = TieBreak::from_rule(tie, &mut tie_rng);
                    methods[*i].pvalue(p, &stats[*i], u)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut pvalues = vec![Vec::with_capacity(replicates); procs.len()];
    for row in rows {
        for (k, p) in row.into_iter().enumerate() {
            pvalues[k].push(p);
        }
    }
    Ok(PValueMatrix {
        table_replicates: procs.iter().map(|(i, _)| methods[*i].table.replicates()).collect(),
        procedures: procs.into_iter().map(|(_, p)| p).collect(),
        pvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::build_table;
    use crate::coverage::Coverage;
    use crate::engine::FrameConfig;

    #[test]
    fn roc_endpoints_and_monotone() {
        let p = vec![0.02, 0.5, 0.5, 0.9, 1.0, 0.3];
        let levels = roc_levels(9);
        let roc = roc_curve(&p, &levels);
        assert_eq!(roc.first().unwrap(), &(0.0, 0.0));
        assert_eq!(roc.last().unwrap(), &(1.0, 1.0));
        assert!(roc.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(rejections(&p, 0.5).rejected, 4);
    }

    #[test]
    fn null_study_rates_and_determinism() {
        let g = Coverage::uniform();
        let n = 30;
        let mk = |spec: MethodSpec| {
            let e = StatisticEngine::new(spec, FrameConfig::default(), g.clone()).unwrap();
            let t = build_table(&e, n, 199, 1).unwrap();
            CalibratedMethod::new(e, t, n).unwrap()
        };
        let methods = vec![
            mk(MethodSpec::Multiple { norm: Norm::L2Star, jmax: 2 }),
            mk(MethodSpec::Nn),
            mk(MethodSpec::TwoPc { deltas_deg: vec![5.0, 10.0] }),
        ];
        let sampler = |rng: &mut rand_chacha::ChaCha8Rng| Ok((0..n).map(|_| g.sample(rng)).collect());
        let a = run_study(&methods, sampler, 200, 7, TieRule::Randomized).unwrap();
        let b = run_study(&methods, sampler, 200, 7, TieRule::Randomized).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.procedures.len(), 2 + 1 + 4);
        assert_eq!(a.replicates(), 200);
        for (proc, p) in a.procedures.iter().zip(&a.pvalues) {
            assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0), "{proc:?}");
            if *proc != Procedure::TwoPcScanNaive {
                // Loose sanity bound on the null rejection rate at 10 %.
                let r = rejections(p, 0.1).rate();
                assert!(r < 0.2, "{proc:?}: {r}");
            }
        }
    }

    #[test]
    fn labels_are_distinct() {
        let p = [
            Procedure::Multiple { norm: Norm::L1, jstar: 2 },
            Procedure::Plugin { norm: Norm::L1, jstar: 2 },
            Procedure::Nn,
            Procedure::TwoPc { delta_deg: 3.0 },
            Procedure::TwoPcScan,
            Procedure::TwoPcScanNaive,
        ];
        let labels: std::collections::HashSet<_> = p.iter().map(Procedure::label).collect();
        assert_eq!(labels.len(), p.len());
    }
}
