//! Monte-Carlo null tables: construction, rank queries, min-p and persistence.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{Coverage, CoverageModel};
use crate::density::Norm;
use crate::engine::{FrameConfig, StatisticEngine};
use crate::error::{Error, Result};
use crate::isotropy::{empirical_pvalue, TieBreak};
use crate::needlet::FrameDescriptor;
use crate::sphere::UnitDirection;

pub const TABLE_MAGIC: &[u8; 8] = b"NEEDLTAB";
pub const TABLE_VERSION: u32 = 1;

/// Smallest replicate count accepted for a decision by default.
pub const MIN_DECISION_REPLICATES: usize = 1000;

/// A test procedure and the parameters that shape its null distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    /// Columns are `J = 1..=jmax`.
    Multiple { norm: Norm, jmax: usize },
    /// Columns are `J* = 1..=jmax`.
    Plugin {
        norm: Norm,
        jmax: usize,
        lambda: f64,
        rho: f64,
    },
    Nn,
    /// One column per separation (degrees).
    #[serde(rename = "twopc")]
    TwoPc { deltas_deg: Vec<f64> },
}

impl MethodSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Multiple { jmax, .. } | MethodSpec::Plugin { jmax, .. } if *jmax == 0 => {
                Err(Error::InvalidParameter("jmax must be at least 1".into()))
            }
            MethodSpec::Plugin { norm: Norm::L2Star, .. } => Err(Error::UnsupportedNorm(
                "2* applies to linear estimates only, not to PlugIn".into(),
            )),
            MethodSpec::Plugin { lambda, rho, .. } => {
                crate::density::ThresholdRule::new(*lambda, *rho).map(|_| ())
            }
            MethodSpec::TwoPc { deltas_deg } => {
                if deltas_deg.is_empty() {
                    return Err(Error::InvalidParameter("empty separation grid".into()));
                }
                if deltas_deg.iter().any(|d| !(0.0..=180.0).contains(d)) {
                    return Err(Error::InvalidParameter("separations must lie in [0, 180] degrees".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MethodSpec::Multiple { norm, .. } => format!("multiple(p={norm})"),
            MethodSpec::Plugin { norm, .. } => format!("plugin(p={norm})"),
            MethodSpec::Nn => "nn".into(),
            MethodSpec::TwoPc { .. } => "twopc".into(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        match self {
            MethodSpec::Multiple { jmax, .. } | MethodSpec::Plugin { jmax, .. } => {
                (1..=*jmax).map(|j| format!("J={j}")).collect()
            }
            MethodSpec::Nn => vec!["W".into()],
            MethodSpec::TwoPc { deltas_deg } => {
                deltas_deg.iter().map(|d| format!("delta={d}deg")).collect()
            }
        }
    }
}

/// Separation grid `start, start + step, …, end` in degrees.
pub fn delta_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let k = ((end - start) / step + 1e-9).floor() as usize;
    (0..=k)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// Metadata stored with every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format_version: u32,
    pub tool_version: String,
    pub method: MethodSpec,
    pub n: usize,
    pub coverage: CoverageModel,
    pub frame: Option<FrameConfig>,
    pub frame_hash: Option<String>,
    pub seed: u64,
    pub replicates: usize,
    pub columns: Vec<String>,
    /// Hash of everything that determines the null law (not the seed).
    pub config_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the method, sample size, coverage and frame.
pub fn config_hash(
    method: &MethodSpec,
    n: usize,
    coverage: &CoverageModel,
    frame_hash: Option<&str>,
) -> String {
    let key = serde_json::json!({
        "method": method,
        "n": n,
        "coverage": coverage,
        "frame_hash": frame_hash,
    });
    sha256_hex(key.to_string().as_bytes())
}

fn frame_hash(desc: Option<&FrameDescriptor>) -> Option<String> {
    desc.map(|d| d.hash())
}

/// Outcome of a min-p query.
#[derive(Debug, Clone, PartialEq)]
pub struct MinP {
    pub component_pvalues: Vec<f64>,
    pub min_p: f64,
    /// Column of the smallest marginal p-value (first on ties).
    pub argmin: usize,
    pub p_value: f64,
}

/// Null statistics, one row per replicate.
#[derive(Debug)]
pub struct NullDistributionTable {
    header: TableHeader,
    data: Vec<f64>,
    sorted: Vec<Vec<f64>>,
    /// For every prefix of columns, the sorted per-replicate minimum of
    /// `#{replicates ≥ own value}`.
    min_ranks: OnceLock<Vec<Vec<usize>>>,
}

impl NullDistributionTable {
    pub fn from_rows(header: TableHeader, rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = header.columns.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::TableFormat(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::TableFormat(format!("row {i} holds a non-finite value")));
            }
            data.extend_from_slice(r);
        }
        Self::from_data(header, data)
    }

    fn from_data(mut header: TableHeader, data: Vec<f64>) -> Result<Self> {
        let cols = header.columns.len();
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::TableFormat("data length is not a multiple of the column count".into()));
        }
        let rows = data.len() / cols;
        if rows == 0 {
            return Err(Error::TableFormat("table has no replicates".into()));
        }
        header.replicates = rows;
        let sorted = (0..cols)
            .map(|c| {
                let mut v: Vec<f64> = (0..rows).map(|r| data[r * cols + c]).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Ok(NullDistributionTable {
            header,
            data,
            sorted,
            min_ranks: OnceLock::new(),
        })
    }

    pub fn header(&self) -> &TableHeader {
        &self.header
    }

    pub fn replicates(&self) -> usize {
        self.header.replicates
    }

    pub fn n_columns(&self) -> usize {
        self.header.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.n_columns();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn sorted_column(&self, c: usize) -> &[f64] {
        &self.sorted[c]
    }

    /// Short identifier derived from the full header.
    pub fn table_id(&self) -> String {
        let json = serde_json::to_string(&self.header).expect("header serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    /// `#{replicates ≥ value}` in column `c`.
    pub fn count_ge(&self, c: usize, value: f64) -> usize {
        let s = &self.sorted[c];
        s.len() - s.partition_point(|&x| x < value)
    }

    /// `#{replicates > value}` in column `c`.
    pub fn count_gt(&self, c: usize, value: f64) -> usize {
        let s = &self.sorted[c];
        s.len() - s.partition_point(|&x| x <= value)
    }

    /// Upper-tail empirical p-value of `value` in column `c`.
    pub fn pvalue(&self, c: usize, value: f64, tie: TieBreak) -> f64 {
        let gt = self.count_gt(c, value);
        let ge = self.count_ge(c, value);
        empirical_pvalue(gt, ge - gt, self.replicates(), tie)
    }

    fn min_ranks(&self) -> &Vec<Vec<usize>> {
        self.min_ranks.get_or_init(|| {
            let cols = self.n_columns();
            let rows = self.replicates();
            let mut current = vec![usize::MAX; rows];
            let mut out = Vec::with_capacity(cols);
            for c in 0..cols {
                for (r, m) in current.iter_mut().enumerate() {
                    *m = (*m).min(self.count_ge(c, self.data[r * cols + c]));
                }
                let mut s = current.clone();
                s.sort_unstable();
                out.push(s);
            }
            out
        })
    }

    /// Westfall-Young min-p over the first `stats.len()` columns.
    ///
    /// The observation's marginal p-values are `(r_j + 1)/(R + 1)`; each
    /// replicate's are `r_ij / R` with `r_ij` counting the replicate itself,
    /// and the combined p-value is `(#{i : minp_i ≤ minp_obs} + 1)/(R + 1)`.
    pub fn min_p(&self, stats: &[f64]) -> MinP {
        let k = stats.len();
        assert!(k >= 1 && k <= self.n_columns(), "column count out of range");
        let big_r = self.replicates();
        let ranks: Vec<usize> = stats.iter().enumerate().map(|(c, &v)| self.count_ge(c, v)).collect();
        let component_pvalues: Vec<f64> = ranks
            .iter()
            .map(|&r| (r + 1) as f64 / (big_r + 1) as f64)
            .collect();
        let (argmin, &r_min) = ranks
            .iter()
            .enumerate()
            .min_by_key(|&(i, r)| (*r, i))
            .expect("non-empty");
        // minp_i ≤ minp_obs  ⇔  m_i (R + 1) ≤ (r_min + 1) R, in integers.
        let lhs_bound = (r_min as u128 + 1) * big_r as u128;
        let sorted = &self.min_ranks()[k - 1];
        let count = sorted.partition_point(|&m| (m as u128) * (big_r as u128 + 1) <= lhs_bound);
        MinP {
            min_p: component_pvalues[argmin],
            component_pvalues,
            argmin,
            p_value: (count + 1) as f64 / (big_r + 1) as f64,
        }
    }

    /// Fails unless the table was built for this engine and sample size.
    pub fn check_compatible(&self, engine: &StatisticEngine, n: usize) -> Result<()> {
        let want = expected_header_hash(engine, n);
        if self.header.n != n {
            return Err(Error::TableMismatch(format!(
                "table was built for n = {}, catalog has n = {n}; run `needlet calibrate` for this sample size",
                self.header.n
            )));
        }
        if self.header.config_hash != want {
            return Err(Error::TableMismatch(format!(
                "table {} was built for a different method, coverage or frame; run `needlet calibrate` with this configuration",
                self.table_id()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.data.len());
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != TABLE_MAGIC {
            return Err(Error::TableFormat("missing table magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != TABLE_VERSION {
            return Err(Error::TableFormat(format!("unsupported table version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(hlen))
            .ok_or_else(|| Error::TableFormat("truncated header".into()))?;
        let header: TableHeader = serde_json::from_slice(body)?;
        let payload = &bytes[20 + hlen..];
        if payload.len() % 8 != 0 {
            return Err(Error::TableFormat("payload is not a whole number of f64 values".into()));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected = header.replicates * header.columns.len();
        if data.len() != expected {
            return Err(Error::TableFormat(format!(
                "header promises {expected} values, payload holds {}",
                data.len()
            )));
        }
        Self::from_data(header, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// One header line of column names, then one line per replicate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replicate,{}", self.header.columns.join(","))?;
        for r in 0..self.replicates() {
            let vals: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{r},{}", vals.join(","))?;
        }
        Ok(())
    }
}

fn expected_header_hash(engine: &StatisticEngine, n: usize) -> String {
    let fh = frame_hash(engine.frame_descriptor().as_ref());
    config_hash(engine.spec(), n, engine.coverage().model(), fh.as_deref())
}

/// Generator for replicate `r` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// `n` draws from the coverage density (equatorial frame).
pub fn sample_null<R: rand::Rng + ?Sized>(coverage: &Coverage, n: usize, rng: &mut R) -> Vec<UnitDirection> {
    (0..n).map(|_| coverage.sample(rng)).collect()
}

/// Builds a table of `replicates` null statistic rows for catalogs of size `n`.
///
/// Replicate `r` uses [`replicate_rng`]`(seed, r)`, so the table does not
/// depend on the number of worker threads.
pub fn build_table(
    engine: &StatisticEngine,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<NullDistributionTable> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("at least one replicate is required".into()));
    }
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let cat = sample_null(engine.coverage(), n, &mut rng);
            engine.row(&cat)
        })
        .collect::<Result<_>>()?;
    let desc = engine.frame_descriptor();
    let fh = frame_hash(desc.as_ref());
    let header = TableHeader {
        format_version: TABLE_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        method: engine.spec().clone(),
        n,
        coverage: engine.coverage().model().clone(),
        frame: engine.frame().map(|_| engine.frame_config()),
        frame_hash: fh.clone(),
        seed,
        replicates,
        columns: engine.columns(),
        config_hash: config_hash(engine.spec(), n, engine.coverage().model(), fh.as_deref()),
    };
    NullDistributionTable::from_rows(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_header(cols: usize) -> TableHeader {
        TableHeader {
            format_version: TABLE_VERSION,
            tool_version: "test".into(),
            method: MethodSpec::Multiple { norm: Norm::L2, jmax: cols },
            n: 10,
            coverage: CoverageModel::Uniform,
            frame: None,
            frame_hash: None,
            seed: 0,
            replicates: 0,
            columns: (1..=cols).map(|j| format!("J={j}")).collect(),
            config_hash: "x".into(),
        }
    }

    fn random_table(rows: usize, cols: usize, seed: u64, discrete: bool) -> NullDistributionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        if discrete {
                            rng.random_range(0..6) as f64
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect()
            })
            .collect();
        NullDistributionTable::from_rows(toy_header(cols), data).unwrap()
    }

    #[test]
    fn ranks_match_linear_scan() {
        let t = random_table(500, 2, 1, true);
        for v in [-1.0, 0.0, 2.0, 2.5, 5.0, 9.0] {
            for c in 0..2 {
                let ge = (0..500).filter(|&r| t.row(r)[c] >= v).count();
                let gt = (0..500).filter(|&r| t.row(r)[c] > v).count();
                assert_eq!(t.count_ge(c, v), ge);
                assert_eq!(t.count_gt(c, v), gt);
            }
        }
        assert_eq!(t.count_ge(0, -1.0), 500);
        assert_eq!(t.count_ge(0, 9.0), 0);
    }

    #[test]
    fn min_p_reduces_to_single_column() {
        for discrete in [false, true] {
            let t = random_table(300, 3, 2, discrete);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..200 {
                let v = if discrete { rng.random_range(0..7) as f64 } else { rng.random::<f64>() * 1.2 };
                let single = t.pvalue(0, v, TieBreak::Conservative);
                assert_eq!(t.min_p(&[v]).p_value, single);
            }
        }
    }

    #[test]
    fn min_p_matches_brute_force() {
        let t = random_table(200, 3, 4, false);
        let big_r = 200.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let obs_min = (0..3)
                .map(|c| ((0..200).filter(|&r| t.row(r)[c] >= obs[c]).count() + 1) as f64 / (big_r + 1.0))
                .fold(f64::INFINITY, f64::min);
            let count = (0..200)
                .filter(|&i| {
                    let m = (0..3)
                        .map(|c| (0..200).filter(|&r| t.row(r)[c] >= t.row(i)[c]).count() as f64 / big_r)
                        .fold(f64::INFINITY, f64::min);
                    m <= obs_min + 1e-12
                })
                .count();
            let r = t.min_p(&obs);
            assert_eq!(r.p_value, (count + 1) as f64 / (big_r + 1.0));
            assert_eq!(r.min_p, obs_min);
        }
    }

    #[test]
    fn extreme_observations() {
        let t = random_table(99, 2, 6, false);
        let low = t.min_p(&[-1.0, -1.0]);
        assert_eq!(low.p_value, 1.0);
        let high = t.min_p(&[-1.0, 5.0]);
        assert!(high.p_value <= 1.0 / 100.0 + 1e-15);
        assert_eq!(high.argmin, 1);
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let t = random_table(50, 3, 7, false);
        let bytes = t.to_bytes();
        let back = NullDistributionTable::from_bytes(&bytes).unwrap();
        assert_eq!(back.header(), t.header());
        assert_eq!(back.to_bytes(), bytes);
        assert!(NullDistributionTable::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NullDistributionTable::from_bytes(&bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = random_table(20, 2, 8, false);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "replicate,J=1,J=2");
        for (r, line) in lines.enumerate() {
            let vals: Vec<f64> = line.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
            assert_eq!(vals, t.row(r));
        }
    }

    #[test]
    fn delta_grid_endpoints() {
        let g = delta_grid(4.0, 14.0, 0.1);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 4.0);
        assert_eq!(g[100], 14.0);
        assert_eq!(g[67], 10.7);
    }

    #[test]
    fn spec_validation() {
        assert!(MethodSpec::Multiple { norm: Norm::L1, jmax: 0 }.validate().is_err());
        assert!(MethodSpec::Plugin { norm: Norm::L2Star, jmax: 2, lambda: 1.0, rho: 1.0 }
            .validate()
            .is_err());
        assert!(MethodSpec::TwoPc { deltas_deg: vec![] }.validate().is_err());
        assert!(MethodSpec::TwoPc { deltas_deg: vec![200.0] }.validate().is_err());
        let js = serde_json::to_string(&MethodSpec::TwoPc { deltas_deg: vec![10.0] }).unwrap();
        assert_eq!(js, r#"{"method":"twopc","deltas_deg":[10.0]}"#);
    }
}
