//! Distribution shift between year cohorts.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedDataset, FeatureKind};
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise Euclidean distance over the pooled cohorts.
    MedianHeuristic,
    Fixed { sigma: f64 },
}

/// Gaussian RBF kernel `exp(-|x - y|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub bandwidth: Bandwidth,
}

impl Default for RbfKernel {
    fn default() -> Self {
        RbfKernel {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Square root of the clamped unbiased MMD² estimate.
    pub mmd: f64,
    /// The unbiased estimate before clamping; may be slightly negative.
    pub mmd2_unbiased: f64,
    pub sigma: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_cohorts<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<usize> {
    for side in [a.len(), b.len()] {
        if side < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: side });
        }
    }
    let d = a[0].as_ref().len();
    if let Some(bad) = a.iter().chain(b).map(|r| r.as_ref().len()).find(|&l| l != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad });
    }
    Ok(d)
}

/// Median of all pairwise distances in the pooled sample. Falls back to 1
/// when more than half the pairs coincide.
pub fn median_heuristic<R: AsRef<[f64]> + Sync>(a: &[R], b: &[R]) -> f64 {
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(AsRef::as_ref).collect();
    let mut dists: Vec<f64> = (0..pooled.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let p = &pooled;
            (i + 1..p.len()).map(move |j| sq_dist(p[i], p[j]).sqrt())
        })
        .collect();
    if dists.is_empty() {
        return 1.0;
    }
    let m = crate::dataset::median(&mut dists);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Unbiased U-statistic estimate of the squared MMD, clamped at zero and
/// square-rooted.
pub fn mmd<R: AsRef<[f64]> + Sync>(a: &[R], b: &[R], kernel: RbfKernel) -> Result<MmdEstimate> {
    check_cohorts(a, b)?;
    let sigma = match kernel.bandwidth {
        Bandwidth::MedianHeuristic => median_heuristic(a, b),
        Bandwidth::Fixed { sigma } if sigma > 0.0 => sigma,
        Bandwidth::Fixed { sigma } => {
            return Err(Error::InvalidRequest(format!("bandwidth must be positive, got {sigma}")))
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();

    // per-row partial sums in parallel, reduced sequentially so the result
    // does not depend on scheduling
    let within = |rows: &[R]| -> f64 {
        let partial: Vec<f64> = (0..rows.len())
            .into_par_iter()
            .map(|i| {
                (i + 1..rows.len())
                    .map(|j| k(rows[i].as_ref(), rows[j].as_ref()))
                    .sum::<f64>()
            })
            .collect();
        2.0 * partial.iter().sum::<f64>()
    };
    let cross: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| b.iter().map(|y| k(a[i].as_ref(), y.as_ref())).sum::<f64>())
        .collect();

    let (m, n) = (a.len() as f64, b.len() as f64);
    let mmd2 = within(a) / (m * (m - 1.0)) + within(b) / (n * (n - 1.0)) - 2.0 * cross.iter().sum::<f64>() / (m * n);
    Ok(MmdEstimate {
        mmd: mmd2.max(0.0).sqrt(),
        mmd2_unbiased: mmd2,
        sigma,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.iter().copied().filter(|v| v.is_finite()).collect();
    let mut b: Vec<f64> = b.iter().copied().filter(|v| v.is_finite()).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic two-sided p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n_a: usize, n_b: usize) -> f64 {
    let en = ((n_a * n_b) as f64 / (n_a + n_b) as f64).sqrt();
    kolmogorov_sf((en + 0.12 + 0.11 / en) * d).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShift {
    pub feature: String,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// KS test on every column.
pub fn per_feature_shift<R: AsRef<[f64]>>(a: &[R], b: &[R], names: &[String]) -> Result<Vec<FeatureShift>> {
    let d = check_cohorts(a, b)?;
    if names.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: names.len(),
        });
    }
    Ok((0..d)
        .map(|j| {
            let col_a: Vec<f64> = a.iter().map(|r| r.as_ref()[j]).collect();
            let col_b: Vec<f64> = b.iter().map(|r| r.as_ref()[j]).collect();
            let statistic = ks_statistic(&col_a, &col_b);
            let p_value = ks_p_value(statistic, col_a.len(), col_b.len());
            FeatureShift {
                feature: names[j].clone(),
                statistic,
                p_value,
                significant: p_value < SIGNIFICANCE_LEVEL,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub family: String,
    pub bandwidth_rule: Bandwidth,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub cohort_a: BTreeSet<i32>,
    pub cohort_b: BTreeSet<i32>,
    pub n_a: usize,
    pub n_b: usize,
    pub mmd: f64,
    pub kernel: KernelDescriptor,
    /// Which columns the per-feature tests covered.
    pub tested_columns: String,
    pub per_feature: Vec<FeatureShift>,
    pub significant: usize,
    pub fraction_significant: f64,
}

impl DriftReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// MMD over the full encoded feature space and KS tests over the encoded
/// numeric (non one-hot) columns, comparing two sets of years.
pub fn drift_report(
    data: &EncodedDataset,
    cohort_a: &BTreeSet<i32>,
    cohort_b: &BTreeSet<i32>,
    kernel: RbfKernel,
) -> Result<DriftReport> {
    let pick = |years: &BTreeSet<i32>| -> Vec<&[f64]> {
        data.samples
            .iter()
            .filter(|s| years.contains(&s.year))
            .map(|s| s.x.as_slice())
            .collect()
    };
    let (a, b) = (pick(cohort_a), pick(cohort_b));
    let estimate = mmd(&a, &b, kernel)?;

    let numeric: Vec<usize> = (0..data.n_features())
        .filter(|&j| data.feature_kinds[j] == FeatureKind::Numeric)
        .collect();
    let project = |rows: &[&[f64]]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| numeric.iter().map(|&j| r[j]).collect()).collect()
    };
    let names: Vec<String> = numeric.iter().map(|&j| data.feature_names[j].clone()).collect();
    let per_feature = if numeric.is_empty() {
        Vec::new()
    } else {
        per_feature_shift(&project(&a), &project(&b), &names)?
    };
    let significant = per_feature.iter().filter(|f| f.significant).count();
    let fraction_significant = if per_feature.is_empty() {
        0.0
    } else {
        significant as f64 / per_feature.len() as f64
    };
    Ok(DriftReport {
        cohort_a: cohort_a.clone(),
        cohort_b: cohort_b.clone(),
        n_a: a.len(),
        n_b: b.len(),
        mmd: estimate.mmd,
        kernel: KernelDescriptor {
            family: "rbf".into(),
            bandwidth_rule: kernel.bandwidth,
            sigma: estimate.sigma,
        },
        tested_columns: "encoded numeric columns (one-hot columns excluded)".into(),
        per_feature,
        significant,
        fraction_significant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

/// Project onto the top two principal components of the centred data.
/// Each axis is signed so its largest-magnitude entry is positive.
pub fn project_2d<R: AsRef<[f64]>>(rows: &[R]) -> Result<Projection> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let d = rows[0].as_ref().len();
    if d < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: d });
    }
    if let Some(bad) = rows.iter().map(|r| r.as_ref().len()).find(|&l| l != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad });
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let axes = [axis(0), axis(1)];
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let dot = |ax: &[f64]| row.iter().zip(ax).map(|(a, b)| a * b).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect();
    Ok(Projection {
        mean,
        explained_variance: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
        axes,
        coords,
    })
}

/// `ward, year, pc1, pc2`
pub fn write_projection_csv<W: Write>(data: &EncodedDataset, projection: &Projection, writer: W) -> Result<()> {
    if projection.coords.len() != data.len() {
        return Err(Error::LengthMismatch(projection.coords.len(), data.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ward", "year", "pc1", "pc2"])?;
    for (s, c) in data.samples.iter().zip(&projection.coords) {
        w.write_record([s.ward.clone(), s.year.to_string(), c[0].to_string(), c[1].to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
