//! Training-set mitigations keyed to one sensitive feature.
//!
//! OverSampling, MixUp and Perturbation enlarge the minority group until
//! both groups are the same size. Because the target is continuous, the
//! per-class resampling is done per target quartile: the minority's
//! quartile histogram is scaled up, not reshaped. ReWeight leaves the data
//! alone and returns per-sample weights.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedDataset, FeatureKind, Sample};
use crate::error::{Error, Result};
use crate::fairness::{self, GroupAssignment, Level};
use crate::regressors::WeightVector;
use crate::seed;

pub const DEFAULT_MIXUP_ALPHA: f64 = 0.2;
pub const DEFAULT_PERTURB_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MitigationMethod {
    Oversample,
    Mixup { alpha: f64 },
    Perturb { sigma: f64 },
    Reweight,
}

impl MitigationMethod {
    /// Column label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            MitigationMethod::Oversample => "OS",
            MitigationMethod::Mixup { .. } => "MU",
            MitigationMethod::Perturb { .. } => "Pert.",
            MitigationMethod::Reweight => "RW",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MitigationMethod::Oversample => "oversample",
            MitigationMethod::Mixup { .. } => "mixup",
            MitigationMethod::Perturb { .. } => "perturb",
            MitigationMethod::Reweight => "reweight",
        }
    }

    pub fn standard() -> [MitigationMethod; 4] {
        [
            MitigationMethod::Oversample,
            MitigationMethod::Mixup {
                alpha: DEFAULT_MIXUP_ALPHA,
            },
            MitigationMethod::Perturb {
                sigma: DEFAULT_PERTURB_SIGMA,
            },
            MitigationMethod::Reweight,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MitigationMethod::Mixup { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidRequest(format!("MixUp alpha must be positive, got {alpha}")))
            }
            MitigationMethod::Perturb { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidRequest(format!("perturbation sigma must be non-negative, got {sigma}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationSpec {
    pub method: MitigationMethod,
    pub feature: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum SampleOrigin {
    Original,
    Duplicated { source: usize },
    Synthetic { first: usize, second: usize, lambda: f64 },
}

impl SampleOrigin {
    pub fn tag(&self) -> &'static str {
        match self {
            SampleOrigin::Original => "original",
            SampleOrigin::Duplicated { .. } => "duplicated",
            SampleOrigin::Synthetic { .. } => "synthetic",
        }
    }
}

/// A mitigated training set ready for [`crate::regressors::train`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTrainSet {
    pub data: EncodedDataset,
    pub weights: Option<WeightVector>,
    /// One entry per sample of `data`.
    pub origin: Vec<SampleOrigin>,
    /// Group membership over `data`, synthetic rows included.
    pub groups: GroupAssignment,
}

impl AugmentedTrainSet {
    /// Encoded features plus `__ward, __year, __target, __weight, __origin`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.data.feature_names.clone();
        header.extend(["__ward", "__year", "__target", "__weight", "__origin"].map(String::from));
        w.write_record(&header)?;
        for (i, s) in self.data.samples.iter().enumerate() {
            let mut rec: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            rec.push(s.ward.clone());
            rec.push(s.year.to_string());
            rec.push(s.y.to_string());
            rec.push(self.weights.as_ref().map_or(1.0, |w| w.as_slice()[i]).to_string());
            rec.push(self.origin[i].tag().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn require_groups(train: &EncodedDataset, groups: &GroupAssignment) -> Result<()> {
    if groups.n() != train.len() {
        return Err(Error::LengthMismatch(groups.n(), train.len()));
    }
    for (side, idx) in [("Low", &groups.low), ("High", &groups.high)] {
        if idx.is_empty() {
            return Err(Error::EmptyGroup {
                feature: groups.feature.clone(),
                side,
            });
        }
    }
    Ok(())
}

/// Quartile stratum (0..4) of every training target.
fn target_strata(train: &EncodedDataset) -> Vec<usize> {
    let mut sorted = train.targets();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let cuts = [quantile(0.25), quantile(0.5), quantile(0.75)];
    train
        .samples
        .iter()
        .map(|s| cuts.iter().filter(|&&c| s.y > c).count())
        .collect()
}

/// Minority members bucketed by stratum, and how many new samples each
/// stratum receives so the group sizes end up equal.
fn allocation(train: &EncodedDataset, groups: &GroupAssignment) -> (Level, Vec<Vec<usize>>, Vec<usize>) {
    let minority = groups.minority();
    let members = groups.indices(minority);
    let majority_n = groups.n() - members.len();
    let deficit = majority_n - members.len();

    let strata = target_strata(train);
    let mut buckets = vec![Vec::new(); 4];
    for &i in members {
        buckets[strata[i]].push(i);
    }
    // largest-remainder apportionment of the deficit
    let n_min = members.len() as f64;
    let exact: Vec<f64> = buckets.iter().map(|b| deficit as f64 * b.len() as f64 / n_min).collect();
    let mut extra: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = deficit - extra.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for s in order {
        if left == 0 {
            break;
        }
        if !buckets[s].is_empty() {
            extra[s] += 1;
            left -= 1;
        }
    }
    (minority, buckets, extra)
}

fn finish(
    train: &EncodedDataset,
    groups: &GroupAssignment,
    minority: Level,
    new_samples: Vec<Sample>,
    new_origin: Vec<SampleOrigin>,
) -> AugmentedTrainSet {
    let n = train.len();
    let mut samples = train.samples.clone();
    samples.extend(new_samples);
    let mut origin = vec![SampleOrigin::Original; n];
    origin.extend(new_origin);
    let mut low = groups.low.clone();
    let mut high = groups.high.clone();
    let added = n..samples.len();
    match minority {
        Level::Low => low.extend(added),
        Level::High => high.extend(added),
    }
    AugmentedTrainSet {
        data: train.with_samples(samples),
        weights: None,
        origin,
        groups: GroupAssignment {
            feature: groups.feature.clone(),
            threshold: groups.threshold,
            low,
            high,
        },
    }
}

/// Duplicate minority samples (with replacement, per target quartile) until
/// both groups have the same size.
pub fn oversample(train: &EncodedDataset, groups: &GroupAssignment, seed: u64) -> Result<AugmentedTrainSet> {
    require_groups(train, groups)?;
    let (minority, buckets, extra) = allocation(train, groups);
    let mut rng = seed::rng(seed);
    let mut samples = Vec::new();
    let mut origin = Vec::new();
    for (bucket, &count) in buckets.iter().zip(&extra) {
        for _ in 0..count {
            let source = bucket[rng.random_range(0..bucket.len())];
            samples.push(train.samples[source].clone());
            origin.push(SampleOrigin::Duplicated { source });
        }
    }
    Ok(finish(train, groups, minority, samples, origin))
}

fn mix(a: f64, b: f64, lambda: f64) -> f64 {
    // clamp guards the convex hull against rounding
    (lambda * a + (1.0 - lambda) * b).clamp(a.min(b), a.max(b))
}

/// Synthesize minority samples as convex combinations of two minority
/// parents from the same target quartile, `lambda ~ Beta(alpha, alpha)`.
pub fn mixup(train: &EncodedDataset, groups: &GroupAssignment, alpha: f64, seed: u64) -> Result<AugmentedTrainSet> {
    require_groups(train, groups)?;
    MitigationMethod::Mixup { alpha }.validate()?;
    if groups.indices(groups.minority()).len() < 2 {
        return Err(Error::SingletonGroup(groups.feature.clone()));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidRequest(e.to_string()))?;
    let (minority, buckets, extra) = allocation(train, groups);
    let mut rng = seed::rng(seed);
    let mut samples = Vec::new();
    let mut origin = Vec::new();
    for (bucket, &count) in buckets.iter().zip(&extra) {
        for _ in 0..count {
            let first = bucket[rng.random_range(0..bucket.len())];
            let second = bucket[rng.random_range(0..bucket.len())];
            let lambda: f64 = beta.sample(&mut rng);
            samples.push(mix_samples(&train.samples[first], &train.samples[second], lambda));
            origin.push(SampleOrigin::Synthetic { first, second, lambda });
        }
    }
    Ok(finish(train, groups, minority, samples, origin))
}

/// `lambda * a + (1 - lambda) * b` over features, target and sensitive
/// metadata. Ward and year come from `a`.
pub fn mix_samples(a: &Sample, b: &Sample, lambda: f64) -> Sample {
    let zip = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| mix(*p, *q, lambda)).collect();
    Sample {
        ward: a.ward.clone(),
        year: a.year,
        x: zip(&a.x, &b.x),
        y: mix(a.y, b.y, lambda),
        sensitive: zip(&a.sensitive, &b.sensitive),
    }
}

/// Oversample, then add `N(0, sigma)` noise to the numeric (non one-hot)
/// feature columns of the duplicated rows.
pub fn perturb(train: &EncodedDataset, groups: &GroupAssignment, sigma: f64, seed: u64) -> Result<AugmentedTrainSet> {
    MitigationMethod::Perturb { sigma }.validate()?;
    let mut out = oversample(train, groups, seed)?;
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidRequest(e.to_string()))?;
    let numeric: Vec<usize> = (0..train.n_features())
        .filter(|&j| train.feature_kinds[j] == FeatureKind::Numeric)
        .collect();
    let mut rng = seed::rng(seed::child(seed, 1));
    for (sample, origin) in out.data.samples.iter_mut().zip(&out.origin) {
        if matches!(origin, SampleOrigin::Duplicated { .. }) {
            for &j in &numeric {
                sample.x[j] += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Raw group weights `n / (2 n_g)` for (Low, High).
pub fn group_weights(groups: &GroupAssignment) -> Result<(f64, f64)> {
    let n = groups.n() as f64;
    let (lo, hi) = (groups.low.len(), groups.high.len());
    if lo == 0 || hi == 0 {
        return Err(Error::EmptyGroup {
            feature: groups.feature.clone(),
            side: if lo == 0 { "Low" } else { "High" },
        });
    }
    Ok((n / (2.0 * lo as f64), n / (2.0 * hi as f64)))
}

/// Inverse group-frequency weights normalised so the largest is 1.
pub fn reweight(train: &EncodedDataset, groups: &GroupAssignment) -> Result<WeightVector> {
    require_groups(train, groups)?;
    let (w_low, w_high) = group_weights(groups)?;
    let max = w_low.max(w_high);
    let mut weights = vec![w_high / max; train.len()];
    for &i in &groups.low {
        weights[i] = w_low / max;
    }
    WeightVector::new(weights)
}

/// Assign groups from the stored threshold and run the requested method.
pub fn apply(spec: &MitigationSpec, train: &EncodedDataset) -> Result<AugmentedTrainSet> {
    spec.method.validate()?;
    let groups = fairness::assign_stored(train, &spec.feature)?;
    match spec.method {
        MitigationMethod::Oversample => oversample(train, &groups, spec.seed),
        MitigationMethod::Mixup { alpha } => mixup(train, &groups, alpha, spec.seed),
        MitigationMethod::Perturb { sigma } => perturb(train, &groups, sigma, spec.seed),
        MitigationMethod::Reweight => {
            let weights = reweight(train, &groups)?;
            Ok(AugmentedTrainSet {
                data: train.clone(),
                weights: Some(weights),
                origin: vec![SampleOrigin::Original; train.len()],
                groups,
            })
        }
    }
}
