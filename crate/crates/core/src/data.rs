//! Samples, datasets and the synthetic long-tailed generator.
//!
//! Every sample carries two feature views: a context view (the whole
//! activity) for the frozen expert and a segment view (the step being judged)
//! for the adapted expert.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::experts::gaussian_mat;
use crate::heads::ClassFreq;
use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub x_ctx: Vec<f64>,
    pub x_seg: Vec<f64>,
    /// `1` = mistake, `0` = correct.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Non-empty collection of samples sharing feature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let dims = (first.x_ctx.len(), first.x_seg.len());
        for (index, s) in samples.iter().enumerate() {
            if (s.x_ctx.len(), s.x_seg.len()) != dims {
                return Err(Error::DimensionMismatch {
                    context: "dataset sample widths (context, segment)",
                    expected: dims,
                    found: (s.x_ctx.len(), s.x_seg.len()),
                });
            }
            if s.label > 1 {
                return Err(Error::InvalidLabel {
                    index,
                    label: s.label,
                });
            }
            crate::math::check_finite("context features", &s.x_ctx)?;
            crate::math::check_finite("segment features", &s.x_seg)?;
        }
        Ok(Dataset { samples, split })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(d_ctx, d_seg)`.
    pub fn dims(&self) -> (usize, usize) {
        let s = &self.samples[0];
        (s.x_ctx.len(), s.x_seg.len())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `[correct, mistake]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mistakes = self.samples.iter().filter(|s| s.label == 1).count();
        [self.samples.len() - mistakes, mistakes]
    }

    pub fn class_freq(&self) -> Result<ClassFreq> {
        ClassFreq::from_labels(&self.labels())
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenSpec {
    pub n: usize,
    /// Proportion of mistakes.
    pub imbalance: f64,
    pub d_ctx: usize,
    pub d_seg: usize,
    /// Class means sit at `±mean_shift/√d_seg` on every segment coordinate.
    pub mean_shift: f64,
    /// Share of the (projected) segment signal present in the context view.
    pub noise_corr: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n: 4000,
            imbalance: 0.05,
            d_ctx: 16,
            d_seg: 16,
            mean_shift: 2.0,
            noise_corr: 0.5,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::config("n", "must be at least 10"));
        }
        if !(self.imbalance > 0.0 && self.imbalance < 1.0) {
            return Err(Error::config("imbalance", "must lie in (0, 1)"));
        }
        if self.imbalance * (self.n as f64) < 1.0 {
            return Err(Error::config(
                "imbalance",
                "imbalance * n must be at least 1",
            ));
        }
        if self.mistake_count() >= self.n {
            return Err(Error::config("imbalance", "leaves no correct samples"));
        }
        if self.d_ctx == 0 {
            return Err(Error::config("d_ctx", "must be positive"));
        }
        if self.d_seg == 0 {
            return Err(Error::config("d_seg", "must be positive"));
        }
        if !self.mean_shift.is_finite() {
            return Err(Error::config("mean_shift", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.noise_corr) {
            return Err(Error::config("noise_corr", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn mistake_count(&self) -> usize {
        libm::round(self.imbalance * self.n as f64) as usize
    }
}

/// Draws a dataset of class-conditional Gaussians, fully determined by the
/// seed.
///
/// Segment features are `y·(mean_shift/√d_seg)·𝟏 + z` with `y = ±1`. Context
/// features mix a fixed random projection of the segment features with
/// independent noise: `c·P·x_seg + (1 − c)·z'`.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mistakes = spec.mistake_count();
    let mut labels: Vec<u8> = vec![0; spec.n];
    labels[..mistakes].iter_mut().for_each(|l| *l = 1);
    labels.shuffle(&mut rng);

    let projection = gaussian_mat(
        spec.d_ctx,
        spec.d_seg,
        1.0 / sqrt(spec.d_seg as f64),
        &mut rng,
    );
    let offset = spec.mean_shift / sqrt(spec.d_seg as f64);
    let c = spec.noise_corr;

    let samples = labels
        .into_iter()
        .map(|label| {
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let x_seg: Vec<f64> = (0..spec.d_seg)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sign * offset + z
                })
                .collect();
            let projected = projection.matvec(&x_seg).expect("projection width matches");
            let x_ctx = projected
                .into_iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c * p + (1.0 - c) * z
                })
                .collect();
            Sample {
                x_ctx,
                x_seg,
                label,
            }
        })
        .collect();
    Dataset::new(samples, Split::Train)
}

/// Stratified train/val/test partition. Each class is shuffled with `seed`
/// and cut by `fracs`; samples keep their original relative order inside a
/// split.
pub fn stratified_split(dataset: &Dataset, fracs: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    if fracs.iter().any(|f| f.is_nan() || *f < 0.0)
        || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::config(
            "split_fracs",
            "must be non-negative and sum to 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Test; dataset.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = libm::round(fracs[0] * n) as usize;
        let n_val = (libm::round(fracs[1] * n) as usize).min(idx.len() - n_train.min(idx.len()));
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    let mut parts: [Vec<Sample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (sample, split) in dataset.samples.iter().zip(assignment) {
        let slot = Split::ALL.iter().position(|s| *s == split).unwrap_or(2);
        parts[slot].push(sample.clone());
    }
    let [train, val, test] = parts;
    Ok([
        Dataset::new(train, Split::Train)?,
        Dataset::new(val, Split::Val)?,
        Dataset::new(test, Split::Test)?,
    ])
}
