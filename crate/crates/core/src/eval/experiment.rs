//! Cross-domain experiment on synthetic domains that differ only in stain
//! appearance: train with and without the consistency loss on the source
//! domain, test both on the target domain, and compare against a model
//! trained in-domain on the target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::DEFAULT_OD_THRESHOLD;
use crate::error::{Error, Result};
use crate::rng;
use crate::stain::{SnmfConfig, StainMatrix};
use crate::train::{predict_all, train, Sample, StainAugmenter, TrainConfig};

use super::metrics::{confusion, mean_metrics, metrics, report_csv, Averaging, Metrics, MetricsRow};
use super::synthetic::{default_source_spec, render_synthetic, SyntheticDomainSpec, TARGET_STAINS};

const TEST_SET_STREAM: u64 = 0x7e57;

pub const UPPER_BOUND: &str = "Upper Bound (in-domain)";
pub const LOWER_BOUND: &str = "Lower Bound (no consistency)";
pub const PROPOSED: &str = "Consistency regularized";

/// Everything needed to run the experiment; the JSON consumed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub source: SyntheticDomainSpec,
    pub target: SyntheticDomainSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub snmf: SnmfConfig,
}

fn default_repeats() -> usize {
    5
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let source = default_source_spec();
        let target = source.with_stains(TARGET_STAINS);
        Self {
            source,
            target,
            train: default_experiment_train_config(),
            repeats: 5,
            averaging: Averaging::Weighted,
            snmf: SnmfConfig::default(),
        }
    }
}

pub fn default_experiment_train_config() -> TrainConfig {
    TrainConfig { lr: 0.01, epochs: 8, batch_size: 16, ..TrainConfig::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub upper_bound: Metrics,
    pub without_consistency: Metrics,
    pub with_consistency: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossDomainReport {
    pub seeds: Vec<SeedOutcome>,
    /// Source images whose own stain matrix could not be estimated.
    pub stain_fallbacks: usize,
}

impl CrossDomainReport {
    pub fn mean_upper(&self) -> Metrics {
        mean_metrics(&self.seeds.iter().map(|s| s.upper_bound).collect::<Vec<_>>())
    }

    pub fn mean_without(&self) -> Metrics {
        mean_metrics(&self.seeds.iter().map(|s| s.without_consistency).collect::<Vec<_>>())
    }

    pub fn mean_with(&self) -> Metrics {
        mean_metrics(&self.seeds.iter().map(|s| s.with_consistency).collect::<Vec<_>>())
    }

    /// Seeds on which the consistency arm has strictly higher target accuracy.
    pub fn consistency_wins(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.with_consistency.accuracy > s.without_consistency.accuracy)
            .count()
    }

    /// Mean rows in results-table order: upper bound, lower bound, proposed.
    pub fn mean_rows(&self) -> Vec<MetricsRow> {
        vec![
            MetricsRow::new(UPPER_BOUND, "target", self.mean_upper()),
            MetricsRow::new(LOWER_BOUND, "source", self.mean_without()),
            MetricsRow::new(PROPOSED, "source", self.mean_with()),
        ]
    }

    pub fn per_seed_rows(&self) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for (i, s) in self.seeds.iter().enumerate() {
            rows.push(MetricsRow::new(format!("{UPPER_BOUND} seed {i}"), "target", s.upper_bound));
            rows.push(MetricsRow::new(
                format!("{LOWER_BOUND} seed {i}"),
                "source",
                s.without_consistency,
            ));
            rows.push(MetricsRow::new(format!("{PROPOSED} seed {i}"), "source", s.with_consistency));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut rows = self.mean_rows();
        rows.extend(self.per_seed_rows());
        report_csv(&rows)
    }
}

fn samples(set: &crate::dataset::Dataset, side: usize) -> Vec<Sample> {
    set.images.iter().zip(&set.labels).map(|(img, &y)| Sample::new(img, y, side)).collect()
}

/// Held-out split of a domain: same textures distribution, different draws.
pub fn test_split(spec: &SyntheticDomainSpec) -> SyntheticDomainSpec {
    spec.with_seed(rng::derive_seed(spec.seed, &[TEST_SET_STREAM]))
}

pub fn run_crossdomain_experiment(
    source: &SyntheticDomainSpec,
    target: &SyntheticDomainSpec,
    cfg: &TrainConfig,
    repeats: usize,
) -> Result<CrossDomainReport> {
    run_experiment(&ExperimentSpec {
        source: source.clone(),
        target: target.clone(),
        train: *cfg,
        repeats,
        ..ExperimentSpec::default()
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<CrossDomainReport> {
    let (source, target, cfg) = (&spec.source, &spec.target, &spec.train);
    source.validate()?;
    target.validate()?;
    cfg.validate()?;
    if source.prototypes != target.prototypes {
        return Err(Error::InvalidParameter(
            "source and target domains must share class prototypes".into(),
        ));
    }
    if spec.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    let classes = source.prototypes.len();
    let side = cfg.input_side;

    let source_train = render_synthetic(source)?;
    let target_train = render_synthetic(target)?;
    let target_test = render_synthetic(&test_split(target))?;
    let source_samples = samples(&source_train, side);
    let target_samples = samples(&target_train, side);
    let test_images: Vec<_> = target_test.images.iter().map(|i| i.downsample_area(side)).collect();

    let source_inputs: Vec<_> = source_samples.iter().map(|s| s.x.clone()).collect();
    let (augmenter, stain_fallbacks) = StainAugmenter::estimate(
        &source_inputs,
        &spec.snmf,
        DEFAULT_OD_THRESHOLD,
        StainMatrix::reference(),
    )?;
    // Never used: the in-domain and no-consistency arms request no views.
    let unused = StainAugmenter::fixed(StainMatrix::reference());

    let evaluate = |params: &crate::train::ModelParams| -> Result<Metrics> {
        let preds = predict_all(params, &test_images, side);
        metrics(&confusion(&preds, &target_test.labels, classes)?, spec.averaging)
    };

    let seeds = (0..spec.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = rng::derive_seed(cfg.seed, &[r as u64]);
            let off = TrainConfig { seed, use_consistency: false, ..*cfg };
            let on = TrainConfig { seed, use_consistency: true, ..*cfg };
            let upper = train(&target_samples, classes, &unused, &off)?;
            let without = train(&source_samples, classes, &unused, &off)?;
            let with = train(&source_samples, classes, &augmenter, &on)?;
            Ok(SeedOutcome {
                seed,
                upper_bound: evaluate(&upper.params)?,
                without_consistency: evaluate(&without.params)?,
                with_consistency: evaluate(&with.params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossDomainReport { seeds, stain_fallbacks })
}
