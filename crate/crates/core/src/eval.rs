//! Target-domain accuracy, the raw 1-NN baseline, and the ablation harness.

use std::time::{Duration, Instant};

use crate::classify::nearest_neighbor;
use crate::data::{normalize, DomainDataset};
use crate::error::{GglsError, Module, Result};
use crate::solver::{fit, Ablation, GglsConfig, TraceRecord};

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(GglsError::data(
            Module::Eval,
            format!("{} predictions for {} labels", predicted.len(), truth.len()),
        ));
    }
    if predicted.is_empty() {
        return Err(GglsError::data(Module::Eval, "accuracy of an empty label vector"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub variant: String,
    pub config: Option<GglsConfig>,
    pub dataset_digest: String,
    pub accuracy: f64,
    /// `NaN` for classes absent from the target truth.
    pub per_class_accuracy: Vec<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub trace: Vec<TraceRecord>,
    pub duration: Duration,
}

impl EvalReport {
    fn build(
        variant: String,
        config: Option<GglsConfig>,
        dataset: &DomainDataset,
        predictions: Vec<usize>,
        trace: Vec<TraceRecord>,
        duration: Duration,
    ) -> Result<Self> {
        let truth = truth_labels(dataset)?;
        let c = dataset.class_count();
        let mut confusion = vec![vec![0usize; c]; c];
        for (&p, &t) in predictions.iter().zip(truth) {
            confusion[t - 1][p - 1] += 1;
        }
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let support: usize = row.iter().sum();
                if support == 0 {
                    f64::NAN
                } else {
                    row[i] as f64 / support as f64
                }
            })
            .collect();
        Ok(Self {
            variant,
            config,
            dataset_digest: dataset.digest(),
            accuracy: accuracy(&predictions, truth)?,
            per_class_accuracy,
            confusion,
            predictions,
            trace,
            duration,
        })
    }

    pub fn confusion_total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

fn truth_labels(dataset: &DomainDataset) -> Result<&[usize]> {
    dataset.target_labels().ok_or_else(|| GglsError::Eval {
        module: Module::Eval,
        message: "target labels are required for evaluation".into(),
    })
}

/// 1-NN from source to target on normalized input features.
pub fn baseline_1nn(dataset: &DomainDataset) -> Result<EvalReport> {
    truth_labels(dataset)?;
    let start = Instant::now();
    let n = normalize(dataset);
    let predictions = nearest_neighbor(n.source_features(), n.source_labels(), n.target_features());
    EvalReport::build("1NN".into(), None, dataset, predictions, Vec::new(), start.elapsed())
}

/// Fits on the dataset and scores the transductive target predictions.
/// Training reads the target labels only to fill the trace's accuracy column.
pub fn evaluate(dataset: &DomainDataset, config: &GglsConfig) -> Result<EvalReport> {
    truth_labels(dataset)?;
    let start = Instant::now();
    let model = fit(dataset, config)?;
    EvalReport::build(
        config.ablation.variant_name(),
        Some(config.clone()),
        dataset,
        model.target_pseudo_labels,
        model.trace,
        start.elapsed(),
    )
}

/// The five variants, in order: full, no landmark, no manifold, neither, and
/// neither without the kernel function.
pub fn ablation_variants() -> [Ablation; 5] {
    let a = |l, m, k| Ablation {
        no_landmark: l,
        no_manifold: m,
        no_kernel: k,
    };
    [
        a(false, false, false),
        a(true, false, false),
        a(false, true, false),
        a(true, true, false),
        a(true, true, true),
    ]
}

/// Runs every ablation variant concurrently over the same dataset.
pub fn ablation_suite(dataset: &DomainDataset, base: &GglsConfig) -> Result<Vec<(String, EvalReport)>> {
    let configs: Vec<GglsConfig> = ablation_variants()
        .into_iter()
        .map(|ablation| GglsConfig { ablation, ..base.clone() })
        .collect();
    let results: Vec<Result<EvalReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || evaluate(dataset, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    });
    results
        .into_iter()
        .map(|r| r.map(|report| (report.variant.clone(), report)))
        .collect()
}
