//! Dataset-level evaluation of a trained network and the B1-B4 ablation protocol.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Image, Sample};
use crate::error::{Error, Result};
use crate::inference::{iterative_predict_batch, DEFAULT_ITERATIONS};
use crate::mask_codec::BinaryMask;
use crate::metrics::{evaluate_dataset, Aggregation, DatasetReport, EvalOptions, MiouMode, ReportRow};
use crate::model::{count_parameters, Ablation, Fanet, MixPoolPlacement, NetworkConfig};
use crate::training::{fit, EpochRecord, TrainConfig, TrainEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub aggregation: Aggregation,
    pub miou: MiouMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            batch_size: 8,
            aggregation: Aggregation::default(),
            miou: MiouMode::default(),
        }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            aggregation: self.aggregation,
            miou: self.miou,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// One report per refinement iteration; the last is the headline number.
    pub per_iteration: Vec<DatasetReport>,
    pub final_masks: Vec<BinaryMask>,
    pub seconds_per_image: f64,
}

impl Evaluation {
    pub fn report(&self) -> &DatasetReport {
        self.per_iteration.last().expect("at least one iteration")
    }

    /// Dataset F1 at each iteration, iteration 0 first.
    pub fn f1_curve(&self) -> Vec<f64> {
        self.per_iteration.iter().map(|r| r.mean.f1).collect()
    }
}

/// Runs iterative inference over `samples` and scores every iteration.
///
/// Networks without inference feedback see the same Otsu seed on every
/// round, so they get a single refinement round.
pub fn evaluate_model(model: &mut Fanet<f32>, samples: &[Sample], cfg: &EvalConfig) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("evaluation batch_size must be at least 1".into()));
    }
    let iterations = if model.config().feedback_at_inference { cfg.iterations } else { 1 };
    let start = Instant::now();
    let mut by_iteration: Vec<Vec<BinaryMask>> = vec![Vec::with_capacity(samples.len()); iterations + 1];
    let mut begin = 0;
    while begin < samples.len() {
        // Batches never mix image sizes.
        let dims = samples[begin].image.dims();
        let mut end = begin + 1;
        while end < samples.len() && end - begin < cfg.batch_size && samples[end].image.dims() == dims {
            end += 1;
        }
        let images: Vec<&Image> = samples[begin..end].iter().map(|s| &s.image).collect();
        for trace in iterative_predict_batch(model, &images, iterations, None)? {
            for (t, mask) in trace.masks.into_iter().enumerate() {
                by_iteration[t].push(mask);
            }
        }
        begin = end;
    }
    let seconds_per_image = start.elapsed().as_secs_f64() / samples.len() as f64;

    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let targets: Vec<BinaryMask> = samples.iter().map(|s| s.mask.clone()).collect();
    let per_iteration = by_iteration
        .iter()
        .map(|preds| evaluate_dataset(&ids, preds, &targets, cfg.options()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        per_iteration,
        final_masks: by_iteration.pop().expect("at least one iteration"),
        seconds_per_image,
    })
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub ablation: Ablation,
    pub parameters: usize,
    pub evaluation: Evaluation,
    pub history: Vec<EpochRecord>,
    pub model: Fanet<f32>,
}

/// Trains and evaluates each requested ablation on the same data.
///
/// B2 and B4 differ only in inference feedback, so they share one trained
/// network; the best-validation weights are evaluated.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    train_cfg: &TrainConfig,
    network: &NetworkConfig,
    train: &[Sample],
    val: Option<&[Sample]>,
    test: &[Sample],
    eval_cfg: &EvalConfig,
    ablations: &[Ablation],
    on_epoch: &mut dyn FnMut(Ablation, &EpochRecord),
) -> Result<Vec<AblationRun>> {
    let mut trained: Vec<(MixPoolPlacement, Fanet<f32>, Vec<EpochRecord>)> = Vec::new();
    let mut runs = Vec::with_capacity(ablations.len());
    for &ablation in ablations {
        let net = network.clone().with_ablation(ablation);
        let cached = trained.iter().find(|(p, _, _)| *p == net.mixpool_placement);
        let (mut model, history) = match cached {
            Some((_, m, h)) => (m.clone(), h.clone()),
            None => {
                let outcome = fit(train_cfg, &net, train, val, &mut |e| {
                    if let TrainEvent::EpochEnd(r) = e {
                        on_epoch(ablation, r);
                    }
                })?;
                let model: Fanet<f32> = outcome.best.to_model()?;
                let history = outcome.state.history;
                trained.push((net.mixpool_placement, model.clone(), history.clone()));
                (model, history)
            }
        };
        model.set_feedback_at_inference(net.feedback_at_inference);
        let evaluation = evaluate_model(&mut model, test, eval_cfg)?;
        runs.push(AblationRun {
            ablation,
            parameters: count_parameters(&net)?,
            evaluation,
            history,
            model,
        });
    }
    Ok(runs)
}

/// Comparison rows with parameter count and per-image throughput columns.
pub fn ablation_rows(runs: &[AblationRun]) -> Vec<ReportRow> {
    runs.iter()
        .map(|r| {
            let fps = if r.evaluation.seconds_per_image > 0.0 {
                1.0 / r.evaluation.seconds_per_image
            } else {
                f64::INFINITY
            };
            ReportRow::new(format!("{} ({})", r.ablation, r.ablation.description()), r.evaluation.report())
                .with("params", r.parameters.to_string())
                .with("fps", format!("{fps:.1}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn set() -> (Vec<Sample>, Vec<Sample>) {
        let spec = SyntheticSpec {
            train: 6,
            test: 3,
            size: 16,
            seed: 2,
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic(&spec).unwrap();
        (s.train, s.test)
    }

    #[test]
    fn evaluation_scores_every_iteration() {
        let (_, test) = set();
        let mut m = Fanet::new(NetworkConfig::default().with_widths(&[4, 8]), 1).unwrap();
        let cfg = EvalConfig { iterations: 3, batch_size: 2, ..EvalConfig::default() };
        let e = evaluate_model(&mut m, &test, &cfg).unwrap();
        assert_eq!(e.per_iteration.len(), 4);
        assert_eq!(e.final_masks.len(), 3);
        assert_eq!(e.report().per_image.len(), 3);
        m.set_feedback_at_inference(false);
        assert_eq!(evaluate_model(&mut m, &test, &cfg).unwrap().per_iteration.len(), 2);
    }

    #[test]
    fn ablation_has_one_row_per_configuration() {
        let (train, test) = set();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let net = NetworkConfig::default().with_widths(&[4, 8]);
        let mut epochs = Vec::new();
        let runs = run_ablation(
            &cfg,
            &net,
            &train,
            None,
            &test,
            &EvalConfig { iterations: 2, ..EvalConfig::default() },
            &Ablation::ALL,
            &mut |a, _| epochs.push(a),
        )
        .unwrap();
        // B2 reuses the B4-style training run: three trainings for four rows.
        assert_eq!(epochs, vec![Ablation::B1, Ablation::B2, Ablation::B3]);
        let rows = ablation_rows(&runs);
        assert_eq!(rows.len(), 4);
        assert!(runs[3].parameters > runs[0].parameters);
        assert_eq!(runs[1].parameters, runs[3].parameters);
    }
}
