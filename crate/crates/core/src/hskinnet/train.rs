use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_targets, record_loss};
use super::model::{forward_logits, BoundParams, GraphTensors, HyperParams, Mode, Model};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::hgraph::HeterGraph;
use crate::rigcore::WeightRows;
use crate::Scalar;

/// One training character: its graph and Top-K loss targets.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub name: String,
    pub graph: GraphTensors<T>,
    pub targets: Tensor<T>,
}

impl<T: Scalar> TrainSample<T> {
    pub fn new(name: impl Into<String>, graph: &HeterGraph<T>, gt: &WeightRows<T>) -> Result<Self> {
        Ok(TrainSample {
            name: name.into(),
            targets: loss_targets(gt, &graph.topk)?,
            graph: GraphTensors::new(graph)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_data: f64,
    pub mean_smooth: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
}

/// The untrained model `train` starts from for this configuration.
pub fn initial_model<T: Scalar>(hyper: &HyperParams, cfg: &TrainConfig) -> Result<Model<T>> {
    Model::init(hyper.clone(), crate::mix_seed(cfg.seed, 0x1417))
}

/// Adam over whole characters, one step per rig per epoch, rig order
/// shuffled per epoch. `on_epoch` sees each record as it completes.
pub fn train<T: Scalar>(
    samples: &[TrainSample<T>],
    hyper: &HyperParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one rig".into()));
    }
    let mut model = initial_model(hyper, cfg)?;
    let mut state = AdamState::new(model.params.tensors());
    let names: Vec<String> = model.params.names().to_vec();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let lambda = hyper.effective_lambda();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::mix_seed(cfg.seed, epoch as u64)));
        let (mut sum, mut sum_data, mut sum_smooth) = (0.0, 0.0, 0.0);
        for (pos, &ri) in order.iter().enumerate() {
            let sample = &samples[ri];
            let diverged = |loss: f64| Error::Diverged { epoch, rig: sample.name.clone(), loss };
            let step_seed = crate::mix_seed(crate::mix_seed(cfg.seed, epoch as u64), pos as u64 + 1);
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &model.params)?;
            let recorded = forward_logits(&mut tape, &bound, &sample.graph, hyper, Mode::Train { seed: step_seed })
                .and_then(|logits| record_loss(&mut tape, logits, &sample.targets, &sample.graph, lambda));
            let loss = match recorded {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let value = tape.value(loss.total).item().as_f64();
            if !value.is_finite() {
                return Err(diverged(value));
            }
            let grads = tape.backward(loss.total)?;
            let grads: Vec<Tensor<T>> = bound
                .vars()
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, p)| grads.get_or_zeros(v, p))
                .collect();
            adam_step(model.params.tensors_mut(), &grads, &mut state, &cfg.adam, &name_refs)?;
            sum += value;
            sum_data += tape.value(loss.data).item().as_f64();
            sum_smooth += tape.value(loss.smooth).item().as_f64();
        }
        let n = samples.len() as f64;
        let rec = EpochRecord { epoch, mean_loss: sum / n, mean_data: sum_data / n, mean_smooth: sum_smooth / n };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}
