use std::fmt::Write as _;

use log::{debug, info};

use crate::graph::RelationGraph;
use crate::numerics::{Matrix, Rng};

use super::layers::bce_loss;
use super::{Adam, Mgrn, ModelConfig, ModelError, Result, Sample};

/// Samples with their binary labels (1 = up).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub samples: Vec<Sample>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample, label: u8) {
        self.samples.push(sample);
        self.labels.push(label);
    }
}

/// Everything [`train`] reads. `features[t]` is the `n × d` matrix of
/// trading day `t`; samples index into it.
#[derive(Debug, Clone, Copy)]
pub struct TrainInput<'a> {
    pub features: &'a [Matrix],
    pub graphs: &'a [RelationGraph],
    pub train: &'a LabeledSet,
    pub dev: &'a LabeledSet,
}

/// Per-sample mean losses. Dev fields are empty when there is no dev split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 means the initial ones.
    pub selected_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,dev_loss,dev_acc\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, opt(r.dev_loss), opt(r.dev_acc));
        }
        out
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.train_loss).collect()
    }
}

fn evaluate(model: &Mgrn, input: &TrainInput<'_>) -> Result<(Option<f64>, Option<f64>)> {
    if input.dev.is_empty() {
        return Ok((None, None));
    }
    let p = model.predict(input.features, input.graphs, &input.dev.samples)?;
    let loss = bce_loss(&p, &input.dev.labels)? / p.len() as f64;
    let correct = p
        .iter()
        .zip(&input.dev.labels)
        .filter(|(p, &y)| (**p > 0.5) == (y == 1))
        .count();
    Ok((Some(loss), Some(correct as f64 / p.len() as f64)))
}

/// Minibatch Adam training. The init stream and the shuffle stream are both
/// forked from `cfg.seed`, so a run is a pure function of its inputs.
pub fn train(input: TrainInput<'_>, cfg: &ModelConfig, graph_names: Vec<String>) -> Result<(Mgrn, History)> {
    cfg.validate()?;
    if input.graphs.is_empty() || graph_names.is_empty() {
        return Err(ModelError::NoGraphs);
    }
    if input.train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for set in [input.train, input.dev] {
        if set.samples.len() != set.labels.len() {
            return Err(ModelError::LengthMismatch(set.samples.len(), set.labels.len()));
        }
    }
    let mut root = Rng::new(cfg.seed);
    let mut init_rng = root.fork();
    let mut shuffle_rng = root.fork();
    let mut model = Mgrn::new(cfg.clone(), graph_names, &mut init_rng)?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let mut adam = Adam::new(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut best = (f64::INFINITY, model.params().clone(), 0);
    let mut order: Vec<usize> = (0..input.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<Sample> = chunk.iter().map(|&i| input.train.samples[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| input.train.labels[i]).collect();
            let diverged = |e: ModelError| match e {
                ModelError::Numerics(_) => ModelError::NonFiniteLoss { epoch, batch: batch_no },
                other => other,
            };
            let trace = model.forward(input.features, input.graphs, &samples).map_err(diverged)?;
            let (grads, loss) = model.backward(&trace, &labels).map_err(diverged)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }
            total += loss;
            model.update_params(|p| adam.step(p, &grads));
        }
        let train_loss = total / input.train.len() as f64;
        let (dev_loss, dev_acc) = evaluate(&model, &input)?;
        info!("epoch {epoch}: train_loss={train_loss:.6} dev_loss={dev_loss:?} dev_acc={dev_acc:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_acc,
        });
        let criterion = dev_loss.unwrap_or(train_loss);
        if !cfg.select_best_dev || criterion < best.0 {
            best = (criterion, model.params().clone(), epoch);
        }
    }
    debug!("selected epoch {}", best.2);
    history.selected_epoch = best.2;
    let model = Mgrn::from_params(cfg.clone(), model.graph_names().to_vec(), best.1)?;
    Ok((model, history))
}
