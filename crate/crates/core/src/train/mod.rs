//! Loss, backpropagation, Adam and the mini-batch training loop.

mod adam;
mod backprop;
mod split;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use backprop::{backprop, backward, logit_gradient, Gradients, ReluBackward};
pub use split::{split_dataset, Split, SplitAssignment};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Mode, Network};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to this floor before taking the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `−ln p_target`.
pub fn cross_entropy_loss<T: Real>(probabilities: &[T], target: usize) -> Result<T> {
    let p = probabilities.get(target).ok_or_else(|| {
        Error::invalid(format!(
            "target class {target} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(T::lit(PROBABILITY_FLOOR)).ln())
}

/// One labeled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T = f32> {
    pub input: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub split: [f64; 3],
    /// Shuffle "random state"; dropout masks derive from it too.
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop after this many epochs without validation-loss improvement.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 200,
            split: [0.6, 0.2, 0.2],
            seed: 0,
            adam: AdamConfig::default(),
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.8},{:.8},{:.6},{:.6}",
                r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc
            );
        }
        out
    }
}

/// Samples per gradient partial sum. Partials are reduced in index order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 8;

struct BatchStats<T> {
    grads: Gradients<T>,
    loss: f64,
    correct: usize,
}

fn batch_gradients<T: Real>(
    net: &Network<T>,
    data: &[Example<T>],
    batch: &[usize],
    dropout_seed: u64,
) -> Result<BatchStats<T>> {
    let partials: Vec<Result<BatchStats<T>>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk_id, chunk)| {
            let mut stats = BatchStats {
                grads: Gradients::zeros_like(net),
                loss: 0.0,
                correct: 0,
            };
            for (k, &i) in chunk.iter().enumerate() {
                let ex = &data[i];
                let mut r = rng::rng(rng::sub_seed(
                    dropout_seed,
                    &format!("{}", chunk_id * CHUNK + k),
                ));
                let trace = net.forward(&ex.input, Mode::Train(&mut r))?;
                stats.loss += cross_entropy_loss(&trace.probabilities, ex.label)?.as_f64();
                stats.correct += usize::from(trace.predicted_class() == ex.label);
                let g = backward(net, &trace, ex.label)?;
                stats.grads.add_assign(&g);
            }
            Ok(stats)
        })
        .collect();
    let mut total = BatchStats {
        grads: Gradients::zeros_like(net),
        loss: 0.0,
        correct: 0,
    };
    for p in partials {
        let p = p?;
        total.grads.add_assign(&p.grads);
        total.loss += p.loss;
        total.correct += p.correct;
    }
    Ok(total)
}

/// Mean cross-entropy and accuracy at inference.
pub fn evaluate_loss<T: Real>(net: &Network<T>, data: &[Example<T>]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .map(|ex| {
            let trace = net.forward(&ex.input, Mode::Infer)?;
            Ok((
                cross_entropy_loss(&trace.probabilities, ex.label)?.as_f64(),
                trace.predicted_class() == ex.label,
            ))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for p in per {
        let (l, ok) = p?;
        loss += l;
        correct += usize::from(ok);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Predicted class of every example at inference.
pub fn predict_classes<T: Real>(net: &Network<T>, data: &[Example<T>]) -> Result<Vec<usize>> {
    data.par_iter()
        .map(|ex| Ok(net.forward(&ex.input, Mode::Infer)?.predicted_class()))
        .collect()
}

/// Mini-batch training with Adam. Returns the trained network and one history
/// record per completed epoch.
pub fn train<T: Real>(
    mut net: Network<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainHistory)> {
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((net, history));
    }
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > train_set.len() {
        return Err(Error::invalid(format!(
            "batch size {} must be in 1..={} (training set size)",
            cfg.batch_size,
            train_set.len()
        )));
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.label >= net.n_classes() {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                ex.label,
                net.n_classes()
            )));
        }
    }
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut shuffle_rng = rng::named_rng(cfg.seed, rng::SHUFFLE);
    let dropout_seed = rng::sub_seed(cfg.seed, rng::DROPOUT);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seed = rng::sub_seed(dropout_seed, &format!("{epoch}/{b}"));
            let mut stats = match batch_gradients(&net, train_set, batch, seed) {
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            let batch_loss = stats.loss / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            stats.grads.scale(T::lit(1.0 / batch.len() as f64));
            adam.step(&mut net, &stats.grads).map_err(|_| Error::Divergence {
                epoch,
                batch: b,
                loss: batch_loss,
            })?;
            loss_sum += stats.loss;
            correct += stats.correct;
        }
        let (val_loss, val_acc) = evaluate_loss(&net, val_set)?;
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        });
        if let Some(patience) = cfg.early_stop {
            if val_loss < best_val {
                best_val = val_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_architecture, ArchConfig, Architecture, GraphBuilder};
    use rand::Rng as _;

    #[test]
    fn loss_examples() {
        assert_eq!(cross_entropy_loss(&[1.0f64, 0.0], 0).unwrap(), 0.0);
        let uniform = cross_entropy_loss(&[0.25f64; 4], 2).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        assert!((uniform - 1.3863).abs() < 1e-4);
        assert!(cross_entropy_loss(&[0.5f64, 0.5], 2).is_err());
        assert!(cross_entropy_loss(&[0.0f64, 1.0], 0).unwrap().is_finite());
    }

    #[test]
    fn loss_decreases_with_target_probability() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let rest = (1.0 - p) / 3.0;
            let l = cross_entropy_loss(&[rest, p, rest, rest], 1).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn fused_logit_gradient() {
        assert_eq!(logit_gradient(&[0.5f64, 0.5], 0).unwrap(), vec![-0.5, 0.5]);
        let p = [0.1f64, 0.7, 0.2];
        let g = logit_gradient(&p, 1).unwrap();
        let onehot_dist: f64 = p
            .iter()
            .enumerate()
            .map(|(k, &v)| (v - if k == 1 { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - onehot_dist).abs() < 1e-15);
        assert!(logit_gradient(&p, 3).is_err());
    }

    /// Three weighted layers: conv → relu → avg pool → dense → relu → dense.
    fn small_net(seed: u64) -> Network<f64> {
        let mut g = GraphBuilder::new(&[6, 5, 2]);
        let c = g.conv(0, (3, 3), 4, crate::tensor::Padding::Same).unwrap();
        let r = g.relu(c).unwrap();
        let p = g.pool(r, crate::tensor::PoolMode::Avg).unwrap();
        let f = g.flatten(p).unwrap();
        let d = g.dense(f, 6).unwrap();
        let r2 = g.relu(d).unwrap();
        let o = g.dense(r2, 3).unwrap();
        g.softmax(o).unwrap();
        let mut net = g.finish::<f64>(Architecture::Custom, 0).unwrap();
        net.init_parameters(seed);
        let mut r = rng::rng(seed + 1);
        let ids: Vec<_> = net.parameterized_layers().collect();
        for id in ids {
            for b in net.params_mut(id).unwrap().bias.data_mut() {
                *b = r.random_range(-0.1..0.1);
            }
        }
        net
    }

    fn nudged(net: &Network<f64>, layer: usize, is_bias: bool, i: usize, h: f64) -> Network<f64> {
        let mut n = net.clone();
        let p = n.params_mut(layer).unwrap();
        let t = if is_bias { &mut p.bias } else { &mut p.weight };
        t.data_mut()[i] += h;
        n
    }

    fn loss_at(net: &Network<f64>, x: &Tensor<f64>, target: usize) -> f64 {
        let t = net.forward(x, Mode::Infer).unwrap();
        cross_entropy_loss(&t.probabilities, target).unwrap()
    }

    #[test]
    fn backprop_matches_central_differences() {
        let net = small_net(3);
        let mut r = rng::rng(4);
        let x = Tensor::from_fn(&[6, 5, 2], |_| r.random_range(-1.0..1.0)).unwrap();
        let trace = net.forward(&x, Mode::Infer).unwrap();
        let grads = backward(&net, &trace, 1).unwrap();
        let h = 1e-3;
        for (layer, is_bias, i, g) in grads.iter() {
            let plus = nudged(&net, layer, is_bias, i, h);
            let minus = nudged(&net, layer, is_bias, i, -h);
            let fd = (loss_at(&plus, &x, 1) - loss_at(&minus, &x, 1)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel <= 1e-4, "layer {layer} bias {is_bias} [{i}]: {g} vs {fd}");
        }
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let net = small_net(1);
        let other: Network<f64> =
            build_architecture(Architecture::Single, &[9, 9, 1], 3, &ArchConfig::default()).unwrap();
        let t = other
            .forward(&Tensor::zeros(&[9, 9, 1]).unwrap(), Mode::Infer)
            .unwrap();
        assert!(backward(&net, &t, 0).is_err());
    }

    fn separable(n: usize, seed: u64) -> Vec<Example<f32>> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let shift = if label == 0 { -1.0 } else { 1.0 };
                Example {
                    input: Tensor::from_fn(&[10, 10, 1], |_| shift + r.random_range(-0.5f32..0.5))
                        .unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let mut net: Network<f32> =
            build_architecture(Architecture::Single, &[10, 10, 1], 2, &ArchConfig::default())
                .unwrap();
        net.init_parameters(9);
        let data = separable(40, 1);
        let (initial, _) = evaluate_loss(&net, &data).unwrap();
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(net.clone(), &data, &data[..10], &cfg).unwrap();
        assert_eq!(hist.len(), 2);
        assert!(hist.records[0].train_loss < initial);
        let (after, _) = evaluate_loss(&trained, &data).unwrap();
        assert!(after < initial);
        let (again, hist2) = train(net.clone(), &data, &data[..10], &cfg).unwrap();
        assert_eq!(again, trained);
        assert_eq!(hist.to_csv(), hist2.to_csv());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut net: Network<f32> =
            build_architecture(Architecture::Single, &[10, 10, 1], 2, &ArchConfig::default())
                .unwrap();
        net.init_parameters(2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, hist) = train(net.clone(), &separable(4, 0), &[], &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let mut net: Network<f32> =
            build_architecture(Architecture::Single, &[10, 10, 1], 2, &ArchConfig::default())
                .unwrap();
        net.init_parameters(2);
        let mut data = separable(4, 0);
        data[0].input.data_mut()[0] = f32::NAN;
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train(net, &data, &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, batch: 0, .. }), "{err}");
    }
}
