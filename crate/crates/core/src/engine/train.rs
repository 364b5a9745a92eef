use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{decode_argmax, image_to_tensor, sample_target, Checkpoint, EngineError, TrainConfig};
use crate::arch::NetworkSpec;
use crate::data::{augment_random, AugmentOp, FundusSample};
use crate::loss::{gdl_grad_logits, OneHotTarget};
use crate::metrics::evaluate_pair;
use crate::nn::{Adam, Network, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice_od: f64,
    pub val_dice_oc: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_dice_od,val_dice_oc,learning_rate\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_dice_od, r.val_dice_oc, r.learning_rate
            )
            .expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStop { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation mean dice.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: History,
    pub stop: StopReason,
}

struct Prepared {
    x: Array3<f32>,
    target: OneHotTarget,
}

fn prepare(sample: &FundusSample) -> Result<Prepared, EngineError> {
    Ok(Prepared {
        x: image_to_tensor(&sample.image),
        target: sample_target(&sample.labels)?,
    })
}

fn check_shapes(spec: &NetworkSpec, samples: &[FundusSample]) -> Result<(), EngineError> {
    let expected = (spec.input.width as u32, spec.input.height as u32);
    for s in samples {
        if s.dimensions() != expected {
            return Err(EngineError::SampleShape {
                id: s.id.clone(),
                expected,
                found: s.dimensions(),
            });
        }
    }
    Ok(())
}

/// Forward, loss and backward for one sample; gradients scaled by `scale` are
/// added to `grads`. `None` signals non-finite logits or loss.
fn accumulate(
    net: &Network<f32>,
    p: &Prepared,
    scale: f32,
    grads: &mut Parameters<f32>,
) -> Result<Option<(f64, Array3<f32>)>, EngineError> {
    let tape = net.forward_train(&p.x)?;
    if tape.logits.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let (loss, _, dlogits) = gdl_grad_logits(&tape.logits.mapv(f64::from), &p.target)?;
    if !loss.is_finite() {
        return Ok(None);
    }
    net.backward(&tape, &dlogits.mapv(|v| v as f32 * scale), grads);
    Ok(Some((loss, tape.probs)))
}

fn mean_dice(net: &Network<f32>, samples: &[FundusSample]) -> Result<(f64, f64), EngineError> {
    let (mut od, mut oc) = (0.0, 0.0);
    for s in samples {
        let probs = net.forward_sample(&image_to_tensor(&s.image))?;
        let m = evaluate_pair(&decode_argmax(&probs)?, &s.labels)?;
        od += m.od.dice;
        oc += m.oc.dice;
    }
    let n = samples.len() as f64;
    Ok((od / n, oc / n))
}

/// Minimizes the mean generalized dice loss with Adam. Validation falls back
/// to the training set when `val_set` is empty.
pub fn train(
    spec: &NetworkSpec,
    train_set: &[FundusSample],
    val_set: &[FundusSample],
    config: &TrainConfig,
) -> Result<TrainOutcome, EngineError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(EngineError::EmptySet("training"));
    }
    check_shapes(spec, train_set)?;
    check_shapes(spec, val_set)?;
    let val_set = if val_set.is_empty() {
        train_set
    } else {
        val_set
    };

    let mut net = Network::<f32>::new(spec.clone(), config.seed)?;
    let mut adam = Adam::new(net.parameters(), config.learning_rate);
    let mut grads = net.parameters().zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fixed: Vec<Prepared> = if config.augmentation {
        Vec::new()
    } else {
        train_set.iter().map(prepare).collect::<Result<_, _>>()?
    };

    let mut best = Checkpoint::from_network(&net, 0, None, None, config.seed, Some(config.clone()));
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut history = History::default();
    let mut stop = StopReason::Completed;

    for epoch in 1..=config.epochs {
        adam.learning_rate = config.learning_rate_at(epoch - 1);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let augmented;
                let p = if config.augmentation {
                    let s = augment_random(&train_set[i], &AugmentOp::ALL, rng.next_u64());
                    augmented = prepare(&s)?;
                    &augmented
                } else {
                    &fixed[i]
                };
                match accumulate(&net, p, scale, &mut grads)? {
                    Some((loss, _)) => loss_sum += loss,
                    None => {
                        return Err(EngineError::Diverged {
                            epoch,
                            last_good: Box::new(best),
                        })
                    }
                }
            }
            if !grads.all_finite() {
                return Err(EngineError::Diverged {
                    epoch,
                    last_good: Box::new(best),
                });
            }
            adam.step(net.parameters_mut(), &grads);
        }
        if !net.parameters().all_finite() {
            return Err(EngineError::Diverged {
                epoch,
                last_good: Box::new(best),
            });
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let (od, oc) = mean_dice(&net, val_set)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_dice_od: od,
            val_dice_oc: oc,
            learning_rate: adam.learning_rate,
        });
        let score = (od + oc) / 2.0;
        if score > best_score {
            best_score = score;
            since_best = 0;
            best = Checkpoint::from_network(
                &net,
                epoch,
                Some(train_loss),
                Some((od, oc)),
                config.seed,
                Some(config.clone()),
            );
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                stop = StopReason::EarlyStop { epoch };
                break;
            }
        }
    }
    let last_record = history.records.last().expect("at least one epoch");
    let last = Checkpoint::from_network(
        &net,
        last_record.epoch,
        Some(last_record.train_loss),
        Some((last_record.val_dice_od, last_record.val_dice_oc)),
        config.seed,
        Some(config.clone()),
    );
    Ok(TrainOutcome {
        best,
        last,
        history,
        stop,
    })
}

/// Per-iteration training curves of [`overfit_single`]. Dice values are
/// measured on the prediction that produced that iteration's gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverfitReport {
    pub loss: Vec<f64>,
    pub dice_od: Vec<f64>,
    pub dice_oc: Vec<f64>,
}

impl OverfitReport {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn final_dice(&self) -> Option<(f64, f64)> {
        Some((*self.dice_od.last()?, *self.dice_oc.last()?))
    }

    pub fn best_dice(&self) -> Option<(f64, f64)> {
        let best = |v: &[f64]| {
            v.iter()
                .copied()
                .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))))
        };
        Some((best(&self.dice_od)?, best(&self.dice_oc)?))
    }
}

/// Repeated Adam steps on a single sample.
pub fn overfit_single(
    spec: &NetworkSpec,
    sample: &FundusSample,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<OverfitReport, EngineError> {
    if iterations == 0 {
        return Err(EngineError::Config("iterations must be at least 1".into()));
    }
    check_shapes(spec, std::slice::from_ref(sample))?;
    let mut net = Network::<f32>::new(spec.clone(), seed)?;
    let mut adam = Adam::new(net.parameters(), learning_rate);
    let mut grads = net.parameters().zeros_like();
    let p = prepare(sample)?;
    let mut report = OverfitReport::default();
    for it in 1..=iterations {
        grads.fill_zero();
        let Some((loss, probs)) = accumulate(&net, &p, 1.0, &mut grads)? else {
            return Err(EngineError::Diverged {
                epoch: it,
                last_good: Box::new(Checkpoint::from_network(&net, it, None, None, seed, None)),
            });
        };
        let m = evaluate_pair(&decode_argmax(&probs)?, &sample.labels)?;
        report.loss.push(loss);
        report.dice_od.push(m.od.dice);
        report.dice_oc.push(m.oc.dice);
        adam.step(net.parameters_mut(), &grads);
    }
    Ok(report)
}

/// Means over consecutive non-overlapping windows never rise by more than
/// `tolerance`. A trailing partial window is ignored.
pub fn smoothed_loss_non_increasing(loss: &[f64], window: usize, tolerance: f64) -> bool {
    let means: Vec<f64> = loss
        .chunks_exact(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    means.windows(2).all(|w| w[1] <= w[0] + tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{default_network_spec, SkipMode, TensorShape};
    use crate::data::synthetic::synthetic_sample;

    fn tiny() -> (NetworkSpec, Vec<FundusSample>) {
        let spec = default_network_spec(TensorShape::new(32, 32, 3), 3, SkipMode::Concat).unwrap();
        (
            spec,
            vec![synthetic_sample(32, 32, 1), synthetic_sample(32, 32, 2)],
        )
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            input_side: 32,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_run() {
        let (spec, samples) = tiny();
        let out = train(&spec, &samples, &[], &config(1)).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best.meta.epoch, 1);
        assert_eq!(out.stop, StopReason::Completed);
        assert!(out.history.to_csv().starts_with("epoch,train_loss"));
    }

    #[test]
    fn same_seed_same_history() {
        let (spec, samples) = tiny();
        let cfg = TrainConfig {
            augmentation: true,
            ..config(2)
        };
        let a = train(&spec, &samples, &samples[..1], &cfg).unwrap();
        let b = train(&spec, &samples, &samples[..1], &cfg).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.last.weights(), b.last.weights());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (spec, samples) = tiny();
        let cfg = TrainConfig {
            learning_rate: 1e3,
            batch_size: 1,
            ..config(5)
        };
        let err = train(&spec, &samples, &[], &cfg).unwrap_err();
        assert!(matches!(err, EngineError::Diverged { .. }), "{err}");
    }

    #[test]
    fn rejects_wrong_sizes_and_empty_sets() {
        let (spec, _) = tiny();
        let big = vec![synthetic_sample(64, 64, 0)];
        assert!(matches!(
            train(&spec, &big, &[], &config(1)),
            Err(EngineError::SampleShape { .. })
        ));
        assert!(matches!(
            train(&spec, &[], &[], &config(1)),
            Err(EngineError::EmptySet(_))
        ));
    }

    #[test]
    fn overfit_trajectory_lengths() {
        let (spec, samples) = tiny();
        let r = overfit_single(&spec, &samples[0], 1, 1e-3, 0).unwrap();
        assert_eq!(r.len(), 1);
        let blank = FundusSample {
            labels: crate::data::LabelMap::filled(32, 32, crate::data::Class::Background),
            ..samples[0].clone()
        };
        let r = overfit_single(&spec, &blank, 3, 1e-3, 0).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.dice_oc.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn smoothing_check() {
        assert!(smoothed_loss_non_increasing(
            &[5.0, 4.0, 6.0, 3.0, 2.0, 1.0],
            3,
            0.0
        ));
        assert!(!smoothed_loss_non_increasing(&[1.0, 1.0, 2.0, 2.0], 2, 0.0));
        assert!(smoothed_loss_non_increasing(
            &[1.0, 1.0, 1.05, 1.05],
            2,
            0.1
        ));
    }
}
