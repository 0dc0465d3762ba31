//! Minibatch SGD with momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward_batch, Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::raster::Raster;
use crate::repr::OrientedBoundaryMap;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            momentum: 0.9,
            epochs: 30,
            batch: 4,
            seed: 7,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted so a run can be used as a no-op baseline.
    pub fn check(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Mean per-image loss of each epoch, measured before each batch's update.
    pub history: Vec<f64>,
}

/// Trains the standard architecture from a seeded initialisation.
pub fn train(cfg: &TrainConfig, data: &[(Raster, OrientedBoundaryMap)]) -> Result<TrainReport> {
    let Some((first, _)) = data.first() else {
        return Err(Error::invalid("training set is empty"));
    };
    let params = ModelParams::init(&Architecture::standard(first.channels()), cfg.seed)?;
    train_from(cfg, params, data)
}

/// Continues training from given parameters.
pub fn train_from(cfg: &TrainConfig, mut params: ModelParams, data: &[(Raster, OrientedBoundaryMap)]) -> Result<TrainReport> {
    cfg.check()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    // data order stream is separate from initialisation so both are fixed by the seed
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0d0e_u64);
    let mut flat: Vec<f64> = params.flatten().iter().map(|&v| v as f64).collect();
    let mut velocity = vec![0.0f64; flat.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| (&data[i].0, &data[i].1)).collect();
            let (loss, grads) = backward_batch(&params, &batch, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss is {loss} at epoch {} batch {b}", epoch + 1)));
            }
            epoch_loss += loss;
            let g = grads.flatten();
            let scale = 1.0 / chunk.len() as f64;
            for ((p, v), gi) in flat.iter_mut().zip(&mut velocity).zip(&g) {
                *v = cfg.momentum * *v + gi * scale;
                *p -= cfg.lr * *v;
            }
            if flat.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence(format!("non-finite parameter at epoch {} batch {b}", epoch + 1)));
            }
            let as_f32: Vec<f32> = flat.iter().map(|&v| v as f32).collect();
            params.set_flat(&as_f32);
        }
        let mean = epoch_loss / data.len() as f64;
        log::info!("epoch {}: mean loss {mean:.4}", epoch + 1);
        history.push(mean);
    }
    Ok(TrainReport { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set() -> Vec<(Raster, OrientedBoundaryMap)> {
        let img = Raster::from_fn(8, 8, |_, c| if c < 4 { 0.2 } else { 0.8 }).unwrap();
        let mut gt = OrientedBoundaryMap::empty(8, 8).unwrap();
        for r in 0..8 {
            gt.edge.set(r, 4, 1.0);
            gt.orient.set(r, 4, std::f32::consts::FRAC_PI_2);
        }
        vec![(img, gt)]
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = toy_set();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let rep = train(&cfg, &data).unwrap();
        let init = ModelParams::init(&Architecture::standard(1), cfg.seed).unwrap();
        assert_eq!(rep.params, init);
        assert!(rep.history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train(&TrainConfig::default(), &[]).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let cfg = TrainConfig {
            lr: 1e30,
            epochs: 5,
            ..TrainConfig::default()
        };
        match train(&cfg, &toy_set()) {
            Err(Error::Divergence(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
