use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutoencoderError, Cae, CaeArchitecture, Checkpoint, TrainConfig};
use crate::chart_render::{ChartImage, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image loss, each measured just before its batch's update.
    pub mean_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,mean_loss,learning_rate")?;
        for e in &self.epochs {
            writeln!(out, "{},{:e},{:e}", e.epoch, e.mean_loss, e.learning_rate)?;
        }
        Ok(())
    }
}

/// Decodes every chart in a manifest, keeping its provenance.
pub fn load_manifest_images(entries: &[ManifestEntry]) -> Result<Vec<ChartImage>, AutoencoderError> {
    entries
        .iter()
        .map(|e| {
            let mut img = ChartImage::read_png(Path::new(&e.path))?;
            img.source = Some((e.symbol.clone(), e.start_date));
            Ok(img)
        })
        .collect()
}

/// Mini-batch SGD on pixel MSE with plateau learning-rate decay.
///
/// The seed drives both weight initialisation and the per-epoch shuffle, so
/// equal inputs give an identical parameter trajectory.
pub fn train(
    images: &[ChartImage],
    arch: &CaeArchitecture,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog), AutoencoderError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(AutoencoderError::EmptyDataset);
    }
    let size = arch.input_size as u32;
    for img in images {
        if img.width != size || img.height != size {
            return Err(AutoencoderError::SizeMismatch {
                expected: arch.input_size,
                got: img.width.max(img.height) as usize,
            });
        }
    }
    let tensors: Vec<Vec<f64>> = images.iter().map(ChartImage::to_tensor).collect();

    let mut model = Cae::new(arch.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    let mut grad = vec![0.0; model.param_count()];
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += model.accumulate_gradient(&tensors[i], scale, &mut grad)?;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(AutoencoderError::NonFiniteLoss { epoch });
            }
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        let mean_loss = total / tensors.len() as f64;
        if !mean_loss.is_finite() {
            return Err(AutoencoderError::NonFiniteLoss { epoch });
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            learning_rate: lr,
        });
        if mean_loss < best - cfg.min_improvement {
            best = mean_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience.max(1) {
                lr *= cfg.lr_decay_factor;
                stale = 0;
            }
        }
    }
    let ckpt = Checkpoint::new(model, cfg.clone());
    Ok((ckpt, log))
}
