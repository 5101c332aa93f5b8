//! Training loop: per-epoch seeded shuffle, augmentation, gradient
//! accumulation over the batch in sample order, Adam updates, and a per-step
//! loss CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::augment;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossReport};
use crate::metrics::mae;
use crate::model::Model;
use crate::optim::Adam;
use crate::params::{apply_bn_updates, Forward};
use crate::synth::{dataset_ids, load_sample, Sample};
use crate::tensor::Tensor;

pub struct TrainOutcome {
    pub model: Model,
    pub steps: usize,
    pub reports: Vec<LossReport>,
}

/// Mean training-set MAE of the object map, evaluated without augmentation.
pub fn training_mae(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        let (so, _) = model.predict(&s.image)?;
        acc += mae(&so, &s.gt)?;
    }
    Ok(acc / samples.len() as f64)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let ids = dataset_ids(dir)?;
    if ids.is_empty() {
        return Err(Error::invalid(format!("no samples under {}", dir.display())));
    }
    ids.iter().map(|id| load_sample(dir, id)).collect()
}

/// Train per the config; writes `loss.csv` and a checkpoint under
/// `cfg.out_dir` and returns the trained model.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_dataset(&cfg.data_dir)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let outcome = train_in_memory(cfg, &samples)?;
    let mut csv = String::from(LossReport::CSV_HEADER);
    csv.push('\n');
    for (i, r) in outcome.reports.iter().enumerate() {
        csv.push_str(&r.csv_row(i + 1));
        csv.push('\n');
    }
    fs::write(cfg.out_dir.join("loss.csv"), csv)?;
    outcome.model.save(&cfg.out_dir.join("checkpoint"))?;
    Ok(outcome)
}

/// The loop itself, decoupled from the filesystem for tests.
pub fn train_in_memory(cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    // one stream for shuffling, one for augmentation draws, so adding
    // augmentation randomness does not perturb the visit order
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_44f1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa060_e017);
    let mut reports = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut grads: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
            let mut report = LossReport::default();
            let mut bn_updates = Vec::new();
            for &idx in chunk {
                let s = &samples[idx];
                let (img, gt, bnd) = if cfg.augment {
                    augment(&s.image, &s.gt, &mut aug_rng)?
                } else {
                    (s.image.clone(), s.gt.clone(), s.boundary.clone())
                };
                let mut fwd = Forward::new(&model.store, true);
                let iv = fwd.input(img);
                let out = model.forward(&mut fwd, iv)?;
                let (total, rep) = total_loss(&mut fwd, &out, &gt, &bnd).map_err(|e| {
                    diagnostic_dump(cfg, epoch, step, &s.id, &e);
                    e
                })?;
                report.add(&rep);
                let g = fwd.tape.backward(total)?;
                for name in model.store.trainable_names().cloned().collect::<Vec<_>>() {
                    if let Some(t) = fwd.grad_of(&g, &name) {
                        match grads.remove(&name) {
                            Some(prev) => {
                                grads.insert(name, prev.zip(t, |a, b| a + b)?);
                            }
                            None => {
                                grads.insert(name, t.clone());
                            }
                        }
                    }
                }
                bn_updates.append(&mut fwd.bn_updates);
            }
            let inv = 1.0 / chunk.len() as f64;
            for t in grads.values_mut() {
                *t = t.map(|v| v * inv);
            }
            report.scale(inv);
            opt.step(&mut model.store, &grads)?;
            apply_bn_updates(&mut model.store, &bn_updates);
            reports.push(report);
        }
    }
    Ok(TrainOutcome { model, steps: step, reports })
}

fn diagnostic_dump(cfg: &TrainConfig, epoch: usize, step: usize, id: &str, err: &Error) {
    let _ = fs::create_dir_all(&cfg.out_dir);
    if let Ok(mut f) = fs::File::create(cfg.out_dir.join("diagnostic.txt")) {
        let _ = writeln!(
            f,
            "aborted at epoch {epoch}, step {step}, sample {id}: {err}\nconfig: {cfg:?}"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_sample, ShapeFamily, SynthConfig};

    fn tiny_samples(n: usize) -> Vec<Sample> {
        let cfg = SynthConfig {
            n_samples: n,
            image_size: 64,
            shape: ShapeFamily::Ellipse,
            seed: 0,
            ..Default::default()
        };
        (0..n).map(|i| gen_sample(&cfg, i).unwrap()).collect()
    }

    #[test]
    fn loss_trends_down_over_fifty_steps() {
        let samples = tiny_samples(2);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 25; // 2 samples, batch 1 => 50 steps
        let out = train_in_memory(&cfg, &samples).unwrap();
        assert_eq!(out.steps, 50);
        let first: f64 = out.reports[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let last: f64 = out.reports[40..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(last < first, "smoothed loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let samples = tiny_samples(2);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 2;
        let a = train_in_memory(&cfg, &samples).unwrap();
        let b = train_in_memory(&cfg, &samples).unwrap();
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.total, rb.total);
        }
        let img = &samples[0].image;
        assert_eq!(
            a.model.predict(img).unwrap().0.data(),
            b.model.predict(img).unwrap().0.data()
        );
    }

    #[test]
    fn report_components_sum_to_total() {
        let samples = tiny_samples(1);
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 1;
        let out = train_in_memory(&cfg, &samples).unwrap();
        for r in &out.reports {
            let sum = r.ppa_final + r.ce_final + r.ppa_fg + r.ppa_bg + r.ce_bnd.iter().sum::<f64>();
            assert!((sum - r.total).abs() < 1e-9);
        }
    }
}
