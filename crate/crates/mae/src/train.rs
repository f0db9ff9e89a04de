//! Training loops: masked-reconstruction pretraining, supervised finetuning
//! of the task heads, and frozen-feature extraction for probing.

use std::time::Instant;

use hfbm_adiff::{cosine_warmup_lr, AdamW, Mode, Scalar, Session};
use hfbm_core::geom::RotationSetting;
use hfbm_core::pcio::PointCloud;
use hfbm_core::rng::{derive_seed, SeededRng};

use crate::dataset::{present, Dataset};
use crate::features::{
    assemble_full_batch, assemble_pretrain_batch, assign_points_to_patches, FeatureDrop,
};
use crate::model::MaeModel;
use crate::MaeError;

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rotation: RotationSetting,
    pub seed: u64,
    pub drop: FeatureDrop,
}

impl TrainSettings {
    pub fn desk_pretrain(seed: u64) -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.05,
            rotation: RotationSetting::R,
            seed,
            drop: FeatureDrop::none(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

/// Shuffled index order for one epoch, a pure function of (seed, epoch).
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(derive_seed(seed, "order", epoch as u64));
    rng.shuffle(&mut order);
    order
}

/// Rotate each referenced cloud with its own presentation seed. Slot is the
/// cloud's position within the epoch, making every (epoch, slot) pair a
/// distinct rotation stream.
fn rotated_chunk(
    data: &Dataset,
    chunk: &[usize],
    rotation: RotationSetting,
    seed: u64,
    epoch: usize,
    base_slot: usize,
) -> Vec<PointCloud> {
    chunk
        .iter()
        .enumerate()
        .map(|(i, &idx)| {
            let pres = epoch as u64 * data.len() as u64 + (base_slot + i) as u64;
            present(&data.clouds[idx], rotation, derive_seed(seed, "rot", pres))
        })
        .collect()
}

/// Masked-reconstruction pretraining. Deterministic for fixed settings: the
/// epoch shuffle, per-presentation rotations, per-presentation masks, and
/// optimizer state are all seeded.
pub fn pretrain<T: Scalar>(
    model: &mut MaeModel<T>,
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<PretrainReport, MaeError> {
    pretrain_observed(model, data, settings, |_, _, _| Ok(()))
}

/// [`pretrain`] with a per-epoch observer, called after each epoch with the
/// model state, that epoch's stats, and the global step count so far. Lets a
/// caller write periodic checkpoints without owning the loop.
pub fn pretrain_observed<T: Scalar>(
    model: &mut MaeModel<T>,
    data: &Dataset,
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(&MaeModel<T>, &EpochStats, u64) -> Result<(), MaeError>,
) -> Result<PretrainReport, MaeError> {
    if data.is_empty() {
        return Err(MaeError::Data("pretraining dataset is empty".into()));
    }
    let config = model.config.clone();
    let n = data.len();
    let batches_per_epoch = n.div_ceil(settings.batch_size);
    let total_steps = settings.epochs * batches_per_epoch;
    let mut optimizer = AdamW::new(settings.weight_decay);
    let mut report = PretrainReport { epochs: Vec::with_capacity(settings.epochs), steps: 0 };
    let mut step: u64 = 0;

    for epoch in 0..settings.epochs {
        let started = Instant::now();
        let order = epoch_order(n, settings.seed, epoch);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut last_lr = 0.0;
        for (batch_index, chunk) in order.chunks(settings.batch_size).enumerate() {
            let base_slot = batch_index * settings.batch_size;
            let presented =
                rotated_chunk(data, chunk, settings.rotation, settings.seed, epoch, base_slot);
            let aligned: Vec<&PointCloud> = chunk.iter().map(|&i| &data.clouds[i]).collect();
            let mask_seeds: Vec<u64> = (0..chunk.len())
                .map(|i| {
                    let pres = epoch as u64 * n as u64 + (base_slot + i) as u64;
                    derive_seed(settings.seed, "mask", pres)
                })
                .collect();
            let batch = assemble_pretrain_batch::<T>(
                &presented,
                &aligned,
                &config,
                &settings.drop,
                &mask_seeds,
            )?;
            let mut s = Session::new(Mode::Train, derive_seed(settings.seed, "session", step));
            let loss_id = model.pretrain_loss(&mut s, &batch);
            let loss = s.value(loss_id).to_f64_vec()[0];
            if !loss.is_finite() {
                return Err(MaeError::NonFinite { step });
            }
            s.backward(loss_id);
            let grads = s.collect_grads(model);
            last_lr = cosine_warmup_lr(settings.lr, step as usize, total_steps);
            optimizer.step(model, &grads, last_lr);
            loss_sum += loss;
            loss_count += 1;
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / loss_count as f64,
            lr: last_lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(model, &stats, step)?;
        report.epochs.push(stats);
    }
    report.steps = step;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneScope {
    /// Train only the task head; backbone parameters and statistics stay
    /// bitwise unchanged.
    HeadOnly,
    /// Train everything.
    All,
}

#[derive(Debug, Clone)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Rotation applied to training presentations.
    pub rotation: RotationSetting,
    /// Rotation applied when evaluating on the test split.
    pub test_rotation: RotationSetting,
    pub seed: u64,
    pub scope: FinetuneScope,
    pub drop: FeatureDrop,
}

#[derive(Debug, Clone)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub epochs: Vec<FinetuneEpoch>,
    pub final_test_accuracy: f64,
}

fn scoped_session<T: Scalar>(scope: FinetuneScope, prefix: &'static str, seed: u64) -> Session<T> {
    match scope {
        FinetuneScope::HeadOnly => Session::with_trainable_filter(Mode::Train, seed, move |name| {
            name.starts_with(prefix)
        }),
        FinetuneScope::All => Session::new(Mode::Train, seed),
    }
}

fn backbone_mode(scope: FinetuneScope) -> Mode {
    match scope {
        FinetuneScope::HeadOnly => Mode::Eval,
        FinetuneScope::All => Mode::Train,
    }
}

/// Supervised classification training on labeled clouds.
pub fn finetune_classifier<T: Scalar>(
    model: &mut MaeModel<T>,
    train: &Dataset,
    test: &Dataset,
    settings: &FinetuneSettings,
) -> Result<FinetuneReport, MaeError> {
    if train.is_empty() || test.is_empty() {
        return Err(MaeError::Data("finetuning needs nonempty train and test splits".into()));
    }
    if train.n_classes != model.config.cls_dim {
        return Err(MaeError::Config(format!(
            "dataset has {} classes but the model head expects {}",
            train.n_classes, model.config.cls_dim
        )));
    }
    let config = model.config.clone();
    let n = train.len();
    let total_steps = settings.epochs * n.div_ceil(settings.batch_size);
    let mut optimizer = AdamW::new(settings.weight_decay);
    let mut report = FinetuneReport { epochs: Vec::new(), final_test_accuracy: 0.0 };
    let mut step: u64 = 0;

    for epoch in 0..settings.epochs {
        let started = Instant::now();
        let order = epoch_order(n, settings.seed, epoch);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_index, chunk) in order.chunks(settings.batch_size).enumerate() {
            let base_slot = batch_index * settings.batch_size;
            let presented =
                rotated_chunk(train, chunk, settings.rotation, settings.seed, epoch, base_slot);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = assemble_full_batch::<T>(&presented, &config, &settings.drop)?;
            let mut s = scoped_session::<T>(
                settings.scope,
                "cls.",
                derive_seed(settings.seed, "session", step),
            );
            let logits = model.classify_batch(&mut s, &batch, backbone_mode(settings.scope));
            let loss_id = s.graph.cross_entropy_mean(logits, &labels);
            let loss = s.value(loss_id).to_f64_vec()[0];
            if !loss.is_finite() {
                return Err(MaeError::NonFinite { step });
            }
            s.backward(loss_id);
            let grads = s.collect_grads(model);
            let lr = cosine_warmup_lr(settings.lr, step as usize, total_steps);
            optimizer.step(model, &grads, lr);
            loss_sum += loss;
            loss_count += 1;
            step += 1;
        }
        let accuracy = evaluate_classifier(
            model,
            test,
            settings.test_rotation,
            derive_seed(settings.seed, "eval", epoch as u64),
            settings.batch_size,
            &settings.drop,
        )?;
        report.epochs.push(FinetuneEpoch {
            epoch,
            train_loss: loss_sum / loss_count as f64,
            test_accuracy: accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        report.final_test_accuracy = accuracy;
    }
    Ok(report)
}

/// Accuracy of the classification head over a labeled dataset, with a fresh
/// rotation per cloud under the given setting.
pub fn evaluate_classifier<T: Scalar>(
    model: &MaeModel<T>,
    data: &Dataset,
    rotation: RotationSetting,
    seed: u64,
    batch_size: usize,
    drop: &FeatureDrop,
) -> Result<f64, MaeError> {
    if data.is_empty() {
        return Err(MaeError::Data("evaluation dataset is empty".into()));
    }
    let config = model.config.clone();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let presented: Vec<PointCloud> = chunk
            .iter()
            .map(|&i| present(&data.clouds[i], rotation, derive_seed(seed, "rot", i as u64)))
            .collect();
        let batch = assemble_full_batch::<T>(&presented, &config, drop)?;
        let mut s = Session::new(Mode::Eval, 0);
        let logits = model.classify_batch(&mut s, &batch, Mode::Eval);
        let v = s.value(logits);
        let c = v.shape()[1];
        for (row, &idx) in chunk.iter().enumerate() {
            let row_vals = &v.data()[row * c..(row + 1) * c];
            let pred = argmax(row_vals);
            if pred == data.labels[idx] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Supervised part-segmentation training. Clouds must carry part labels.
pub fn finetune_segmenter<T: Scalar>(
    model: &mut MaeModel<T>,
    train: &Dataset,
    test: &Dataset,
    settings: &FinetuneSettings,
) -> Result<FinetuneReport, MaeError> {
    if train.is_empty() || test.is_empty() {
        return Err(MaeError::Data("finetuning needs nonempty train and test splits".into()));
    }
    for cloud in train.clouds.iter().chain(&test.clouds) {
        if cloud.part_labels.is_none() {
            return Err(MaeError::Data("segmentation needs per-point part labels".into()));
        }
    }
    let config = model.config.clone();
    let n = train.len();
    let total_steps = settings.epochs * n.div_ceil(settings.batch_size);
    let mut optimizer = AdamW::new(settings.weight_decay);
    let mut report = FinetuneReport { epochs: Vec::new(), final_test_accuracy: 0.0 };
    let mut step: u64 = 0;

    for epoch in 0..settings.epochs {
        let started = Instant::now();
        let order = epoch_order(n, settings.seed, epoch);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_index, chunk) in order.chunks(settings.batch_size).enumerate() {
            let base_slot = batch_index * settings.batch_size;
            let presented =
                rotated_chunk(train, chunk, settings.rotation, settings.seed, epoch, base_slot);
            let class_labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = assemble_full_batch::<T>(&presented, &config, &settings.drop)?;
            let assignment: Vec<Vec<usize>> = presented
                .iter()
                .zip(&batch.patch_sets)
                .map(|(cloud, patches)| assign_points_to_patches(cloud, patches))
                .collect();
            let point_labels: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| train.clouds[i].part_labels.as_ref().unwrap().iter().copied())
                .collect();
            let mut s = scoped_session::<T>(
                settings.scope,
                "seg.",
                derive_seed(settings.seed, "session", step),
            );
            let backbone = backbone_mode(settings.scope);
            let rilf = s.constant(batch.rilf.clone());
            let rigf = s.constant(batch.rigf.clone());
            let tokens = model.embed_tokens(&mut s, rilf, backbone);
            let positions = model.embed_positions(&mut s, rigf);
            let encoded = model.encode(&mut s, tokens, positions);
            let onehot = MaeModel::<T>::one_hot(&class_labels, config.cls_dim);
            let logits = model.segment(&mut s, encoded, &onehot, &assignment);
            let shape = s.value(logits).shape().to_vec();
            let flat = s.graph.reshape(logits, &[shape[0] * shape[1], shape[2]]);
            let loss_id = s.graph.cross_entropy_mean(flat, &point_labels);
            let loss = s.value(loss_id).to_f64_vec()[0];
            if !loss.is_finite() {
                return Err(MaeError::NonFinite { step });
            }
            s.backward(loss_id);
            let grads = s.collect_grads(model);
            let lr = cosine_warmup_lr(settings.lr, step as usize, total_steps);
            optimizer.step(model, &grads, lr);
            loss_sum += loss;
            loss_count += 1;
            step += 1;
        }
        let accuracy = evaluate_segmenter(
            model,
            test,
            settings.test_rotation,
            derive_seed(settings.seed, "eval", epoch as u64),
            settings.batch_size,
            &settings.drop,
        )?;
        report.epochs.push(FinetuneEpoch {
            epoch,
            train_loss: loss_sum / loss_count as f64,
            test_accuracy: accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        report.final_test_accuracy = accuracy;
    }
    Ok(report)
}

/// Point-label accuracy of the segmentation head.
pub fn evaluate_segmenter<T: Scalar>(
    model: &MaeModel<T>,
    data: &Dataset,
    rotation: RotationSetting,
    seed: u64,
    batch_size: usize,
    drop: &FeatureDrop,
) -> Result<f64, MaeError> {
    let config = model.config.clone();
    let mut correct = 0usize;
    let mut total = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let presented: Vec<PointCloud> = chunk
            .iter()
            .map(|&i| present(&data.clouds[i], rotation, derive_seed(seed, "rot", i as u64)))
            .collect();
        let class_labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let batch = assemble_full_batch::<T>(&presented, &config, drop)?;
        let assignment: Vec<Vec<usize>> = presented
            .iter()
            .zip(&batch.patch_sets)
            .map(|(cloud, patches)| assign_points_to_patches(cloud, patches))
            .collect();
        let mut s = Session::new(Mode::Eval, 0);
        let rilf = s.constant(batch.rilf.clone());
        let rigf = s.constant(batch.rigf.clone());
        let tokens = model.embed_tokens(&mut s, rilf, Mode::Eval);
        let positions = model.embed_positions(&mut s, rigf);
        let encoded = model.encode(&mut s, tokens, positions);
        let onehot = MaeModel::<T>::one_hot(&class_labels, config.cls_dim);
        let logits = model.segment(&mut s, encoded, &onehot, &assignment);
        let v = s.value(logits);
        let (p, c) = (v.shape()[1], v.shape()[2]);
        for (row, &idx) in chunk.iter().enumerate() {
            let truth = data.clouds[idx].part_labels.as_ref().unwrap();
            for point in 0..p {
                let base = (row * p + point) * c;
                if argmax(&v.data()[base..base + c]) == truth[point] {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Frozen-feature rows for linear probing: one (feature, label) pair per
/// cloud, each cloud presented under its own rotation.
pub fn extract_probe_features<T: Scalar>(
    model: &MaeModel<T>,
    data: &Dataset,
    rotation: RotationSetting,
    seed: u64,
    batch_size: usize,
    drop: &FeatureDrop,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), MaeError> {
    let config = model.config.clone();
    let mut features = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let presented: Vec<PointCloud> = chunk
            .iter()
            .map(|&i| present(&data.clouds[i], rotation, derive_seed(seed, "rot", i as u64)))
            .collect();
        let batch = assemble_full_batch::<T>(&presented, &config, drop)?;
        features.extend(model.global_feature_rows(&batch));
    }
    Ok((features, data.labels.clone()))
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
