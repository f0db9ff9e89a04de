//! Command implementations. Each one is a pure function of the resolved
//! config, the input files, and the seed; everything written to disk is
//! reproducible byte for byte except the wall_seconds metrics column, which
//! reports real elapsed time.

use std::path::{Path, PathBuf};

use hfbm_core::geom::RotationSetting;
use hfbm_core::rng::derive_seed;
use hfbm_mae::{
    extract_probe_features, finetune_classifier, finetune_segmenter, load_checkpoint,
    pretrain_observed, read_checkpoint_config, save_checkpoint, FeatureDrop, FinetuneReport,
    FinetuneScope, FinetuneSettings, MaeModel, TrainSettings,
};
use hfbm_probe::{evaluate_grid, few_shot_episode, train_probe, GridReport};

use crate::config::{RunConfig, PROBE_EPOCHS, PROBE_LR};
use crate::data::load_split;
use crate::output::{ensure_dir, write_csv};
use crate::CliError;

/// Clouds per forward pass when extracting frozen features.
const EXTRACT_BATCH: usize = 32;

fn train_settings(config: &RunConfig, seed_tag: &str, drop: FeatureDrop) -> TrainSettings {
    TrainSettings {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        weight_decay: config.weight_decay,
        rotation: config.train_rotation,
        seed: derive_seed(config.seed, seed_tag, 0),
        drop,
    }
}

/// Load a checkpoint after verifying it was produced by the configured
/// model; a mismatch error lists every differing field.
fn load_compatible(config: &RunConfig, path: &Path) -> Result<(MaeModel<f32>, u64), CliError> {
    let (stored, _) = read_checkpoint_config(path)?;
    let diffs = config.model.diff(&stored);
    if !diffs.is_empty() {
        return Err(CliError::Config(format!(
            "checkpoint {} does not match the configured model: {}",
            path.display(),
            diffs.join("; ")
        )));
    }
    Ok(load_checkpoint::<f32>(path)?)
}

pub fn cmd_pretrain(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let hash = config.hash();
    let data = load_split(config, "train")?;
    let mut model = MaeModel::<f32>::new(config.model.clone(), derive_seed(config.seed, "model", 0));
    let settings = train_settings(config, "pretrain", FeatureDrop::none());

    let every = config.checkpoint_every;
    let epochs = config.epochs;
    let out_for_epochs = out.clone();
    let report = pretrain_observed(&mut model, &data, &settings, |model, stats, step| {
        let done = stats.epoch + 1;
        if every > 0 && done % every == 0 && done < epochs {
            let path = out_for_epochs.join(format!("model_epoch{done:04}.ckpt"));
            save_checkpoint(&path, model, step)?;
        }
        Ok(())
    })?;

    let final_path = out.join("model_final.ckpt");
    save_checkpoint(&final_path, &model, report.steps)?;

    let rows: Vec<String> = report
        .epochs
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{:.3}",
                e.epoch + 1,
                e.mean_loss,
                e.lr,
                e.wall_seconds
            )
        })
        .collect();
    write_csv(
        &out,
        "metrics.csv",
        "epoch,mean_loss,lr,wall_seconds",
        &rows,
        config.seed,
        &hash,
    )?;

    let first = report.epochs.first().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    let last = report.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    println!(
        "pretrained {} epochs ({} steps): mean loss {first:.6} -> {last:.6}; checkpoint {}",
        report.epochs.len(),
        report.steps,
        final_path.display()
    );
    Ok(())
}

fn run_grid(
    config: &RunConfig,
    model: &MaeModel<f32>,
    train_settings: &[RotationSetting],
    test_settings: &[RotationSetting],
    drop: &FeatureDrop,
) -> Result<GridReport, CliError> {
    let train = load_split(config, "train")?;
    let test = load_split(config, "test")?;
    Ok(evaluate_grid(
        model,
        &train,
        &test,
        train_settings,
        test_settings,
        PROBE_EPOCHS,
        PROBE_LR,
        derive_seed(config.seed, "grid", 0),
        drop,
    )?)
}

pub fn cmd_probe(config: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (model, _) = load_compatible(config, checkpoint)?;
    let report = run_grid(
        config,
        &model,
        &[config.train_rotation],
        &[config.test_rotation],
        &FeatureDrop::none(),
    )?;
    write_grid_csv(&out, "probe.csv", &report, config)?;
    let cell = &report.cells[0];
    println!(
        "probe {}/{} accuracy {:.4} on {} test clouds",
        cell.train_setting, cell.test_setting, cell.accuracy, cell.n_test
    );
    Ok(())
}

pub fn cmd_eval_grid(config: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (model, _) = load_compatible(config, checkpoint)?;
    let all = RotationSetting::ALL;
    let report = run_grid(config, &model, &all, &all, &FeatureDrop::none())?;
    write_grid_csv(&out, "grid.csv", &report, config)?;
    println!(
        "grid of {} cells written; max spread across test settings {:.4}",
        report.cells.len(),
        report.max_spread_over_test()
    );
    Ok(())
}

fn write_grid_csv(
    out: &Path,
    name: &str,
    report: &GridReport,
    config: &RunConfig,
) -> Result<PathBuf, CliError> {
    let rows: Vec<String> = report
        .cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.train_setting, c.test_setting, c.accuracy, c.n_test, report.seed
            )
        })
        .collect();
    write_csv(
        out,
        name,
        "train_setting,test_setting,accuracy,n_test,seed",
        &rows,
        config.seed,
        &config.hash(),
    )
}

pub fn cmd_fewshot(config: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (model, _) = load_compatible(config, checkpoint)?;
    let data = load_split(config, "fewshot")?;
    let (features, _) = extract_probe_features(
        &model,
        &data,
        config.train_rotation,
        derive_seed(config.seed, "fewshot-feat", 0),
        EXTRACT_BATCH,
        &FeatureDrop::none(),
    )?;

    let plan = &config.fewshot;
    let mut accuracies = Vec::with_capacity(plan.episodes);
    let mut rows = Vec::with_capacity(plan.episodes + 1);
    for e in 0..plan.episodes {
        let episode = few_shot_episode(
            &data,
            plan.ways,
            plan.shots,
            plan.queries,
            derive_seed(config.seed, "episode", e as u64),
        )?;
        let pick = |ixs: &[usize]| -> Vec<Vec<f64>> {
            ixs.iter().map(|&i| features[i].clone()).collect()
        };
        let probe = train_probe(
            &pick(&episode.support_indices),
            &episode.support_labels,
            PROBE_EPOCHS,
            PROBE_LR,
            derive_seed(config.seed, "episode-probe", e as u64),
        )?;
        let acc = probe.evaluate(&pick(&episode.query_indices), &episode.query_labels);
        rows.push(format!("{},{}", e + 1, acc));
        accuracies.push(acc);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let var = accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / accuracies.len() as f64;
    let std = var.sqrt();
    rows.push(format!("aggregate,{mean}\u{00b1}{std}"));
    write_csv(
        &out,
        "fewshot.csv",
        "episode,accuracy",
        &rows,
        config.seed,
        &config.hash(),
    )?;
    println!(
        "{}-way {}-shot over {} episodes: {mean:.4}\u{00b1}{std:.4}",
        plan.ways, plan.shots, plan.episodes
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneTask {
    Classification,
    Segmentation,
}

pub fn cmd_finetune(
    config: &RunConfig,
    checkpoint: &Path,
    task: FinetuneTask,
    scope: FinetuneScope,
) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (mut model, _) = load_compatible(config, checkpoint)?;
    let train = load_split(config, "train")?;
    let test = load_split(config, "test")?;
    let settings = FinetuneSettings {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        weight_decay: config.weight_decay,
        rotation: config.train_rotation,
        test_rotation: config.test_rotation,
        seed: derive_seed(config.seed, "finetune", 0),
        scope,
        drop: FeatureDrop::none(),
    };
    let report: FinetuneReport = match task {
        FinetuneTask::Classification => finetune_classifier(&mut model, &train, &test, &settings)?,
        FinetuneTask::Segmentation => finetune_segmenter(&mut model, &train, &test, &settings)?,
    };

    let steps = config.epochs as u64 * train.len().div_ceil(config.batch_size) as u64;
    let ckpt_path = out.join("model_finetuned.ckpt");
    save_checkpoint(&ckpt_path, &model, steps)?;

    let rows: Vec<String> = report
        .epochs
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{:.3}",
                e.epoch + 1,
                e.train_loss,
                e.test_accuracy,
                e.wall_seconds
            )
        })
        .collect();
    write_csv(
        &out,
        "finetune.csv",
        "epoch,train_loss,test_accuracy,wall_seconds",
        &rows,
        config.seed,
        &config.hash(),
    )?;
    let what = match task {
        FinetuneTask::Classification => "accuracy",
        FinetuneTask::Segmentation => "point accuracy",
    };
    println!(
        "finetuned {} epochs: final test {what} {:.4}; checkpoint {}",
        report.epochs.len(),
        report.final_test_accuracy,
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_extract_features(config: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let (model, _) = load_compatible(config, checkpoint)?;
    let data = load_split(config, "test")?;
    let (features, labels) = extract_probe_features(
        &model,
        &data,
        config.train_rotation,
        derive_seed(config.seed, "extract", 0),
        EXTRACT_BATCH,
        &FeatureDrop::none(),
    )?;
    let width = features.first().map(Vec::len).unwrap_or(0);
    let mut header = String::from("index,label");
    for j in 0..width {
        header.push_str(&format!(",f{j}"));
    }
    let rows: Vec<String> = features
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (f, &y))| {
            let mut row = format!("{i},{y}");
            for v in f {
                row.push_str(&format!(",{v}"));
            }
            row
        })
        .collect();
    write_csv(&out, "features.csv", &header, &rows, config.seed, &config.hash())?;
    println!(
        "wrote {} feature rows of width {width} under setting {}",
        rows.len(),
        config.train_rotation
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    MaskRatio,
    RilfGroups,
}

/// Pretrain a fresh model per sweep setting, probe it, and record one row
/// per setting. Feature-group drops apply during both pretraining and probe
/// feature extraction, so a dropped group is truly absent end to end.
pub fn cmd_ablate(config: &RunConfig, sweep: SweepKind) -> Result<(), CliError> {
    let out = config.out_dir()?.to_path_buf();
    ensure_dir(&out)?;
    let train = load_split(config, "train")?;
    let test = load_split(config, "test")?;

    enum Setting {
        Mask(f64),
        Group(String),
    }
    let settings: Vec<Setting> = match sweep {
        SweepKind::MaskRatio => config
            .ablate
            .mask_ratios
            .iter()
            .map(|&r| Setting::Mask(r))
            .collect(),
        SweepKind::RilfGroups => config
            .ablate
            .rilf_groups
            .iter()
            .map(|g| Setting::Group(g.clone()))
            .collect(),
    };

    let mut rows = Vec::with_capacity(settings.len());
    for (i, setting) in settings.iter().enumerate() {
        let mut model_config = config.model.clone();
        let drop = match setting {
            Setting::Mask(ratio) => {
                model_config.mask_ratio = *ratio;
                model_config
                    .validate()
                    .map_err(|e| CliError::Config(format!("mask ratio {ratio}: {e}")))?;
                FeatureDrop::none()
            }
            Setting::Group(name) if name == "none" => FeatureDrop::none(),
            Setting::Group(name) => FeatureDrop::from_group_name(name)
                .map_err(|e| CliError::Config(e.to_string()))?,
        };

        let mut model =
            MaeModel::<f32>::new(model_config, derive_seed(config.seed, "ablate-model", i as u64));
        let train_cfg = TrainSettings {
            epochs: config.epochs,
            batch_size: config.batch_size,
            lr: config.lr,
            weight_decay: config.weight_decay,
            rotation: config.train_rotation,
            seed: derive_seed(config.seed, "ablate-train", i as u64),
            drop: drop.clone(),
        };
        hfbm_mae::pretrain(&mut model, &train, &train_cfg)?;

        let report = evaluate_grid(
            &model,
            &train,
            &test,
            &[config.train_rotation],
            &[config.test_rotation],
            PROBE_EPOCHS,
            PROBE_LR,
            derive_seed(config.seed, "ablate-probe", i as u64),
            &drop,
        )?;
        let accuracy = report.cells[0].accuracy;
        let row = match setting {
            Setting::Mask(ratio) => format!("{ratio},{accuracy}"),
            Setting::Group(name) => format!("{name},{accuracy}"),
        };
        println!("ablate [{}] -> accuracy {accuracy:.4}", row.replace(',', " = "));
        rows.push(row);
    }

    let (name, header) = match sweep {
        SweepKind::MaskRatio => ("ablate_mask.csv", "mask_ratio,accuracy"),
        SweepKind::RilfGroups => ("ablate_rilf.csv", "drop_group,accuracy"),
    };
    write_csv(&out, name, header, &rows, config.seed, &config.hash())?;
    println!("{} rows written to {name}", rows.len());
    Ok(())
}
