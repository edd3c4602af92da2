//! Checkpoint directories: a JSON manifest plus one tensor file per
//! parameter, batch-norm running statistic, and optimizer slot. Loading a
//! checkpoint and resuming reproduces the uninterrupted training trace
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionModel, QueryNetConfig};
use crate::error::{Error, Result};
use crate::optim::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::tensorio::{load_tensor, save_tensor};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub query_config: QueryNetConfig,
    pub visual_dim: usize,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub param_names: Vec<String>,
    pub bn_initialized: bool,
}

/// Writes `model` and `adam` (after `step` completed steps) into `dir`,
/// creating it if needed.
pub fn save_checkpoint(
    dir: &Path,
    model: &AttentionModel,
    adam: &AdamState,
    step: u64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let params = model.params();
    if adam.slots.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer has {} slots for {} parameters",
            adam.slots.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        save_tensor(&dir.join(format!("param{i}")), &p.value)?;
        save_tensor(&dir.join(format!("adam{i}_m")), &adam.slots[i].m)?;
        save_tensor(&dir.join(format!("adam{i}_v")), &adam.slots[i].v)?;
    }
    for (l, layer) in model.query.layers.iter().enumerate() {
        save_tensor(&dir.join(format!("bn{l}_mean")), &layer.bn_state.running_mean)?;
        save_tensor(&dir.join(format!("bn{l}_var")), &layer.bn_state.running_var)?;
    }
    let manifest = Manifest {
        query_config: model.query.config.clone(),
        visual_dim: model.visual_dim(),
        step,
        param_names: params.iter().map(|p| p.name.clone()).collect(),
        bn_initialized: model.query.layers.iter().all(|l| l.bn_state.initialized),
    };
    let mp = dir.join(MANIFEST_NAME);
    fs::write(&mp, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(mp.display().to_string(), e))?;
    Ok(())
}

/// Restores the model, optimizer state, and completed-step counter.
pub fn load_checkpoint(dir: &Path) -> Result<(AttentionModel, AdamState, u64)> {
    let mp = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(mp.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mp.display().to_string(),
        detail: e.to_string(),
    })?;
    // Seed only shapes the initial weights, which are overwritten below.
    let mut model = AttentionModel::init(manifest.query_config.clone(), manifest.visual_dim, 0)?;
    let mut adam = AdamState {
        slots: Vec::new(),
        step: manifest.step,
        beta1: ADAM_BETA1,
        beta2: ADAM_BETA2,
        eps: ADAM_EPS,
    };
    let expected: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    if manifest.param_names != expected {
        return Err(Error::Format {
            path: mp.display().to_string(),
            detail: "parameter list does not match the architecture".into(),
        });
    }
    for i in 0..expected.len() {
        let value = load_tensor(&dir.join(format!("param{i}")))?;
        let m = load_tensor(&dir.join(format!("adam{i}_m")))?;
        let v = load_tensor(&dir.join(format!("adam{i}_v")))?;
        let mut params = model.params_mut();
        if value.shape() != params[i].value.shape()
            || m.shape() != value.shape()
            || v.shape() != value.shape()
        {
            return Err(Error::Format {
                path: dir.join(format!("param{i}")).display().to_string(),
                detail: format!(
                    "shape {:?} does not match parameter {} ({:?})",
                    value.shape(),
                    expected[i],
                    params[i].value.shape()
                ),
            });
        }
        params[i].value = value;
        adam.slots.push(crate::optim::AdamSlot { m, v });
    }
    for (l, layer) in model.query.layers.iter_mut().enumerate() {
        let mean = load_tensor(&dir.join(format!("bn{l}_mean")))?;
        let var = load_tensor(&dir.join(format!("bn{l}_var")))?;
        if mean.shape() != layer.bn_state.running_mean.shape()
            || var.shape() != layer.bn_state.running_var.shape()
        {
            return Err(Error::Format {
                path: dir.join(format!("bn{l}_mean")).display().to_string(),
                detail: "running-statistic shape mismatch".into(),
            });
        }
        layer.bn_state.running_mean = mean;
        layer.bn_state.running_var = var;
        layer.bn_state.initialized = manifest.bn_initialized;
    }
    Ok((model, adam, manifest.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{
        model_checksum, train_attention, SyntheticPairConfig, SyntheticPairSource, TrainConfig,
    };

    fn tiny_source() -> SyntheticPairSource {
        SyntheticPairSource::new(SyntheticPairConfig {
            latent_dim: 3,
            noise_sigma: 0.0,
            acoustic_dim: 6,
            visual_dim: 5,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = TrainConfig {
            batch: 2,
            steps: 5,
            time_steps: 4,
            seed: 11,
            schedule_scale: 1000,
        };
        let src = tiny_source();
        let mut model = AttentionModel::init(QueryNetConfig::tiny(6, 4), 5, 11).unwrap();
        let mut adam = AdamState::new(&model.params());
        train_attention(&cfg, &src, &mut model, &mut adam, 0).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &adam, 5).unwrap();
        let (loaded, ladam, step) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(step, 5);
        assert_eq!(model_checksum(&loaded), model_checksum(&model));
        assert_eq!(ladam.step, adam.step);
        for (a, b) in ladam.slots.iter().zip(adam.slots.iter()) {
            assert_eq!(a.m, b.m);
            assert_eq!(a.v, b.v);
        }
        for (a, b) in loaded.query.layers.iter().zip(model.query.layers.iter()) {
            assert_eq!(a.bn_state.running_mean, b.bn_state.running_mean);
            assert_eq!(a.bn_state.running_var, b.bn_state.running_var);
            assert!(a.bn_state.initialized);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let src = tiny_source();
        let full = TrainConfig {
            batch: 2,
            steps: 12,
            time_steps: 4,
            seed: 11,
            schedule_scale: 1000,
        };

        // Uninterrupted run.
        let mut m1 = AttentionModel::init(QueryNetConfig::tiny(6, 4), 5, 11).unwrap();
        let mut a1 = AdamState::new(&m1.params());
        let r1 = train_attention(&full, &src, &mut m1, &mut a1, 0).unwrap();

        // Run 6 steps, checkpoint, reload, run the remaining 6.
        let mut half = full.clone();
        half.steps = 6;
        let mut m2 = AttentionModel::init(QueryNetConfig::tiny(6, 4), 5, 11).unwrap();
        let mut a2 = AdamState::new(&m2.params());
        let r2a = train_attention(&half, &src, &mut m2, &mut a2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &m2, &a2, 6).unwrap();
        let (mut m3, mut a3, step) = load_checkpoint(dir.path()).unwrap();
        let r2b = train_attention(&full, &src, &mut m3, &mut a3, step).unwrap();

        let resumed: Vec<u64> = r2a
            .rows
            .iter()
            .chain(r2b.rows.iter())
            .map(|r| r.loss.to_bits())
            .collect();
        let direct: Vec<u64> = r1.rows.iter().map(|r| r.loss.to_bits()).collect();
        assert_eq!(resumed, direct);
        assert_eq!(model_checksum(&m3), model_checksum(&m1));
    }

    #[test]
    fn load_rejects_missing_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(dir.path()).is_err());

        let model = AttentionModel::init(QueryNetConfig::tiny(6, 4), 5, 1).unwrap();
        let adam = AdamState::new(&model.params());
        save_checkpoint(dir.path(), &model, &adam, 0).unwrap();
        // Corrupt one parameter file's sidecar shape.
        let sidecar = dir.path().join("param0.json");
        std::fs::write(&sidecar, "{\"shape\": [1], \"dtype\": \"f64\"}").unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
