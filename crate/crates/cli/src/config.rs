//! Config files plus flag overrides. Flags always win.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;

use crate::args::{RcflaneFlags, TrainFlags};
use crate::error::usage;
use rainlane_core::kpn::TrainConfig;
use rainlane_core::RcflaneConfig;

/// Reads `path` as JSON when it ends in `.json`, TOML otherwise.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("config {}: {e}", path.display())))
}

macro_rules! set {
    ($flag:expr => $field:expr) => {
        if let Some(v) = $flag {
            $field = v;
        }
    };
}

pub fn rcflane_config(flags: &RcflaneFlags, seed: Option<u64>) -> anyhow::Result<RcflaneConfig> {
    let mut cfg: RcflaneConfig = match &flags.config {
        Some(path) => read_config(path)?,
        None => RcflaneConfig::default(),
    };
    set!(flags.beta => cfg.beta);
    set!(flags.gamma => cfg.mask.gamma);
    set!(flags.mask_value => cfg.mask.mask_value);
    set!(flags.lambda => cfg.fog.lambda);
    set!(flags.atmos => cfg.fog.atmos_light);
    set!(flags.density => cfg.rain.density);
    set!(flags.streak_length => cfg.rain.streak_length);
    set!(flags.angle => cfg.rain.angle_deg);
    set!(flags.noise_sigma => cfg.rain.noise_sigma);
    set!(flags.threshold => cfg.rain.threshold);
    set!(seed => cfg.rain.seed);
    if let Some(s) = flags.fog_scale {
        cfg.fog.fog_scale = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(flags: &TrainFlags) -> anyhow::Result<TrainConfig> {
    let mut cfg: TrainConfig = match &flags.config {
        Some(path) => read_config(path)?,
        None => TrainConfig::default(),
    };
    set!(flags.lr => cfg.learning_rate);
    set!(flags.momentum => cfg.momentum);
    set!(flags.steps => cfg.steps);
    set!(flags.batch => cfg.batch);
    set!(flags.seed => cfg.seed);
    set!(flags.crop => cfg.crop);
    set!(flags.hidden.clone() => cfg.arch.hidden);
    set!(flags.ksize => cfg.arch.ksize);
    set!(flags.levels => cfg.arch.levels);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::{classify, ErrorKind};

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rain.toml");
        fs::write(&path, "beta = 0.5\n[mask]\ngamma = 0.7\n[rain]\nseed = 9\n").unwrap();
        let flags = RcflaneFlags {
            config: Some(path),
            gamma: Some(0.4),
            ..RcflaneFlags::default()
        };
        let cfg = rcflane_config(&flags, None).unwrap();
        assert_eq!((cfg.beta, cfg.mask.gamma, cfg.rain.seed), (0.5, 0.4, 9));
        assert_eq!(rcflane_config(&flags, Some(3)).unwrap().rain.seed, 3);
    }

    #[test]
    fn json_train_config_and_flag_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        fs::write(
            &path,
            r#"{"steps": 7, "arch": {"in_channels": 3, "hidden": [4], "ksize": 3, "levels": 2}}"#,
        )
        .unwrap();
        let flags = TrainFlags {
            config: Some(path),
            batch: Some(2),
            ..TrainFlags::default()
        };
        let cfg = train_config(&flags).unwrap();
        assert_eq!(
            (cfg.steps, cfg.batch, cfg.arch.hidden.clone()),
            (7, 2, vec![4])
        );
    }

    #[test]
    fn bad_files_and_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "nonsense = 1\n").unwrap();
        let flags = RcflaneFlags {
            config: Some(path),
            ..RcflaneFlags::default()
        };
        assert_eq!(
            classify(&rcflane_config(&flags, None).unwrap_err()),
            ErrorKind::Usage
        );
        let flags = RcflaneFlags {
            gamma: Some(2.0),
            ..RcflaneFlags::default()
        };
        assert_eq!(
            classify(&rcflane_config(&flags, None).unwrap_err()),
            ErrorKind::Usage
        );
    }
}
