//! Flat `key = value` run configuration. Keys mirror the training and model
//! settings; `#` starts a comment.

use std::path::Path;

use mmva::model::ModelConfig;
use mmva::training::{TrainConfig, TrainMode};
use mmva::Error;
use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key} = {value}`: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "lr_min" => t.lr_min = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "eps" => t.eps = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "mode" => t.mode = value.parse::<TrainMode>()?,
            "steps_per_epoch" => t.steps_per_epoch = if value == "auto" { None } else { Some(num(key, value)?) },
            "image_dim" => m.dims.features.image_dim = num(key, value)?,
            "layers" => m.dims.features.layers = num(key, value)?,
            "token_dim" => m.dims.features.token_dim = num(key, value)?,
            "embed_dim" => m.dims.embed_dim = num(key, value)?,
            "hidden_dim" => m.dims.hidden_dim = num(key, value)?,
            "dropout" => m.dropout = num(key, value)?,
            "freeze_image_projection" => m.freeze_image_projection = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim().trim_matches('"'))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.train.validate()?;
        self.model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_quotes() {
        let mut c = RunConfig::default();
        c.apply_text("# run\nepochs = 5\nmode = \"no_similarity_predictor\"  # ablation\n\nimage_dim=8\nembed_dim = 8\nsteps_per_epoch = auto\n").unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.mode, TrainMode::NoSimilarityPredictor);
        assert_eq!(c.model.dims.features.image_dim, 8);
        assert_eq!(c.train.steps_per_epoch, None);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("epoch = 3"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("lr = fast"), Err(Error::Config(_))));
        assert!(c.apply_text("just words").is_err());
        assert!(c.apply_text("mode = sideways").is_err());
    }
}
