use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar100_binary, load_idx, make_synthetic_blobs, Split, TrainTest};
use crate::error::{Error, Result};
use crate::trainer::{AblationFlags, TrainerConfig};

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        num_classes: usize,
        dim: usize,
        samples_per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        resolution: Option<usize>,
    },
}

impl DatasetSpec {
    fn paths(&self) -> Vec<(&'static str, &Path)> {
        match self {
            DatasetSpec::Synthetic { .. } => Vec::new(),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![
                ("dataset.train_images", train_images),
                ("dataset.train_labels", train_labels),
                ("dataset.test_images", test_images),
                ("dataset.test_labels", test_labels),
            ],
            DatasetSpec::Cifar { train, test, .. } => {
                vec![("dataset.train", train), ("dataset.test", test)]
            }
        }
    }

    pub fn load(&self) -> Result<TrainTest> {
        match self {
            DatasetSpec::Synthetic {
                num_classes,
                dim,
                samples_per_class,
                spread,
                seed,
            } => make_synthetic_blobs(*num_classes, *dim, *samples_per_class, *spread, *seed),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok(TrainTest {
                train: load_idx(train_images, train_labels, Split::Train)?,
                test: load_idx(test_images, test_labels, Split::Test)?,
            }),
            DatasetSpec::Cifar {
                train,
                test,
                resolution,
            } => Ok(TrainTest {
                train: load_cifar100_binary(train, Split::Train, *resolution)?,
                test: load_cifar100_binary(test, Split::Test, *resolution)?,
            }),
        }
    }
}

/// A named ablation variant. Flags default to the built-in variant of that name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<AblationFlags>,
}

impl VariantSpec {
    pub fn named(name: &str) -> Self {
        VariantSpec {
            name: name.into(),
            flags: None,
        }
    }

    pub fn resolved_flags(&self) -> Result<AblationFlags> {
        self.flags
            .or_else(|| AblationFlags::for_variant(&self.name))
            .ok_or_else(|| {
                Error::config(
                    "variants",
                    format!("`{}` is not a built-in variant and has no flags", self.name),
                )
            })
    }

    /// Directory name for this variant's results.
    pub fn slug(&self) -> String {
        slugify(&self.name)
    }
}

/// Keeps ASCII alphanumerics, `+`, `-` and `_`; other runs of characters become `_`.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() || matches!(ch, '+' | '-' | '_') {
            out.push(ch);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_');
    if trimmed.is_empty() {
        "variant".into()
    } else {
        trimmed.into()
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Full description of an ablation matrix run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub variants: Vec<VariantSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates a JSON config. Errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        let mut names = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for (i, v) in self.variants.iter().enumerate() {
            if !names.insert(v.name.as_str()) {
                return Err(Error::config(format!("variants[{i}].name"), format!("duplicate variant `{}`", v.name)));
            }
            if !slugs.insert(v.slug()) {
                return Err(Error::config(
                    format!("variants[{i}].name"),
                    format!("`{}` maps to the same directory as another variant", v.name),
                ));
            }
            v.resolved_flags()
                .map_err(|_| Error::config(format!("variants[{i}].flags"), format!("unknown variant `{}` needs explicit flags", v.name)))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut seen = BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::config("seeds", format!("seed {s} listed twice")));
        }
        for (key, path) in self.dataset.paths() {
            if !path.exists() {
                return Err(Error::config(key, format!("{} does not exist", path.display())));
            }
        }
        self.trainer.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("trainer.{key}"), message),
            other => other,
        })
    }

    /// Sorted-key, pretty-printed JSON; parsing it back gives the same config.
    pub fn canonical_echo(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }

    /// Restricts the matrix to the named variants and/or the given seeds.
    pub fn restrict(&mut self, variants: &[String], seeds: &[u64]) -> Result<()> {
        if !variants.is_empty() {
            for name in variants {
                if !self.variants.iter().any(|v| &v.name == name) {
                    return Err(Error::config("variants", format!("no variant named `{name}`")));
                }
            }
            self.variants.retain(|v| variants.contains(&v.name));
        }
        if !seeds.is_empty() {
            self.seeds = seeds.to_vec();
        }
        self.validate()
    }
}
