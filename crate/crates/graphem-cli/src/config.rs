//! Experiment configuration: a TOML file with the same fields as the
//! command-line flags, flags taking precedence. Every run writes back a
//! manifest with the fully resolved values so it can be reproduced.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use graphem::model::{DatasetSpec, Preset};
use graphem::prox::DrConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Graphem,
    Mlem,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Graphem => "graphem",
            Method::Mlem => "mlem",
        }
    }
}

/// On-disk configuration; every field optional, flags override.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<Method>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub realizations: Option<u64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub dr: DrSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub preset: Option<String>,
    pub block_sizes: Option<Vec<usize>>,
    pub sigma_q: Option<f64>,
    pub sigma_r: Option<f64>,
    pub sigma_p: Option<f64>,
    pub seq_length: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    pub tolerance: Option<f64>,
    pub max_iters: Option<usize>,
    pub init_alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrSection {
    pub theta: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iters: Option<usize>,
}

/// Where the data for a run comes from.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    Preset(Preset),
    /// Fully specified synthetic dataset (seed supplied per realization).
    Custom {
        block_sizes: Vec<usize>,
        sigma_q: f64,
        sigma_r: f64,
        sigma_p: f64,
        seq_length: usize,
    },
    /// Previously generated files in a directory.
    Files(PathBuf),
}

impl DatasetSource {
    /// The dataset parameters for one realization seed. `Files` sources carry
    /// their spec in the manifest and are handled by the caller.
    pub fn spec(&self, seed: u64) -> Result<DatasetSpec> {
        match self {
            DatasetSource::Preset(p) => Ok(p.spec(seed)),
            DatasetSource::Custom { block_sizes, sigma_q, sigma_r, sigma_p, seq_length } => {
                Ok(DatasetSpec {
                    block_sizes: block_sizes.clone(),
                    sigma_q: *sigma_q,
                    sigma_r: *sigma_r,
                    sigma_p: *sigma_p,
                    seq_length: *seq_length,
                    seed,
                })
            }
            DatasetSource::Files(dir) => {
                bail!("dataset in {} has a fixed realization; no spec to reseed", dir.display())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSource::Preset(p) => p.name().to_string(),
            DatasetSource::Custom { block_sizes, .. } => format!("custom{block_sizes:?}"),
            DatasetSource::Files(dir) => dir.display().to_string(),
        }
    }
}

/// Fully resolved run parameters shared by the fitting commands.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub method: Method,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub realizations: u64,
    pub seed: u64,
    pub jobs: usize,
    pub threshold: f64,
    pub out: PathBuf,
    pub dataset: DatasetSource,
    pub em_tolerance: f64,
    pub em_max_iters: usize,
    pub init_alpha: f64,
    pub dr: DrConfig,
}

/// Flag values that override the file config; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub realizations: Option<u64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub em_tolerance: Option<f64>,
    pub em_max_iters: Option<usize>,
    pub init_alpha: Option<f64>,
    pub dr_theta: Option<f64>,
    pub dr_tolerance: Option<f64>,
    pub dr_max_iters: Option<usize>,
}

pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Experiment> {
    let dataset = resolve_dataset(&file.dataset, &flags)?;
    let out = flags
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("graphem-out"));

    Ok(Experiment {
        method: flags.method.or(file.method).unwrap_or(Method::Graphem),
        gamma: flags.gamma.or(file.gamma),
        gamma_grid: flags.gamma_grid.or(file.gamma_grid),
        realizations: flags.realizations.or(file.realizations).unwrap_or(1),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        jobs: flags.jobs.or(file.jobs).unwrap_or(1).max(1),
        threshold: flags
            .threshold
            .or(file.threshold)
            .unwrap_or(graphem::metrics::DEFAULT_EDGE_THRESHOLD),
        out,
        dataset,
        em_tolerance: flags.em_tolerance.or(file.em.tolerance).unwrap_or(1e-3),
        em_max_iters: flags.em_max_iters.or(file.em.max_iters).unwrap_or(50),
        init_alpha: flags.init_alpha.or(file.em.init_alpha).unwrap_or(0.1),
        dr: DrConfig {
            theta: flags.dr_theta.or(file.dr.theta).unwrap_or(1.0),
            tolerance: flags.dr_tolerance.or(file.dr.tolerance).unwrap_or(1e-3),
            max_iters: flags.dr_max_iters.or(file.dr.max_iters).unwrap_or(5000),
        },
    })
}

fn resolve_dataset(section: &DatasetSection, flags: &Overrides) -> Result<DatasetSource> {
    if let Some(dir) = &flags.data_dir {
        return Ok(DatasetSource::Files(dir.clone()));
    }
    if let Some(name) = flags.preset.as_deref().or(section.preset.as_deref()) {
        return Ok(DatasetSource::Preset(Preset::from_name(name)?));
    }
    if let Some(block_sizes) = &section.block_sizes {
        return Ok(DatasetSource::Custom {
            block_sizes: block_sizes.clone(),
            sigma_q: section.sigma_q.context("custom dataset needs sigma_q")?,
            sigma_r: section.sigma_r.context("custom dataset needs sigma_r")?,
            sigma_p: section.sigma_p.context("custom dataset needs sigma_p")?,
            seq_length: section.seq_length.context("custom dataset needs seq_length")?,
        });
    }
    bail!("no dataset given: pass --preset, --data-dir, or a [dataset] config section")
}

/// Everything needed to reproduce a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub method: String,
    pub dataset: ManifestDataset,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub realizations: u64,
    pub seed: u64,
    pub jobs: usize,
    pub threshold: f64,
    pub em: ManifestEm,
    pub dr: ManifestDr,
}

#[derive(Debug, Serialize)]
pub struct ManifestDataset {
    pub preset: Option<String>,
    pub block_sizes: Vec<usize>,
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub sigma_p: f64,
    pub seq_length: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct ManifestEm {
    pub tolerance: f64,
    pub max_iters: usize,
    pub init_alpha: f64,
}

#[derive(Debug, Serialize)]
pub struct ManifestDr {
    pub theta: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Manifest {
    pub fn new(command: &str, experiment: &Experiment, spec: &DatasetSpec) -> Self {
        let preset = match &experiment.dataset {
            DatasetSource::Preset(p) => Some(p.name().to_string()),
            _ => None,
        };
        Manifest {
            command: command.to_string(),
            method: experiment.method.name().to_string(),
            dataset: ManifestDataset {
                preset,
                block_sizes: spec.block_sizes.clone(),
                sigma_q: spec.sigma_q,
                sigma_r: spec.sigma_r,
                sigma_p: spec.sigma_p,
                seq_length: spec.seq_length,
                seed: spec.seed,
            },
            gamma: experiment.gamma,
            gamma_grid: experiment.gamma_grid.clone(),
            realizations: experiment.realizations,
            seed: experiment.seed,
            jobs: experiment.jobs,
            threshold: experiment.threshold,
            em: ManifestEm {
                tolerance: experiment.em_tolerance,
                max_iters: experiment.em_max_iters,
                init_alpha: experiment.init_alpha,
            },
            dr: ManifestDr {
                theta: experiment.dr.theta,
                tolerance: experiment.dr.tolerance,
                max_iters: experiment.dr.max_iters,
            },
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing manifest")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Reads the dataset spec back out of a generated manifest.
pub fn read_manifest_spec(path: &Path) -> Result<DatasetSpec> {
    #[derive(Deserialize)]
    struct Doc {
        dataset: DatasetDoc,
    }
    #[derive(Deserialize)]
    struct DatasetDoc {
        block_sizes: Vec<usize>,
        sigma_q: f64,
        sigma_r: f64,
        sigma_p: f64,
        seq_length: usize,
        seed: u64,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let doc: Doc = toml::from_str(&text).context("parsing manifest")?;
    Ok(DatasetSpec {
        block_sizes: doc.dataset.block_sizes,
        sigma_q: doc.dataset.sigma_q,
        sigma_r: doc.dataset.sigma_r,
        sigma_p: doc.dataset.sigma_p,
        seq_length: doc.dataset.seq_length,
        seed: doc.dataset.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: FileConfig = toml::from_str(
            r#"
            method = "mlem"
            gamma = 5.0
            seed = 7
            [dataset]
            preset = "B"
            [em]
            max_iters = 10
            "#,
        )
        .unwrap();
        let flags = Overrides {
            gamma: Some(2.0),
            preset: Some("A".into()),
            ..Default::default()
        };
        let exp = resolve(file, flags).unwrap();
        assert_eq!(exp.method, Method::Mlem);
        assert_eq!(exp.gamma, Some(2.0));
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.em_max_iters, 10);
        assert!(matches!(exp.dataset, DatasetSource::Preset(Preset::A)));
    }

    #[test]
    fn defaults_fill_the_gaps() {
        let flags = Overrides { preset: Some("C".into()), ..Default::default() };
        let exp = resolve(FileConfig::default(), flags).unwrap();
        assert_eq!(exp.method, Method::Graphem);
        assert_eq!(exp.realizations, 1);
        assert_eq!(exp.seed, 0);
        assert_eq!(exp.threshold, 1e-10);
        assert_eq!(exp.em_max_iters, 50);
        assert_eq!(exp.dr.theta, 1.0);
        assert_eq!(exp.dr.tolerance, 1e-3);
        assert_eq!(exp.dr.max_iters, 5000);
    }

    #[test]
    fn missing_dataset_is_an_error() {
        assert!(resolve(FileConfig::default(), Overrides::default()).is_err());
    }

    #[test]
    fn unknown_preset_is_an_error() {
        let flags = Overrides { preset: Some("E".into()), ..Default::default() };
        assert!(resolve(FileConfig::default(), flags).is_err());
    }

    #[test]
    fn custom_dataset_requires_all_noise_scales() {
        let file: FileConfig = toml::from_str(
            r#"
            [dataset]
            block_sizes = [2, 2]
            sigma_q = 0.1
            "#,
        )
        .unwrap();
        assert!(resolve(file, Overrides::default()).is_err());
    }
}
