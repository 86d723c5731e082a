use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::gaussian::LabeledDataset;
use crate::data::tensor_file::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor};

/// How one out-of-distribution set is derived from the in-distribution blobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodRecipe {
    /// Class means move to alpha*mu_c + beta*delta; std scales by gamma.
    MeanShift {
        name: String,
        alpha: f32,
        beta: f32,
        gamma: f32,
        /// Shift direction; a random unit vector is drawn when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<Vec<f32>>,
    },
    /// Same class means, std scaled by gamma.
    Scale { name: String, gamma: f32 },
    /// Samples on an annulus of radius r*(1 +- 0.1) around the origin.
    Ring { name: String, radius: f32 },
    /// Samples uniform in the box [-half_width, half_width]^D.
    Uniform { name: String, half_width: f32 },
}

impl OodRecipe {
    pub fn name(&self) -> &str {
        match self {
            OodRecipe::MeanShift { name, .. }
            | OodRecipe::Scale { name, .. }
            | OodRecipe::Ring { name, .. }
            | OodRecipe::Uniform { name, .. } => name,
        }
    }
}

/// Parameters of the synthetic multi-class benchmark: C Gaussian blobs at
/// fixed angles on a circle, one train and one test split, plus OoD sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dims: usize,
    pub classes: usize,
    pub blob_radius: f32,
    pub blob_sigma: f32,
    pub train_n: usize,
    pub test_n: usize,
    pub ood_n: usize,
    pub ood_recipes: Vec<OodRecipe>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            classes: 4,
            blob_radius: 3.0,
            blob_sigma: 0.6,
            train_n: 2000,
            test_n: 1000,
            ood_n: 1000,
            ood_recipes: vec![
                OodRecipe::MeanShift {
                    name: "ood_near".into(),
                    alpha: 1.0,
                    beta: 1.5,
                    gamma: 1.0,
                    delta: None,
                },
                OodRecipe::MeanShift {
                    name: "ood_far".into(),
                    alpha: 1.0,
                    beta: 4.0,
                    gamma: 1.0,
                    delta: None,
                },
                OodRecipe::MeanShift {
                    name: "ood_scale".into(),
                    alpha: 1.0,
                    beta: 0.0,
                    gamma: 2.5,
                    delta: None,
                },
            ],
        }
    }
}

/// A generated benchmark: train/test in-distribution splits plus named OoD sets.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub ood_sets: Vec<LabeledDataset>,
}

impl Benchmark {
    pub fn datasets(&self) -> impl Iterator<Item = &LabeledDataset> {
        std::iter::once(&self.train)
            .chain(std::iter::once(&self.test))
            .chain(self.ood_sets.iter())
    }
}

fn class_means(config: &BenchmarkConfig) -> Vec<Vec<f32>> {
    // Blob c sits at angle 2*pi*c/C on a circle in the first two coordinates;
    // remaining coordinates are zero.
    (0..config.classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / config.classes as f64;
            let mut mu = vec![0.0f32; config.dims];
            mu[0] = (config.blob_radius as f64 * angle.cos()) as f32;
            if config.dims > 1 {
                mu[1] = (config.blob_radius as f64 * angle.sin()) as f32;
            }
            mu
        })
        .collect()
}

fn sample_blobs(
    means: &[Vec<f32>],
    sigma: f32,
    n: usize,
    dims: usize,
    rng: &mut Rng,
    name: &str,
) -> Result<LabeledDataset> {
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % means.len();
        for &m in &means[c] {
            data.push(m + sigma * rng.next_gaussian() as f32);
        }
        labels.push(c);
    }
    LabeledDataset::new(Tensor::new(vec![n, dims], data)?, labels, name)
}

fn random_unit(dims: usize, rng: &mut Rng) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| rng.next_gaussian()).collect();
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|e| (e / norm) as f32).collect();
        }
    }
}

/// Generates the full benchmark deterministically from the seed.
pub fn gen_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    if config.classes < 2 {
        return Err(Error::InvalidArgument("need >=2 classes".into()));
    }
    if config.dims == 0 {
        return Err(Error::InvalidArgument("need dims >= 1".into()));
    }
    let means = class_means(config);
    let mut rng = Rng::new(seed);
    // One shared random shift direction for all mean-shift recipes that do
    // not pin their own, drawn before any sampling so it is stable under
    // recipe-list edits to the tail of the config.
    let shared_delta = random_unit(config.dims, &mut rng);

    let train = sample_blobs(
        &means,
        config.blob_sigma,
        config.train_n,
        config.dims,
        &mut rng.child(1),
        "train_ind",
    )?;
    let test = sample_blobs(
        &means,
        config.blob_sigma,
        config.test_n,
        config.dims,
        &mut rng.child(2),
        "test_ind",
    )?;

    let mut ood_sets = Vec::with_capacity(config.ood_recipes.len());
    for (idx, recipe) in config.ood_recipes.iter().enumerate() {
        let mut ood_rng = rng.child(16 + idx as u64);
        let ds = match recipe {
            OodRecipe::MeanShift {
                name,
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let delta = match delta {
                    Some(d) => {
                        if d.len() != config.dims {
                            return Err(Error::ShapeMismatch {
                                context: "ood recipe delta",
                                expected: format!("{} dims", config.dims),
                                got: format!("{}", d.len()),
                            });
                        }
                        d.clone()
                    }
                    None => shared_delta.clone(),
                };
                let shifted: Vec<Vec<f32>> = means
                    .iter()
                    .map(|mu| {
                        mu.iter()
                            .zip(&delta)
                            .map(|(&m, &d)| alpha * m + beta * d)
                            .collect()
                    })
                    .collect();
                sample_blobs(
                    &shifted,
                    gamma * config.blob_sigma,
                    config.ood_n,
                    config.dims,
                    &mut ood_rng,
                    name,
                )?
            }
            OodRecipe::Scale { name, gamma } => sample_blobs(
                &means,
                gamma * config.blob_sigma,
                config.ood_n,
                config.dims,
                &mut ood_rng,
                name,
            )?,
            OodRecipe::Ring { name, radius } => {
                let mut data = Vec::with_capacity(config.ood_n * config.dims);
                let mut labels = Vec::with_capacity(config.ood_n);
                for i in 0..config.ood_n {
                    let dir = random_unit(config.dims, &mut ood_rng);
                    let r = radius * (1.0 + 0.1 * (2.0 * ood_rng.next_f64() as f32 - 1.0));
                    for d in dir {
                        data.push(r * d);
                    }
                    labels.push(i % config.classes);
                }
                LabeledDataset::new(
                    Tensor::new(vec![config.ood_n, config.dims], data)?,
                    labels,
                    name.clone(),
                )?
            }
            OodRecipe::Uniform { name, half_width } => {
                let mut data = Vec::with_capacity(config.ood_n * config.dims);
                let mut labels = Vec::with_capacity(config.ood_n);
                for i in 0..config.ood_n {
                    for _ in 0..config.dims {
                        data.push(half_width * (2.0 * ood_rng.next_f64() as f32 - 1.0));
                    }
                    labels.push(i % config.classes);
                }
                LabeledDataset::new(
                    Tensor::new(vec![config.ood_n, config.dims], data)?,
                    labels,
                    name.clone(),
                )?
            }
        };
        ood_sets.push(ds);
    }
    Ok(Benchmark {
        train,
        test,
        ood_sets,
    })
}

/// Parses a recipe kind name; unknown names are a data error.
pub fn validate_recipe_kind(kind: &str) -> Result<()> {
    match kind {
        "mean_shift" | "scale" | "ring" | "uniform" => Ok(()),
        other => Err(Error::UnknownRecipe(other.to_string())),
    }
}

/// Dataset manifest: maps dataset names to the tensor files holding the
/// feature matrix and the labels (labels stored as a rank-1 f32 tensor).
/// Entry paths are relative to the manifest's own directory so a run
/// directory can be moved or compared byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: BTreeMap<String, DatasetEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub x: PathBuf,
    pub y: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Writes a dataset as a pair of tensor files under `dir` and returns a
/// manifest entry with dir-relative paths.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &LabeledDataset) -> Result<DatasetEntry> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let x_name = format!("{}_x.mten", ds.name);
    let y_name = format!("{}_y.mten", ds.name);
    write_tensor(dir.join(&x_name), &ds.x)?;
    let y = Tensor::new(vec![ds.y.len()], ds.y.iter().map(|&v| v as f32).collect())?;
    write_tensor(dir.join(&y_name), &y)?;
    Ok(DatasetEntry {
        x: x_name.into(),
        y: y_name.into(),
    })
}

/// Reads a dataset back through its manifest entry, resolving relative paths
/// against `base_dir`.
pub fn read_dataset(
    base_dir: impl AsRef<Path>,
    entry: &DatasetEntry,
    name: &str,
) -> Result<LabeledDataset> {
    let base = base_dir.as_ref();
    let x = read_tensor(base.join(&entry.x))?;
    let y = read_tensor(base.join(&entry.y))?;
    let labels = y.data().iter().map(|&v| v as usize).collect();
    LabeledDataset::new(x, labels, name)
}
