use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use oodens_core::data::{
    gen_benchmark, read_dataset, read_tensor, write_dataset, write_tensor, DatasetManifest,
    LabeledDataset,
};
use oodens_core::detectors::{
    self, fit_mahalanobis, score_energy, score_gradnorm, score_knn, score_mahalanobis, score_msp,
    score_odin, score_rankfeat, KnnIndex, MahalanobisStats, ScoreVector,
};
use oodens_core::ensemble::{
    ens_features, ens_fit_mahalanobis, ens_score_energy, ens_score_gradnorm, ens_score_knn,
    ens_score_mahalanobis, ens_score_msp, ens_score_odin, ens_score_pvalue, ens_score_rankfeat,
    ModeSet,
};
use oodens_core::landscape::{dump_feature_trajectory, plane_grid, slice_grid};
use oodens_core::metrics::{
    aggregate, aggregate_to_csv, evaluate_detection, runs_to_csv, subset_protocol, RunRecord,
};
use oodens_core::model::{
    forward, load_ckpt, sample_subspace_modes, save_ckpt, train_mode, train_mode_with_snapshots,
    ModeCheckpoint, OutputDump,
};
use oodens_core::numkit::{derive_seed, Rng};
use oodens_core::theory::{assumption_regime_sweep, check_gap_inequality, fit_logistic_theta};
use oodens_core::{Error as CoreError, Result as CoreResult, Tensor};

use crate::config::RunConfig;
use crate::layout::Layout;
use crate::CliError;

const TPR_TARGET: f64 = 0.95;
// Stream indices for deriving stage generators from the top-level seed.
const STREAM_SUBSETS: u64 = 3;
const STREAM_SLICE: u64 = 4;
const STREAM_THEORY: u64 = 5;
const STREAM_ABLATE: u64 = 6;
const STREAM_THEORY_MODES: u64 = 7;

fn core(err: CoreError) -> CliError {
    CliError::Core(err)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> CoreResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Generates the benchmark datasets and the manifest.
pub fn run_gen_data(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let bench = gen_benchmark(&config.data, config.seed).map_err(core)?;
    let dir = layout.data_dir();
    let mut manifest = DatasetManifest {
        datasets: BTreeMap::new(),
    };
    for ds in bench.datasets() {
        let entry = write_dataset(&dir, ds).map_err(core)?;
        manifest.datasets.insert(ds.name.clone(), entry);
    }
    manifest.save(layout.manifest()).map_err(core)?;
    println!(
        "gen-data: wrote {} datasets to {}",
        manifest.datasets.len(),
        dir.display()
    );
    Ok(())
}

pub fn load_datasets(layout: &Layout) -> Result<BTreeMap<String, LabeledDataset>, CliError> {
    let manifest = DatasetManifest::load(layout.manifest()).map_err(core)?;
    let base = layout.data_dir();
    manifest
        .datasets
        .iter()
        .map(|(name, entry)| {
            Ok((
                name.clone(),
                read_dataset(&base, entry, name).map_err(core)?,
            ))
        })
        .collect()
}

/// Out-of-distribution set names in config order.
fn ood_names(config: &RunConfig) -> Vec<String> {
    config
        .data
        .ood_recipes
        .iter()
        .map(|r| r.name().to_string())
        .collect()
}

/// Trains one mode per configured seed (in parallel; each mode's stream is
/// independent) and writes checkpoints plus the accuracy summary CSV.
pub fn run_train_modes(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let datasets = load_datasets(layout)?;
    let train = datasets
        .get("train_ind")
        .ok_or_else(|| core(CoreError::EmptyInput("train_ind dataset")))?;
    let test = datasets
        .get("test_ind")
        .ok_or_else(|| core(CoreError::EmptyInput("test_ind dataset")))?;
    let arch = config.mlp_arch().map_err(core)?;
    let tconf = config.train_config();

    let ckpts: Vec<ModeCheckpoint> = config
        .seeds
        .par_iter()
        .map(|&seed| train_mode(&arch, train, Some(test), &tconf, seed))
        .collect::<CoreResult<_>>()
        .map_err(core)?;

    let mut summary = String::from("seed,final_train_loss,test_accuracy\n");
    for ckpt in &ckpts {
        save_ckpt(layout.ckpt(ckpt.seed), ckpt).map_err(core)?;
        summary.push_str(&format!(
            "{},{:.6},{:.6}\n",
            ckpt.seed,
            ckpt.train_meta.final_train_loss,
            ckpt.train_meta.final_test_accuracy.unwrap_or(f32::NAN),
        ));
    }
    atomic_write(&layout.modes_summary(), summary.as_bytes()).map_err(core)?;
    println!("train-modes: trained {} modes", ckpts.len());
    Ok(())
}

pub fn load_modes(config: &RunConfig, layout: &Layout) -> Result<Vec<ModeCheckpoint>, CliError> {
    config
        .seeds
        .iter()
        .map(|&seed| load_ckpt(layout.ckpt(seed)).map_err(core))
        .collect()
}

fn write_dump(dir: &Path, dump: &OutputDump) -> CoreResult<()> {
    write_tensor(dir.join("logits.mten"), &dump.logits)?;
    write_tensor(dir.join("penultimate.mten"), &dump.penultimate)?;
    write_tensor(dir.join("feature_matrix.mten"), &dump.feature_matrix)?;
    Ok(())
}

pub fn load_dump(layout: &Layout, seed: u64, dataset: &str) -> Result<OutputDump, CliError> {
    let dir = layout.dump_dir(seed, dataset);
    Ok(OutputDump {
        logits: read_tensor(dir.join("logits.mten")).map_err(core)?,
        penultimate: read_tensor(dir.join("penultimate.mten")).map_err(core)?,
        feature_matrix: read_tensor(dir.join("feature_matrix.mten")).map_err(core)?,
        mode_id: seed,
        dataset_id: dataset.to_string(),
    })
}

/// Forwards every dataset through the selected checkpoints and writes the
/// per-(mode, dataset) output dumps.
pub fn run_dump(
    config: &RunConfig,
    layout: &Layout,
    ckpt_paths: &[PathBuf],
    dataset_filter: &[String],
) -> Result<(), CliError> {
    let datasets = load_datasets(layout)?;
    let selected: Vec<(&String, &LabeledDataset)> = if dataset_filter.is_empty() {
        datasets.iter().collect()
    } else {
        dataset_filter
            .iter()
            .map(|name| {
                datasets
                    .get_key_value(name)
                    .ok_or_else(|| CliError::Usage(format!("unknown dataset `{name}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let ckpts: Vec<ModeCheckpoint> = if ckpt_paths.is_empty() {
        load_modes(config, layout)?
    } else {
        ckpt_paths
            .iter()
            .map(|p| load_ckpt(p).map_err(core))
            .collect::<Result<_, _>>()?
    };

    let jobs: Vec<(&ModeCheckpoint, &String, &LabeledDataset)> = ckpts
        .iter()
        .flat_map(|c| selected.iter().map(move |(n, d)| (c, *n, *d)))
        .collect();
    jobs.par_iter()
        .map(|(ckpt, name, ds)| -> CoreResult<()> {
            let mut dump = forward(ckpt, &ds.x)?;
            dump.dataset_id = (*name).clone();
            let dir = layout.dump_dir(ckpt.seed, name);
            std::fs::create_dir_all(&dir)?;
            write_dump(&dir, &dump)
        })
        .collect::<CoreResult<Vec<()>>>()
        .map_err(core)?;
    println!("dump: wrote {} (mode, dataset) dumps", jobs.len());
    Ok(())
}

/// Per-mode fitted state reused across detectors and datasets.
struct ModeState {
    ckpt: ModeCheckpoint,
    dumps: BTreeMap<String, OutputDump>,
    mahalanobis: MahalanobisStats,
    knn: KnnIndex,
}

/// Everything eval needs, loaded once from the staged files.
struct EvalContext {
    modes: Vec<ModeState>,
    seed_index: BTreeMap<u64, usize>,
    ood: Vec<String>,
    inputs: BTreeMap<String, Tensor>,
    train_labels: Vec<usize>,
    odin_temperature: f32,
    odin_eps: f32,
    knn_k: usize,
    eps_scale: f64,
    repeats: usize,
}

const CALIBRATION_DATASET: &str = "train_ind";
const IND_DATASET: &str = "test_ind";

impl EvalContext {
    fn load(config: &RunConfig, layout: &Layout) -> Result<Self, CliError> {
        let datasets = load_datasets(layout)?;
        let train = datasets
            .get(CALIBRATION_DATASET)
            .ok_or_else(|| core(CoreError::EmptyInput("train_ind dataset")))?;
        let mut modes = Vec::with_capacity(config.seeds.len());
        let mut seed_index = BTreeMap::new();
        for (i, &seed) in config.seeds.iter().enumerate() {
            let ckpt = load_ckpt(layout.ckpt(seed)).map_err(core)?;
            let mut dumps = BTreeMap::new();
            for name in datasets.keys() {
                dumps.insert(name.clone(), load_dump(layout, seed, name)?);
            }
            let train_dump = &dumps[CALIBRATION_DATASET];
            let mahalanobis = fit_mahalanobis(
                &train_dump.penultimate,
                &train.y,
                config.detectors.mahalanobis_eps_scale,
            )
            .map_err(core)?;
            let knn =
                KnnIndex::fit(&train_dump.penultimate, config.detectors.knn_k).map_err(core)?;
            seed_index.insert(seed, i);
            modes.push(ModeState {
                ckpt,
                dumps,
                mahalanobis,
                knn,
            });
        }
        let train_labels = train.y.clone();
        let inputs = datasets
            .into_iter()
            .map(|(name, ds)| (name, ds.x))
            .collect();
        Ok(Self {
            modes,
            seed_index,
            ood: ood_names(config),
            inputs,
            train_labels,
            odin_temperature: config.detectors.odin_temperature,
            odin_eps: config.detectors.odin_eps,
            knn_k: config.detectors.knn_k,
            eps_scale: config.detectors.mahalanobis_eps_scale,
            repeats: config.ensemble.repeats,
        })
    }

    fn mode(&self, seed: u64) -> &ModeState {
        &self.modes[self.seed_index[&seed]]
    }

    /// Detector score of one mode on one dataset through the single-mode path.
    fn single_scores(&self, detector: &str, seed: u64, dataset: &str) -> CoreResult<ScoreVector> {
        let state = self.mode(seed);
        let dump = &state.dumps[dataset];
        match detector {
            detectors::MSP => score_msp(dump),
            detectors::ODIN => score_odin(
                dump,
                self.odin_temperature,
                self.odin_eps,
                Some(&state.ckpt),
                Some(&self.inputs[dataset]),
            ),
            detectors::ENERGY => score_energy(dump),
            detectors::MAHALANOBIS => score_mahalanobis(&state.mahalanobis, dump),
            detectors::KNN => score_knn(&state.knn, dump),
            detectors::RANKFEAT => score_rankfeat(dump, &state.ckpt),
            detectors::GRADNORM => score_gradnorm(dump),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown detector `{other}`"
            ))),
        }
    }

    fn mode_set(&self, subset: &[u64], dataset: &str) -> CoreResult<ModeSet> {
        let dumps = subset
            .iter()
            .map(|&seed| self.mode(seed).dumps[dataset].clone())
            .collect();
        let ckpts = subset
            .iter()
            .map(|&seed| self.mode(seed).ckpt.clone())
            .collect();
        ModeSet::new(dumps, Some(ckpts))
    }

    /// Ensemble score of a mode subset on one dataset. Mahalanobis and KNN
    /// refit on the subset's mean training features.
    fn ensemble_scores(
        &self,
        detector: &str,
        subset: &[u64],
        dataset: &str,
    ) -> CoreResult<ScoreVector> {
        let set = self.mode_set(subset, dataset)?;
        match detector {
            detectors::MSP => ens_score_msp(&set),
            detectors::ODIN => ens_score_odin(
                &set,
                self.odin_temperature,
                self.odin_eps,
                Some(&self.inputs[dataset]),
            ),
            detectors::ENERGY => ens_score_energy(&set),
            detectors::GRADNORM => ens_score_gradnorm(&set),
            detectors::RANKFEAT => ens_score_rankfeat(&set),
            detectors::MAHALANOBIS => {
                let train_set = self.mode_set(subset, CALIBRATION_DATASET)?;
                let stats = ens_fit_mahalanobis(&train_set, &self.train_labels, self.eps_scale)?;
                ens_score_mahalanobis(&stats, &set)
            }
            detectors::KNN => {
                let train_set = self.mode_set(subset, CALIBRATION_DATASET)?;
                let bank = ens_features(&train_set)?;
                let index = KnnIndex::fit(&bank, self.knn_k)?;
                ens_score_knn(&set, &index)
            }
            other => Err(CoreError::InvalidArgument(format!(
                "unknown detector `{other}`"
            ))),
        }
    }
}

/// Runs the full detector x ensemble-size x subset evaluation and writes the
/// per-run and aggregate CSVs.
pub fn run_eval(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let records = eval_records(config, layout)?;
    write_eval_outputs(&records, layout)?;
    println!("eval: wrote {} report rows", records.len());
    Ok(())
}

fn write_eval_outputs(records: &[RunRecord], layout: &Layout) -> Result<(), CliError> {
    atomic_write(&layout.runs_csv(), runs_to_csv(records).as_bytes()).map_err(core)?;
    let table = aggregate(records);
    atomic_write(&layout.aggregate_csv(), aggregate_to_csv(&table).as_bytes()).map_err(core)?;
    Ok(())
}

pub fn eval_records(config: &RunConfig, layout: &Layout) -> Result<Vec<RunRecord>, CliError> {
    let ctx = EvalContext::load(config, layout)?;
    let mut records = Vec::new();

    // Shared subset draws per ensemble size, identical across detectors.
    let mut subset_rng = Rng::new(derive_seed(config.seed, STREAM_SUBSETS));
    let mut subsets_by_k: Vec<(usize, Vec<Vec<u64>>)> = Vec::new();
    let mut k_sorted = config.ensemble.k_list.clone();
    k_sorted.sort_unstable();
    k_sorted.dedup();
    for &k in &k_sorted {
        let subsets =
            subset_protocol(&config.seeds, k, ctx.repeats, &mut subset_rng).map_err(core)?;
        if k == config.seeds.len() && ctx.repeats > 1 {
            eprintln!("eval: k = {k} uses all modes; collapsing to a single subset");
        }
        subsets_by_k.push((k, subsets));
    }

    for detector in detectors::ALL_DETECTORS {
        // Cache per-mode single scores on every dataset this detector needs.
        let mut single: BTreeMap<(u64, String), ScoreVector> = BTreeMap::new();
        for &seed in &config.seeds {
            for dataset in std::iter::once(IND_DATASET.to_string())
                .chain(ctx.ood.iter().cloned())
                .chain(std::iter::once(CALIBRATION_DATASET.to_string()))
            {
                let sv = ctx.single_scores(detector, seed, &dataset).map_err(core)?;
                single.insert((seed, dataset), sv);
            }
        }

        for (k, subsets) in &subsets_by_k {
            for (subset_id, subset) in subsets.iter().enumerate() {
                if *k == 1 {
                    let seed = subset[0];
                    let ind = &single[&(seed, IND_DATASET.to_string())];
                    for ood in &ctx.ood {
                        let ood_scores = &single[&(seed, ood.clone())];
                        let report =
                            evaluate_detection(ind, ood_scores, TPR_TARGET).map_err(core)?;
                        records.push(RunRecord { report, subset_id });
                    }
                    continue;
                }
                let ind = ctx
                    .ensemble_scores(detector, subset, IND_DATASET)
                    .map_err(core)?;
                for ood in &ctx.ood {
                    let ood_scores = ctx.ensemble_scores(detector, subset, ood).map_err(core)?;
                    let report = evaluate_detection(&ind, &ood_scores, TPR_TARGET).map_err(core)?;
                    records.push(RunRecord { report, subset_id });
                }

                // Min-p baseline over the same subset, calibrated on the
                // per-mode training-set scores.
                let calib: Vec<ScoreVector> = subset
                    .iter()
                    .map(|&seed| single[&(seed, CALIBRATION_DATASET.to_string())].clone())
                    .collect();
                let per_mode_ind: Vec<ScoreVector> = subset
                    .iter()
                    .map(|&seed| single[&(seed, IND_DATASET.to_string())].clone())
                    .collect();
                let p_ind = ens_score_pvalue(&per_mode_ind, &calib).map_err(core)?;
                for ood in &ctx.ood {
                    let per_mode_ood: Vec<ScoreVector> = subset
                        .iter()
                        .map(|&seed| single[&(seed, ood.clone())].clone())
                        .collect();
                    let p_ood = ens_score_pvalue(&per_mode_ood, &calib).map_err(core)?;
                    let report = evaluate_detection(&p_ind, &p_ood, TPR_TARGET).map_err(core)?;
                    records.push(RunRecord { report, subset_id });
                }
            }
        }
    }
    Ok(records)
}

/// k = 1 rows recomputed through the ensemble path with singleton mode sets.
/// The identity laws make these byte-identical to the single-mode rows the
/// report CSV carries.
pub fn singleton_ensemble_records(
    config: &RunConfig,
    layout: &Layout,
) -> Result<Vec<RunRecord>, CliError> {
    let ctx = EvalContext::load(config, layout)?;
    let mut records = Vec::new();
    for detector in detectors::ALL_DETECTORS {
        for (subset_id, &seed) in config.seeds.iter().enumerate() {
            let subset = vec![seed];
            let ind = ctx
                .ensemble_scores(detector, &subset, IND_DATASET)
                .map_err(core)?;
            for ood in &ctx.ood {
                let ood_scores = ctx.ensemble_scores(detector, &subset, ood).map_err(core)?;
                let report = evaluate_detection(&ind, &ood_scores, TPR_TARGET).map_err(core)?;
                records.push(RunRecord { report, subset_id });
            }
        }
    }
    Ok(records)
}

#[derive(Serialize)]
struct LearnedModesReport {
    thetas: Vec<Vec<f32>>,
    norm_spread: f64,
    max_pairwise_angle_deg: f64,
    gap_each: Vec<f64>,
    gap_avg: f64,
    gap_ens: f64,
    ratio: f64,
    holds: bool,
}

#[derive(Serialize)]
struct TheoryReport<'a> {
    sweep: &'a oodens_core::theory::SweepReport,
    learned_modes: LearnedModesReport,
}

/// Runs the assumption-regime sweep plus one check on logistic-regression
/// modes learned from seed-specific samples, and writes the JSON report.
pub fn run_theory(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let mut rng = Rng::new(derive_seed(config.seed, STREAM_THEORY));
    let sweep = assumption_regime_sweep(&config.theory, &mut rng).map_err(core)?;

    // Linear modes "learned w.r.t. seeds": each fits logistic regression on
    // its own finite sample from the theory task.
    let dims = config.theory.dims;
    let mut gen_rng = Rng::new(derive_seed(config.seed, STREAM_THEORY_MODES));
    let mu: Vec<f32> = {
        let raw: Vec<f64> = (0..dims).map(|_| gen_rng.next_gaussian()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter()
            .map(|&v| (v / norm * config.theory.mu_scale) as f32)
            .collect()
    };
    let delta: Vec<f32> = {
        let raw: Vec<f64> = (0..dims).map(|_| gen_rng.next_gaussian()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|&v| (v / norm) as f32).collect()
    };
    let spec = oodens_core::data::GaussianSpec::new(
        oodens_core::Tensor::new(vec![dims], mu).map_err(core)?,
        config.theory.sigma as f32,
        config.theory.alpha as f32,
        config.theory.beta as f32,
        config.theory.gamma as f32,
        oodens_core::Tensor::new(vec![dims], delta).map_err(core)?,
    )
    .map_err(core)?;
    let modes: Vec<oodens_core::theory::LinearMode> = (0..config.theory.modes)
        .map(|i| {
            let mut mode_rng = gen_rng.child(i as u64);
            let data = oodens_core::data::sample_ind(&spec, 512, &mut mode_rng)?;
            fit_logistic_theta(&data, 150, 0.5)
        })
        .collect::<CoreResult<_>>()
        .map_err(core)?;
    let check = check_gap_inequality(&modes, &spec).map_err(core)?;

    let norms: Vec<f64> = modes
        .iter()
        .map(|m| {
            m.theta
                .data()
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let norm_spread = {
        let max = norms.iter().cloned().fold(f64::MIN, f64::max);
        let min = norms.iter().cloned().fold(f64::MAX, f64::min);
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        (max - min) / mean
    };
    let mut max_angle: f64 = 0.0;
    for i in 0..modes.len() {
        for j in (i + 1)..modes.len() {
            let a = modes[i].theta.data();
            let b = modes[j].theta.data();
            let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
            let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            max_angle = max_angle.max(cos.acos().to_degrees());
        }
    }

    let report = TheoryReport {
        sweep: &sweep,
        learned_modes: LearnedModesReport {
            thetas: modes.iter().map(|m| m.theta.data().to_vec()).collect(),
            norm_spread,
            max_pairwise_angle_deg: max_angle,
            gap_each: check.gap_each.clone(),
            gap_avg: check.gap_avg,
            gap_ens: check.gap_ens,
            ratio: check.ratio,
            holds: check.holds,
        },
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| core(CoreError::Json(e)))?;
    atomic_write(&layout.theory_report(), json.as_bytes()).map_err(core)?;
    println!(
        "theory: sweep held in {}/{} trials (min ratio {:.6}); learned-mode ratio {:.6}",
        sweep.holds_count,
        sweep.trials.len(),
        sweep.min_ratio,
        check.ratio
    );
    Ok(())
}

/// Computes the plane grid through the first three modes on the test set and
/// every OoD set, one random slice per leading mode, and the feature
/// trajectory of a snapshot retraining of the first seed.
pub fn run_landscape(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let datasets = load_datasets(layout)?;
    let modes = load_modes(config, layout)?;
    let anchors: [ModeCheckpoint; 3] = [modes[0].clone(), modes[1].clone(), modes[2].clone()];

    let mut grid_datasets = vec![IND_DATASET.to_string()];
    grid_datasets.extend(ood_names(config));
    for name in &grid_datasets {
        let ds = datasets
            .get(name)
            .ok_or_else(|| core(CoreError::EmptyInput("landscape dataset")))?;
        let grid = plane_grid(
            &anchors,
            ds,
            config.landscape.resolution,
            config.landscape.margin,
        )
        .map_err(core)?;
        grid.save(layout.landscape_dir(), &format!("plane_{name}"))
            .map_err(core)?;
    }

    // One slice for the leading mode, on the test split plus the first OoD
    // set. The per-mode stream is reused across datasets so both grids cut
    // along identical directions and stay comparable.
    let slice_sets: Vec<String> = vec![IND_DATASET.to_string(), ood_names(config)[0].clone()];
    for (i, ckpt) in modes.iter().take(1).enumerate() {
        let mode_rng = Rng::new(derive_seed(config.seed, STREAM_SLICE + i as u64));
        for name in &slice_sets {
            let ds = &datasets[name];
            let mut rng = mode_rng.clone();
            let grid = slice_grid(
                ckpt,
                ds,
                config.landscape.resolution,
                config.landscape.radius,
                &mut rng,
            )
            .map_err(core)?;
            grid.save(
                layout.landscape_dir(),
                &format!("slice_{}_{name}", ckpt.seed),
            )
            .map_err(core)?;
        }
    }

    // Feature trajectory: retrain the first seed with snapshots.
    let train = &datasets["train_ind"];
    let arch = config.mlp_arch().map_err(core)?;
    let (_, snapshots) = train_mode_with_snapshots(
        &arch,
        train,
        None,
        &config.train_config(),
        config.seeds[0],
        Some(config.landscape.trajectory_stride),
    )
    .map_err(core)?;
    let traj_sets: Vec<&LabeledDataset> = grid_datasets.iter().map(|n| &datasets[n]).collect();
    dump_feature_trajectory(&snapshots, &traj_sets, layout.trajectories_dir()).map_err(core)?;
    println!(
        "landscape: {} plane grids, {} slice grids, {} trajectory checkpoints",
        grid_datasets.len(),
        slice_sets.len(),
        snapshots.len()
    );
    Ok(())
}

/// Compares k-ensembles of independent modes against k-ensembles of
/// subspace-sampled dependent modes under the energy detector.
pub fn run_ablate(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let records = ablate_records(config, layout)?;
    let dir = layout.ablate_dir();
    atomic_write(
        &dir.join("independent_runs.csv"),
        runs_to_csv(&records.independent).as_bytes(),
    )
    .map_err(core)?;
    atomic_write(
        &dir.join("subspace_runs.csv"),
        runs_to_csv(&records.subspace).as_bytes(),
    )
    .map_err(core)?;
    atomic_write(
        &dir.join("independent_aggregate.csv"),
        aggregate_to_csv(&aggregate(&records.independent)).as_bytes(),
    )
    .map_err(core)?;
    atomic_write(
        &dir.join("subspace_aggregate.csv"),
        aggregate_to_csv(&aggregate(&records.subspace)).as_bytes(),
    )
    .map_err(core)?;
    let summary = serde_json::json!({
        "detector": "energy",
        "k": config.ablation.k,
        "r_max": config.ablation.r_max,
        "independent_mean_fpr95": records.independent_mean_fpr(),
        "subspace_mean_fpr95": records.subspace_mean_fpr(),
    });
    atomic_write(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap().as_bytes(),
    )
    .map_err(core)?;
    println!(
        "ablate: mean FPR95 independent {:.4} vs subspace {:.4}",
        records.independent_mean_fpr(),
        records.subspace_mean_fpr()
    );
    Ok(())
}

fn median_quality_mode<'a>(
    modes: &'a [ModeCheckpoint],
    datasets: &BTreeMap<String, LabeledDataset>,
    eval_sets: &[String],
) -> CoreResult<&'a ModeCheckpoint> {
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(modes.len());
    for (i, ckpt) in modes.iter().enumerate() {
        let mut ind_dump = forward(ckpt, &datasets[&eval_sets[0]].x)?;
        ind_dump.dataset_id = eval_sets[0].clone();
        let ind_scores = score_energy(&ind_dump)?;
        let mut total = 0.0f64;
        for ood in &eval_sets[1..] {
            let mut dump = forward(ckpt, &datasets[ood].x)?;
            dump.dataset_id = ood.clone();
            let ood_scores = score_energy(&dump)?;
            let report = evaluate_detection(&ind_scores, &ood_scores, TPR_TARGET)?;
            total += report.fpr95;
        }
        ranked.push((total / (eval_sets.len() - 1) as f64, i));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(&modes[ranked[ranked.len() / 2].1])
}

pub struct AblationRecords {
    pub independent: Vec<RunRecord>,
    pub subspace: Vec<RunRecord>,
}

impl AblationRecords {
    pub fn independent_mean_fpr(&self) -> f64 {
        mean_fpr(&self.independent)
    }

    pub fn subspace_mean_fpr(&self) -> f64 {
        mean_fpr(&self.subspace)
    }
}

fn mean_fpr(records: &[RunRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().map(|r| r.report.fpr95).sum::<f64>() / records.len() as f64
}

pub fn ablate_records(config: &RunConfig, layout: &Layout) -> Result<AblationRecords, CliError> {
    let datasets = load_datasets(layout)?;
    let modes = load_modes(config, layout)?;

    let eval_sets: Vec<String> = std::iter::once(IND_DATASET.to_string())
        .chain(ood_names(config))
        .collect();

    // The subspace control grows around a mode of median detection quality
    // (by single-mode energy FPR averaged over the OoD sets), so the
    // comparison is against a typical well-trained mode rather than a lucky
    // or unlucky draw.
    let base = median_quality_mode(&modes, &datasets, &eval_sets).map_err(core)?;
    let mut rng = Rng::new(derive_seed(config.seed, STREAM_ABLATE));
    let subspace = sample_subspace_modes(
        base,
        config.ablation.subspace_modes,
        config.ablation.r_max,
        &mut rng,
    )
    .map_err(core)?;
    // Dumps computed in memory: subspace modes are transient by design.
    let dump_all =
        |ckpts: &[ModeCheckpoint], ids: &[u64]| -> CoreResult<Vec<BTreeMap<String, OutputDump>>> {
            ckpts
                .iter()
                .zip(ids)
                .map(|(ckpt, &id)| {
                    eval_sets
                        .iter()
                        .map(|name| {
                            let mut dump = forward(ckpt, &datasets[name].x)?;
                            dump.dataset_id = name.clone();
                            dump.mode_id = id;
                            Ok((name.clone(), dump))
                        })
                        .collect()
                })
                .collect()
        };

    let independent_ids: Vec<u64> = config.seeds.clone();
    let subspace_ids: Vec<u64> = (0..subspace.len() as u64).collect();
    let independent_dumps = dump_all(&modes, &independent_ids).map_err(core)?;
    let subspace_dumps = dump_all(&subspace, &subspace_ids).map_err(core)?;

    let k = config.ablation.k;
    let mut subset_rng = Rng::new(derive_seed(config.seed, STREAM_ABLATE + 1));
    let independent_subsets = subset_protocol(
        &independent_ids,
        k,
        config.ensemble.repeats,
        &mut subset_rng,
    )
    .map_err(core)?;
    let subspace_subsets =
        subset_protocol(&subspace_ids, k, config.ensemble.repeats, &mut subset_rng)
            .map_err(core)?;

    let score_group = |ids: &[u64],
                       dumps: &[BTreeMap<String, OutputDump>],
                       subsets: &[Vec<u64>]|
     -> CoreResult<Vec<RunRecord>> {
        let index_of: BTreeMap<u64, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut records = Vec::new();
        for (subset_id, subset) in subsets.iter().enumerate() {
            let build = |dataset: &str| -> CoreResult<ModeSet> {
                let set_dumps = subset
                    .iter()
                    .map(|id| dumps[index_of[id]][dataset].clone())
                    .collect();
                ModeSet::new(set_dumps, None)
            };
            let ind_scores = ens_score_energy(&build(IND_DATASET)?)?;
            for ood in &eval_sets[1..] {
                let ood_scores = ens_score_energy(&build(ood)?)?;
                let report = evaluate_detection(&ind_scores, &ood_scores, TPR_TARGET)?;
                records.push(RunRecord { report, subset_id });
            }
        }
        Ok(records)
    };

    Ok(AblationRecords {
        independent: score_group(&independent_ids, &independent_dumps, &independent_subsets)
            .map_err(core)?,
        subspace: score_group(&subspace_ids, &subspace_dumps, &subspace_subsets).map_err(core)?,
    })
}

/// Full desk-scale study: every stage in order under one seed.
pub fn run_reproduce(config: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    run_gen_data(config, layout)?;
    run_train_modes(config, layout)?;
    run_dump(config, layout, &[], &[])?;
    run_eval(config, layout)?;
    run_landscape(config, layout)?;
    run_theory(config, layout)?;
    run_ablate(config, layout)?;
    println!("reproduce: complete under {}", layout.root.display());
    Ok(())
}
