#![allow(clippy::needless_range_loop)]

mod common;

use common::{random_ckpt, random_tensor};
use oodens_core::detectors::{
    fit_mahalanobis, score_gradnorm, score_knn, score_mahalanobis, score_msp, score_odin,
    score_rankfeat, KnnIndex,
};
use oodens_core::ensemble::{
    ens_fit_mahalanobis, ens_logits, ens_score_energy, ens_score_gradnorm, ens_score_knn,
    ens_score_mahalanobis, ens_score_msp, ens_score_odin, ens_score_rankfeat, ModeSet,
};
use oodens_core::model::{forward, ModeCheckpoint, OutputDump};
use oodens_core::numkit::stable::logsumexp;
use oodens_core::{Rng, Tensor};

struct Fixture {
    ckpts: Vec<ModeCheckpoint>,
    inputs: Tensor,
    train_inputs: Tensor,
    train_labels: Vec<usize>,
}

fn fixture(n_modes: usize) -> Fixture {
    let mut rng = Rng::new(61);
    let ckpts: Vec<ModeCheckpoint> = (0..n_modes)
        .map(|i| random_ckpt(vec![2, 12, 12, 4], (3, 4), 100 + i as u64))
        .collect();
    let inputs = random_tensor(vec![20, 2], 1.0, &mut rng);
    let train_inputs = random_tensor(vec![40, 2], 1.0, &mut rng);
    let train_labels = (0..40).map(|i| i % 4).collect();
    Fixture {
        ckpts,
        inputs,
        train_inputs,
        train_labels,
    }
}

fn dumps_for(fx: &Fixture, inputs: &Tensor) -> Vec<OutputDump> {
    fx.ckpts
        .iter()
        .map(|c| {
            let mut d = forward(c, inputs).unwrap();
            d.dataset_id = "fixture".into();
            d
        })
        .collect()
}

#[test]
fn every_ensemble_detector_reduces_to_its_single_mode_form_at_n1() {
    let fx = fixture(1);
    let dumps = dumps_for(&fx, &fx.inputs);
    let single = dumps[0].clone();
    let train_dumps = dumps_for(&fx, &fx.train_inputs);
    let train_single = train_dumps[0].clone();
    let set = ModeSet::new(dumps, Some(fx.ckpts.clone())).unwrap();
    let train_set = ModeSet::new(train_dumps, Some(fx.ckpts.clone())).unwrap();

    assert_eq!(
        ens_score_msp(&set).unwrap().scores,
        score_msp(&single).unwrap().scores
    );
    assert_eq!(
        ens_score_odin(&set, 1000.0, 0.0, None).unwrap().scores,
        score_odin(&single, 1000.0, 0.0, None, None).unwrap().scores
    );
    assert_eq!(
        ens_score_energy(&set).unwrap().scores,
        oodens_core::detectors::score_energy(&single)
            .unwrap()
            .scores
    );
    assert_eq!(
        ens_score_gradnorm(&set).unwrap().scores,
        score_gradnorm(&single).unwrap().scores
    );
    assert_eq!(
        ens_score_rankfeat(&set).unwrap().scores,
        score_rankfeat(&single, &fx.ckpts[0]).unwrap().scores
    );

    let stats = fit_mahalanobis(&train_single.penultimate, &fx.train_labels, 1e-6).unwrap();
    let ens_stats = ens_fit_mahalanobis(&train_set, &fx.train_labels, 1e-6).unwrap();
    assert_eq!(
        ens_score_mahalanobis(&ens_stats, &set).unwrap().scores,
        score_mahalanobis(&stats, &single).unwrap().scores
    );

    let index = KnnIndex::fit(&train_single.penultimate, 5).unwrap();
    assert_eq!(
        ens_score_knn(&set, &index).unwrap().scores,
        score_knn(&index, &single).unwrap().scores
    );
}

#[test]
fn duplicated_modes_leave_logits_family_scores_unchanged() {
    let fx = fixture(1);
    let dump = dumps_for(&fx, &fx.inputs).pop().unwrap();
    let tripled = ModeSet::new(
        vec![dump.clone(), dump.clone(), dump.clone()],
        Some(vec![
            fx.ckpts[0].clone(),
            fx.ckpts[0].clone(),
            fx.ckpts[0].clone(),
        ]),
    )
    .unwrap();
    assert_eq!(
        ens_score_msp(&tripled).unwrap().scores,
        score_msp(&dump).unwrap().scores
    );
    assert_eq!(
        ens_score_energy(&tripled).unwrap().scores,
        oodens_core::detectors::score_energy(&dump).unwrap().scores
    );
    assert_eq!(
        ens_score_odin(&tripled, 1000.0, 0.0, None).unwrap().scores,
        score_odin(&dump, 1000.0, 0.0, None, None).unwrap().scores
    );
    assert_eq!(
        ens_score_rankfeat(&tripled).unwrap().scores,
        score_rankfeat(&dump, &fx.ckpts[0]).unwrap().scores
    );
}

#[test]
fn rankfeat_ensemble_matches_a_two_mode_loop_oracle() {
    let fx = fixture(2);
    let dumps = dumps_for(&fx, &fx.inputs);
    let set = ModeSet::new(dumps.clone(), Some(fx.ckpts.clone())).unwrap();
    let got = ens_score_rankfeat(&set).unwrap();

    // Oracle: per-mode changed logits recovered by undoing the energy score
    // is not possible, so recompute from scratch with the public pieces.
    for i in 0..fx.inputs.rows() {
        let mut mean = [0.0f64; 4];
        for (dump, ckpt) in dumps.iter().zip(&fx.ckpts) {
            // Rebuild this sample's changed logits directly.
            let (r, c) = (3usize, 4usize);
            let start = i * r * c;
            let x = Tensor::new(
                vec![r, c],
                dump.feature_matrix.data()[start..start + r * c].to_vec(),
            )
            .unwrap();
            let (s1, u1, v1) = oodens_core::numkit::top_singular_triple(&x).unwrap();
            let mut changed = x.data().to_vec();
            for a in 0..r {
                for b in 0..c {
                    changed[a * c + b] -= s1 * u1.data()[a] * v1.data()[b];
                }
            }
            let head = ckpt.layers.last().unwrap();
            for o in 0..4 {
                let mut acc = head.b.data()[o] as f64;
                for j in 0..r * c {
                    acc += head.w.row(o)[j] as f64 * changed[j] as f64;
                }
                mean[o] += acc / 2.0;
            }
        }
        let row = Tensor::new(vec![4], mean.iter().map(|&v| v as f32).collect()).unwrap();
        let want = logsumexp(&row).unwrap() as f32;
        assert!(
            (got.scores[i] - want).abs() < 1e-5,
            "sample {i}: {} vs {want}",
            got.scores[i]
        );
    }
}

#[test]
fn knn_ensemble_matches_a_hand_worked_three_point_bank() {
    // Two modes, three training points, one query; everything hand-checked
    // on the normalized mean features.
    let mk_dump = |features: Vec<Vec<f32>>, mode_id: u64| {
        let penultimate = Tensor::from_rows(&features).unwrap();
        let n = penultimate.rows();
        OutputDump {
            logits: Tensor::zeros(vec![n, 2]),
            feature_matrix: penultimate.reshape(vec![n, 1, 2]).unwrap(),
            penultimate,
            mode_id,
            dataset_id: "hand".into(),
        }
    };
    // Mean bank features: (1, 0), (0, 1), (3, 4)/... raw means below.
    let bank_a = mk_dump(vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![4.0, 4.0]], 1);
    let bank_b = mk_dump(vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 4.0]], 2);
    let train_set = ModeSet::new(vec![bank_a, bank_b], None).unwrap();
    let mean_bank = oodens_core::ensemble::ens_features(&train_set).unwrap();
    assert_eq!(mean_bank.data(), &[1.0, 0.0, 0.0, 1.0, 3.0, 4.0]);
    let index = KnnIndex::fit(&mean_bank, 2).unwrap();

    let query_a = mk_dump(vec![vec![2.0, 0.0]], 1);
    let query_b = mk_dump(vec![vec![0.0, 0.0]], 2);
    let query_set = ModeSet::new(vec![query_a, query_b], None).unwrap();
    let got = ens_score_knn(&query_set, &index).unwrap().scores[0];
    // Mean query (1, 0) is unit. Distances to normalized bank rows:
    // to (1,0): 0; to (0,1): sqrt(2); to (0.6, 0.8): sqrt(0.16+0.64) = sqrt(0.8).
    // k = 2 -> second smallest = sqrt(0.8).
    let want = -(0.8f32).sqrt();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn mahalanobis_ensemble_fit_equals_a_refit_on_mean_features() {
    let fx = fixture(3);
    let train_dumps = dumps_for(&fx, &fx.train_inputs);
    let train_set = ModeSet::new(train_dumps.clone(), None).unwrap();
    let ens_stats = ens_fit_mahalanobis(&train_set, &fx.train_labels, 1e-6).unwrap();

    // Oracle: average the features by hand, then fit through the single-mode
    // entry point.
    let n = fx.train_inputs.rows();
    let h = train_dumps[0].penultimate.cols();
    let mut mean = vec![0.0f64; n * h];
    for d in &train_dumps {
        for (m, &v) in mean.iter_mut().zip(d.penultimate.data()) {
            *m += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|&v| (v / 3.0) as f32).collect();
    let refit = fit_mahalanobis(
        &Tensor::new(vec![n, h], mean).unwrap(),
        &fx.train_labels,
        1e-6,
    )
    .unwrap();
    for (a, b) in ens_stats
        .precision
        .data()
        .iter()
        .zip(refit.precision.data())
    {
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
    }
    for (a, b) in ens_stats
        .class_means
        .data()
        .iter()
        .zip(refit.class_means.data())
    {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn mode_permutation_leaves_every_ensemble_score_unchanged() {
    let fx = fixture(3);
    let dumps = dumps_for(&fx, &fx.inputs);
    let fwd = ModeSet::new(dumps.clone(), Some(fx.ckpts.clone())).unwrap();
    let rev_dumps = vec![dumps[2].clone(), dumps[0].clone(), dumps[1].clone()];
    let rev_ckpts = vec![
        fx.ckpts[2].clone(),
        fx.ckpts[0].clone(),
        fx.ckpts[1].clone(),
    ];
    let rev = ModeSet::new(rev_dumps, Some(rev_ckpts)).unwrap();

    assert_eq!(
        ens_logits(&fwd).unwrap().data(),
        ens_logits(&rev).unwrap().data()
    );
    for (a, b) in ens_score_rankfeat(&fwd)
        .unwrap()
        .scores
        .iter()
        .zip(&ens_score_rankfeat(&rev).unwrap().scores)
    {
        assert!((a - b).abs() < 1e-6);
    }
    for (a, b) in ens_score_gradnorm(&fwd)
        .unwrap()
        .scores
        .iter()
        .zip(&ens_score_gradnorm(&rev).unwrap().scores)
    {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn zero_step_subspace_ensemble_equals_the_base_mode() {
    // Subspace samples with a vanishing step radius coincide with the base
    // mode, so their ensemble reproduces the single-mode scores.
    let base = random_ckpt(vec![2, 12, 12, 4], (3, 4), 62);
    let mut rng = Rng::new(63);
    let sampled = oodens_core::model::sample_subspace_modes(&base, 4, 1e-9, &mut rng).unwrap();
    let inputs = random_tensor(vec![15, 2], 1.0, &mut rng);
    let base_scores =
        oodens_core::detectors::score_energy(&forward(&base, &inputs).unwrap()).unwrap();
    let dumps: Vec<OutputDump> = sampled
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut d = forward(c, &inputs).unwrap();
            d.mode_id = i as u64;
            d
        })
        .collect();
    let set = ModeSet::new(dumps, None).unwrap();
    let ens = ens_score_energy(&set).unwrap();
    for (a, b) in ens.scores.iter().zip(&base_scores.scores) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn odin_ensemble_perturbs_each_mode_individually() {
    let fx = fixture(2);
    let dumps = dumps_for(&fx, &fx.inputs);
    let set = ModeSet::new(dumps.clone(), Some(fx.ckpts.clone())).unwrap();
    let eps = 0.03f32;
    let got = ens_score_odin(&set, 1000.0, eps, Some(&fx.inputs)).unwrap();

    // Oracle: run the single-mode perturbed scorer per mode via the public
    // API, then average the perturbed logits by hand.
    let per_mode: Vec<Tensor> = dumps
        .iter()
        .zip(&fx.ckpts)
        .map(|(d, c)| {
            // score_odin recomputes logits internally; reproduce that by
            // forwarding the perturbed inputs through the model ourselves.
            let mut perturbed = fx.inputs.clone();
            for i in 0..perturbed.rows() {
                let label = oodens_core::model::argmax(d.logits.row(i));
                let grad = oodens_core::model::grad_input_nll(c, fx.inputs.row(i), label).unwrap();
                for (v, g) in perturbed.row_mut(i).iter_mut().zip(&grad) {
                    let s = if *g > 0.0 {
                        1.0
                    } else if *g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *v -= eps * s;
                }
            }
            forward(c, &perturbed).unwrap().logits
        })
        .collect();
    for i in 0..fx.inputs.rows() {
        let mut mean = [0.0f64; 4];
        for logits in &per_mode {
            for (m, &z) in mean.iter_mut().zip(logits.row(i)) {
                *m += z as f64 / 2.0;
            }
        }
        let scaled: Vec<f64> = mean.iter().map(|&z| z / 1000.0).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|&z| (z - m).exp()).collect();
        let want = exps.iter().cloned().fold(0.0f64, f64::max) / exps.iter().sum::<f64>();
        assert!(
            (got.scores[i] as f64 - want).abs() < 1e-6,
            "sample {i}: {} vs {want}",
            got.scores[i]
        );
    }
}
