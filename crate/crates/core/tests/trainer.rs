use hat_core::checkpoint::Checkpoint;
use hat_core::data::{make_synthetic_suite, SyntheticSpec, TaskSuite};
use hat_core::hat::HatConfig;
use hat_core::metrics::AccuracyMatrix;
use hat_core::nn::ModelSpec;
use hat_core::rng::{stream, Stream};
use hat_core::trainer::{
    evaluate, logits_of, run_sequence, train_joint, train_task, EpochRecord, Gating, Mode, TrainConfig,
};
use hat_core::nn::Network;
use hat_core::hat::HatState;

fn suite(tasks: usize, classes: usize, separation: f64, seed: u64) -> TaskSuite {
    let spec = SyntheticSpec {
        tasks,
        classes,
        dim: 10,
        separation,
        train_per_class: 120,
        test_per_class: 60,
    };
    make_synthetic_suite(&spec, seed, 0.15).unwrap()
}

fn cfg(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig {
        mode,
        max_epochs: epochs,
        batch_size: 32,
        ..Default::default()
    }
}

#[test]
fn separable_blobs_are_learned() {
    let spec = SyntheticSpec { tasks: 1, classes: 2, dim: 2, separation: 10.0, train_per_class: 200, test_per_class: 100 };
    let s = make_synthetic_suite(&spec, 4, 0.15).unwrap();
    let model = ModelSpec::new(vec![100]);
    let out = run_sequence(&s, &model, &cfg(Mode::Hat, 50), 4, &mut ()).unwrap();
    let train_acc = evaluate(&out.net, Gating::for_mode(Mode::Hat, out.hat.as_ref()), 0, &s.tasks[0].train).unwrap();
    assert!(train_acc >= 0.99, "train accuracy {train_acc}");
}

#[test]
fn first_epoch_reduces_loss() {
    let s = suite(1, 4, 3.0, 2);
    let mut log: Vec<EpochRecord> = Vec::new();
    run_sequence(&s, &ModelSpec::new(vec![32]), &cfg(Mode::Sgd, 3), 2, &mut log).unwrap();
    assert!(log[2].train_loss < log[0].train_loss);
    assert!(log[0].valid_loss < (4.0f64).ln());
}

#[test]
fn identical_seed_identical_run() {
    let s = suite(2, 3, 4.0, 7);
    let model = ModelSpec { hidden: vec![20, 20], dropout: vec![0.2, 0.2] };
    let a = run_sequence(&s, &model, &cfg(Mode::Hat, 6), 7, &mut ()).unwrap();
    let b = run_sequence(&s, &model, &cfg(Mode::Hat, 6), 7, &mut ()).unwrap();
    assert_eq!(a.report, b.report);
    let ck = |o: &hat_core::trainer::RunOutcome| {
        Checkpoint { net: o.net.clone(), hat: o.hat.clone(), tasks_trained: 2, meta: Default::default() }.encode().unwrap()
    };
    assert_eq!(ck(&a), ck(&b));
    assert_eq!(a.report.accuracy.tasks(), 2);
}

#[test]
fn single_task_gives_one_by_one_matrix() {
    let s = suite(1, 3, 4.0, 1);
    let out = run_sequence(&s, &ModelSpec::new(vec![16]), &cfg(Mode::Hat, 2), 1, &mut ()).unwrap();
    assert_eq!(out.report.accuracy.rows().len(), 1);
    assert_eq!(out.report.accuracy.rows()[0].len(), 1);
}

#[test]
fn frozen_body_for_sgd_freeze() {
    let s = suite(2, 3, 4.0, 3);
    let model = ModelSpec::new(vec![16, 16]);
    let c = cfg(Mode::SgdFreeze, 4);
    let mut net = Network::new(s.dim(), &model, &s.head_sizes(), &mut stream(3, Stream::Init, 0)).unwrap();
    train_task(&mut net, None, &s.tasks[0], 0, &c, 3, &mut ()).unwrap();
    let body: Vec<Vec<u64>> = net.body().iter().map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect()).collect();
    train_task(&mut net, None, &s.tasks[1], 1, &c, 3, &mut ()).unwrap();
    let after: Vec<Vec<u64>> = net.body().iter().map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(body, after);
}

#[test]
fn strict_masks_freeze_previous_task_logits() {
    let s = suite(2, 3, 4.0, 5);
    let model = ModelSpec::new(vec![30, 30]);
    let mut c = cfg(Mode::Hat, 8);
    c.hat = HatConfig { strict_binary: true, ..Default::default() };
    let mut net = Network::new(s.dim(), &model, &s.head_sizes(), &mut stream(5, Stream::Init, 0)).unwrap();
    let mut hat = HatState::new(c.hat.clone(), s.dim(), &model.hidden).unwrap();
    train_task(&mut net, Some(&mut hat), &s.tasks[0], 0, &c, 5, &mut ()).unwrap();
    let before = logits_of(&net, Gating::Hat { state: &hat, strict: true }, 0, &s.tasks[0].test).unwrap();
    train_task(&mut net, Some(&mut hat), &s.tasks[1], 1, &c, 5, &mut ()).unwrap();
    let after = logits_of(&net, Gating::Hat { state: &hat, strict: true }, 0, &s.tasks[0].test).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));
}

#[test]
fn joint_on_one_task_matches_sgd() {
    let s = suite(1, 3, 2.0, 6);
    let model = ModelSpec::new(vec![16]);
    let seq = run_sequence(&s, &model, &cfg(Mode::Sgd, 5), 6, &mut ()).unwrap();
    let joint = train_joint(&s.tasks, &model, &cfg(Mode::Multitask, 5), 6, &mut ()).unwrap();
    assert_eq!(joint.net, seq.net);
    assert_eq!(joint.accuracies[0], seq.report.accuracy.rows()[0][0]);
}

#[test]
fn duplicated_tasks_score_alike_jointly() {
    let s = suite(1, 3, 3.0, 8);
    let twice = vec![s.tasks[0].clone(), s.tasks[0].clone()];
    let joint = train_joint(&twice, &ModelSpec::new(vec![32]), &cfg(Mode::Multitask, 20), 8, &mut ()).unwrap();
    assert!((joint.accuracies[0] - joint.accuracies[1]).abs() <= 0.03, "{:?}", joint.accuracies);
}

#[test]
fn untrained_network_is_at_chance() {
    let s = suite(1, 4, 0.0, 9);
    let net = Network::new(s.dim(), &ModelSpec::new(vec![16]), &[4], &mut stream(9, Stream::Init, 0)).unwrap();
    let acc = evaluate(&net, Gating::Off, 0, &s.tasks[0].test).unwrap();
    // 240 test samples: 4 standard errors around 1/4
    assert!((acc - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 240.0).sqrt(), "{acc}");
}

#[test]
fn strict_and_soft_evaluation_agree_at_large_scale() {
    let s = suite(2, 3, 4.0, 10);
    let out = run_sequence(&s, &ModelSpec::new(vec![30, 30]), &cfg(Mode::Hat, 10), 10, &mut ()).unwrap();
    let hat = out.hat.as_ref().unwrap();
    for t in 0..2 {
        let soft = evaluate(&out.net, Gating::Hat { state: hat, strict: false }, t, &s.tasks[t].test).unwrap();
        let hard = evaluate(&out.net, Gating::Hat { state: hat, strict: true }, t, &s.tasks[t].test).unwrap();
        assert!((soft - hard).abs() < 1e-3, "task {t}: {soft} vs {hard}");
    }
}

#[test]
fn capacity_never_shrinks_across_tasks() {
    let s = suite(3, 3, 4.0, 11);
    let out = run_sequence(&s, &ModelSpec::new(vec![24, 24]), &cfg(Mode::Hat, 5), 11, &mut ()).unwrap();
    let ends: Vec<f64> = out.report.tasks.iter().map(|r| r.capacity.last().unwrap().capacity).collect();
    assert!(ends.windows(2).all(|w| w[1] >= w[0]), "{ends:?}");
}

#[test]
fn joint_reference_beats_sequential_sgd_on_first_task() {
    let s = suite(2, 3, 2.0, 12);
    let model = ModelSpec::new(vec![32]);
    let seq = run_sequence(&s, &model, &cfg(Mode::Sgd, 30), 12, &mut ()).unwrap();
    let joint = run_sequence(&s, &model, &cfg(Mode::Multitask, 30), 12, &mut ()).unwrap();
    let a: &AccuracyMatrix = &joint.report.accuracy;
    assert!(a.rows()[1][0] + 0.02 >= seq.report.accuracy.rows()[1][0]);
}
