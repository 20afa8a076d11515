use hyperlearn_core::data::{SplitSpec, make_synthetic};
use hyperlearn_core::model::ModelSpec;
use hyperlearn_core::optim::OptimizerKind;
use hyperlearn_core::schedule::{MetaConfig, SchedulerKind, Trainer, run_experiment};

fn small(scheduler: SchedulerKind) -> (MetaConfig, ModelSpec, hyperlearn_core::data::Splits) {
    let data = make_synthetic("two_moons_like", 600, 3).unwrap().dataset;
    let splits = SplitSpec::default().split(&data).unwrap();
    let config = MetaConfig {
        scheduler,
        epochs: 6,
        lr: 0.1,
        initial_batch_size: 32,
        b_min: 8,
        b_max: 200,
        n_samples: 4,
        agent_hidden: 8,
        val_batch_size: 16,
        zeta_phi: 10.0,
        zeta_alpha: 100.0,
        seed: 5,
        ..Default::default()
    };
    (config, ModelSpec { hidden: vec![16, 8] }, splits)
}

#[test]
fn batch_size_is_constant_within_each_epoch() {
    let (config, model, s) = small(SchedulerKind::Arbiter);
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    for e in &log.epochs {
        assert!(log.steps_in_epoch(e.epoch).all(|st| st.batch_size == e.batch_size));
    }
    for w in log.epochs.windows(2) {
        assert_eq!(w[0].next_batch_size, w[1].batch_size);
    }
}

#[test]
fn every_epoch_visits_each_training_example_once() {
    let (config, model, s) = small(SchedulerKind::Arbiter);
    let m = s.train.len();
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    for e in &log.epochs {
        let steps = log.steps_in_epoch(e.epoch).count();
        assert_eq!(steps, m.div_ceil(e.batch_size), "epoch {}", e.epoch);
    }
}

#[test]
fn identical_seeds_give_identical_logs() {
    let (config, model, s) = small(SchedulerKind::Arbiter);
    let a = run_experiment(config.clone(), &model, s.train.clone(), s.val.clone()).unwrap();
    let b = run_experiment(config, &model, s.train, s.val).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_scheduler_never_moves_and_skips_the_agent() {
    let (config, model, s) = small(SchedulerKind::Constant);
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    assert!(log.batch_sizes().iter().all(|&b| b == 32));
    assert!(log.steps.iter().all(|st| st.meta_loss.is_none()));
}

#[test]
fn milestone_table_sets_the_batch_size_from_its_epoch_on() {
    let (mut config, model, s) = small(SchedulerKind::Milestone);
    config.milestones = [(3, 48), (5, 96)].into();
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    assert_eq!(log.batch_sizes(), vec![32, 32, 48, 48, 96, 96]);
}

#[test]
fn warmup_delays_the_agent() {
    let (mut config, model, s) = small(SchedulerKind::Arbiter);
    config.warmup_epochs = 2;
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    assert!(log.steps_in_epoch(2).all(|st| st.meta_loss.is_none()));
    assert!(log.steps_in_epoch(3).all(|st| st.meta_loss.is_some()));
    assert_eq!(log.epochs[1].next_batch_size, 32);
}

#[test]
fn n_learn_spaces_the_updates() {
    let (mut config, model, s) = small(SchedulerKind::Arbiter);
    config.n_learn = 2;
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    for e in &log.epochs {
        assert_eq!(e.alpha_reset.is_some(), e.epoch % 2 == 0, "epoch {}", e.epoch);
        if e.epoch % 2 == 1 {
            assert_eq!(e.next_batch_size, e.batch_size);
        }
    }
}

#[test]
fn hd_optimizer_records_its_learning_rate() {
    let (mut config, model, s) = small(SchedulerKind::ArbiterHd);
    config.optimizer = OptimizerKind::SgdHd;
    config.hyper_lr = 1e-3;
    let log = run_experiment(config, &model, s.train, s.val).unwrap();
    let lr = log.lr_trace();
    assert_eq!(lr[0], 0.1);
    assert!(lr.iter().any(|&v| v != 0.1));
}

#[test]
fn numeric_blowup_returns_the_partial_log() {
    let (mut config, model, s) = small(SchedulerKind::Arbiter);
    config.lr = 1e300;
    let abort = run_experiment(config, &model, s.train, s.val).unwrap_err();
    assert_eq!(abort.error.class(), hyperlearn_core::ErrorClass::Numeric);
    assert!(!abort.log.steps.is_empty());
}

#[test]
fn trainer_exposes_its_state_between_epochs() {
    let (config, model, s) = small(SchedulerKind::Arbiter);
    let mut t = Trainer::new(config, &model, s.train, s.val).unwrap();
    t.run_epoch().unwrap();
    assert!(t.last_samples().is_some());
    t.epoch_boundary_update().unwrap();
    assert_eq!(t.epochs_done(), 1);
    assert_eq!(t.batch_size(), t.log().epochs[0].next_batch_size);
}
