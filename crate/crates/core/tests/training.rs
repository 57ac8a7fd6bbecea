use iscat_core::experiment::{generate_records, training_samples, DatasetConfig, SceneConfig, SimContext, Split};
use iscat_core::loss::{LossVariant, TrainingSample};
use iscat_core::net::{train, NetConfig, TrainConfig, Trainer};
use iscat_core::store::{checkpoint_from_bytes, checkpoint_to_bytes, Checkpoint};

fn setup(count: usize) -> (SimContext, Vec<TrainingSample>, NetConfig) {
    let ctx = SimContext::new(&SceneConfig {
        nx: 8,
        ny: 8,
        n_tx: 6,
        n_rx: 6,
        ..SceneConfig::default()
    })
    .unwrap();
    let data = DatasetConfig {
        snr_db: vec![10.0],
        ..DatasetConfig::default()
    };
    let recs = generate_records(&ctx, &data, Split::Train, count).unwrap();
    let samples = training_samples(&recs, ctx.grid(), &TrainConfig::default()).unwrap();
    let net = NetConfig {
        height: 8,
        width: 8,
        depth: 1,
        base_channels: 4,
        rng_seed: 5,
        ..NetConfig::default()
    };
    (ctx, samples, net)
}

fn cfg(epochs: usize, lr0: f64) -> TrainConfig {
    TrainConfig {
        lr0,
        momentum: 0.9,
        epochs_max: epochs,
        batch_size: 2,
        rng_seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let (ctx, samples, net) = setup(6);
    let c = cfg(4, 1e-4);
    let mut straight = Trainer::new(&net, c, &ctx.ops).unwrap();
    let mut full_log = Vec::new();
    while !straight.finished() {
        full_log.push(straight.run_epoch(&samples, None).unwrap());
    }

    let mut first = Trainer::new(&net, c, &ctx.ops).unwrap();
    let mut log = vec![first.run_epoch(&samples, None).unwrap(), first.run_epoch(&samples, None).unwrap()];
    let bytes = checkpoint_to_bytes(&Checkpoint {
        train: c,
        state: first.into_state(),
    })
    .unwrap();
    let ck = checkpoint_from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::resume(ck.state, ck.train, &ctx.ops).unwrap();
    while !resumed.finished() {
        log.push(resumed.run_epoch(&samples, None).unwrap());
    }
    assert_eq!(log, full_log);
    assert_eq!(resumed.state(), straight.state());
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let (ctx, samples, net) = setup(4);
    let (p1, l1) = train(&samples, Some(&samples), &net, &cfg(2, 1e-4), &ctx.ops).unwrap();
    let (p2, l2) = train(&samples, Some(&samples), &net, &cfg(2, 1e-4), &ctx.ops).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(l1, l2);
    assert!(l1.epochs.iter().all(|e| e.holdout_mse.is_some()));
    let other = TrainConfig { rng_seed: 12, ..cfg(2, 1e-4) };
    let (p3, _) = train(&samples, None, &net, &other, &ctx.ops).unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let (ctx, samples, net) = setup(4);
    let t = Trainer::new(&net, cfg(3, 0.0), &ctx.ops).unwrap();
    let before = t.state().params.clone();
    let (after, _) = train(&samples, None, &net, &cfg(3, 0.0), &ctx.ops).unwrap();
    assert_eq!(before.trainable(), after.trainable());
}

#[test]
fn every_loss_variant_can_overfit_a_tiny_set() {
    let (ctx, _, net) = setup(0);
    let recs = generate_records(
        &ctx,
        &DatasetConfig {
            snr_db: vec![10.0],
            ..DatasetConfig::default()
        },
        Split::Train,
        2,
    )
    .unwrap();
    for variant in LossVariant::ALL {
        let (input_snr, target_snr) = match variant {
            LossVariant::ContrastNoisy => (Some(10.0), None),
            LossVariant::Field => (None, Some(10.0)),
            _ => (None, None),
        };
        let c = TrainConfig {
            variant,
            input_snr,
            target_snr,
            lr0: 1e-3,
            epochs_max: 60,
            lr_halving_period: 30,
            ..cfg(60, 1e-3)
        };
        let samples = training_samples(&recs, ctx.grid(), &c).unwrap();
        let (_, log) = train(&samples, None, &net, &c, &ctx.ops).unwrap();
        let first = log.epochs[0].train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn divergence_rolls_back_the_epoch() {
    let (ctx, samples, net) = setup(4);
    let mut t = Trainer::new(&net, cfg(5, 1e12), &ctx.ops).unwrap();
    let before = t.state().clone();
    let mut failed = false;
    for _ in 0..5 {
        let snapshot = t.state().clone();
        if t.run_epoch(&samples, None).is_err() {
            assert_eq!(t.state(), &snapshot);
            failed = true;
            break;
        }
    }
    assert!(failed, "a 1e12 learning rate should blow up");
    assert_ne!(t.state(), &before);
}
