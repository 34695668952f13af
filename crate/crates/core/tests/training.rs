use sdmtl::checkpoint::encode;
use sdmtl::data::{synth_generate, SampleWindow, SynthRanges};
use sdmtl::evaluate::{build_windows, dataset_loss};
use sdmtl::loss::temporal_weights;
use sdmtl::optim::{AdamConfig, AdamState};
use sdmtl::train::{loss_and_grads, train};
use sdmtl::{Error, Model32, ModelHyper, TrainConfig};

fn hyper() -> ModelHyper {
    ModelHyper {
        frames: 6,
        horizon: 4,
        joints: 5,
        channels: 8,
        ..ModelHyper::default()
    }
}

fn windows(count: usize, seed: u64) -> Vec<SampleWindow> {
    let seqs = synth_generate(count, 14, 5, seed, &SynthRanges::default()).unwrap();
    build_windows(&seqs, 0..count, 0, 6, 4, 2).unwrap()
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        hyper: hyper(),
        steps,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, w: &[SampleWindow]) -> sdmtl::Result<sdmtl::TrainOutcome32> {
    train(cfg, w, |_, _| Ok(()))
}

#[test]
fn single_window_overfits() {
    let w = windows(1, 1)[..1].to_vec();
    let cfg = TrainConfig {
        lr: 1e-3,
        ..config(200)
    };
    let out = run(&cfg, &w).unwrap();
    let first = out.history[0];
    let weights = temporal_weights(4, cfg.alpha, cfg.loss).unwrap();
    let last = dataset_loss(&out.model, &w, &weights).unwrap();
    assert!(last < 0.01 * first, "{first} -> {last}");
}

#[test]
fn zero_steps_returns_initialization() {
    let cfg = config(0);
    let out = run(&cfg, &windows(2, 2)).unwrap();
    assert!(out.history.is_empty());
    let init = Model32::new(cfg.hyper, cfg.seed).unwrap();
    assert_eq!(encode(&out.model), encode(&init));
}

#[test]
fn history_and_saves_follow_step_count() {
    let cfg = TrainConfig {
        save_interval: 4,
        ..config(10)
    };
    let mut saved = Vec::new();
    let out = train::<f32>(&cfg, &windows(2, 3), |step, _| {
        saved.push(step);
        Ok(())
    })
    .unwrap();
    assert_eq!(out.history.len(), 10);
    assert_eq!(saved, [4, 8]);
}

#[test]
fn training_is_deterministic() {
    let w = windows(3, 4);
    let a = run(&config(10), &w).unwrap();
    let b = run(&config(10), &w).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(encode(&a.model), encode(&b.model));
    let c = run(
        &TrainConfig {
            seed: 10,
            ..config(10)
        },
        &w,
    )
    .unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn repeated_batch_loss_settles_downward() {
    // One window and batch 1 make every step see the same batch.
    let w = windows(1, 5)[..1].to_vec();
    let cfg = TrainConfig {
        batch_size: 1,
        ..config(300)
    };
    let h = run(&cfg, &w).unwrap().history;
    for s in 100..h.len() {
        assert!(
            h[s] <= 1.05 * h[s - 1],
            "step {}: {} after {}",
            s + 1,
            h[s],
            h[s - 1]
        );
    }
    for s in (150..h.len()).step_by(50) {
        assert!(
            h[s] <= h[s - 50],
            "step {}: {} vs {}",
            s + 1,
            h[s],
            h[s - 50]
        );
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let w = windows(4, 6);
    let cfg = config(10);
    let mut model = Model32::new(cfg.hyper, cfg.seed).unwrap();
    let weights = temporal_weights(4, cfg.alpha, cfg.loss).unwrap();
    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    let mut touched = vec![false; model.params.len()];
    for step in 0..10 {
        let batch: Vec<&SampleWindow> = (0..4).map(|i| &w[(step + i) % w.len()]).collect();
        let (_, grads) = loss_and_grads(&model, &batch, &weights).unwrap();
        for id in model.params.ids() {
            touched[id.index()] |= grads.get(id).data().iter().any(|&g| g != 0.0);
        }
        adam.step(&mut model.params, &grads).unwrap();
    }
    let dead: Vec<&str> = model
        .params
        .ids()
        .filter(|id| !touched[id.index()])
        .map(|id| model.params.name(id))
        .collect();
    assert!(dead.is_empty(), "no gradient reached {dead:?}");
}

#[test]
fn non_finite_loss_names_the_step() {
    let mut w = windows(1, 7)[..1].to_vec();
    w[0].input[0] = f32::NAN;
    match run(&config(5), &w) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("step 1"), "{msg}"),
        other => panic!(
            "expected a numeric error, got {:?}",
            other.map(|o| o.history)
        ),
    }
}

#[test]
fn rejects_mismatched_or_missing_windows() {
    assert!(matches!(run(&config(1), &[]), Err(Error::Config(_))));
    let cfg = TrainConfig {
        hyper: ModelHyper {
            horizon: 3,
            ..hyper()
        },
        ..config(1)
    };
    assert!(matches!(run(&cfg, &windows(1, 8)), Err(Error::Hyper(_))));
}
