use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ramdqn::agents::{build_network, ArchitectureName, ArchitectureOptions, ScreenShape};
use ramdqn::envs::{AnyEnv, EnvName, Environment};
use ramdqn::harness::{curve_csv, run_test_period, Checkpoint, Experiment, ExperimentConfig};
use ramdqn::{Error, Network};

fn config(env: EnvName, arch: ArchitectureName, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(env, arch);
    c.seed = seed;
    c.epochs = 2;
    c.hyper.steps_per_epoch = 40;
    c.hyper.test_steps = 120;
    c.hyper.minibatch_size = 4;
    c.hyper.replay_capacity = 64;
    c.hyper.replay_start_size = 10;
    c
}

fn memory_rewards(exp: &Experiment) -> Vec<(f64, usize)> {
    exp.memory().iter().map(|t| (t.reward, t.action)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn test_period_leaves_training_state_alone(seed in any::<u64>(), test_seed in any::<u64>()) {
        let mut exp = Experiment::new(config(EnvName::MicroCatch, ArchitectureName::JustRam, seed)).unwrap();
        exp.run_training_epoch(30).unwrap();
        let (net, opt, mem, step) =
            (exp.network().clone(), exp.optimizer().clone(), memory_rewards(&exp), exp.global_step());
        run_test_period(exp.network(), EnvName::MicroCatch, &exp.config().hyper, test_seed).unwrap();
        prop_assert_eq!(exp.network(), &net);
        prop_assert_eq!(exp.optimizer(), &opt);
        prop_assert_eq!(memory_rewards(&exp), mem);
        prop_assert_eq!(exp.global_step(), step);
    }

    #[test]
    fn any_truncation_is_reported_corrupt(cut in 0.0f64..1.0) {
        let exp = Experiment::new(config(EnvName::MicroChain, ArchitectureName::JustRam, 3)).unwrap();
        let bytes = exp.checkpoint(true).to_bytes();
        let at = ((bytes.len() as f64) * cut) as usize;
        let err = Checkpoint::from_bytes(&bytes[..at]).unwrap_err();
        prop_assert!(matches!(err, Error::CorruptCheckpoint(_)), "{}", err);
    }

    #[test]
    fn corrupted_magic_rejected(byte in 0usize..8, value in any::<u8>()) {
        let exp = Experiment::new(config(EnvName::MicroChain, ArchitectureName::JustRam, 3)).unwrap();
        let mut bytes = exp.checkpoint(false).to_bytes();
        prop_assume!(bytes[byte] != value);
        bytes[byte] = value;
        prop_assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }
}

#[test]
fn csv_rows_match_epochs_with_rising_indices() {
    for epochs in 1..=3 {
        let mut c = config(EnvName::MicroChain, ArchitectureName::BigRam, 9);
        c.epochs = epochs;
        let mut exp = Experiment::new(c).unwrap();
        let summary = exp.run(|_| {}).unwrap();
        assert_eq!(summary.reports.len(), epochs);
        let csv = curve_csv(&summary.reports);
        let indices: Vec<usize> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(indices, (1..=epochs).collect::<Vec<_>>());
    }
}

#[test]
fn two_epochs_of_steps_accumulate() {
    let mut exp = Experiment::new(config(EnvName::MicroCatch, ArchitectureName::JustRam, 1)).unwrap();
    exp.run_training_epoch(500).unwrap();
    exp.run_training_epoch(500).unwrap();
    assert_eq!(exp.global_step(), 1_000);
}

#[test]
fn same_seed_same_losses() {
    let run = || {
        let mut exp =
            Experiment::new(config(EnvName::MicroDiver, ArchitectureName::JustRam, 21)).unwrap();
        (0..3)
            .map(|_| exp.run_training_epoch(40).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_architecture_trains_on_every_compatible_game() {
    for env in EnvName::ALL {
        for arch in ArchitectureName::ALL {
            let c = config(env, arch, 4);
            let has_screen = AnyEnv::new(env).screen_shape().is_some();
            match Experiment::new(c) {
                Ok(mut exp) => {
                    assert!(has_screen || !arch.uses_screen());
                    let report = exp.run_epoch().unwrap();
                    assert!(report.mean_loss.is_finite(), "{env} {arch}");
                    assert_eq!(exp.network().output_dim(), AnyEnv::new(env).action_count());
                }
                Err(Error::Config(_)) => assert!(arch.uses_screen() && !has_screen),
                Err(e) => panic!("{env} {arch}: {e}"),
            }
        }
    }
}

#[test]
fn checkpoint_into_wrong_architecture_names_layer() {
    let exp = Experiment::new(config(EnvName::MicroCatch, ArchitectureName::BigRam, 2)).unwrap();
    let ckpt = exp.checkpoint(false);
    let mut other: Network<f32> = build_network(
        ArchitectureName::JustRam,
        3,
        ArchitectureOptions::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let err = ckpt.load_params_into(&mut other).unwrap_err().to_string();
    assert!(err.starts_with("layer "), "{err}");
    assert!(err.contains('`'), "{err}");
}

#[test]
fn resumed_screen_experiment_rebuilds_state() {
    let mut c = config(EnvName::MicroBreakout, ArchitectureName::MixedRam, 8);
    c.hyper.phi_length = 2;
    let mut exp = Experiment::new(c).unwrap();
    exp.run_epoch().unwrap();
    let bytes = exp.checkpoint(true).to_bytes();
    let mut resumed = Experiment::resume(Checkpoint::from_bytes(&bytes).unwrap(), None, None).unwrap();
    assert_eq!(resumed.run_epoch().unwrap(), exp.run_epoch().unwrap());
    assert_eq!(resumed.network(), exp.network());
}

#[test]
fn screen_stack_matches_phi_length() {
    let mut c = config(EnvName::MicroCatch, ArchitectureName::Nips, 5);
    c.hyper.phi_length = 3;
    let exp = Experiment::new(c).unwrap();
    let t = exp.memory().iter().next().unwrap();
    assert_eq!(t.state.screens.len(), 3 * 16 * 16);
    let shape = ScreenShape { channels: 3, height: 16, width: 16 };
    assert_eq!(exp.checkpoint(false).header.screen, Some(shape));
}
