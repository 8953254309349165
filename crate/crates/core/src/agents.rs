//! Q-network architectures, epsilon-greedy acting, Bellman targets, and the
//! single training step.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::envs::{StateSnapshot, RAM_SIZE};
use crate::error::{Error, Result};
use crate::network::{make_network, InputStream, LayerSpec, Mode, NetInputs, Network};
use crate::optim::{q_loss_grad, rmsprop_step, RmsPropState};
use crate::replay::{ReplayMemory, Transition};
use crate::tensor::{Activation, Scalar, Tensor};

/// Training hyperparameters. Defaults follow the reference DQN setup with
/// the replay memory reduced to 100 000 transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub minibatch_size: usize,
    pub replay_capacity: usize,
    pub phi_length: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_decay_steps: u64,
    pub epsilon_min: f64,
    pub replay_start_size: usize,
    pub frame_skip: usize,
    pub dropout_p: f64,
    pub steps_per_epoch: usize,
    pub test_steps: usize,
    pub test_epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            minibatch_size: 32,
            replay_capacity: 100_000,
            phi_length: 4,
            learning_rate: 0.0002,
            discount: 0.95,
            epsilon_start: 1.0,
            epsilon_decay_steps: 1_000_000,
            epsilon_min: 0.1,
            replay_start_size: 100,
            frame_skip: 4,
            dropout_p: 0.0,
            steps_per_epoch: 12_500,
            test_steps: 10_000,
            test_epsilon: 0.05,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return fail("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_min)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_min > self.epsilon_start
        {
            return fail("need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(0.0..=1.0).contains(&self.test_epsilon) {
            return fail("test epsilon must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail("dropout probability must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.minibatch_size == 0
            || self.replay_capacity == 0
            || self.phi_length == 0
            || self.frame_skip == 0
            || self.epsilon_decay_steps == 0
            || self.test_steps == 0
        {
            return fail("counts must be positive");
        }
        if self.replay_capacity < self.minibatch_size {
            return fail("replay capacity smaller than the minibatch");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            min: self.epsilon_min,
            decay_steps: self.epsilon_decay_steps,
        }
    }
}

/// Linear anneal from `start` to `min` over `decay_steps`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub decay_steps: u64,
}

pub fn epsilon_at(schedule: &EpsilonSchedule, step: u64) -> f64 {
    if step >= schedule.decay_steps {
        return schedule.min;
    }
    let frac = step as f64 / schedule.decay_steps as f64;
    (schedule.start - (schedule.start - schedule.min) * frac).max(schedule.min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureName {
    JustRam,
    BigRam,
    Nips,
    MixedRam,
    BigMixedRam,
}

impl ArchitectureName {
    pub const ALL: [ArchitectureName; 5] = [
        ArchitectureName::JustRam,
        ArchitectureName::BigRam,
        ArchitectureName::Nips,
        ArchitectureName::MixedRam,
        ArchitectureName::BigMixedRam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureName::JustRam => "just_ram",
            ArchitectureName::BigRam => "big_ram",
            ArchitectureName::Nips => "nips",
            ArchitectureName::MixedRam => "mixed_ram",
            ArchitectureName::BigMixedRam => "big_mixed_ram",
        }
    }

    pub fn uses_ram(self) -> bool {
        !matches!(self, ArchitectureName::Nips)
    }

    pub fn uses_screen(self) -> bool {
        matches!(
            self,
            ArchitectureName::Nips | ArchitectureName::MixedRam | ArchitectureName::BigMixedRam
        )
    }
}

impl fmt::Display for ArchitectureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

/// Stacked-screen input geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// The two convolution layers shared by the screen networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStack {
    pub filters1: usize,
    pub kernel1: usize,
    pub stride1: usize,
    pub filters2: usize,
    pub kernel2: usize,
    pub stride2: usize,
}

impl ConvStack {
    /// 16 filters 8×8 stride 4, then 32 filters 4×4 stride 2.
    pub const BENCHMARK: ConvStack = ConvStack {
        filters1: 16,
        kernel1: 8,
        stride1: 4,
        filters2: 32,
        kernel2: 4,
        stride2: 2,
    };

    /// Same depth and widths with kernels sized for micro-game screens.
    pub const MICRO: ConvStack = ConvStack {
        filters1: 16,
        kernel1: 4,
        stride1: 2,
        filters2: 32,
        kernel2: 3,
        stride2: 1,
    };

    /// Benchmark kernels once both extents reach 32 cells, micro kernels below.
    pub fn for_screen(screen: ScreenShape) -> Self {
        if screen.height.min(screen.width) >= 32 {
            Self::BENCHMARK
        } else {
            Self::MICRO
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArchitectureOptions {
    pub screen: Option<ScreenShape>,
    pub dropout_p: f64,
}

struct Builder {
    specs: Vec<LayerSpec>,
    dropout_p: f64,
}

impl Builder {
    fn push(&mut self, spec: LayerSpec) -> usize {
        self.specs.push(spec);
        self.specs.len() - 1
    }

    /// Rectified dense layer, followed by dropout when enabled.
    fn hidden(&mut self, name: &str, from: usize, units: usize) -> usize {
        let h = self.push(LayerSpec::dense(name, from, units, Activation::Rectify));
        if self.dropout_p > 0.0 {
            self.push(LayerSpec::dropout(
                &format!("{name}_dropout"),
                h,
                self.dropout_p,
            ))
        } else {
            h
        }
    }

    fn conv_tower(&mut self, screen: ScreenShape) -> usize {
        let stack = ConvStack::for_screen(screen);
        let input = self.push(LayerSpec::input(
            "screen",
            InputStream::Screen,
            &[screen.channels, screen.height, screen.width],
        ));
        let c1 = self.push(LayerSpec::conv2d(
            "conv1",
            input,
            stack.filters1,
            stack.kernel1,
            stack.stride1,
            Activation::Rectify,
        ));
        self.push(LayerSpec::conv2d(
            "conv2",
            c1,
            stack.filters2,
            stack.kernel2,
            stack.stride2,
            Activation::Rectify,
        ))
    }

    fn output(&mut self, from: usize, output_dim: usize) -> usize {
        self.push(LayerSpec::dense(
            "output",
            from,
            output_dim,
            Activation::None,
        ))
    }
}

/// Layer sequence of the named architecture.
pub fn build_architecture(
    name: ArchitectureName,
    output_dim: usize,
    opts: ArchitectureOptions,
) -> Result<Vec<LayerSpec>> {
    if output_dim == 0 {
        return Err(Error::Config("output dimension must be positive".into()));
    }
    let screen = match (name.uses_screen(), opts.screen) {
        (true, None) => {
            return Err(Error::Config(format!(
                "architecture `{name}` needs a screen shape"
            )))
        }
        (_, s) => s,
    };
    let mut b = Builder {
        specs: Vec::new(),
        dropout_p: opts.dropout_p,
    };
    match name {
        ArchitectureName::JustRam => {
            let ram = b.push(LayerSpec::input("ram", InputStream::Ram, &[RAM_SIZE]));
            let h1 = b.hidden("hidden1", ram, 128);
            let h2 = b.hidden("hidden2", h1, 128);
            b.output(h2, output_dim);
        }
        ArchitectureName::BigRam => {
            let ram = b.push(LayerSpec::input("ram", InputStream::Ram, &[RAM_SIZE]));
            let mut h = ram;
            for i in 1..=4 {
                h = b.hidden(&format!("hidden{i}"), h, 128);
            }
            b.output(h, output_dim);
        }
        ArchitectureName::Nips => {
            let conv2 = b.conv_tower(screen.expect("checked"));
            let hidden = b.hidden("hidden", conv2, 256);
            b.output(hidden, output_dim);
        }
        ArchitectureName::MixedRam => {
            let conv2 = b.conv_tower(screen.expect("checked"));
            let hidden = b.hidden("hidden", conv2, 256);
            let ram = b.push(LayerSpec::input("ram", InputStream::Ram, &[RAM_SIZE]));
            let concat = b.push(LayerSpec::concat("concat", &[hidden, ram]));
            b.output(concat, output_dim);
        }
        ArchitectureName::BigMixedRam => {
            let conv2 = b.conv_tower(screen.expect("checked"));
            let hidden1 = b.hidden("hidden1", conv2, 256);
            let ram = b.push(LayerSpec::input("ram", InputStream::Ram, &[RAM_SIZE]));
            let hidden2 = b.hidden("hidden2", ram, 128);
            let hidden3 = b.hidden("hidden3", hidden2, 128);
            let concat = b.push(LayerSpec::concat("concat", &[hidden1, hidden3]));
            let hidden4 = b.hidden("hidden4", concat, 256);
            b.output(hidden4, output_dim);
        }
    }
    Ok(b.specs)
}

/// Builds and initializes the named architecture.
pub fn build_network<T: Scalar, R: Rng + ?Sized>(
    name: ArchitectureName,
    output_dim: usize,
    opts: ArchitectureOptions,
    rng: &mut R,
) -> Result<Network<T>> {
    make_network(build_architecture(name, output_dim, opts)?, rng)
}

/// Batches snapshots into the input streams `net` consumes, scaling bytes
/// by 256.
pub fn encode_states<T: Scalar>(
    net: &Network<T>,
    states: &[&StateSnapshot],
) -> Result<NetInputs<T>> {
    let scale = |b: &u8| T::from_f64(*b as f64 / 256.0);
    let mut inputs = NetInputs {
        ram: None,
        screen: None,
    };
    for stream in net.input_streams() {
        let shape = net.input_shape(stream).expect("stream listed by network");
        let mut full = vec![states.len()];
        full.extend_from_slice(shape);
        let data: Vec<T> = match stream {
            InputStream::Ram => states
                .iter()
                .flat_map(|s| s.ram.iter().map(scale))
                .collect(),
            InputStream::Screen => {
                let expected: usize = shape.iter().product();
                if let Some(bad) = states.iter().find(|s| s.screens.len() != expected) {
                    return Err(Error::Shape(format!(
                        "state carries {} screen bytes, network expects {expected}",
                        bad.screens.len()
                    )));
                }
                states
                    .iter()
                    .flat_map(|s| s.screens.iter().map(scale))
                    .collect()
            }
        };
        let t = Tensor::new(full, data)?;
        match stream {
            InputStream::Ram => inputs.ram = Some(t),
            InputStream::Screen => inputs.screen = Some(t),
        }
    }
    Ok(inputs)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice: uniform random with probability `epsilon`,
/// otherwise the greedy action under `Q(state, ·)`.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &Network<T>,
    state: &StateSnapshot,
    epsilon: f64,
    rng: &mut R,
    action_count: usize,
) -> Result<usize> {
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..action_count));
    }
    let q = net.predict(&encode_states(net, &[state])?)?;
    Ok(argmax(&q.data()[..action_count.min(q.len())]))
}

/// `y = r` for terminal transitions, else `r + γ·max_a Q(s', a)` under the
/// current network in evaluation mode.
pub fn compute_targets<T: Scalar>(
    net: &Network<T>,
    minibatch: &[&Transition],
    gamma: f64,
) -> Result<Vec<T>> {
    if minibatch.is_empty() {
        return Err(Error::Shape("empty minibatch".into()));
    }
    let live: Vec<&StateSnapshot> = minibatch
        .iter()
        .filter(|t| !t.terminal)
        .map(|t| &t.next_state)
        .collect();
    let next_max: Vec<f64> = if live.is_empty() {
        Vec::new()
    } else {
        let q = net.predict(&encode_states(net, &live)?)?;
        q.rows().map(|row| row[argmax(row)].to_f64()).collect()
    };
    let mut bootstrap = next_max.into_iter();
    Ok(minibatch
        .iter()
        .map(|t| {
            let y = if t.terminal {
                t.reward
            } else {
                t.reward + gamma * bootstrap.next().expect("one value per live transition")
            };
            T::from_f64(y)
        })
        .collect())
}

/// Samples a minibatch, regresses `Q(s, a)` toward the Bellman targets,
/// and applies one RMSprop update. Returns the minibatch loss.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    memory: &ReplayMemory,
    optimizer: &mut RmsPropState<T>,
    hyper: &HyperParams,
    replay_rng: &mut dyn RngCore,
    dropout_rng: &mut dyn RngCore,
) -> Result<f64> {
    let batch = memory.sample_minibatch(hyper.minibatch_size, replay_rng)?;
    let targets = compute_targets(net, &batch, hyper.discount)?;
    let states: Vec<&StateSnapshot> = batch.iter().map(|t| &t.state).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let acts = net.forward(&encode_states(net, &states)?, Mode::Train, dropout_rng)?;
    let (loss, grad) = q_loss_grad(&acts.output(), &actions, &targets)?;
    let grads = net.backward(&acts, &grad)?;
    rmsprop_step(&mut net.params_mut(), &grads.tensors, optimizer)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerKind;
    use crate::optim::RmsPropConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let s = HyperParams::default().epsilon_schedule();
        assert_eq!(epsilon_at(&s, 0), 1.0);
        assert_eq!(epsilon_at(&s, 1_000_000), 0.1);
        assert_eq!(epsilon_at(&s, 5_000_000), 0.1);
        assert!((epsilon_at(&s, 250_000) - 0.775).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn epsilon_bounded_and_non_increasing(a in 0u64..3_000_000, b in 0u64..3_000_000) {
            let s = HyperParams::default().epsilon_schedule();
            let (lo, hi) = (a.min(b), a.max(b));
            let (e_lo, e_hi) = (epsilon_at(&s, lo), epsilon_at(&s, hi));
            prop_assert!(e_hi <= e_lo);
            prop_assert!((0.1..=1.0).contains(&e_lo) && (0.1..=1.0).contains(&e_hi));
        }

        #[test]
        fn argmax_invariant_under_shift(q in prop::collection::vec(-100i32..100, 1..10), c in -1000i32..1000) {
            let q: Vec<f64> = q.into_iter().map(f64::from).collect();
            let shifted: Vec<f64> = q.iter().map(|v| v + c as f64).collect();
            prop_assert_eq!(argmax(&q), argmax(&shifted));
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0, 0.0]), 0);
    }

    fn output_biased_net(q: &[f64]) -> Network<f64> {
        let specs = vec![
            LayerSpec::input("ram", InputStream::Ram, &[RAM_SIZE]),
            LayerSpec::dense("output", 0, q.len(), Activation::None),
        ];
        let mut net: Network<f64> = make_network(specs, &mut rng(0)).unwrap();
        let mut p = net.params_mut();
        p[0].fill(0.0);
        p[1].data_mut().copy_from_slice(q);
        net
    }

    #[test]
    fn greedy_selection() {
        let state = StateSnapshot::ram_only([0; RAM_SIZE]);
        let net = output_biased_net(&[1.0, 3.0, 2.0]);
        assert_eq!(select_action(&net, &state, 0.0, &mut rng(1), 3).unwrap(), 1);
        let net = output_biased_net(&[5.0, 5.0, 0.0]);
        assert_eq!(select_action(&net, &state, 0.0, &mut rng(1), 3).unwrap(), 0);
    }

    #[test]
    fn fully_random_selection_is_uniform() {
        let state = StateSnapshot::ram_only([0; RAM_SIZE]);
        let net = output_biased_net(&[0.0, 9.0, 0.0, 0.0]);
        let mut r = rng(77);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&net, &state, 1.0, &mut r, 4).unwrap()] += 1;
        }
        let p = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    fn transition(reward: f64, terminal: bool) -> Transition {
        let s = StateSnapshot::ram_only([0; RAM_SIZE]);
        Transition {
            state: s.clone(),
            action: 0,
            reward,
            next_state: s,
            terminal,
        }
    }

    #[test]
    fn targets_terminal_bootstrap_and_myopic() {
        let net = output_biased_net(&[2.0, -1.0]);
        let t_term = transition(5.0, true);
        let t_live = transition(1.0, false);
        let y = compute_targets(&net, &[&t_term, &t_live], 0.95).unwrap();
        assert_eq!(y[0], 5.0);
        assert!((y[1] - 2.9).abs() < 1e-12);
        let y0 = compute_targets(&net, &[&t_live], 0.0).unwrap();
        assert_eq!(y0[0], 1.0);
    }

    #[test]
    fn terminal_next_state_is_never_read() {
        let net = output_biased_net(&[2.0, -1.0]);
        let mut t = transition(3.0, true);
        // a next state the RAM network could not even encode
        t.next_state.screens = vec![1, 2, 3];
        t.next_state.ram = [255; RAM_SIZE];
        assert_eq!(compute_targets(&net, &[&t], 0.95).unwrap(), vec![3.0]);
    }

    fn layer_summary(specs: &[LayerSpec]) -> Vec<String> {
        specs
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Input { stream, .. } => format!("input:{stream}"),
                LayerKind::Dense {
                    units, activation, ..
                } => format!("dense{units}:{activation:?}"),
                LayerKind::Conv2d { filters, .. } => format!("conv{filters}"),
                LayerKind::Dropout { .. } => "dropout".into(),
                LayerKind::Concat => "concat".into(),
            })
            .collect()
    }

    #[test]
    fn just_ram_layers() {
        let specs = build_architecture(ArchitectureName::JustRam, 4, Default::default()).unwrap();
        assert_eq!(
            layer_summary(&specs),
            [
                "input:ram",
                "dense128:Rectify",
                "dense128:Rectify",
                "dense4:None"
            ]
        );
    }

    #[test]
    fn dropout_follows_each_hidden_layer() {
        let opts = ArchitectureOptions {
            screen: None,
            dropout_p: 0.5,
        };
        let specs = build_architecture(ArchitectureName::JustRam, 4, opts).unwrap();
        assert_eq!(
            layer_summary(&specs),
            [
                "input:ram",
                "dense128:Rectify",
                "dropout",
                "dense128:Rectify",
                "dropout",
                "dense4:None"
            ]
        );
    }

    #[test]
    fn screen_nets_need_screen_shape() {
        for name in [
            ArchitectureName::Nips,
            ArchitectureName::MixedRam,
            ArchitectureName::BigMixedRam,
        ] {
            assert!(matches!(
                build_architecture(name, 4, Default::default()),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn perfect_fit_train_step_leaves_params() {
        let mut net = output_biased_net(&[0.0, 0.0]);
        let mut memory = ReplayMemory::new(4);
        memory.push(transition(0.0, true));
        let mut opt = RmsPropState::new(&net.params(), RmsPropConfig::with_learning_rate(0.01));
        let hyper = HyperParams {
            minibatch_size: 1,
            ..HyperParams::default()
        };
        let before = net.clone();
        let loss = train_step(
            &mut net,
            &memory,
            &mut opt,
            &hyper,
            &mut rng(1),
            &mut rng(2),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn train_step_needs_full_minibatch() {
        let mut net = output_biased_net(&[0.0, 0.0]);
        let memory = ReplayMemory::new(4);
        let mut opt = RmsPropState::new(&net.params(), RmsPropConfig::with_learning_rate(0.01));
        let err = train_step(
            &mut net,
            &memory,
            &mut opt,
            &HyperParams::default(),
            &mut rng(1),
            &mut rng(2),
        );
        assert!(matches!(err, Err(Error::InsufficientContents { .. })));
    }

    #[test]
    fn hyper_defaults_validate() {
        HyperParams::default().validate().unwrap();
        let bad = HyperParams {
            discount: 1.0,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
