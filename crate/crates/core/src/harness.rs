//! Experiment orchestration: training epochs interleaved with test periods,
//! the curve CSV, and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    build_network, epsilon_at, select_action, train_step, ArchitectureName, ArchitectureOptions,
    HyperParams, ScreenShape,
};
use crate::envs::{
    frame_skip_step, AnyEnv, EnvName, Environment, PhiBuffer, StateSnapshot, RAM_SIZE,
};
use crate::error::{Error, Result};
use crate::network::{InputStream, Network};
use crate::optim::{RmsPropConfig, RmsPropState};
use crate::replay::{ReplayMemory, Transition};
use crate::tensor::{Scalar, Tensor};

pub const CURVE_FILE: &str = "curve.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVE_HEADER: &str = "epoch,avg_score,episodes,steps,mean_loss";

const MAGIC: &[u8; 8] = b"RAMDQN1\n";
const FORMAT_VERSION: u32 = 1;

const ENV_STREAM: u64 = 1;
const EXPLORE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const REPLAY_STREAM: u64 = 4;
const INIT_STREAM: u64 = 5;
const TEST_STREAM_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvName,
    pub arch: ArchitectureName,
    pub hyper: HyperParams,
    pub epochs: usize,
    pub seed: u64,
    /// Where the curve, checkpoints and summary go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(env: EnvName, arch: ArchitectureName) -> Self {
        Self {
            env,
            arch,
            hyper: HyperParams::default(),
            epochs: 1,
            seed: 0,
            out_dir: None,
        }
    }

    /// Screen input geometry, or `None` for RAM-only architectures.
    pub fn screen_shape(&self) -> Result<Option<ScreenShape>> {
        if !self.arch.uses_screen() {
            return Ok(None);
        }
        match AnyEnv::new(self.env).screen_shape() {
            Some((height, width)) => Ok(Some(ScreenShape {
                channels: self.hyper.phi_length,
                height,
                width,
            })),
            None => Err(Error::Config(format!(
                "architecture `{}` needs screens but environment `{}` has none",
                self.arch, self.env
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.screen_shape().map(|_| ())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub avg_score: f64,
    pub episodes: usize,
    /// Cumulative training actions at the end of the epoch.
    pub steps: u64,
    pub mean_loss: f64,
    /// Set when no test episode finished and `avg_score` is the partial score.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub avg_score: f64,
    pub episodes: usize,
    pub frames: usize,
    pub truncated: bool,
}

/// Plays `hyper.test_steps` frames with `hyper.test_epsilon` exploration and
/// no learning. Truncated episodes count only when none finished.
pub fn run_test_period<T: Scalar>(
    net: &Network<T>,
    env: EnvName,
    hyper: &HyperParams,
    seed: u64,
) -> Result<TestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = AnyEnv::new(env);
    let actions = env.action_count();
    let obs = env.reset(rng.gen());
    let mut phi = net
        .input_shape(InputStream::Screen)
        .map(|_| PhiBuffer::new(hyper.phi_length, &obs.screen));
    let mut state = StateSnapshot::capture(&obs.ram, phi.as_ref());

    let (mut frames, mut episodes, mut total, mut running) = (0, 0, 0.0, 0.0);
    while frames < hyper.test_steps {
        let action = select_action(net, &state, hyper.test_epsilon, &mut rng, actions)?;
        let step = frame_skip_step(&mut env, action, hyper.frame_skip)?;
        frames += hyper.frame_skip;
        running += step.reward;
        let obs = if step.terminal {
            episodes += 1;
            total += running;
            running = 0.0;
            let obs = env.reset(rng.gen());
            if let Some(phi) = &mut phi {
                phi.reset(&obs.screen);
            }
            obs
        } else {
            if let Some(phi) = &mut phi {
                phi.push(&step.observation.screen);
            }
            step.observation
        };
        state = StateSnapshot::capture(&obs.ram, phi.as_ref());
    }
    Ok(if episodes == 0 {
        TestReport {
            avg_score: running,
            episodes: 0,
            frames,
            truncated: true,
        }
    } else {
        TestReport {
            avg_score: total / episodes as f64,
            episodes,
            frames,
            truncated: false,
        }
    })
}

/// 1-based epoch with the highest average score, earliest on ties.
pub fn best_epoch(reports: &[EpochReport]) -> Option<usize> {
    let mut best: Option<&EpochReport> = None;
    for r in reports {
        if best.map_or(true, |b| r.avg_score > b.avg_score) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

pub fn curve_csv(reports: &[EpochReport]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.avg_score, r.episodes, r.steps, r.mean_loss
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub replay: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            env: stream_rng(seed, ENV_STREAM),
            explore: stream_rng(seed, EXPLORE_STREAM),
            dropout: stream_rng(seed, DROPOUT_STREAM),
            replay: stream_rng(seed, REPLAY_STREAM),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub env: EnvName,
    pub arch: ArchitectureName,
    pub seed: u64,
    pub epochs: usize,
    pub hyper: HyperParams,
    pub best_epoch: usize,
    pub best_avg_score: f64,
    pub steps: u64,
    pub reports: Vec<EpochReport>,
}

/// A training run in progress.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    net: Network<f32>,
    optimizer: RmsPropState<f32>,
    memory: ReplayMemory,
    env: AnyEnv,
    phi: Option<PhiBuffer>,
    state: StateSnapshot,
    rngs: RngStreams,
    global_step: u64,
    reports: Vec<EpochReport>,
}

impl Experiment {
    /// Builds the network and fills replay with `replay_start_size`
    /// random-action transitions. The warm-up does not advance the step count.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = AnyEnv::new(config.env);
        let opts = ArchitectureOptions {
            screen: config.screen_shape()?,
            dropout_p: config.hyper.dropout_p,
        };
        let net = build_network(
            config.arch,
            env.action_count(),
            opts,
            &mut stream_rng(config.seed, INIT_STREAM),
        )?;
        let optimizer = RmsPropState::new(
            &net.params(),
            RmsPropConfig::with_learning_rate(config.hyper.learning_rate),
        );
        let memory = ReplayMemory::new(config.hyper.replay_capacity);
        let mut exp = Self {
            net,
            optimizer,
            memory,
            env,
            phi: None,
            state: StateSnapshot::ram_only([0; RAM_SIZE]),
            rngs: RngStreams::from_seed(config.seed),
            global_step: 0,
            reports: Vec::new(),
            config,
        };
        exp.start_episode();
        let actions = exp.env.action_count();
        for _ in 0..exp.config.hyper.replay_start_size {
            let a = exp.rngs.explore.gen_range(0..actions);
            exp.act(a)?;
        }
        Ok(exp)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }
    pub fn network(&self) -> &Network<f32> {
        &self.net
    }
    pub fn optimizer(&self) -> &RmsPropState<f32> {
        &self.optimizer
    }
    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }
    pub fn global_step(&self) -> u64 {
        self.global_step
    }
    pub fn reports(&self) -> &[EpochReport] {
        &self.reports
    }

    fn start_episode(&mut self) {
        let obs = self.env.reset(self.rngs.env.gen());
        if self.config.arch.uses_screen() {
            match &mut self.phi {
                Some(phi) => phi.reset(&obs.screen),
                None => self.phi = Some(PhiBuffer::new(self.config.hyper.phi_length, &obs.screen)),
            }
        }
        self.state = StateSnapshot::capture(&obs.ram, self.phi.as_ref());
    }

    /// Applies `action` under frame skip and stores the transition.
    fn act(&mut self, action: usize) -> Result<()> {
        let step = frame_skip_step(&mut self.env, action, self.config.hyper.frame_skip)?;
        if let Some(phi) = &mut self.phi {
            phi.push(&step.observation.screen);
        }
        let next = StateSnapshot::capture(&step.observation.ram, self.phi.as_ref());
        let state = std::mem::replace(&mut self.state, next.clone());
        self.memory.push(Transition {
            state,
            action,
            reward: step.reward,
            next_state: next,
            terminal: step.terminal,
        });
        if step.terminal {
            self.start_episode();
        }
        Ok(())
    }

    /// `steps` epsilon-greedy actions, each followed by one training step
    /// once replay holds a minibatch. Returns the mean loss (0 without updates).
    pub fn run_training_epoch(&mut self, steps: usize) -> Result<f64> {
        let schedule = self.config.hyper.epsilon_schedule();
        let actions = self.env.action_count();
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        for _ in 0..steps {
            let eps = epsilon_at(&schedule, self.global_step);
            let a = select_action(&self.net, &self.state, eps, &mut self.rngs.explore, actions)?;
            self.act(a)?;
            if self.memory.len() >= self.config.hyper.minibatch_size {
                loss_sum += train_step(
                    &mut self.net,
                    &self.memory,
                    &mut self.optimizer,
                    &self.config.hyper,
                    &mut self.rngs.replay,
                    &mut self.rngs.dropout,
                )?;
                updates += 1;
            }
            self.global_step += 1;
        }
        Ok(if updates == 0 {
            0.0
        } else {
            loss_sum / updates as f64
        })
    }

    /// Seed of the test period following `epoch`.
    pub fn test_seed(&self, epoch: usize) -> u64 {
        stream_rng(self.config.seed, TEST_STREAM_BASE + epoch as u64).gen()
    }

    /// One training epoch and its test period; writes outputs when an
    /// output directory is configured.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let mean_loss = self.run_training_epoch(self.config.hyper.steps_per_epoch)?;
        let epoch = self.reports.len() + 1;
        let test = run_test_period(
            &self.net,
            self.config.env,
            &self.config.hyper,
            self.test_seed(epoch),
        )?;
        let report = EpochReport {
            epoch,
            avg_score: test.avg_score,
            episodes: test.episodes,
            steps: self.global_step,
            mean_loss,
            truncated: test.truncated,
        };
        self.reports.push(report.clone());
        if let Some(dir) = self.config.out_dir.clone() {
            self.write_outputs(&dir, best_epoch(&self.reports) == Some(epoch))?;
        }
        Ok(report)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochReport)) -> Result<ExperimentSummary> {
        while self.reports.len() < self.config.epochs {
            let report = self.run_epoch()?;
            on_epoch(&report);
        }
        self.summary()
    }

    pub fn summary(&self) -> Result<ExperimentSummary> {
        let best =
            best_epoch(&self.reports).ok_or_else(|| Error::Config("no epoch has run".into()))?;
        Ok(ExperimentSummary {
            env: self.config.env,
            arch: self.config.arch,
            seed: self.config.seed,
            epochs: self.config.epochs,
            hyper: self.config.hyper.clone(),
            best_epoch: best,
            best_avg_score: self.reports[best - 1].avg_score,
            steps: self.global_step,
            reports: self.reports.clone(),
        })
    }

    fn write_outputs(&self, dir: &Path, is_best: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(CURVE_FILE), curve_csv(&self.reports).as_bytes())?;
        self.checkpoint(true).save(&dir.join(LATEST_CHECKPOINT))?;
        if is_best {
            self.checkpoint(false).save(&dir.join(BEST_CHECKPOINT))?;
        }
        let summary = serde_json::to_string_pretty(&self.summary()?).expect("summary serializes");
        write_file(&dir.join(SUMMARY_FILE), format!("{summary}\n").as_bytes())
    }

    /// Model and optimizer; with `resumable`, also everything needed to
    /// continue training bit-for-bit.
    pub fn checkpoint(&self, resumable: bool) -> Checkpoint {
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            architecture: self.config.arch,
            output_dim: self.net.output_dim(),
            env: self.config.env,
            screen: self
                .config
                .screen_shape()
                .expect("validated at construction"),
            hyper: self.config.hyper.clone(),
            seed: self.config.seed,
            epochs: self.config.epochs,
            resume: resumable.then(|| ResumeState {
                global_step: self.global_step,
                reports: self.reports.clone(),
                rngs: self.rngs.clone(),
                env: self.env.clone(),
                phi: self.phi.clone(),
            }),
        };
        Checkpoint {
            header,
            params: self.net.params().iter().map(|t| to_f64_vec(t)).collect(),
            accumulators: self.optimizer.mean_square.iter().map(to_f64_vec).collect(),
            replay: resumable.then(|| self.memory.clone()),
        }
    }

    /// Continues a run from a resumable checkpoint. `epochs` and `out_dir`
    /// replace the stored values when given.
    pub fn resume(
        ckpt: Checkpoint,
        epochs: Option<usize>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let header = ckpt.header.clone();
        let resume = header
            .resume
            .ok_or_else(|| Error::Config("checkpoint holds no resume state".into()))?;
        let config = ExperimentConfig {
            env: header.env,
            arch: header.architecture,
            hyper: header.hyper,
            epochs: epochs.unwrap_or(header.epochs),
            seed: header.seed,
            out_dir,
        };
        config.validate()?;
        let net = ckpt.network::<f32>()?;
        let optimizer = ckpt.optimizer::<f32>(&net)?;
        let memory = ckpt
            .replay
            .ok_or_else(|| Error::CorruptCheckpoint("resume state without replay".into()))?;
        if resume.phi.is_some() != config.arch.uses_screen() {
            return Err(Error::CorruptCheckpoint(
                "screen buffer does not match architecture".into(),
            ));
        }
        let state = StateSnapshot::capture(&resume.env.observation().ram, resume.phi.as_ref());
        Ok(Self {
            config,
            net,
            optimizer,
            memory,
            env: resume.env,
            phi: resume.phi,
            state,
            rngs: resume.rngs,
            global_step: resume.global_step,
            reports: resume.reports,
        })
    }
}

/// Runs every configured epoch and returns the summary.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentSummary> {
    Experiment::new(config)?.run(|_| {})
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_f64_vec<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|&v| Scalar::to_f64(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub global_step: u64,
    pub reports: Vec<EpochReport>,
    pub rngs: RngStreams,
    pub env: AnyEnv,
    pub phi: Option<PhiBuffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub architecture: ArchitectureName,
    pub output_dim: usize,
    pub env: EnvName,
    pub screen: Option<ScreenShape>,
    pub hyper: HyperParams,
    pub seed: u64,
    pub epochs: usize,
    pub resume: Option<ResumeState>,
}

/// On-disk layout:
///
/// ```text
/// "RAMDQN1\n"
/// u64 header length, JSON header
/// u64 tensor count, then per tensor: u64 element count, f64 values   (parameters)
/// u64 tensor count, then per tensor: u64 element count, f64 values   (RMSprop accumulators)
/// u8 replay flag, then optionally the replay ring
/// ```
///
/// Integers and reals are little-endian.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Vec<f64>>,
    pub accumulators: Vec<Vec<f64>>,
    pub replay: Option<ReplayMemory>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u64(&mut w, header.len() as u64);
        w.extend_from_slice(&header);
        for group in [&self.params, &self.accumulators] {
            put_u64(&mut w, group.len() as u64);
            for values in group {
                put_u64(&mut w, values.len() as u64);
                for v in values {
                    w.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        match &self.replay {
            None => w.push(0),
            Some(memory) => {
                w.push(1);
                let (ring, cursor) = memory.raw_parts();
                put_u64(&mut w, memory.capacity() as u64);
                put_u64(&mut w, cursor as u64);
                put_u64(&mut w, ring.len() as u64);
                for t in ring {
                    put_snapshot(&mut w, &t.state);
                    put_snapshot(&mut w, &t.next_state);
                    put_u64(&mut w, t.action as u64);
                    w.extend_from_slice(&t.reward.to_le_bytes());
                    w.push(u8::from(t.terminal));
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let header_len = r.len()?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let params = r.tensor_group()?;
        let accumulators = r.tensor_group()?;
        let replay = match r.take(1)?[0] {
            0 => None,
            1 => {
                let capacity = r.len()?;
                let cursor = r.len()?;
                let count = r.len()?;
                if count > capacity {
                    return Err(Error::CorruptCheckpoint(format!(
                        "{count} transitions exceed capacity {capacity}"
                    )));
                }
                let mut ring = Vec::with_capacity(count.min(r.remaining()));
                for _ in 0..count {
                    let state = r.snapshot()?;
                    let next_state = r.snapshot()?;
                    let action = r.len()?;
                    let reward = f64::from_le_bytes(r.array()?);
                    let terminal = match r.take(1)?[0] {
                        0 => false,
                        1 => true,
                        b => return Err(Error::CorruptCheckpoint(format!("terminal flag {b}"))),
                    };
                    ring.push(Transition {
                        state,
                        action,
                        reward,
                        next_state,
                        terminal,
                    });
                }
                Some(ReplayMemory::from_raw_parts(capacity, ring, cursor)?)
            }
            b => return Err(Error::CorruptCheckpoint(format!("replay flag {b}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(Self {
            header,
            params,
            accumulators,
            replay,
        })
    }

    /// Rebuilds the stored architecture and loads its parameters.
    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        let h = &self.header;
        let opts = ArchitectureOptions {
            screen: h.screen,
            dropout_p: h.hyper.dropout_p,
        };
        let mut net = build_network(
            h.architecture,
            h.output_dim,
            opts,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        self.load_params_into(&mut net)?;
        Ok(net)
    }

    /// Copies the stored parameters into `net`, naming the first layer whose
    /// size disagrees.
    pub fn load_params_into<T: Scalar>(&self, net: &mut Network<T>) -> Result<()> {
        let slots = net.param_slots();
        if slots.len() != self.params.len() {
            let layer = slots.get(self.params.len()).or(slots.last());
            let detail = format!(
                "network has {} parameter tensors, checkpoint {}",
                slots.len(),
                self.params.len()
            );
            return Err(match layer {
                Some(s) => Error::layer(s.layer, format!("`{}`: {detail}", s.layer_name)),
                None => Error::Shape(detail),
            });
        }
        let mut tensors = Vec::with_capacity(slots.len());
        for (slot, values) in slots.iter().zip(&self.params) {
            let expected: usize = slot.shape.iter().product();
            if values.len() != expected {
                return Err(Error::layer(
                    slot.layer,
                    format!(
                        "`{}` {:?} expects {expected} values {:?}, checkpoint holds {}",
                        slot.layer_name,
                        slot.role,
                        slot.shape,
                        values.len()
                    ),
                ));
            }
            tensors.push(Tensor::from_f64_slice(&slot.shape, values)?);
        }
        net.set_params(tensors)
    }

    /// RMSprop state matching `net`'s parameters.
    pub fn optimizer<T: Scalar>(&self, net: &Network<T>) -> Result<RmsPropState<T>> {
        let params = net.params();
        if params.len() != self.accumulators.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} accumulators",
                params.len(),
                self.accumulators.len()
            )));
        }
        let mean_square = params
            .iter()
            .zip(&self.accumulators)
            .map(|(p, acc)| Tensor::from_f64_slice(p.shape(), acc))
            .collect::<Result<Vec<_>>>()?;
        Ok(RmsPropState {
            mean_square,
            config: RmsPropConfig::with_learning_rate(self.header.hyper.learning_rate),
        })
    }
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_snapshot(w: &mut Vec<u8>, s: &StateSnapshot) {
    w.extend_from_slice(&s.ram);
    put_u64(w, s.screens.len() as u64);
    w.extend_from_slice(&s.screens);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {}: {n} more bytes expected, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.array()?);
        usize::try_from(v).map_err(|_| Error::CorruptCheckpoint(format!("length {v} out of range")))
    }

    fn tensor_group(&mut self) -> Result<Vec<Vec<f64>>> {
        let count = self.len()?;
        let mut out = Vec::with_capacity(count.min(self.remaining() / 8));
        for _ in 0..count {
            let n = self.len()?;
            let raw = self.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::CorruptCheckpoint("tensor too large".into()))?,
            )?;
            out.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        Ok(out)
    }

    fn snapshot(&mut self) -> Result<StateSnapshot> {
        let ram = self.array::<RAM_SIZE>()?;
        let n = self.len()?;
        Ok(StateSnapshot {
            ram,
            screens: self.take(n)?.to_vec(),
        })
    }
}
