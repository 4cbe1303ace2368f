//! Single-seed training run with periodic evaluation, checkpoints and resume.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::evaluate::{evaluate, EpisodeLog, Policy};
use super::metrics::{append_csv, EvalEpisodeRow, MetricsRecord};
use super::{read_to_string, write_file, ConfigError, HarnessError};
use crate::agent::{AgentKind, LearnError, Learner};
use crate::distrl::{select_action, LinearSchedule};
use crate::noise::{assign_subgroup, NoiseModel, NoiseSpec};
use crate::qnet::{load_checkpoint, save_checkpoint, CheckpointMetadata, Network};
use crate::replay::{ReplayError, SubgroupBuffer, Transition};
use crate::world::{
    reset, sense, step, write_trajectory_csv, ActionCommand, Observation, Outcome, VesselState, WorldMap,
    ACTION_COUNT,
};

pub const RUN_INFO: &str = "run.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVALS_CSV: &str = "evals.csv";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const DRO_LOG: &str = "dro_log.jsonl";
pub const RESUME_CKPT: &str = "resume.ckpt";
pub const FAULT_JSON: &str = "fault.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    /// Pause after this many environment steps, leaving a resume checkpoint.
    pub stop_after: Option<u64>,
    /// Continue from the run directory's resume checkpoint.
    pub resume: bool,
}

/// Identity of a run, written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub agent: AgentKind,
    pub strategy: crate::distrl::Strategy,
    pub noise: String,
    pub seed: u64,
    pub config_hash: String,
    pub eval_seeds: Vec<u64>,
    pub config: RunConfig,
}

impl RunInfo {
    pub fn read(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = run_dir.join(RUN_INFO);
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| HarnessError::format(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub steps: u64,
    pub finished: bool,
    pub last_metrics: Option<MetricsRecord>,
}

/// Per-episode line of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpisodeRow {
    pub episode: u64,
    pub end_step: u64,
    pub seed: u64,
    pub subgroup: usize,
    pub outcome: String,
    pub steps: u32,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActiveEpisode {
    seed: u64,
    spec: NoiseSpec,
    state: VesselState,
    map: WorldMap,
    obs: Observation,
    total_reward: f64,
}

/// Learner statistics accumulated between evaluation rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct UpdateWindow {
    updates: u64,
    grad_norm_sum: f64,
    entropy_sum: f64,
    entropy_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Progress {
    step: u64,
    episodes: u64,
    active: Option<ActiveEpisode>,
    window: UpdateWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Streams {
    env: ChaCha8Rng,
    noise: ChaCha8Rng,
    explore: ChaCha8Rng,
    learner: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Streams {
    const INIT: u64 = 0;

    fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, 1),
            noise: stream(seed, 2),
            explore: stream(seed, 3),
            learner: stream(seed, 4),
        }
    }
}

#[derive(Debug, Serialize)]
struct DroLogLine<'a> {
    update: u64,
    step: u64,
    loss: f64,
    grad_norm: f64,
    #[serde(flatten)]
    record: &'a crate::agent::DroRecord,
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    dir: PathBuf,
    hash: String,
    catalog: Vec<NoiseSpec>,
    model: NoiseModel,
    eval_seeds: Vec<u64>,
    epsilon: LinearSchedule,
    lr_rest: LinearSchedule,
    lr_last: LinearSchedule,
    learner: Learner,
    buffer: SubgroupBuffer,
    rngs: Streams,
    progress: Progress,
    last_metrics: Option<MetricsRecord>,
}

/// Trains `cfg.agent` with `seed`, writing logs and checkpoints to `run_dir`.
///
/// Baseline agents have nothing to learn: they are evaluated once at step 0.
pub fn train(cfg: &RunConfig, seed: u64, run_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary, HarnessError> {
    cfg.validate()?;
    let info = RunInfo {
        agent: cfg.agent,
        strategy: cfg.strategy,
        noise: cfg.noise_label(),
        seed,
        config_hash: cfg.hash(),
        eval_seeds: cfg.eval_seeds(),
        config: cfg.clone(),
    };
    if opts.resume {
        let existing = RunInfo::read(run_dir)?;
        if existing.config_hash != info.config_hash || existing.seed != seed {
            return Err(ConfigError::Invalid(format!(
                "{} was started with a different config or seed",
                run_dir.display()
            ))
            .into());
        }
    } else {
        if run_dir.join(RUN_INFO).exists() {
            return Err(HarnessError::Mismatch(format!(
                "{} already holds a run; pass --resume or choose another directory",
                run_dir.display()
            )));
        }
        let json = serde_json::to_string_pretty(&info).expect("run info serializes");
        write_file(&run_dir.join(RUN_INFO), json)?;
        write_file(&run_dir.join("config.toml"), cfg.to_toml())?;
    }

    let Some(policy) = Policy::baseline(cfg) else {
        let mut trainer = if opts.resume {
            Trainer::resume(cfg, seed, run_dir)?
        } else {
            Trainer::new(cfg, seed, run_dir)?
        };
        return trainer.run(opts.stop_after);
    };
    let logs = evaluate(&policy, cfg, &info.eval_seeds)?;
    let metrics = MetricsRecord::from_episodes(0, &logs, cfg.sim.dt);
    record_evaluation(run_dir, &metrics, &logs)?;
    Ok(TrainSummary {
        run_dir: run_dir.to_path_buf(),
        steps: 0,
        finished: true,
        last_metrics: Some(metrics),
    })
}

/// Appends an evaluation round to the logs of `dir` and replaces its
/// trajectory and map files.
pub fn record_evaluation(dir: &Path, metrics: &MetricsRecord, logs: &[EpisodeLog]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    append_csv(&dir.join(METRICS_CSV), std::slice::from_ref(metrics))?;
    let rows: Vec<EvalEpisodeRow> = logs
        .iter()
        .enumerate()
        .map(|(i, log)| EvalEpisodeRow::new(metrics.step, i, log))
        .collect();
    append_csv(&dir.join(EVALS_CSV), &rows)?;
    for (i, log) in logs.iter().enumerate() {
        let path = dir.join("trajectories").join(format!("episode_{i}.csv"));
        let mut buf = Vec::new();
        write_trajectory_csv(&log.trajectory, &mut buf).map_err(|e| HarnessError::format(&path, e))?;
        write_file(&path, buf)?;
        write_file(&dir.join("maps").join(format!("episode_{i}.json")), log.map.to_json())?;
    }
    Ok(())
}

/// Path of the evaluation checkpoint written at `step`.
pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step:09}.ckpt"))
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, seed: u64, dir: &Path) -> Result<Self, HarnessError> {
        let catalog = cfg.catalog()?;
        let spec = cfg
            .learner
            .network_spec(cfg.agent, cfg.sim.observation_dim(), ACTION_COUNT);
        let learner = Learner::new(cfg.agent, cfg.learner, spec, &mut stream(seed, Streams::INIT))?;
        Ok(Self {
            cfg,
            seed,
            dir: dir.to_path_buf(),
            hash: cfg.hash(),
            buffer: SubgroupBuffer::new(catalog.len(), cfg.replay.capacity, cfg.replay.min_fill),
            catalog,
            model: cfg.noise_model(),
            eval_seeds: cfg.eval_seeds(),
            epsilon: cfg.epsilon(),
            lr_rest: cfg.lr_rest(),
            lr_last: cfg.lr_last(),
            learner,
            rngs: Streams::new(seed),
            progress: Progress::default(),
            last_metrics: None,
        })
    }

    fn resume(cfg: &'a RunConfig, seed: u64, dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(RESUME_CKPT);
        let doc = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut t = Self::new(cfg, seed, dir)?;
        let ckpt = load_checkpoint(&doc, Some(&t.learner.online.spec), Some(&t.hash))?;
        let bad = |what: &str| HarnessError::format(&path, format!("resume checkpoint lacks {what}"));
        let block = |name: &str| ckpt.blocks.get(name).cloned().ok_or_else(|| bad(name));
        let extra = &ckpt.metadata.extra;
        let field = |name: &str| extra.get(name).cloned().ok_or_else(|| bad(name));
        let parse = |e: serde_json::Error| HarnessError::format(&path, e);

        t.learner.online = ckpt.network.clone();
        t.learner.target = Network::from_params(t.learner.online.spec, block("target")?)?;
        t.learner.optimizer.m = block("adam_m")?;
        t.learner.optimizer.v = block("adam_v")?;
        t.learner.optimizer.steps = serde_json::from_value(field("optimizer_steps")?).map_err(parse)?;
        t.learner.updates = serde_json::from_value(field("learner_updates")?).map_err(parse)?;
        let inserted: Vec<u64> = serde_json::from_value(field("replay_inserted")?).map_err(parse)?;
        t.buffer = SubgroupBuffer::from_flat(
            t.catalog.len(),
            cfg.replay.capacity,
            cfg.replay.min_fill,
            cfg.sim.beams,
            &block("replay")?,
            inserted,
        )
        .map_err(|e| HarnessError::format(&path, e))?;
        t.progress = serde_json::from_value(field("progress")?).map_err(parse)?;
        t.rngs = serde_json::from_value(serde_json::to_value(&ckpt.metadata.rng_states).map_err(parse)?).map_err(parse)?;
        t.last_metrics = None;
        Ok(t)
    }

    fn run(&mut self, stop_after: Option<u64>) -> Result<TrainSummary, HarnessError> {
        let total = self.cfg.total_steps;
        let limit = stop_after.map_or(total, |s| s.min(total));
        while self.progress.step < limit {
            if self.progress.active.is_none() {
                self.begin_episode()?;
            }
            self.env_step()?;
        }
        let finished = self.progress.step >= total;
        if !finished {
            self.save_resume()?;
        }
        Ok(TrainSummary {
            run_dir: self.dir.clone(),
            steps: self.progress.step,
            finished,
            last_metrics: self.last_metrics.clone(),
        })
    }

    fn begin_episode(&mut self) -> Result<(), HarnessError> {
        let sim = &self.cfg.sim;
        let seed: u64 = self.rngs.env.random();
        let (state, map) = reset(seed, self.cfg.randomize_layout, &self.cfg.layout, sim)?;
        let spec = assign_subgroup(&mut self.rngs.env, &self.catalog).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let obs = self.model.perturb(&sense(&state, &map, sim), &spec, &mut self.rngs.noise);
        self.progress.active = Some(ActiveEpisode {
            seed,
            spec,
            state,
            map,
            obs,
            total_reward: 0.0,
        });
        Ok(())
    }

    fn env_step(&mut self) -> Result<(), HarnessError> {
        let cfg = self.cfg;
        let sim = &cfg.sim;
        let step_index = self.progress.step;
        let ep = self.progress.active.as_mut().expect("episode in progress");
        let explore = &mut self.rngs.explore;
        let action = if explore.random::<f64>() < self.epsilon.value(step_index) {
            explore.random_range(0..ACTION_COUNT)
        } else {
            let spec = cfg.strategy.distortion(&ep.obs, cfg.eta_min);
            select_action(&self.learner.online, &ep.obs, cfg.learner.k, spec, explore)?
        };
        let result = step(&ep.state, ActionCommand::from_index(action), &ep.map, sim);
        let next_obs = self
            .model
            .perturb(&sense(&result.next_state, &ep.map, sim), &ep.spec, &mut self.rngs.noise);
        self.buffer
            .push(Transition {
                obs: std::mem::replace(&mut ep.obs, next_obs.clone()),
                action,
                reward: result.reward,
                next_obs,
                done: matches!(result.outcome, Outcome::Collision | Outcome::GoalReached),
                subgroup_id: ep.spec.subgroup_id,
            })
            .expect("subgroup ids come from the catalog");
        ep.state = result.next_state;
        ep.total_reward += result.reward;
        self.progress.step += 1;
        let step_index = self.progress.step;

        if step_index.is_multiple_of(cfg.train_every) {
            self.learn()?;
        }
        if result.outcome.is_terminal() {
            let ep = self.progress.active.take().expect("episode in progress");
            let row = TrainEpisodeRow {
                episode: self.progress.episodes,
                end_step: step_index,
                seed: ep.seed,
                subgroup: ep.spec.subgroup_id,
                outcome: result.outcome.as_str().to_string(),
                steps: ep.state.step_count,
                total_reward: ep.total_reward,
            };
            append_csv(&self.dir.join(EPISODES_CSV), &[row])?;
            self.progress.episodes += 1;
        }
        if step_index.is_multiple_of(cfg.eval_interval) || step_index == cfg.total_steps {
            self.evaluation_round()?;
        }
        Ok(())
    }

    fn learn(&mut self) -> Result<(), HarnessError> {
        let step_index = self.progress.step;
        let batches = match self
            .buffer
            .sample_per_subgroup(self.cfg.learner.batch_per_subgroup, &mut self.rngs.learner)
        {
            Ok(b) => b,
            Err(ReplayError::NotReady { .. }) => return Ok(()),
            Err(e) => unreachable!("sampling never reports {e}"),
        };
        let lr_rest = self.lr_rest.value(step_index);
        let lr_last = self.lr_last.value(step_index);
        let stats = match self.learner.update(&batches, lr_rest, lr_last, &mut self.rngs.learner) {
            Ok(s) => s,
            Err(e @ LearnError::NumericalFault { .. }) => {
                let dump = serde_json::json!({ "step": step_index, "error": e.to_string() });
                write_file(&self.dir.join(FAULT_JSON), dump.to_string())?;
                log::error!("step {step_index}: {e}");
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let w = &mut self.progress.window;
        w.updates += 1;
        w.grad_norm_sum += stats.grad_norm;
        if let Some(record) = &stats.dro {
            w.entropy_sum += record.entropy;
            w.entropy_count += 1;
            let interval = self.cfg.dro_log_interval;
            if interval > 0 && self.learner.updates.is_multiple_of(interval) {
                let line = DroLogLine {
                    update: self.learner.updates,
                    step: step_index,
                    loss: stats.loss,
                    grad_norm: stats.grad_norm,
                    record,
                };
                let path = self.dir.join(DRO_LOG);
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| HarnessError::io(&path, e))?;
                let text = serde_json::to_string(&line).expect("record serializes");
                writeln!(file, "{text}").map_err(|e| HarnessError::io(&path, e))?;
            }
        }
        Ok(())
    }

    fn evaluation_round(&mut self) -> Result<(), HarnessError> {
        let step_index = self.progress.step;
        let policy = Policy::learned(self.learner.online.clone(), self.cfg);
        let logs = evaluate(&policy, self.cfg, &self.eval_seeds)?;
        let mut metrics = MetricsRecord::from_episodes(step_index, &logs, self.cfg.sim.dt);
        let w = std::mem::take(&mut self.progress.window);
        metrics.grad_norm = (w.updates > 0).then(|| w.grad_norm_sum / w.updates as f64);
        metrics.mean_lambda_entropy = (w.entropy_count > 0).then(|| w.entropy_sum / w.entropy_count as f64);
        log::info!(
            "{} seed {} step {}: SR {:.3} CR {:.3} TR {:.3} FCR {:.2}",
            self.cfg.agent,
            self.seed,
            step_index,
            metrics.sr,
            metrics.cr,
            metrics.tr,
            metrics.fcr
        );
        record_evaluation(&self.dir, &metrics, &logs)?;
        let meta = CheckpointMetadata {
            step: step_index,
            config_hash: self.hash.clone(),
            rng_states: Default::default(),
            extra: serde_json::json!({ "config": self.cfg, "seed": self.seed, "agent": self.cfg.agent }),
        };
        let doc = save_checkpoint(
            &self.learner.online,
            &[("target", &self.learner.target.params)],
            &meta,
        );
        write_file(&checkpoint_path(&self.dir, step_index), doc)?;
        self.last_metrics = Some(metrics);
        Ok(())
    }

    fn save_resume(&self) -> Result<(), HarnessError> {
        let (replay, inserted) = self.buffer.to_flat();
        let rng_states = serde_json::from_value(serde_json::to_value(&self.rngs).expect("rng serializes"))
            .expect("rng streams form a map");
        let meta = CheckpointMetadata {
            step: self.progress.step,
            config_hash: self.hash.clone(),
            rng_states,
            extra: serde_json::json!({
                "config": self.cfg,
                "seed": self.seed,
                "progress": self.progress,
                "optimizer_steps": self.learner.optimizer.steps,
                "learner_updates": self.learner.updates,
                "replay_inserted": inserted,
            }),
        };
        let doc = save_checkpoint(
            &self.learner.online,
            &[
                ("target", &self.learner.target.params),
                ("adam_m", &self.learner.optimizer.m),
                ("adam_v", &self.learner.optimizer.v),
                ("replay", &replay),
            ],
            &meta,
        );
        write_file(&self.dir.join(RESUME_CKPT), doc)
    }
}
