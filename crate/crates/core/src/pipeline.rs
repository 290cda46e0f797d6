//! The command pipeline behind the `drive` binary. Every stage reads and
//! writes artifacts under one output directory and records a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{LearnedAgent, PerceptionKind, PerceptionModel, PerceptionStack, Policy};
use crate::bench::{emit_report, plot_name, route_svg, run_ablation, run_benchmark, write_ablation, BenchmarkReport, MetricsRow};
use crate::config::{RunConfig, SuiteSpec};
use crate::error::{Error, Result};
use crate::learning::{dagger_round, evaluate_loss, examples, train_offline, DaggerReport, Dataset, Learner, Provenance};
use crate::numerics::{checkpoint, ParamSet};
use crate::perception::{
    classifier_accuracy, evaluate_detector, pretrain_detector, render_frames, train_classifier, Classifier, Detector,
    DetectorMetrics,
};
use crate::simworld::{Agent, ExpertAgent, ScenarioSpec};

/// Frames may hold up to this many labelled objects.
const MAX_FRAME_OBJECTS: usize = 16;
const POLICY_SEED_SALT: u64 = 0x5eed_0f90_11c7;

pub type Log<'a> = &'a mut dyn FnMut(&str);

/// Which agent drives a benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentChoice {
    Expert,
    Detection,
    Classification,
}

impl AgentChoice {
    pub fn name(self) -> &'static str {
        match self {
            AgentChoice::Expert => "expert",
            AgentChoice::Detection => "detection",
            AgentChoice::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [AgentChoice::Expert, AgentChoice::Detection, AgentChoice::Classification]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown agent `{s}` (expected expert, detection or classification)")))
    }
}

/// A resolved configuration plus its output directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        Workspace { config, out: out.into() }
    }

    pub fn detector_checkpoint(&self) -> PathBuf {
        self.out.join("detector.ckpt")
    }

    pub fn classifier_checkpoint(&self) -> PathBuf {
        self.out.join("classifier.ckpt")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset").join("offline")
    }

    pub fn holdout_dir(&self) -> PathBuf {
        self.out.join("dataset").join("holdout")
    }

    pub fn policy_checkpoint(&self, kind: PerceptionKind) -> PathBuf {
        self.out.join(format!("policy-{}.ckpt", kind.name()))
    }

    pub fn dagger_checkpoint(&self, kind: PerceptionKind) -> PathBuf {
        self.out.join(format!("policy-{}-dagger.ckpt", kind.name()))
    }

    pub fn dagger_dir(&self, kind: PerceptionKind) -> PathBuf {
        self.out.join(format!("dagger-{}", kind.name()))
    }

    pub fn bench_dir(&self, agent: AgentChoice) -> PathBuf {
        self.out.join(format!("bench-{}", agent.name()))
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.out.join("ablation")
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }
}

fn require(what: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::missing(what, path))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json artifact", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(what: &'static str, path: &Path) -> Result<T> {
    require(what, path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("json artifact", format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Config snapshot, seed and artifact checksums of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: String,
    /// Artifact path relative to the output directory → sha256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join("manifests").join(format!("{command}.json"))
    }
}

fn artifact_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            files.extend(artifact_files(&e)?);
        }
        Ok(files)
    } else {
        let mut files = vec![path.to_path_buf()];
        let m = checkpoint::manifest_path(path);
        if m.exists() {
            files.push(m);
        }
        Ok(files)
    }
}

pub fn write_manifest(ws: &Workspace, command: &str, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let mut sums = BTreeMap::new();
    for a in artifacts {
        for f in artifact_files(a)? {
            let rel = f.strip_prefix(&ws.out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            sums.insert(rel, sha256_file(&f)?);
        }
    }
    let m = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: ws.config.seed,
        config: ws.config.to_toml()?,
        artifacts: sums,
    };
    let path = Manifest::path(&ws.out, command);
    let dir = path.parent().expect("manifest has a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&path, &m)?;
    Ok(path)
}

fn detector_layout(cfg: &RunConfig) -> Result<(Detector, ParamSet)> {
    let mut params = ParamSet::new();
    let det = Detector::new(&mut params, cfg.detector.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok((det, params))
}

fn classifier_layout(cfg: &RunConfig) -> (Classifier, ParamSet) {
    let mut params = ParamSet::new();
    let cls = Classifier::new(&mut params, &cfg.detector.backbone_channels, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    (cls, params)
}

/// Loads the frozen perception stack of `kind` from its checkpoint.
pub fn perception_stack(ws: &Workspace, kind: PerceptionKind) -> Result<PerceptionStack> {
    let camera = ws.config.sim.camera;
    match kind {
        PerceptionKind::Detection => {
            let path = ws.detector_checkpoint();
            require("detector checkpoint (run pretrain-detector)", &path)?;
            let (det, mut params) = detector_layout(&ws.config)?;
            checkpoint::load_into(&mut params, &path)?;
            Ok(PerceptionStack {
                model: PerceptionModel::Detector(det),
                params,
                camera,
            })
        }
        PerceptionKind::Classification => {
            let path = ws.classifier_checkpoint();
            require("classifier checkpoint (run pretrain-detector)", &path)?;
            let (cls, mut params) = classifier_layout(&ws.config);
            checkpoint::load_into(&mut params, &path)?;
            Ok(PerceptionStack {
                model: PerceptionModel::Classifier(cls),
                params,
                camera,
            })
        }
    }
}

/// Freshly initialized policy for `stack`.
pub fn policy_layout(cfg: &RunConfig, stack: &PerceptionStack) -> Result<(Policy, ParamSet)> {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ POLICY_SEED_SALT);
    let policy = Policy::for_perception(&mut params, cfg.policy, stack, &mut rng)?;
    Ok((policy, params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub detector_losses: Vec<f64>,
    pub detector_holdout: DetectorMetrics,
    pub classifier_losses: Vec<f64>,
    pub classifier_holdout_accuracy: f64,
}

/// Renders the synthetic frame sets, pretrains the detector and the
/// image-level classifier baseline on them, and saves both checkpoints.
pub fn pretrain(ws: &Workspace, log: Log) -> Result<PretrainSummary> {
    let cfg = &ws.config;
    ws.ensure_out()?;
    let camera = cfg.sim.camera;
    let frames = render_frames(cfg.pretrain.frames, cfg.seed, &camera, MAX_FRAME_OBJECTS)?;
    let holdout = render_frames(cfg.pretrain.holdout_frames, cfg.seed.wrapping_add(1), &camera, MAX_FRAME_OBJECTS)?;
    log(&format!("rendered {} training and {} held-out frames", frames.len(), holdout.len()));
    let pc = cfg.pretrain_config();
    let every = (pc.steps / 10).max(1);

    let (det, mut dp) = detector_layout(cfg)?;
    let detector_losses = pretrain_detector(&det, &mut dp, &frames, &pc, &mut |step, loss, _| {
        if (step + 1) % every == 0 {
            log(&format!("detector step {} loss {loss:.4}", step + 1));
        }
    })?;
    let detector_holdout = evaluate_detector(&det, &dp, &holdout, &pc.loss)?;
    log(&format!(
        "detector held-out box L1 {:.4}, class accuracy {:.3}",
        detector_holdout.box_l1, detector_holdout.class_accuracy
    ));
    checkpoint::save(&dp, ws.detector_checkpoint())?;

    let (cls, mut cp) = classifier_layout(cfg);
    let classifier_losses = train_classifier(&cls, &mut cp, &frames, &pc, &mut |step, loss, _| {
        if (step + 1) % every == 0 {
            log(&format!("classifier step {} loss {loss:.4}", step + 1));
        }
    })?;
    let classifier_holdout_accuracy = classifier_accuracy(&cls, &cp, &holdout)?;
    log(&format!("classifier held-out accuracy {classifier_holdout_accuracy:.3}"));
    checkpoint::save(&cp, ws.classifier_checkpoint())?;

    let summary = PretrainSummary {
        detector_losses,
        detector_holdout,
        classifier_losses,
        classifier_holdout_accuracy,
    };
    let report = ws.out.join("pretrain.json");
    write_json(&report, &summary)?;
    write_manifest(ws, "pretrain-detector", &[ws.detector_checkpoint(), ws.classifier_checkpoint(), report])?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub offline_records: usize,
    pub holdout_records: usize,
    pub expert_completion: f64,
    pub expert_collisions: usize,
}

fn learner(ws: &Workspace, stack: Arc<PerceptionStack>, policy: Arc<Policy>) -> Learner {
    Learner {
        perception: stack,
        policy,
        controller: ws.config.controller,
        collect: ws.config.collect_config(),
    }
}

fn expert_dataset(ws: &Workspace, suite: &SuiteSpec, seed: u64) -> Result<(Dataset, f64, usize)> {
    let cfg = ws.config.collect_config();
    let mut dataset = Dataset::new(seed);
    let (mut completion, mut collisions) = (0.0, 0);
    let specs = suite.scenarios();
    for spec in &specs {
        let world = crate::simworld::make_scenario(spec)?;
        let c = crate::learning::collect_episode(&mut ExpertAgent::new(cfg.expert), world, &cfg, Provenance::Offline(0))?;
        completion += c.outcome.completion;
        collisions += c.outcome.collisions();
        dataset.records.extend(c.records);
    }
    Ok((dataset, completion / specs.len() as f64, collisions))
}

/// Expert-driven collection of the offline and held-out datasets.
pub fn collect(ws: &Workspace, log: Log) -> Result<CollectSummary> {
    ws.ensure_out()?;
    let s = &ws.config.suite;
    let (offline, expert_completion, expert_collisions) = expert_dataset(ws, &s.collect, ws.config.seed)?;
    let (holdout, _, _) = expert_dataset(ws, &s.holdout, ws.config.seed.wrapping_add(1))?;
    offline.save(&ws.dataset_dir())?;
    holdout.save(&ws.holdout_dir())?;
    log(&format!(
        "collected {} offline and {} held-out records; expert completion {expert_completion:.1}%, {expert_collisions} collisions",
        offline.len(),
        holdout.len()
    ));
    write_manifest(ws, "collect", &[ws.dataset_dir(), ws.holdout_dir()])?;
    Ok(CollectSummary {
        offline_records: offline.len(),
        holdout_records: holdout.len(),
        expert_completion,
        expert_collisions,
    })
}

fn load_dataset(what: &'static str, dir: &Path) -> Result<Dataset> {
    require(what, &dir.join(crate::learning::MANIFEST_FILE))?;
    Dataset::load(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub perception: PerceptionKind,
    pub epoch_losses: Vec<f64>,
    pub holdout_loss: f64,
    pub checkpoint_sha256: String,
}

/// Offline training of the fusion + planner policy on the expert dataset.
pub fn train(ws: &Workspace, kind: PerceptionKind, log: Log) -> Result<TrainSummary> {
    let cfg = &ws.config;
    let stack = perception_stack(ws, kind)?;
    let data = load_dataset("offline dataset (run collect)", &ws.dataset_dir())?;
    let holdout = load_dataset("held-out dataset (run collect)", &ws.holdout_dir())?;
    let train_examples = examples(&stack, &data)?;
    let holdout_examples = examples(&stack, &holdout)?;
    let (policy, mut params) = policy_layout(cfg, &stack)?;
    let tc = cfg.train_config();
    let every = (tc.epochs / 10).max(1);
    let epoch_losses = train_offline(&policy, &mut params, &train_examples, &tc, &mut |e, l| {
        if (e + 1) % every == 0 {
            log(&format!("{} epoch {} loss {l:.4}", kind.name(), e + 1));
        }
    })?;
    let holdout_loss = evaluate_loss(&policy, &params, &holdout_examples)?;
    log(&format!("{} offline held-out loss {holdout_loss:.4}", kind.name()));
    let path = ws.policy_checkpoint(kind);
    checkpoint::save(&params, &path)?;
    let summary = TrainSummary {
        perception: kind,
        epoch_losses,
        holdout_loss,
        checkpoint_sha256: sha256_file(&path)?,
    };
    let report = ws.out.join(format!("train-{}.json", kind.name()));
    write_json(&report, &summary)?;
    write_manifest(ws, &format!("train-{}", kind.name()), &[path, report])?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaggerSummary {
    pub perception: PerceptionKind,
    pub offline_holdout_loss: f64,
    pub holdout_loss: f64,
    pub rounds: Vec<DaggerReport>,
    /// Mean completion of the final student on the evaluation suite.
    pub student_completion: f64,
    pub student_collisions: usize,
}

fn learned_agent(ws: &Workspace, kind: PerceptionKind, stack: Arc<PerceptionStack>, policy: Arc<Policy>, params: ParamSet) -> LearnedAgent {
    LearnedAgent::new(format!("{}-agent", kind.name()), stack, policy, Arc::new(params), ws.config.controller)
}

/// Aggregation rounds starting from the offline checkpoint.
pub fn dagger(ws: &Workspace, kind: PerceptionKind, rounds: u32, log: Log) -> Result<DaggerSummary> {
    let cfg = &ws.config;
    let stack = Arc::new(perception_stack(ws, kind)?);
    let offline_path = ws.policy_checkpoint(kind);
    require("offline policy checkpoint (run train)", &offline_path)?;
    let (policy, mut params) = policy_layout(cfg, &stack)?;
    checkpoint::load_into(&mut params, &offline_path)?;
    let policy = Arc::new(policy);
    let offline = load_dataset("offline dataset (run collect)", &ws.dataset_dir())?;
    let holdout = load_dataset("held-out dataset (run collect)", &ws.holdout_dir())?;
    let holdout_examples = examples(&stack, &holdout)?;
    let offline_holdout_loss = evaluate_loss(&policy, &params, &holdout_examples)?;
    let offline_examples = examples(&stack, &offline)?;
    let l = learner(ws, Arc::clone(&stack), Arc::clone(&policy));
    let scenarios = cfg.suite.collect.scenarios();
    let tc = cfg.dagger_train_config();
    let mut reports = Vec::new();
    // Every round mixes fresh on-policy data with the pre-collected expert set.
    let mut data = offline.clone();
    for round in 1..=rounds {
        let (mixed, _, rep) = dagger_round(&l, round, &mut params, &scenarios, &offline, &offline_examples, &tc, &mut |_, _| {})?;
        log(&format!(
            "{} round {round}: student completion {:.1}%, {} new records, mix {}+{}, held-out loss {:.4}",
            kind.name(),
            rep.student_completion,
            rep.collected,
            rep.kept_old,
            rep.kept_new,
            evaluate_loss(&policy, &params, &holdout_examples)?
        ));
        data = mixed;
        reports.push(rep);
    }
    let holdout_loss = evaluate_loss(&policy, &params, &holdout_examples)?;
    let mut student = learned_agent(ws, kind, Arc::clone(&stack), Arc::clone(&policy), params.clone());
    let eval = run_benchmark(&mut student, &cfg.suite.evaluate.scenarios(), &cfg.episode(), &cfg.penalties)?;
    let student_completion = eval.aggregate()?.route_completion;
    log(&format!(
        "{} after {rounds} rounds: held-out loss {offline_holdout_loss:.4} -> {holdout_loss:.4}, evaluation completion {student_completion:.1}%",
        kind.name()
    ));
    let path = ws.dagger_checkpoint(kind);
    checkpoint::save(&params, &path)?;
    let dir = ws.dagger_dir(kind);
    data.save(&dir)?;
    let summary = DaggerSummary {
        perception: kind,
        offline_holdout_loss,
        holdout_loss,
        rounds: reports,
        student_completion,
        student_collisions: eval.collisions(),
    };
    let report = ws.out.join(format!("dagger-{}.json", kind.name()));
    write_json(&report, &summary)?;
    write_manifest(ws, &format!("dagger-{}", kind.name()), &[path, dir, report])?;
    Ok(summary)
}

/// The trained student of `kind`, preferring the aggregated checkpoint.
pub fn load_student(ws: &Workspace, kind: PerceptionKind) -> Result<LearnedAgent> {
    let stack = Arc::new(perception_stack(ws, kind)?);
    let (policy, mut params) = policy_layout(&ws.config, &stack)?;
    let dagger = ws.dagger_checkpoint(kind);
    let path = if dagger.exists() { dagger } else { ws.policy_checkpoint(kind) };
    require("policy checkpoint (run train)", &path)?;
    checkpoint::load_into(&mut params, &path)?;
    Ok(learned_agent(ws, kind, stack, Arc::new(policy), params))
}

fn agent_for(ws: &Workspace, choice: AgentChoice) -> Result<Box<dyn Agent>> {
    Ok(match choice {
        AgentChoice::Expert => Box::new(ExpertAgent::new(ws.config.sim.expert)),
        AgentChoice::Detection => Box::new(load_student(ws, PerceptionKind::Detection)?),
        AgentChoice::Classification => Box::new(load_student(ws, PerceptionKind::Classification)?),
    })
}

const REPORT_FILE: &str = "report.json";

/// Runs `choice` over `suite` (the configured bench suite when `None`) and
/// writes the metrics table, event log, plots and the full report.
pub fn bench(ws: &Workspace, choice: AgentChoice, suite: Option<&[ScenarioSpec]>, log: Log) -> Result<BenchmarkReport> {
    let cfg = &ws.config;
    let default_suite = cfg.suite.bench.scenarios();
    let suite = suite.unwrap_or(&default_suite);
    let mut agent = agent_for(ws, choice)?;
    let report = run_benchmark(agent.as_mut(), suite, &cfg.episode(), &cfg.penalties)?;
    let dir = ws.bench_dir(choice);
    let files = emit_report(&report, &dir)?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    let agg = report.aggregate()?;
    log(&format!(
        "{}: driving score {:.2}, completion {:.2}%, penalty {:.3}, {} collisions over {} routes",
        choice.name(),
        agg.driving_score,
        agg.route_completion,
        agg.infraction_penalty,
        report.collisions(),
        report.routes.len()
    ));
    let mut artifacts = vec![files.table, files.events, dir.join(REPORT_FILE)];
    artifacts.extend(files.plots);
    write_manifest(ws, &format!("bench-{}", choice.name()), &artifacts)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub pairs: usize,
    pub detection_not_worse: usize,
    pub fraction_not_worse: f64,
    pub detection_collisions: usize,
    pub classification_collisions: usize,
    pub detection: MetricsRow,
    pub classification: MetricsRow,
}

/// Detection and classification students on identical seeds, with the paired table.
pub fn ablate(ws: &Workspace, suite: Option<&[ScenarioSpec]>, log: Log) -> Result<AblationSummary> {
    let cfg = &ws.config;
    let default_suite = cfg.suite.ablation.scenarios();
    let suite = suite.unwrap_or(&default_suite);
    let mut det = load_student(ws, PerceptionKind::Detection)?;
    let mut cls = load_student(ws, PerceptionKind::Classification)?;
    let rep = run_ablation(&mut det, &mut cls, suite, &cfg.episode(), &cfg.penalties)?;
    let dir = ws.ablation_dir();
    let det_files = emit_report(&rep.detection, dir.join("detection"))?;
    let cls_files = emit_report(&rep.classification, dir.join("classification"))?;
    let table = dir.join("paired.csv");
    write_ablation(&rep.rows, &table)?;
    let summary = AblationSummary {
        pairs: rep.rows.len(),
        detection_not_worse: rep.rows.iter().filter(|r| r.detection_not_worse).count(),
        fraction_not_worse: rep.fraction_not_worse(),
        detection_collisions: rep.detection.collisions(),
        classification_collisions: rep.classification.collisions(),
        detection: rep.detection.aggregate()?,
        classification: rep.classification.aggregate()?,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    log(&format!(
        "detection collided no more often in {}/{} pairs ({:.0}%); collisions {} vs {}",
        summary.detection_not_worse,
        summary.pairs,
        100.0 * summary.fraction_not_worse,
        summary.detection_collisions,
        summary.classification_collisions
    ));
    write_manifest(ws, "ablate", &[table, summary_path, det_files.table, cls_files.table, det_files.events, cls_files.events])?;
    Ok(summary)
}

/// Re-renders the trajectory plots of a finished benchmark.
pub fn plot(ws: &Workspace, choice: AgentChoice, log: Log) -> Result<Vec<PathBuf>> {
    let dir = ws.bench_dir(choice);
    let report: BenchmarkReport = read_json("benchmark report (run bench)", &dir.join(REPORT_FILE))?;
    let plots = dir.join(crate::bench::PLOT_DIR);
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut out = Vec::with_capacity(report.routes.len());
    for (i, r) in report.routes.iter().enumerate() {
        let path = plots.join(plot_name(i, r));
        fs::write(&path, route_svg(r)).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    log(&format!("wrote {} plots to {}", out.len(), plots.display()));
    write_manifest(ws, &format!("plot-{}", choice.name()), &out)?;
    Ok(out)
}
