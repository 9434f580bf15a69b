//! Datasets, the training loop, greedy reconstruction and ablations.
//!
//! Every random choice during training is a pure function of the run seed,
//! the step and the batch slot, so a run resumed from a checkpoint replays
//! exactly the batches, augmentations and surface samples of an
//! uninterrupted one.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use face_core::mesh::RawMesh;
use face_core::metrics::{eval_reconstruction, EvalResult};
use face_core::model::{Example, FaceModel, HeadKind, QueryMode, Reconstruction, StopReason};
use face_core::prep::{
    augment, canonical_rotation, dequantize, normalize, quantize, NormRecord, OrderMode, QuantizedMesh,
};
use face_core::rng;
use face_core::sampling::{sample_surface, PointCloud};
use face_core::synth::{generate, SyntheticKind, SyntheticSpec};
use face_core::tensor::optim::{learning_rate, Optimizer};
use face_core::tensor::{ParamStore, Tape, Tensor};
use face_core::tokenizer::{encode, FaceTokenSequence, SLOTS};
use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::formats::{read_checkpoint, write_checkpoint, Checkpoint, FormatError, StoredTensor};
use crate::obj::{parse_obj, write_obj, ObjError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Data(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Obj { path: String, source: ObjError },
    #[error(transparent)]
    Core(#[from] face_core::error::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

// Seed streams.
const STREAM_EPOCH: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_POINTS: u64 = 3;
const STREAM_FIXED_POINTS: u64 = 4;
const STREAM_INIT: u64 = 5;

pub fn read_mesh(path: &Path) -> Result<RawMesh> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let (mesh, stats) = parse_obj(std::io::BufReader::new(file))
        .map_err(|source| PipelineError::Obj { path: path.display().to_string(), source })?;
    if stats.skipped_lines > 0 {
        debug!("{}: skipped {} non-geometry lines", path.display(), stats.skipped_lines);
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_mesh(path: &Path, mesh: &RawMesh) -> Result<()> {
    fs::write(path, write_obj(mesh)).map_err(io_err(path))
}

/// All `*.obj` files of a directory, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<(String, RawMesh)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Data(format!("{}: no .obj files", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_mesh(p)?)))
        .collect()
}

/// Normalized surface and token sequence of one mesh.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalized: RawMesh,
    pub quantized: QuantizedMesh,
    pub tokens: FaceTokenSequence,
}

/// `mesh` must already be normalized.
fn tokenize_normalized(mesh: RawMesh, resolution: u32, order: OrderMode) -> Result<Prepared> {
    let quantized = quantize(&mesh, resolution)?;
    let tokens = encode(&face_core::prep::order_faces(&quantized, order))?;
    Ok(Prepared { normalized: mesh, quantized, tokens })
}

pub fn prepare(mesh: &RawMesh, resolution: u32, order: OrderMode) -> Result<Prepared> {
    let (normalized, norm) = normalize(mesh)?;
    let mut p = tokenize_normalized(normalized, resolution, order)?;
    p.quantized.norm = norm;
    Ok(p)
}

/// Sorted multiset of canonically rotated faces; two token streams describe
/// the same mesh iff these are equal.
pub fn face_multiset(tokens: &FaceTokenSequence) -> Vec<[u16; SLOTS]> {
    let mut faces: Vec<[u16; SLOTS]> = tokens
        .content()
        .iter()
        .map(|t| {
            let s = t.slots.map(u32::from);
            let tri = canonical_rotation([[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]]);
            std::array::from_fn(|j| tri[j / 3][j % 3] as u16)
        })
        .collect();
    faces.sort_unstable();
    faces
}

struct Item {
    name: String,
    mesh: RawMesh,
    prepared: Prepared,
    fixed_cloud: PointCloud,
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f32,
    pub slot_accuracy: f64,
    pub lr: f64,
    pub wallclock_ms: u64,
}

/// Teacher-forced statistics over a whole dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherForced {
    pub loss: f64,
    pub slot_accuracy: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: FaceModel,
    pub store: ParamStore<f32>,
    pub optimizer: Optimizer<f32>,
    /// Steps completed so far.
    pub step: u64,
    items: Vec<Item>,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    /// Fresh parameters from the run seed.
    pub fn new(config: RunConfig, dataset: &[(String, RawMesh)]) -> Result<Self> {
        config.validate()?;
        let (model, store) = FaceModel::new::<f32>(config.model.clone(), rng::mix(config.train.seed, STREAM_INIT))?;
        let optimizer = Optimizer::new(config.train.optim(), &store);
        let items = Self::load_items(&config, dataset)?;
        Ok(Self { config, model, store, optimizer, step: 0, items, epoch_cache: None })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// model section of `config` must match the checkpoint's.
    pub fn resume(config: RunConfig, ckpt: &Checkpoint, dataset: &[(String, RawMesh)]) -> Result<Self> {
        let saved = RunConfig::parse(&ckpt.config)?;
        if saved.model != config.model {
            return Err(PipelineError::Data("checkpoint model config differs from the run config".into()));
        }
        let mut t = Self::new(config, dataset)?;
        t.store = load_params(&t.model, ckpt)?;
        let step = ckpt
            .get("train.step")
            .ok_or_else(|| PipelineError::Data("checkpoint has no training state".into()))?
            .to::<f64>()
            .item()?;
        t.step = step as u64;
        t.optimizer.step = t.step;
        let names: Vec<String> = t.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [("optim.first.", &mut t.optimizer.first[i]), ("optim.second.", &mut t.optimizer.second[i])] {
                let stored = ckpt
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| PipelineError::Data(format!("checkpoint lacks {prefix}{name}")))?;
                if stored.shape() != slot.shape() {
                    return Err(PipelineError::Data(format!("optimizer state {prefix}{name} has the wrong shape")));
                }
                *slot = stored.to();
            }
        }
        Ok(t)
    }

    fn load_items(config: &RunConfig, dataset: &[(String, RawMesh)]) -> Result<Vec<Item>> {
        if dataset.is_empty() {
            return Err(PipelineError::Data("empty training set".into()));
        }
        let cfg = &config.model;
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, (name, mesh))| {
                let prepared = prepare(mesh, cfg.resolution, config.data.order)?;
                let n = prepared.tokens.face_count();
                if n > cfg.max_faces {
                    return Err(PipelineError::Data(format!(
                        "{name}: {n} faces after quantization exceeds max_faces = {}",
                        cfg.max_faces
                    )));
                }
                if n == 0 {
                    return Err(PipelineError::Data(format!("{name}: no faces left after quantization")));
                }
                let seed = rng::mix(rng::mix(config.train.seed, STREAM_FIXED_POINTS), i as u64);
                let fixed_cloud = sample_surface(&prepared.normalized, cfg.points, seed)?;
                Ok(Item { name: name.clone(), mesh: mesh.clone(), prepared, fixed_cloud })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.name.as_str())
    }

    /// Dataset indices of the batch at `step`: consecutive slices of
    /// per-epoch shuffles.
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let n = self.items.len() as u64;
        let b = self.config.train.batch_size as u64;
        (0..b)
            .map(|slot| {
                let pos = step * b + slot;
                let epoch = pos / n;
                if self.epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    let mut perm: Vec<usize> = (0..self.items.len()).collect();
                    perm.shuffle(&mut rng::derive(self.config.train.seed, &[STREAM_EPOCH, epoch]));
                    self.epoch_cache = Some((epoch, perm));
                }
                self.epoch_cache.as_ref().unwrap().1[(pos % n) as usize]
            })
            .collect()
    }

    fn example(&self, index: usize, step: u64, slot: u64) -> Result<Example> {
        let cfg = &self.config;
        let item = &self.items[index];
        let seed = cfg.train.seed;
        if !cfg.train.augment.is_disabled() {
            let aug = augment(&item.mesh, rng::derive_seed(seed, &[STREAM_AUGMENT, step, slot]), &cfg.train.augment)?;
            let p = tokenize_normalized(aug, cfg.model.resolution, cfg.data.order)?;
            if p.tokens.face_count() > cfg.model.max_faces {
                return Err(PipelineError::Data(format!("{}: augmented mesh exceeds max_faces", item.name)));
            }
            let cloud = sample_surface(&p.normalized, cfg.model.points, rng::derive_seed(seed, &[STREAM_POINTS, step, slot]))?;
            return Ok(Example { cloud, tokens: p.tokens });
        }
        let cloud = if cfg.data.resample_points {
            sample_surface(&item.prepared.normalized, cfg.model.points, rng::derive_seed(seed, &[STREAM_POINTS, step, slot]))?
        } else {
            item.fixed_cloud.clone()
        };
        Ok(Example { cloud, tokens: item.prepared.tokens.clone() })
    }

    /// Runs one optimizer step and returns its log line.
    pub fn train_step(&mut self, started: Instant) -> Result<StepLog> {
        let step = self.step;
        let indices = self.batch_indices(step);
        let examples: Vec<Example> = indices
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| self.example(i, step, slot as u64))
            .collect::<Result<_>>()?;
        let refs: Vec<&Example> = examples.iter().collect();
        let (loss, accuracy, grads) = {
            let mut tape = Tape::with_params(&self.store);
            let out = self.model.forward_loss(&mut tape, &refs, None)?;
            let grads = tape.backward(out.loss)?;
            (tape.value(out.loss).item()?, out.slot_accuracy(), grads)
        };
        if !loss.is_finite() {
            return Err(PipelineError::NonFinite(format!("loss is {loss} at step {step}")));
        }
        self.store.zero_grad();
        self.store.accumulate(&grads);
        let norm = self.store.clip_grad_norm(self.config.train.grad_clip);
        if !norm.is_finite() {
            return Err(PipelineError::NonFinite(format!("gradient norm is {norm} at step {step}")));
        }
        let t = &self.config.train;
        let lr = learning_rate(t.lr, step, t.steps, t.warmup_frac);
        self.optimizer.step(&mut self.store, lr);
        self.step += 1;
        Ok(StepLog {
            step,
            loss,
            slot_accuracy: accuracy,
            lr,
            wallclock_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Trains up to step `until` (at most `config.train.steps`), calling
    /// `on_step` after each step.
    pub fn run(&mut self, until: u64, mut on_step: impl FnMut(&Trainer, &StepLog) -> Result<()>) -> Result<()> {
        let started = Instant::now();
        while self.step < until.min(self.config.train.steps) {
            let log = self.train_step(started)?;
            if log.step % self.config.train.log_every == 0 || self.step == self.config.train.steps {
                info!(
                    "step {:>6} loss {:.4} slot_acc {:.4} lr {:.3e} {:.1}s",
                    log.step,
                    log.loss,
                    log.slot_accuracy,
                    log.lr,
                    log.wallclock_ms as f64 / 1000.0
                );
            }
            on_step(self, &log)?;
        }
        Ok(())
    }

    /// Parameters, optimizer moments and the step counter.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = params_checkpoint(&self.config, &self.store)?;
        for (i, (_, p)) in self.store.iter().enumerate() {
            ckpt.tensors.push((format!("optim.first.{}", p.name), self.optimizer.first[i].clone().into()));
            ckpt.tensors.push((format!("optim.second.{}", p.name), self.optimizer.second[i].clone().into()));
        }
        ckpt.tensors.push(("train.step".into(), Tensor::<f64>::scalar(self.step as f64).into()));
        Ok(ckpt)
    }

    /// Teacher-forced loss and slot accuracy over every training mesh,
    /// unaugmented, with its fixed surface sample.
    pub fn evaluate(&self) -> Result<TeacherForced> {
        teacher_forced(&self.model, &self.store, self.items.iter().map(|i| Example {
            cloud: i.fixed_cloud.clone(),
            tokens: i.prepared.tokens.clone(),
        }))
    }

    /// Greedy reconstruction of every training mesh from its fixed sample.
    pub fn reconstruct_all(&self) -> Result<Vec<MeshOutcome>> {
        let limit = self.config.reconstruct_limit();
        let eval = &self.config.eval;
        self.items
            .par_iter()
            .map(|item| {
                let rec = self.model.reconstruct(&self.store, &item.fixed_cloud, limit)?;
                outcome(&item.name, &item.prepared, rec, eval.samples, eval.seed)
            })
            .collect()
    }
}

/// Teacher-forced statistics over `examples`, one forward pass each, with
/// every mesh weighted equally.
pub fn teacher_forced(
    model: &FaceModel,
    store: &ParamStore<f32>,
    examples: impl Iterator<Item = Example>,
) -> Result<TeacherForced> {
    let (mut loss, mut correct, mut scored, mut count) = (0.0, 0, 0, 0);
    for ex in examples {
        let mut tape = Tape::inference(store);
        let out = model.forward_loss(&mut tape, &[&ex], None)?;
        loss += tape.value(out.loss).item()? as f64;
        correct += out.correct;
        scored += out.scored;
        count += 1;
    }
    if count == 0 {
        return Err(PipelineError::Data("no examples to evaluate".into()));
    }
    Ok(TeacherForced { loss: loss / count as f64, slot_accuracy: correct as f64 / scored as f64 })
}

/// How a greedy reconstruction compares with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshOutcome {
    pub name: String,
    pub faces: usize,
    pub truth_faces: usize,
    pub stop: StopReason,
    pub exact: bool,
    /// `None` when the reconstruction has no surface to sample.
    pub eval: Option<EvalResult>,
}

fn outcome(name: &str, truth: &Prepared, rec: Reconstruction, samples: usize, seed: u64) -> Result<MeshOutcome> {
    let exact = face_multiset(&rec.tokens) == face_multiset(&truth.tokens);
    let truth_mesh = dequantize(&truth.quantized, false);
    let pred_mesh = dequantize(&rec.mesh, false);
    let eval = if pred_mesh.faces.is_empty() || pred_mesh.surface_area() <= 0.0 {
        None
    } else {
        Some(eval_reconstruction(&truth_mesh, &pred_mesh, samples, seed)?)
    };
    Ok(MeshOutcome {
        name: name.into(),
        faces: rec.tokens.face_count(),
        truth_faces: truth.tokens.face_count(),
        stop: rec.stop,
        exact,
        eval,
    })
}

/// Parameters only, with the resolved run config.
pub fn params_checkpoint(config: &RunConfig, store: &ParamStore<f32>) -> Result<Checkpoint> {
    Ok(Checkpoint {
        config: config.to_toml()?,
        tensors: store.iter().map(|(_, p)| (format!("param.{}", p.name), StoredTensor::from(p.value.clone()))).collect(),
    })
}

fn load_params(model: &FaceModel, ckpt: &Checkpoint) -> Result<ParamStore<f32>> {
    let (_, mut store) = FaceModel::new::<f32>(model.config().clone(), 0)?;
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let stored =
            ckpt.get(&format!("param.{name}")).ok_or_else(|| PipelineError::Data(format!("checkpoint lacks {name}")))?;
        store.set_value(id, stored.to())?;
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    // Write beside the target and rename, so an interrupted save never
    // leaves a truncated checkpoint behind.
    let tmp = path.with_extension("tmp");
    let mut file = std::io::BufWriter::new(fs::File::create(&tmp).map_err(io_err(&tmp))?);
    write_checkpoint(&mut file, ckpt)?;
    std::io::Write::flush(&mut file).map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_checkpoint(&mut std::io::BufReader::new(file))?)
}

/// A trained model ready for inference.
pub struct Loaded {
    pub config: RunConfig,
    pub model: FaceModel,
    pub store: ParamStore<f32>,
}

pub fn load_model(path: &Path) -> Result<Loaded> {
    let ckpt = read_checkpoint_file(path)?;
    let config = RunConfig::parse(&ckpt.config)?;
    let (model, _) = FaceModel::new::<f32>(config.model.clone(), 0)?;
    let store = load_params(&model, &ckpt)?;
    Ok(Loaded { config, model, store })
}

/// Reconstruction of a mesh given in world coordinates: normalize, sample
/// `points` surface points with `seed`, decode greedily, and map the result
/// back to the input's frame.
pub fn reconstruct_mesh(loaded: &Loaded, mesh: &RawMesh, seed: u64, limit: usize) -> Result<(Reconstruction, RawMesh)> {
    let (normalized, norm) = normalize(mesh)?;
    let cloud = sample_surface(&normalized, loaded.config.model.points, seed)?;
    reconstruct_cloud(loaded, &cloud, norm, limit)
}

/// Reconstruction from a normalized point cloud; `norm` maps the result
/// back to world coordinates.
pub fn reconstruct_cloud(
    loaded: &Loaded,
    cloud: &PointCloud,
    norm: NormRecord,
    limit: usize,
) -> Result<(Reconstruction, RawMesh)> {
    if cloud.len() != loaded.config.model.points {
        return Err(PipelineError::Data(format!(
            "cloud has {} points, the model expects {}",
            cloud.len(),
            loaded.config.model.points
        )));
    }
    let rec = loaded.model.reconstruct(&loaded.store, cloud, limit)?;
    let mut q = rec.mesh.clone();
    q.norm = norm;
    let world = dequantize(&q, true);
    Ok((rec, world))
}

/// Metrics-log CSV (`step,loss,slot_accuracy,lr,wallclock_ms`).
pub struct MetricsLog {
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    /// Starts a log at `path`. When resuming at `from_step`, rows of earlier
    /// steps are kept and later ones discarded.
    pub fn open(path: &Path, from_step: u64) -> Result<Self> {
        let kept: Vec<StepLog> = if from_step > 0 && path.exists() {
            read_metrics(path)?.into_iter().filter(|r| r.step < from_step).collect()
        } else {
            Vec::new()
        };
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        writer.write_record(["step", "loss", "slot_accuracy", "lr", "wallclock_ms"])?;
        for r in &kept {
            writer.serialize(r)?;
        }
        writer.flush().map_err(io_err(path))?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, row: &StepLog) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|source| PipelineError::Io { path: "metrics log".into(), source })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepLog>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Path of the metrics log that accompanies a checkpoint.
pub fn metrics_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("metrics.csv")
}

/// Trains (or resumes) up to step `until` and writes the checkpoint plus
/// metrics log.
pub fn train_to(
    config: RunConfig,
    dataset: &[(String, RawMesh)],
    out: &Path,
    resume: Option<&Path>,
    until: Option<u64>,
) -> Result<Trainer> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, &read_checkpoint_file(path)?, dataset)?,
        None => Trainer::new(config, dataset)?,
    };
    info!(
        "training on {} meshes, {} parameters, from step {}",
        trainer.len(),
        trainer.store.num_elements(),
        trainer.step
    );
    let mut log = MetricsLog::open(&metrics_path(out), trainer.step)?;
    let every = trainer.config.train.checkpoint_every;
    let until = until.unwrap_or(trainer.config.train.steps);
    trainer.run(until, |t, row| {
        log.append(row)?;
        if every > 0 && t.step % every == 0 && t.step < until {
            save_checkpoint(out, &t.checkpoint()?)?;
        }
        Ok(())
    })?;
    save_checkpoint(out, &trainer.checkpoint()?)?;
    Ok(trainer)
}

/// A synthetic corpus description for `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_true")]
    pub rotate: bool,
    pub mesh: Vec<GenEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenEntry {
    pub shape: SyntheticKind,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_jitter() -> f64 {
    0.15
}

fn default_true() -> bool {
    true
}

fn default_count() -> usize {
    1
}

impl GenSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(ConfigError::Parse(e)))
    }

    /// Named specs, numbered in file order; mesh `i` uses seed `mix(seed, i)`.
    pub fn expand(&self) -> Vec<(String, SyntheticSpec)> {
        let mut out = Vec::new();
        for entry in &self.mesh {
            for _ in 0..entry.count {
                let i = out.len();
                let spec = SyntheticSpec {
                    kind: entry.shape,
                    jitter: self.jitter,
                    rotate: self.rotate,
                    seed: rng::mix(self.seed, i as u64),
                };
                out.push((format!("{i:03}_{}", kind_name(&entry.shape)), spec));
            }
        }
        out
    }
}

pub fn kind_name(kind: &SyntheticKind) -> String {
    match *kind {
        SyntheticKind::Cube => "cube".into(),
        SyntheticKind::Icosphere { subdiv } => format!("icosphere{subdiv}"),
        SyntheticKind::Cylinder { segments } => format!("cylinder{segments}"),
        SyntheticKind::Torus { major, minor } => format!("torus{major}x{minor}"),
        SyntheticKind::MultiComponent { parts } => format!("multi{parts}"),
    }
}

/// One manifest line of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub kind: String,
    pub seed: u64,
    pub vertices: usize,
    pub faces: usize,
}

/// Writes one OBJ per mesh and `manifest.csv` into `out`.
pub fn generate_corpus(spec: &GenSpec, out: &Path) -> Result<Vec<ManifestRow>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::new();
    for (name, s) in spec.expand() {
        let mesh = generate(&s)?;
        let file = format!("{name}.obj");
        write_mesh(&out.join(&file), &mesh)?;
        rows.push(ManifestRow {
            file,
            kind: kind_name(&s.kind),
            seed: s.seed,
            vertices: mesh.vertices.len(),
            faces: mesh.faces.len(),
        });
    }
    let path = out.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}

/// Generated meshes in memory, without touching the disk.
pub fn generate_in_memory(spec: &GenSpec) -> Result<Vec<(String, RawMesh)>> {
    spec.expand().into_iter().map(|(name, s)| Ok((name, generate(&s)?))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Orderings,
    Queries,
    Heads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub steps: u64,
    /// Teacher-forced loss over the training set after the budget.
    pub final_loss: f64,
    pub token_accuracy: f64,
    /// Mean over held-out meshes that produced a surface.
    pub chamfer: Option<f64>,
    pub hausdorff: Option<f64>,
    /// Held-out meshes whose reconstruction had no surface.
    pub empty: usize,
}

pub fn suite_variants(suite: Suite, base: &RunConfig) -> Vec<(String, RunConfig)> {
    match suite {
        Suite::Orderings => OrderMode::ALL
            .iter()
            .map(|&o| {
                let mut c = base.clone();
                c.data.order = o;
                (o.name().to_string(), c)
            })
            .collect(),
        Suite::Queries => [QueryMode::Fps, QueryMode::Learnable]
            .iter()
            .map(|&q| {
                let mut c = base.clone();
                c.model.queries = q;
                (q.name().to_string(), c)
            })
            .collect(),
        Suite::Heads => HeadKind::ALL
            .iter()
            .map(|&h| {
                let mut c = base.clone();
                c.model.head = h;
                (h.name().to_string(), c)
            })
            .collect(),
    }
}

/// Trains every variant of `suite` from the same seed under the same budget
/// and evaluates on `heldout`. Variants run in parallel on the current
/// thread pool; each training run is single-threaded and deterministic.
pub fn ablate(
    suite: Suite,
    base: &RunConfig,
    train: &[(String, RawMesh)],
    heldout: &[(String, RawMesh)],
) -> Result<Vec<AblationRow>> {
    suite_variants(suite, base)
        .into_par_iter()
        .map(|(variant, cfg)| {
            info!("ablation {variant}: training {} steps", cfg.train.steps);
            let mut trainer = Trainer::new(cfg.clone(), train)?;
            trainer.run(cfg.train.steps, |_, _| Ok(()))?;
            let tf = trainer.evaluate()?;
            let loaded = Loaded { config: cfg.clone(), model: trainer.model, store: trainer.store };
            let (mut cd, mut hd, mut n, mut empty) = (0.0, 0.0, 0, 0);
            for (i, (name, mesh)) in heldout.iter().enumerate() {
                let truth = prepare(mesh, cfg.model.resolution, cfg.data.order)?;
                let cloud = sample_surface(&truth.normalized, cfg.model.points, rng::mix(cfg.eval.seed, i as u64))?;
                let rec = loaded.model.reconstruct(&loaded.store, &cloud, cfg.reconstruct_limit())?;
                match outcome(name, &truth, rec, cfg.eval.samples, cfg.eval.seed)?.eval {
                    Some(e) => {
                        cd += e.chamfer;
                        hd += e.hausdorff;
                        n += 1;
                    }
                    None => empty += 1,
                }
            }
            let mean = |s: f64| (n > 0).then(|| s / n as f64);
            Ok(AblationRow {
                variant,
                steps: cfg.train.steps,
                final_loss: tf.loss,
                token_accuracy: tf.slot_accuracy,
                chamfer: mean(cd),
                hausdorff: mean(hd),
                empty,
            })
        })
        .collect()
}

/// The comparison the ordering ablation is about: mean final loss of the
/// spatial sorts against the graph traversals.
pub fn ordering_finding(rows: &[AblationRow]) -> Option<String> {
    let mean = |names: &[&str]| {
        let v: Vec<f64> = rows.iter().filter(|r| names.contains(&r.variant.as_str())).map(|r| r.final_loss).collect();
        (v.len() == names.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let sorting = mean(&["zyx", "zyx-component"])?;
    let traversal = mean(&["dfs", "bfs"])?;
    let verdict = if sorting < traversal { "lower" } else { "not lower" };
    Some(format!(
        "spatial sorting (zyx, zyx-component) mean final loss {sorting:.4} vs traversal (dfs, bfs) {traversal:.4}: sorting is {verdict}"
    ))
}

/// The twenty-mesh overfitting corpus.
pub fn overfit_spec() -> GenSpec {
    GenSpec::parse(include_str!("../configs/overfit20-data.toml")).expect("built-in spec parses")
}

pub fn ablation_train_spec() -> GenSpec {
    GenSpec::parse(include_str!("../configs/ablation-train.toml")).expect("built-in spec parses")
}

pub fn ablation_heldout_spec() -> GenSpec {
    GenSpec::parse(include_str!("../configs/ablation-heldout.toml")).expect("built-in spec parses")
}
