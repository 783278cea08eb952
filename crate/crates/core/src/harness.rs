//! Prediction pipeline, evaluation protocol and artifact export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinematics::{extract_vec, higher_order, relative_transform, TransformVec};
use crate::motion::{
    observe, param_count, predict_next, train_from_scratch, GruParams, ModeWeights, MotionState, TrainConfig,
};
use crate::pgm;
use crate::relations::{
    candidates, relative_to_global, scoring_pair, CandidateGrid, GraphConfig, GraphExport, ObjectGraph, Parent,
    RelStep, ScoringPredictor,
};
use crate::scenegen::SequenceSource;
use crate::spectral::{
    apply_transform, dft2, idft2, phase_correlate, ramp_from_vec, signed_frequency, Frame, Spectrum,
};

/// Report-time scale of MSE values.
pub const MSE_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `false` fixes every parent to world.
    pub use_graph: bool,
    /// Use ground-truth parents instead of the inferred graph.
    pub oracle_graph: bool,
    pub graph: GraphConfig,
    pub k_out: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            use_graph: true,
            oracle_graph: false,
            graph: GraphConfig::default(),
            k_out: 10,
        }
    }
}

/// Relative motion of every (candidate parent, child) pair over a sequence,
/// and the graph estimated from it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub num_objects: usize,
    /// Relative velocity per pair, one entry per consecutive frame pair.
    pub velocities: CandidateGrid<Vec<TransformVec>>,
    /// Relative acceleration per pair; entry `t` relates velocities `t - 1`
    /// and `t`, entry 0 is zero.
    pub accelerations: CandidateGrid<Vec<TransformVec>>,
    /// Graph after every scoring step.
    pub graph_trace: Vec<ObjectGraph>,
    /// Spectrum of each object's last frame.
    pub last_spectra: Vec<Spectrum>,
}

impl Analysis {
    pub fn final_graph(&self) -> &ObjectGraph {
        self.graph_trace
            .last()
            .expect("analysis runs at least one scoring step")
    }

    /// Relative velocity track of `child` under `parent`.
    pub fn track(&self, parent: Parent, child: usize) -> &[TransformVec] {
        self.velocities.get(parent, child)
    }
}

fn check_channels(channels: &[Vec<Frame>]) -> Result<(usize, usize)> {
    if channels.len() < 4 {
        return Err(Error::Config(format!(
            "need at least 4 input frames, got {}",
            channels.len()
        )));
    }
    let n = channels[0].len();
    if n == 0 {
        return Err(Error::Config("no object channels".into()));
    }
    let size = channels[0][0].size();
    for row in channels {
        if row.len() != n {
            return Err(Error::Dimension {
                what: "object channels",
                expected: n,
                actual: row.len(),
            });
        }
        if let Some(f) = row.iter().find(|f| f.size() != size) {
            return Err(Error::SizeMismatch {
                expected: size,
                actual: f.size(),
            });
        }
    }
    Ok((n, size))
}

/// Extracts per-pair relative motion from `[t][object]` channels and scores
/// the parent-of graph from the fourth frame on. `model` is required only by
/// [`ScoringPredictor::MotionModel`].
pub fn analyze(channels: &[Vec<Frame>], graph: &GraphConfig, model: Option<&GruParams>) -> Result<Analysis> {
    let (n, _) = check_channels(channels)?;
    let spectra: Vec<Vec<Spectrum>> = channels.iter().map(|row| row.iter().map(dft2).collect()).collect();
    let steps = channels.len() - 1;
    let mut v_global = Vec::with_capacity(steps);
    for t in 0..steps {
        let row = (0..n)
            .map(|o| phase_correlate(&spectra[t][o], &spectra[t + 1][o]))
            .collect::<Result<Vec<_>>>()?;
        v_global.push(row);
    }

    let mut velocities = CandidateGrid::filled(n, Vec::new());
    let mut accelerations = CandidateGrid::filled(n, Vec::new());
    for child in 0..n {
        for parent in candidates(n, child) {
            let rel = v_global
                .iter()
                .map(|row| {
                    let p = match parent {
                        Parent::World => None,
                        Parent::Object(p) => Some(&row[p]),
                    };
                    relative_transform(&row[child], p)
                })
                .collect::<Result<Vec<_>>>()?;
            let vs = rel.iter().map(extract_vec).collect();
            let mut acc = vec![TransformVec::ZERO];
            for w in rel.windows(2) {
                acc.push(extract_vec(&higher_order(&w[0], &w[1])?));
            }
            velocities.set(parent, child, vs);
            accelerations.set(parent, child, acc);
        }
    }

    let graph_trace = score_graph(n, &velocities, &accelerations, graph, model)?;
    Ok(Analysis {
        num_objects: n,
        velocities,
        accelerations,
        graph_trace,
        last_spectra: spectra.into_iter().next_back().expect("checked length"),
    })
}

fn score_graph(
    n: usize,
    velocities: &CandidateGrid<Vec<TransformVec>>,
    accelerations: &CandidateGrid<Vec<TransformVec>>,
    config: &GraphConfig,
    model: Option<&GruParams>,
) -> Result<Vec<ObjectGraph>> {
    let steps = velocities.get(Parent::World, 0).len();
    let mut graph = ObjectGraph::new(n, *config)?;
    let mut trace = Vec::with_capacity(steps.saturating_sub(2));
    let step = |p: Parent, c: usize, t: usize| RelStep {
        v: velocities.get(p, c)[t],
        a: accelerations.get(p, c)[t],
    };

    let mut states: Option<CandidateGrid<MotionState>> = match config.predictor {
        ScoringPredictor::MotionModel => {
            let m = model.ok_or_else(|| Error::Config("motion-model scoring needs a model".into()))?;
            Some(CandidateGrid::filled(
                n,
                MotionState::new(TransformVec::ZERO, TransformVec::ZERO, TransformVec::ZERO, m.hidden()),
            ))
        }
        _ => None,
    };

    for cur in 1..steps - 1 {
        let mut predicted = CandidateGrid::filled(n, TransformVec::ZERO);
        let mut observed = CandidateGrid::filled(n, TransformVec::ZERO);
        for child in 0..n {
            for parent in candidates(n, child) {
                let (prev, now, next) = (
                    step(parent, child, cur - 1),
                    step(parent, child, cur),
                    step(parent, child, cur + 1),
                );
                let pair = match (&mut states, model) {
                    (Some(grid), Some(m)) => {
                        let mut s = grid.get(parent, child).clone();
                        s.v_prev = prev.v;
                        s.v = now.v;
                        s.a = now.v - prev.v;
                        let out = predict_next(m, &s)?;
                        s.hidden = out.state.hidden;
                        grid.set(parent, child, s);
                        (out.v_next - now.v, next.a)
                    }
                    _ => scoring_pair(config.predictor, prev, now, next),
                };
                predicted.set(parent, child, pair.0);
                observed.set(parent, child, pair.1);
            }
        }
        graph.score_step(&predicted, &observed)?;
        trace.push(graph.clone());
    }
    Ok(trace)
}

/// Parents the pipeline uses for a given configuration.
pub fn choose_parents(analysis: &Analysis, config: &PipelineConfig, oracle: Option<&[Parent]>) -> Result<Vec<Parent>> {
    let n = analysis.num_objects;
    if !config.use_graph {
        return Ok(vec![Parent::World; n]);
    }
    if config.oracle_graph {
        let parents = oracle.ok_or_else(|| Error::Config("oracle graph requested without parents".into()))?;
        if parents.len() != n {
            return Err(Error::Dimension {
                what: "oracle parents",
                expected: n,
                actual: parents.len(),
            });
        }
        return Ok(parents.to_vec());
    }
    Ok(analysis.final_graph().hard_parents())
}

/// Motion state after teacher-forcing the model over an observed relative
/// velocity track, ready to predict the next velocity.
pub fn warm_state(model: &GruParams, track: &[TransformVec]) -> Result<MotionState> {
    let len = track.len();
    if len < 2 {
        return Err(Error::Config("need at least two velocities to start a rollout".into()));
    }
    let mut state = MotionState::new(track[0], track[0], TransformVec::ZERO, model.hidden());
    for t in 1..len - 1 {
        state.v_prev = track[t - 1];
        state.v = track[t];
        state.a = track[t] - track[t - 1];
        state.hidden = observe(model, &state)?;
    }
    state.v_prev = track[len - 2];
    state.v = track[len - 1];
    state.a = track[len - 1] - track[len - 2];
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct PredictionRun {
    /// Observed channels, `[t][object]`.
    pub inputs: Vec<Vec<Frame>>,
    pub predicted: Vec<Frame>,
    /// Predicted channels, `[step][object]`.
    pub predicted_channels: Vec<Vec<Frame>>,
    pub parents: Vec<Parent>,
    pub graph_trace: Vec<ObjectGraph>,
    /// Mode weights per rollout step and object.
    pub mode_weights: Vec<Vec<ModeWeights>>,
    /// Predicted relative velocities per rollout step and object.
    pub relative_velocities: Vec<Vec<TransformVec>>,
}

/// Infers the graph from `inputs` (`[t][object]`, at least four frames) and
/// rolls the motion model forward `config.k_out` steps by accumulating phase
/// ramps on each object's last observed spectrum.
pub fn predict_sequence(
    inputs: &[Vec<Frame>],
    model: &GruParams,
    config: &PipelineConfig,
    oracle: Option<&[Parent]>,
) -> Result<PredictionRun> {
    let analysis = analyze(inputs, &config.graph, Some(model))?;
    let parents = choose_parents(&analysis, config, oracle)?;
    let n = analysis.num_objects;
    let size = inputs[0][0].size();

    let mut states = (0..n)
        .map(|o| warm_state(model, analysis.track(parents[o], o)))
        .collect::<Result<Vec<_>>>()?;
    let mut spectra = analysis.last_spectra.clone();
    let mut predicted = Vec::with_capacity(config.k_out);
    let mut predicted_channels = Vec::with_capacity(config.k_out);
    let mut mode_weights = Vec::with_capacity(config.k_out);
    let mut relative_velocities = Vec::with_capacity(config.k_out);
    for _ in 0..config.k_out {
        let mut ramps = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut vels = Vec::with_capacity(n);
        for state in &mut states {
            let out = predict_next(model, state)?;
            ramps.push(ramp_from_vec(out.v_next.wrapped(size), size)?);
            weights.push(out.weights);
            vels.push(out.v_next);
            *state = out.state;
        }
        let global = relative_to_global(&ramps, &parents)?;
        let mut frames = Vec::with_capacity(n);
        for (spec, g) in spectra.iter_mut().zip(&global) {
            *spec = apply_transform(spec, g)?;
            frames.push(idft2(spec));
        }
        predicted.push(Frame::composite(&frames)?);
        predicted_channels.push(frames);
        mode_weights.push(weights);
        relative_velocities.push(vels);
    }

    Ok(PredictionRun {
        inputs: inputs.to_vec(),
        predicted,
        predicted_channels,
        parents,
        graph_trace: analysis.graph_trace,
        mode_weights,
        relative_velocities,
    })
}

pub fn mse(pred: &Frame, gt: &Frame) -> Result<f64> {
    if pred.size() != gt.size() {
        return Err(Error::SizeMismatch {
            expected: gt.size(),
            actual: pred.size(),
        });
    }
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Mean frame MSE over the first `h` predictions.
pub fn horizon_mse(pred: &[Frame], gt: &[Frame], h: usize) -> Result<f64> {
    if h == 0 || h > pred.len() || h > gt.len() {
        return Err(Error::OutOfRange(format!(
            "horizon {h} with {} predictions and {} targets",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt).take(h) {
        total += mse(p, g)?;
    }
    Ok(total / h as f64)
}

/// Fraction of spectral energy at radial frequency above `N/4`.
pub fn high_band_ratio(frame: &Frame) -> f64 {
    let spec = dft2(frame);
    let n = spec.size();
    let cutoff = n as f64 / 4.0;
    let (mut high, mut total) = (0.0, 0.0);
    for ky in 0..n {
        for kx in 0..n {
            let e = spec.get(ky, kx).norm_sqr();
            total += e;
            if signed_frequency(kx, n).hypot(signed_frequency(ky, n)) > cutoff {
                high += e;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Which parents shape the motion model's training tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackGraph {
    Inferred,
    Oracle,
    World,
}

/// Relative velocity tracks of every object in the given sequences, each over
/// the full sequence under the chosen parents. Sequences are processed in
/// parallel and concatenated in index order.
pub fn training_tracks(
    source: &dyn SequenceSource,
    indices: &[usize],
    graph: &GraphConfig,
    mode: TrackGraph,
) -> Result<Vec<Vec<TransformVec>>> {
    let mut graph = *graph;
    if graph.predictor == ScoringPredictor::MotionModel {
        graph.predictor = ScoringPredictor::CircularPrimitive;
    }
    let per_seq = indices
        .par_iter()
        .map(|&i| {
            let record = source.load(i)?;
            let analysis = analyze(&record.channels, &graph, None)?;
            let parents = match mode {
                TrackGraph::Inferred => analysis.final_graph().hard_parents(),
                TrackGraph::Oracle => record.scene.parents(),
                TrackGraph::World => vec![Parent::World; analysis.num_objects],
            };
            Ok((0..analysis.num_objects)
                .map(|o| analysis.track(parents[o], o).to_vec())
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "Ours")]
    Ours,
    #[serde(rename = "Ours (NoGraph)")]
    NoGraph,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Ours => "Ours",
            Variant::NoGraph => "Ours (NoGraph)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Training settings; run `i` trains with seed `train.seed + i`.
    pub train: TrainConfig,
    pub graph: GraphConfig,
    pub runs: usize,
    pub horizons: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Ground-truth parents for training tracks and prediction.
    pub oracle_graph: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            graph: GraphConfig::default(),
            runs: 5,
            horizons: vec![5, 10],
            variants: vec![Variant::Ours, Variant::NoGraph],
            oracle_graph: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStat {
    pub horizon: usize,
    /// Mean over runs of the test-split MSE, scaled by [`MSE_SCALE`].
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub horizons: Vec<HorizonStat>,
}

impl ReportRow {
    pub fn horizon(&self, h: usize) -> Option<&HorizonStat> {
        self.horizons.iter().find(|s| s.horizon == h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub num_objects: usize,
    pub test_sequences: usize,
    pub runs: usize,
    pub seeds: Vec<u64>,
    /// How runs differ from one another.
    pub run_variation: String,
    pub mse_scale: f64,
    pub parameter_count: usize,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, variant: Variant) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == variant.label())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn config_hash(source: &dyn SequenceSource, model: Option<&GruParams>, config: &EvalConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        scene: &'a crate::scenegen::SceneConfig,
        dataset_seed: u64,
        sequences: usize,
        eval: &'a EvalConfig,
        model: Option<Vec<u64>>,
    }
    let m = source.manifest();
    let doc = Hashed {
        scene: &m.config,
        dataset_seed: m.seed,
        sequences: m.len(),
        eval: config,
        model: model.map(|p| p.values().iter().map(|v| v.to_bits()).collect()),
    };
    let bytes = serde_json::to_vec(&doc).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Mean scaled horizon MSEs of one model over `indices`.
pub fn score_split(
    source: &dyn SequenceSource,
    indices: &[usize],
    model: &GruParams,
    pipeline: &PipelineConfig,
    horizons: &[usize],
) -> Result<Vec<f64>> {
    let k_in = source.manifest().k_in;
    let per_seq = indices
        .par_iter()
        .map(|&i| {
            let record = source.load(i)?;
            let parents = record.scene.parents();
            let run = predict_sequence(&record.channels[..k_in], model, pipeline, Some(&parents))?;
            let gt = &record.composite[k_in..];
            horizons
                .iter()
                .map(|&h| horizon_mse(&run.predicted, gt, h))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let count = per_seq.len() as f64;
    Ok((0..horizons.len())
        .map(|j| MSE_SCALE * per_seq.iter().map(|s| s[j]).sum::<f64>() / count)
        .collect())
}

/// Trains (or reuses `model`) once per run and scores the test split for each
/// requested variant.
pub fn evaluate(
    source: &dyn SequenceSource,
    dataset_id: &str,
    model: Option<&GruParams>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let manifest = source.manifest();
    let test = &manifest.splits.test;
    if test.is_empty() {
        return Err(Error::EmptyDataset(format!("{dataset_id}: empty test split")));
    }
    if config.runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    if let Some(&h) = config.horizons.iter().find(|&&h| h == 0 || h > manifest.k_out) {
        return Err(Error::OutOfRange(format!(
            "horizon {h} exceeds k_out {}",
            manifest.k_out
        )));
    }
    if let Some(m) = model {
        if m.hidden() != config.train.hidden {
            return Err(Error::Config(format!(
                "model hidden size {} differs from configured {}",
                m.hidden(),
                config.train.hidden
            )));
        }
    }
    let seeds: Vec<u64> = (0..config.runs as u64).map(|i| config.train.seed + i).collect();

    let mut rows = Vec::new();
    for &variant in &config.variants {
        let (use_graph, tracks_mode) = match variant {
            Variant::Ours if config.oracle_graph => (true, TrackGraph::Oracle),
            Variant::Ours => (true, TrackGraph::Inferred),
            Variant::NoGraph => (false, TrackGraph::World),
        };
        let pipeline = PipelineConfig {
            use_graph,
            oracle_graph: config.oracle_graph && use_graph,
            graph: config.graph,
            k_out: manifest.k_out,
        };
        let tracks = match model {
            Some(_) => Vec::new(),
            None => training_tracks(source, &manifest.splits.train, &config.graph, tracks_mode)?,
        };
        let mut per_run: Vec<Vec<f64>> = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let trained;
            let params = match model {
                Some(m) => m,
                None => {
                    let tc = TrainConfig { seed, ..config.train };
                    trained = train_from_scratch(&tracks, &tc)?.params;
                    log::info!("{dataset_id}: {} trained with seed {seed}", variant.label());
                    &trained
                }
            };
            per_run.push(score_split(source, test, params, &pipeline, &config.horizons)?);
        }
        let horizons = config
            .horizons
            .iter()
            .enumerate()
            .map(|(j, &h)| {
                let xs: Vec<f64> = per_run.iter().map(|r| r[j]).collect();
                let (mean, std) = population_stats(&xs);
                HorizonStat {
                    horizon: h,
                    mean,
                    std,
                    per_run: xs,
                }
            })
            .collect();
        rows.push(ReportRow {
            name: variant.label().to_string(),
            horizons,
        });
    }

    Ok(EvalReport {
        dataset: dataset_id.to_string(),
        num_objects: manifest.num_objects,
        test_sequences: test.len(),
        runs: config.runs,
        seeds,
        run_variation: if model.is_some() {
            "fixed checkpoint; data split fixed".into()
        } else {
            "training seed varies; data split fixed".into()
        },
        mse_scale: MSE_SCALE,
        parameter_count: param_count(config.train.hidden),
        config_hash: config_hash(source, model, config),
        rows,
    })
}

/// Aligned text table: one row per model variant, one column per dataset and
/// horizon, and the parameter count.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut header = vec!["Model".to_string()];
    for r in reports {
        for s in r.rows.first().map(|row| &row.horizons[..]).unwrap_or(&[]) {
            header.push(format!("{} obj, {} steps", r.num_objects, s.horizon));
        }
    }
    header.push("# params".into());

    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !names.contains(&row.name.as_str()) {
                names.push(&row.name);
            }
        }
    }
    let params = reports.first().map_or(0, |r| r.parameter_count);
    let mut lines = vec![header];
    for name in names {
        let mut cells = vec![name.to_string()];
        for r in reports {
            let width = r.rows.first().map_or(0, |row| row.horizons.len());
            match r.rows.iter().find(|row| row.name == name) {
                Some(row) => cells.extend(row.horizons.iter().map(|s| format!("{:.3} ± {:.3}", s.mean, s.std))),
                None => cells.extend(std::iter::repeat_n("-".to_string(), width)),
            }
        }
        cells.push(format!("{:.1}K", params as f64 / 1000.0));
        lines.push(cells);
    }

    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                let pad = w - cell.chars().count();
                if c == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-|-"));
        }
    }
    out
}

/// Writes observed and predicted composites, predicted channels, the graph
/// trace (`graph.json`) and an index of the images in temporal order.
pub fn export_frames(run: &PredictionRun, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    let mut emit = |name: String, frame: &Frame| -> Result<()> {
        pgm::write(frame, dir.join(&name))?;
        names.push(name);
        Ok(())
    };
    for (t, row) in run.inputs.iter().enumerate() {
        emit(format!("input_{t:02}.pgm"), &Frame::composite(row)?)?;
    }
    for (k, (frame, channels)) in run.predicted.iter().zip(&run.predicted_channels).enumerate() {
        emit(format!("pred_{k:02}.pgm"), frame)?;
        for (o, ch) in channels.iter().enumerate() {
            emit(format!("pred_{k:02}_obj{o}.pgm"), ch)?;
        }
    }

    let ids: Vec<usize> = (0..run.parents.len()).collect();
    let trace: Vec<GraphExport> = run.graph_trace.iter().map(|g| g.export(&ids)).collect();
    let graph_path = dir.join("graph.json");
    let text = serde_json::to_string_pretty(&trace).map_err(|source| Error::Json {
        path: graph_path.clone(),
        source,
    })?;
    fs::write(&graph_path, text).map_err(|e| Error::io(&graph_path, e))?;

    let index_path = dir.join("index.txt");
    let mut index = names.join("\n");
    index.push('\n');
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;

    let mut paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    paths.push(graph_path);
    paths.push(index_path);
    Ok(paths)
}
