//! Synthetic "solar system" scenes: random parent-of hierarchies whose children
//! circle their parents on a torus, rendered as one Gaussian-blob channel per
//! object.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TransformVec;
use crate::relations::{topological_order, Parent};
use crate::spectral::Frame;

pub const SEQUENCE_MAGIC: &[u8] = b"FMLSEQ1\n";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Inclusive sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }

    fn check(self, what: &str, min_allowed: f64) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max || self.min < min_allowed {
            return Err(Error::Config(format!(
                "invalid {what} range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub num_objects: usize,
    /// Longest root-to-leaf chain of parent links.
    pub max_depth: usize,
    /// Orbit radius of children, pixels.
    pub radius: Range,
    /// Magnitude of a child's angular velocity, radians per step; the sign is
    /// drawn separately.
    pub angular_speed: Range,
    /// Root speed, pixels per step.
    pub root_speed: Range,
    pub sigma: Range,
    pub amplitude: Range,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            k_in: 8,
            k_out: 10,
            num_objects: 3,
            max_depth: 2,
            radius: Range::new(8.0, 16.0),
            angular_speed: Range::new(0.1, 0.4),
            root_speed: Range::new(0.0, 1.0),
            sigma: Range::new(1.5, 2.5),
            amplitude: Range::new(0.6, 1.0),
        }
    }
}

impl SceneConfig {
    pub fn frames(&self) -> usize {
        self.k_in + self.k_out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image_size;
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        if self.num_objects == 0 {
            return Err(Error::Config("scenes need at least one object".into()));
        }
        if self.k_in < 4 || self.k_out == 0 {
            return Err(Error::Config(format!(
                "need k_in >= 4 and k_out >= 1, got {} and {}",
                self.k_in, self.k_out
            )));
        }
        self.radius.check("radius", 0.0)?;
        self.angular_speed.check("angular speed", 0.0)?;
        self.root_speed.check("root speed", 0.0)?;
        self.sigma.check("sigma", f64::MIN_POSITIVE)?;
        self.amplitude.check("amplitude", 0.0)?;
        if self.amplitude.max > 1.0 {
            return Err(Error::Config("amplitude must not exceed 1".into()));
        }
        Ok(())
    }
}

/// One object of a scene. Roots carry a velocity; children carry an orbit
/// around their parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub parent: Parent,
    /// Position at t = 0, pixels, in `[0, N)`. For children this follows from
    /// the parent and the orbit.
    pub position: TransformVec,
    pub radius: f64,
    pub theta0: f64,
    pub omega: f64,
    pub velocity: TransformVec,
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn parents(&self) -> Vec<Parent> {
        self.objects.iter().map(|o| o.parent).collect()
    }

    /// Depth of every object (roots are 0).
    pub fn depths(&self) -> Result<Vec<usize>> {
        let parents = self.parents();
        let mut depth = vec![0; parents.len()];
        for o in topological_order(&parents)? {
            if let Parent::Object(p) = parents[o] {
                depth[o] = depth[p] + 1;
            }
        }
        Ok(depth)
    }
}

/// Sub-seed of sequence `index` in a dataset drawn with `seed`.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Draws a scene: a random number of roots, then children attached to earlier
/// objects whose depth leaves room under `max_depth`. Object labels are
/// shuffled afterwards so the index order says nothing about the hierarchy.
/// Draws whose per-step displacement would reach `N/4` are rejected.
pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let spec = draw_scene(&mut rng, config);
        if max_step_displacement(&spec, config.frames()) < config.image_size as f64 / 4.0 {
            return Ok(spec);
        }
    }
}

fn draw_scene(rng: &mut ChaCha8Rng, config: &SceneConfig) -> SceneSpec {
    let n = config.num_objects;
    let size = config.image_size as f64;
    let roots = rng.gen_range(1..=n);
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut depth: Vec<usize> = Vec::with_capacity(n);
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let eligible: Vec<usize> = (0..i).filter(|&j| depth[j] < config.max_depth).collect();
        let parent = if i < roots || eligible.is_empty() {
            None
        } else {
            Some(eligible[rng.gen_range(0..eligible.len())])
        };
        let (radius, theta0, omega, velocity, position) = match parent {
            None => {
                let speed = config.root_speed.sample(rng);
                let heading = rng.gen_range(0.0..2.0 * PI);
                let pos = TransformVec::new(rng.gen_range(0.0..size), rng.gen_range(0.0..size));
                (
                    0.0,
                    0.0,
                    0.0,
                    TransformVec::new(speed * heading.cos(), speed * heading.sin()),
                    pos,
                )
            }
            Some(_) => {
                let r = config.radius.sample(rng);
                let theta0 = rng.gen_range(0.0..2.0 * PI);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let omega = sign * config.angular_speed.sample(rng);
                (r, theta0, omega, TransformVec::ZERO, TransformVec::ZERO)
            }
        };
        let sigma = config.sigma.sample(rng);
        let amplitude = config.amplitude.sample(rng);
        depth.push(parent.map_or(0, |p| depth[p] + 1));
        parents.push(parent);
        objects.push(ObjectSpec {
            parent: parent.into(),
            position,
            radius,
            theta0,
            omega,
            velocity,
            sigma,
            amplitude,
        });
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    // perm[old] = new label
    let mut shuffled = objects.clone();
    for (old, obj) in objects.iter().enumerate() {
        let mut o = *obj;
        o.parent = match obj.parent {
            Parent::World => Parent::World,
            Parent::Object(p) => Parent::Object(perm[p]),
        };
        shuffled[perm[old]] = o;
    }
    let mut spec = SceneSpec {
        image_size: config.image_size,
        objects: shuffled,
    };
    let start = unwrapped_positions(&spec, 1);
    for (o, p) in spec.objects.iter_mut().zip(&start[0]) {
        o.position = p.wrapped_positive(config.image_size);
    }
    spec
}

trait WrapPositive {
    fn wrapped_positive(self, size: usize) -> TransformVec;
}

impl WrapPositive for TransformVec {
    fn wrapped_positive(self, size: usize) -> TransformVec {
        let n = size as f64;
        TransformVec::new(self.x.rem_euclid(n), self.y.rem_euclid(n))
    }
}

/// Positions on the plane before wrapping, `[t][object]`.
pub fn unwrapped_positions(spec: &SceneSpec, frames: usize) -> Vec<Vec<TransformVec>> {
    let parents = spec.parents();
    let order = topological_order(&parents).expect("scene hierarchies are acyclic");
    (0..frames)
        .map(|t| {
            let t = t as f64;
            let mut pos = vec![TransformVec::ZERO; parents.len()];
            for &o in &order {
                let obj = &spec.objects[o];
                pos[o] = match obj.parent {
                    Parent::World => obj.position + t * obj.velocity,
                    Parent::Object(p) => {
                        let angle = obj.theta0 + obj.omega * t;
                        pos[p] + TransformVec::new(obj.radius * angle.cos(), obj.radius * angle.sin())
                    }
                };
            }
            pos
        })
        .collect()
}

/// Positions wrapped into `[0, N)`, `[t][object]`.
pub fn simulate_positions(spec: &SceneSpec, frames: usize) -> Vec<Vec<TransformVec>> {
    unwrapped_positions(spec, frames)
        .into_iter()
        .map(|row| row.into_iter().map(|p| p.wrapped_positive(spec.image_size)).collect())
        .collect()
}

/// Largest distance any object travels in one step.
pub fn max_step_displacement(spec: &SceneSpec, frames: usize) -> f64 {
    let pos = unwrapped_positions(spec, frames);
    pos.windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (*b - *a).norm()))
        .fold(0.0, f64::max)
}

/// Signed toroidal offset from `center` to `q` along one axis.
fn torus_offset(q: f64, center: f64, n: f64) -> f64 {
    (q - center + n / 2.0).rem_euclid(n) - n / 2.0
}

/// One object's channel as stored: [`blob`] rounded to 32-bit precision.
pub fn render_blob(size: usize, pos: TransformVec, sigma: f64, amplitude: f64) -> Frame {
    let exact = blob(size, pos, sigma, amplitude);
    Frame::new(size, exact.values().iter().map(|&v| v as f32 as f64).collect())
        .expect("size validated by the scene config")
}

/// Gaussian blob at `pos` using toroidal distances, at full precision.
pub fn blob(size: usize, pos: TransformVec, sigma: f64, amplitude: f64) -> Frame {
    let n = size as f64;
    let profile = |c: f64| -> Vec<f64> {
        (0..size)
            .map(|q| {
                let d = torus_offset(q as f64, c, n);
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    };
    let gx = profile(pos.x);
    let gy = profile(pos.y);
    Frame::from_fn(size, |row, col| amplitude * gy[row] * gx[col]).expect("size validated by the scene config")
}

/// Rendered sequence: per-object channels and clamped composites, `[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub scene: SceneSpec,
    pub channels: Vec<Vec<Frame>>,
    pub composite: Vec<Frame>,
}

impl SequenceRecord {
    pub fn from_channels(scene: SceneSpec, channels: Vec<Vec<Frame>>) -> Result<Self> {
        let composite = channels.iter().map(|c| Frame::composite(c)).collect::<Result<_>>()?;
        Ok(Self {
            scene,
            channels,
            composite,
        })
    }

    pub fn frames(&self) -> usize {
        self.channels.len()
    }
}

pub fn render_sequence(spec: &SceneSpec, frames: usize) -> Result<SequenceRecord> {
    let positions = simulate_positions(spec, frames);
    let channels = positions
        .iter()
        .map(|row| {
            row.iter()
                .zip(&spec.objects)
                .map(|(p, o)| render_blob(spec.image_size, *p, o.sigma, o.amplitude))
                .collect()
        })
        .collect();
    SequenceRecord::from_channels(spec.clone(), channels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// 70/10/20 split of a seeded permutation of `0..count`.
    pub fn new(count: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let train = count * 7 / 10;
        let val = count / 10;
        Self {
            train: idx[..train].to_vec(),
            val: idx[train..train + val].to_vec(),
            test: idx[train + val..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub file: String,
    pub seed: u64,
    pub parents: Vec<Parent>,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub image_size: usize,
    pub frames: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub num_objects: usize,
    pub seed: u64,
    pub config: SceneConfig,
    pub splits: Splits,
    pub sequences: Vec<SequenceEntry>,
}

pub fn sequence_file_name(index: usize) -> String {
    format!("seq_{index:06}.bin")
}

impl Manifest {
    /// Samples `count` scenes; scenes are cheap, rendering is deferred.
    pub fn sample(config: &SceneConfig, count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let sequences = (0..count)
            .into_par_iter()
            .map(|i| {
                let s = sequence_seed(seed, i);
                let scene = sample_scene(s, config)?;
                Ok(SequenceEntry {
                    file: sequence_file_name(i),
                    seed: s,
                    parents: scene.parents(),
                    scene,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_entries(config, seed, sequences))
    }

    pub fn from_entries(config: &SceneConfig, seed: u64, sequences: Vec<SequenceEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            image_size: config.image_size,
            frames: config.frames(),
            k_in: config.k_in,
            k_out: config.k_out,
            num_objects: config.num_objects,
            seed,
            config: *config,
            splits: Splits::new(sequences.len(), seed),
            sequences,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn sequence_bytes(&self) -> u64 {
        (SEQUENCE_MAGIC.len() + 4 * self.frames * self.num_objects * self.image_size * self.image_size) as u64
    }
}

/// Anything that can hand out rendered sequences by index.
pub trait SequenceSource: Sync {
    fn manifest(&self) -> &Manifest;
    fn load(&self, index: usize) -> Result<SequenceRecord>;
}

/// Renders sequences on demand from the manifest's scenes.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    manifest: Manifest,
}

impl SyntheticDataset {
    pub fn new(config: &SceneConfig, count: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            manifest: Manifest::sample(config, count, seed)?,
        })
    }

    pub fn from_manifest(manifest: Manifest) -> Self {
        Self { manifest }
    }
}

impl SequenceSource for SyntheticDataset {
    fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn load(&self, index: usize) -> Result<SequenceRecord> {
        let entry = self
            .manifest
            .sequences
            .get(index)
            .ok_or_else(|| Error::OutOfRange(format!("sequence {index} of {}", self.manifest.len())))?;
        render_sequence(&entry.scene, self.manifest.frames)
    }
}

fn encode_record(record: &SequenceRecord) -> Vec<u8> {
    let mut buf = Vec::from(SEQUENCE_MAGIC);
    for row in &record.channels {
        for frame in row {
            for v in frame.values() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    buf
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_file(&path, text.as_bytes())
}

/// Writes `records` (in manifest order) and the manifest into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, manifest: &Manifest, records: &[SequenceRecord]) -> Result<()> {
    let dir = dir.as_ref();
    if records.len() != manifest.len() {
        return Err(Error::Dimension {
            what: "records",
            expected: manifest.len(),
            actual: records.len(),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, record) in manifest.sequences.iter().zip(records) {
        write_file(&dir.join(&entry.file), &encode_record(record))?;
    }
    write_manifest(dir, manifest)
}

/// Samples, renders and writes a dataset without holding it in memory.
pub fn generate_dataset(dir: impl AsRef<Path>, config: &SceneConfig, count: usize, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    let source = SyntheticDataset::new(config, count, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count).into_par_iter().try_for_each(|i| {
        let record = source.load(i)?;
        write_file(&dir.join(&source.manifest.sequences[i].file), &encode_record(&record))
    })?;
    write_manifest(dir, &source.manifest)?;
    Ok(source.manifest)
}

/// Dataset on disk; sequence files are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::CorruptHeader { path });
        }
        Ok(Self { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read_all(&self) -> Result<Vec<SequenceRecord>> {
        (0..self.manifest.len()).map(|i| self.load(i)).collect()
    }
}

impl SequenceSource for Dataset {
    fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn load(&self, index: usize) -> Result<SequenceRecord> {
        let m = &self.manifest;
        let entry = m
            .sequences
            .get(index)
            .ok_or_else(|| Error::OutOfRange(format!("sequence {index} of {}", m.len())))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if !bytes.starts_with(SEQUENCE_MAGIC) {
            return Err(Error::CorruptHeader { path });
        }
        if bytes.len() as u64 != m.sequence_bytes() {
            return Err(Error::TruncatedFile {
                path,
                expected: m.sequence_bytes(),
                actual: bytes.len() as u64,
            });
        }
        let n2 = m.image_size * m.image_size;
        let mut values = bytes[SEQUENCE_MAGIC.len()..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64);
        let mut channels = Vec::with_capacity(m.frames);
        for _ in 0..m.frames {
            let mut row = Vec::with_capacity(m.num_objects);
            for _ in 0..m.num_objects {
                row.push(Frame::new(m.image_size, values.by_ref().take(n2).collect())?);
            }
            channels.push(row);
        }
        SequenceRecord::from_channels(entry.scene.clone(), channels)
    }
}

/// Opens a dataset directory and reads every sequence.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<SequenceRecord>)> {
    let ds = Dataset::open(dir)?;
    let records = ds.read_all()?;
    Ok((ds.manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize) -> SceneConfig {
        SceneConfig {
            num_objects: n,
            ..SceneConfig::default()
        }
    }

    fn root(pos: (f64, f64), vel: (f64, f64)) -> ObjectSpec {
        ObjectSpec {
            parent: Parent::World,
            position: TransformVec::new(pos.0, pos.1),
            radius: 0.0,
            theta0: 0.0,
            omega: 0.0,
            velocity: TransformVec::new(vel.0, vel.1),
            sigma: 2.0,
            amplitude: 1.0,
        }
    }

    fn child(parent: usize, r: f64, theta0: f64, omega: f64) -> ObjectSpec {
        ObjectSpec {
            parent: Parent::Object(parent),
            position: TransformVec::ZERO,
            radius: r,
            theta0,
            omega,
            velocity: TransformVec::ZERO,
            sigma: 2.0,
            amplitude: 1.0,
        }
    }

    #[test]
    fn two_object_topologies() {
        for seed in 0..200 {
            let spec = sample_scene(seed, &config(2)).unwrap();
            let p = spec.parents();
            let roots = p.iter().filter(|p| **p == Parent::World).count();
            match roots {
                2 => {}
                1 => {
                    let c = p.iter().position(|p| *p != Parent::World).unwrap();
                    assert_eq!(p[c], Parent::Object(1 - c));
                }
                _ => panic!("{p:?}"),
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(
            sample_scene(17, &config(3)).unwrap(),
            sample_scene(17, &config(3)).unwrap()
        );
    }

    #[test]
    fn children_respect_depth_and_ranges() {
        let cfg = config(3);
        for seed in 0..300 {
            let spec = sample_scene(seed, &cfg).unwrap();
            assert!(spec.depths().unwrap().iter().all(|&d| d <= cfg.max_depth));
            for o in &spec.objects {
                match o.parent {
                    Parent::World => {
                        assert_eq!((o.radius, o.omega), (0.0, 0.0));
                        assert!(o.velocity.norm() <= 1.0 + 1e-12);
                    }
                    Parent::Object(_) => {
                        assert!((8.0..=16.0).contains(&o.radius));
                        assert!((0.1..=0.4).contains(&o.omega.abs()));
                    }
                }
                assert!((1.5..=2.5).contains(&o.sigma));
            }
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut cfg = config(3);
        cfg.radius = Range::new(16.0, 8.0);
        assert!(sample_scene(0, &cfg).is_err());
        let mut cfg = config(3);
        cfg.image_size = 48;
        assert!(sample_scene(0, &cfg).is_err());
    }

    #[test]
    fn static_root_stays_put() {
        let spec = SceneSpec {
            image_size: 64,
            objects: vec![root((10.0, 10.0), (0.0, 0.0))],
        };
        let pos = simulate_positions(&spec, 5);
        assert!(pos.iter().all(|p| p[0] == TransformVec::new(10.0, 10.0)));
    }

    #[test]
    fn quarter_turn_orbit_visits_compass_points() {
        let spec = SceneSpec {
            image_size: 64,
            objects: vec![root((32.0, 32.0), (0.0, 0.0)), child(0, 8.0, 0.0, PI / 2.0)],
        };
        let pos = simulate_positions(&spec, 5);
        let offsets = [(8.0, 0.0), (0.0, 8.0), (-8.0, 0.0), (0.0, -8.0), (8.0, 0.0)];
        for (t, (dx, dy)) in offsets.iter().enumerate() {
            let off = pos[t][1] - pos[t][0];
            assert!(off.max_abs_diff(TransformVec::new(*dx, *dy)) < 1e-12, "{t}: {off:?}");
        }
    }

    #[test]
    fn relative_speed_is_constant_chord() {
        let spec = sample_scene(4, &config(3)).unwrap();
        let pos = unwrapped_positions(&spec, 18);
        for (o, obj) in spec.objects.iter().enumerate() {
            if let Parent::Object(p) = obj.parent {
                let chord = 2.0 * obj.radius * (obj.omega / 2.0).sin().abs();
                for w in pos.windows(2) {
                    let rel = (w[1][o] - w[1][p]) - (w[0][o] - w[0][p]);
                    assert!((rel.norm() - chord).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_static_object_renders_identical_frames() {
        let spec = SceneSpec {
            image_size: 32,
            objects: vec![root((3.3, 20.7), (0.0, 0.0))],
        };
        let rec = render_sequence(&spec, 4).unwrap();
        assert!(rec.channels.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn composite_is_clamped_sum() {
        let spec = SceneSpec {
            image_size: 32,
            objects: vec![root((10.0, 10.0), (0.0, 0.0)), root((10.5, 10.0), (0.0, 0.0))],
        };
        let rec = render_sequence(&spec, 1).unwrap();
        let c = &rec.composite[0];
        assert_eq!(c.get(10, 10), 1.0);
        assert!(c.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let sum = rec.channels[0][0].get(0, 0) + rec.channels[0][1].get(0, 0);
        assert_eq!(c.get(0, 0), sum.min(1.0));
    }

    #[test]
    fn dataset_manifest_splits() {
        let m = Manifest::sample(&config(3), 1000, 7).unwrap();
        assert_eq!(
            (m.splits.train.len(), m.splits.val.len(), m.splits.test.len()),
            (700, 100, 200)
        );
        let mut all: Vec<usize> = [&m.splits.train[..], &m.splits.val, &m.splits.test].concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(Splits::new(10_000, 3).test.len(), 2000);
        assert_eq!(Splits::new(10_000, 3).val.len(), 1000);
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            image_size: 32,
            ..config(3)
        };
        let source = SyntheticDataset::new(&cfg, 10, 5).unwrap();
        let records: Vec<SequenceRecord> = (0..10).map(|i| source.load(i).unwrap()).collect();
        write_dataset(dir.path(), source.manifest(), &records).unwrap();
        let (manifest, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(&manifest, source.manifest());
        assert_eq!(back, records);
        assert!(dir.path().join("seq_000009.bin").exists());
    }

    #[test]
    fn file_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            image_size: 16,
            ..config(2)
        };
        generate_dataset(dir.path(), &cfg, 3, 1).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();

        let p1 = dir.path().join("seq_000001.bin");
        let bytes = fs::read(&p1).unwrap();
        fs::write(&p1, &bytes[..bytes.len() - 4]).unwrap();
        match ds.load(1) {
            Err(Error::TruncatedFile { path, .. }) => assert_eq!(path, p1),
            other => panic!("{other:?}"),
        }

        let p2 = dir.path().join("seq_000002.bin");
        fs::write(&p2, b"BADMAGIC").unwrap();
        assert!(matches!(ds.load(2), Err(Error::CorruptHeader { .. })));

        fs::remove_file(dir.path().join("seq_000000.bin")).unwrap();
        assert!(matches!(ds.load(0), Err(Error::MissingFile { .. })));
        assert!(matches!(
            Dataset::open(dir.path().join("nowhere")),
            Err(Error::MissingFile { .. })
        ));
    }
}
