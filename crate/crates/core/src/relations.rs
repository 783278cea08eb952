//! Online inference of the parent-of graph between objects.
//!
//! For every child object, each other object plus the world frame is a
//! candidate parent. At every scoring step the motion of the child relative to
//! each candidate is extrapolated with a primitive predictor and compared with
//! what is observed next; candidates whose relative motion stays primitive
//! accumulate higher cosine scores. Scores become soft probabilities per child
//! column and finally a hard, acyclic parent assignment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{compose, TransformVec};
use crate::motion::estimate_omega;
use crate::spectral::PhaseTransform;

/// Vectors shorter than this are treated as "no motion" by [`cosine_sim`].
pub const STILL_EPS: f64 = 1e-6;

/// Default softmax temperature over mean step scores.
pub const DEFAULT_TEMPERATURE: f64 = 1e-6;

/// Default log-odds bonus of the world candidate (`ln 30`).
pub const DEFAULT_ROOT_LOG_PRIOR: f64 = 3.401_197_381_662_155;

/// Parent of an object: the world frame or another object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<usize>", into = "Option<usize>")]
pub enum Parent {
    World,
    Object(usize),
}

impl Parent {
    /// Row index in an `(n + 1) x n` candidate grid. World is row 0.
    pub fn row(self) -> usize {
        match self {
            Parent::World => 0,
            Parent::Object(i) => i + 1,
        }
    }

    pub fn from_row(row: usize) -> Parent {
        if row == 0 {
            Parent::World
        } else {
            Parent::Object(row - 1)
        }
    }
}

impl From<Option<usize>> for Parent {
    fn from(v: Option<usize>) -> Self {
        v.map_or(Parent::World, Parent::Object)
    }
}

impl From<Parent> for Option<usize> {
    fn from(p: Parent) -> Self {
        match p {
            Parent::World => None,
            Parent::Object(i) => Some(i),
        }
    }
}

impl fmt::Display for Parent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parent::World => f.write_str("world"),
            Parent::Object(i) => write!(f, "{i}"),
        }
    }
}

/// Values indexed by (candidate parent row, child) over an `(n + 1) x n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid<T> {
    num_objects: usize,
    cells: Vec<T>,
}

impl<T: Clone> CandidateGrid<T> {
    pub fn filled(num_objects: usize, value: T) -> Self {
        Self {
            num_objects,
            cells: vec![value; (num_objects + 1) * num_objects],
        }
    }
}

impl<T> CandidateGrid<T> {
    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn get(&self, parent: Parent, child: usize) -> &T {
        &self.cells[parent.row() * self.num_objects + child]
    }

    pub fn set(&mut self, parent: Parent, child: usize, value: T) {
        let n = self.num_objects;
        self.cells[parent.row() * n + child] = value;
    }
}

/// Candidate parents of `child`, world first.
pub fn candidates(num_objects: usize, child: usize) -> impl Iterator<Item = Parent> {
    std::iter::once(Parent::World).chain((0..num_objects).filter(move |&p| p != child).map(Parent::Object))
}

/// Cosine similarity with a stillness guard: two still vectors agree fully,
/// a still vector and a moving one not at all.
pub fn cosine_sim(u: TransformVec, v: TransformVec) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    match (nu < STILL_EPS, nv < STILL_EPS) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0),
    }
}

/// One observation of a relative track: velocity and acceleration vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelStep {
    pub v: TransformVec,
    pub a: TransformVec,
}

/// Predictor used while forming the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringPredictor {
    /// Next velocity = velocity + acceleration, compared on velocities.
    ConstantAcceleration,
    /// Next acceleration = acceleration rotated by the angle between the last
    /// two velocities, compared on accelerations. Exact for linear and
    /// uniform circular relative motion.
    #[default]
    CircularPrimitive,
    /// The trained motion model's next velocity, compared on accelerations.
    MotionModel,
}

/// `(predicted, observed)` pair for a scoring step from three consecutive
/// relative observations. Not defined for [`ScoringPredictor::MotionModel`],
/// which needs recurrent state; the harness builds that pair itself.
pub fn scoring_pair(
    predictor: ScoringPredictor,
    prev: RelStep,
    cur: RelStep,
    next: RelStep,
) -> (TransformVec, TransformVec) {
    match predictor {
        ScoringPredictor::ConstantAcceleration => (cur.v + cur.a, next.v),
        ScoringPredictor::CircularPrimitive | ScoringPredictor::MotionModel => {
            (cur.a.rotated(estimate_omega(prev.v, cur.v)), next.a)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub temperature: f64,
    /// Log-odds added to the world candidate before the softmax.
    pub root_log_prior: f64,
    pub predictor: ScoringPredictor,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            root_log_prior: DEFAULT_ROOT_LOG_PRIOR,
            predictor: ScoringPredictor::default(),
        }
    }
}

/// Soft parent-of adjacency, accumulated scores and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGraph {
    num_objects: usize,
    config: GraphConfig,
    scores: Vec<f64>,
    soft: Vec<f64>,
    step_count: usize,
}

impl ObjectGraph {
    pub fn new(num_objects: usize, config: GraphConfig) -> Result<Self> {
        if num_objects == 0 {
            return Err(Error::Config("graph needs at least one object".into()));
        }
        if !config.temperature.is_finite() || config.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                config.temperature
            )));
        }
        if !config.root_log_prior.is_finite() {
            return Err(Error::Config("root prior must be finite".into()));
        }
        let n = num_objects;
        let mut scores = vec![0.0; (n + 1) * n];
        for o in 0..n {
            scores[(o + 1) * n + o] = f64::NEG_INFINITY;
        }
        let soft = soft_adjacency(&scores, n, 0, config.temperature, config.root_log_prior);
        Ok(Self {
            num_objects,
            config,
            scores,
            soft,
            step_count: 0,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Row-major `(n + 1) x n` accumulated scores; diagonal cells are `-inf`.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Row-major `(n + 1) x n` soft adjacency.
    pub fn soft(&self) -> &[f64] {
        &self.soft
    }

    pub fn probability(&self, parent: Parent, child: usize) -> f64 {
        self.soft[parent.row() * self.num_objects + child]
    }

    /// Adds one step of cosine evidence for every (candidate, child) pair.
    pub fn score_step(
        &mut self,
        predicted: &CandidateGrid<TransformVec>,
        observed: &CandidateGrid<TransformVec>,
    ) -> Result<()> {
        for grid in [predicted, observed] {
            if grid.num_objects() != self.num_objects {
                return Err(Error::Dimension {
                    what: "candidate grid",
                    expected: self.num_objects,
                    actual: grid.num_objects(),
                });
            }
        }
        let n = self.num_objects;
        for child in 0..n {
            for parent in candidates(n, child) {
                let s = cosine_sim(*predicted.get(parent, child), *observed.get(parent, child));
                self.scores[parent.row() * n + child] += s;
            }
        }
        self.step_count += 1;
        self.soft = soft_adjacency(
            &self.scores,
            n,
            self.step_count,
            self.config.temperature,
            self.config.root_log_prior,
        );
        Ok(())
    }

    /// Hard parents from the current soft adjacency; see [`hard_parents`].
    pub fn hard_parents(&self) -> Vec<Parent> {
        hard_parents(&self.soft, self.num_objects)
    }

    pub fn export(&self, object_ids: &[usize]) -> GraphExport {
        GraphExport {
            soft: self.soft.clone(),
            parents: self.hard_parents(),
            object_ids: object_ids.to_vec(),
        }
    }
}

/// Per child column: softmax over candidates of `mean score / temperature`,
/// with `root_log_prior` added to the world row. Cells holding `-inf` (an
/// object as its own parent) get probability 0.
pub fn soft_adjacency(
    scores: &[f64],
    num_objects: usize,
    step_count: usize,
    temperature: f64,
    root_log_prior: f64,
) -> Vec<f64> {
    let n = num_objects;
    let denom = step_count.max(1) as f64;
    let mut soft = vec![0.0; scores.len()];
    for child in 0..n {
        let logits: Vec<(usize, f64)> = (0..=n)
            .map(|row| {
                let s = scores[row * n + child];
                let mut l = s / denom / temperature;
                if row == 0 {
                    l += root_log_prior;
                }
                (row, l)
            })
            .collect();
        let max = logits.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &(row, l) in &logits {
            let e = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
            soft[row * n + child] = e;
            total += e;
        }
        for row in 0..=n {
            soft[row * n + child] /= total;
        }
    }
    soft
}

fn reaches(parents: &[Parent], start: Parent, target: usize) -> bool {
    let mut cur = start;
    for _ in 0..=parents.len() {
        match cur {
            Parent::World => return false,
            Parent::Object(i) if i == target => return true,
            Parent::Object(i) => cur = parents[i],
        }
    }
    true
}

fn find_cycle(parents: &[Parent]) -> Option<Vec<usize>> {
    let n = parents.len();
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = Parent::Object(start);
        while let Parent::Object(i) = cur {
            if let Some(pos) = path.iter().position(|&p| p == i) {
                return Some(path[pos..].to_vec());
            }
            path.push(i);
            cur = parents[i];
        }
    }
    None
}

/// Argmax parent per child, then repaired into a DAG.
///
/// Ties go to the lower candidate row (world first). While a cycle remains,
/// the cycle edge with the lowest probability is cut and its child is moved to
/// its most probable candidate that does not close a cycle; world always
/// qualifies.
pub fn hard_parents(soft: &[f64], num_objects: usize) -> Vec<Parent> {
    let n = num_objects;
    let prob = |p: Parent, c: usize| soft[p.row() * n + c];
    let ranked = |c: usize| {
        let mut rows: Vec<Parent> = candidates(n, c).collect();
        rows.sort_by(|a, b| prob(*b, c).total_cmp(&prob(*a, c)).then(a.row().cmp(&b.row())));
        rows
    };

    let mut parents: Vec<Parent> = (0..n).map(|c| ranked(c)[0]).collect();
    while let Some(cycle) = find_cycle(&parents) {
        let weakest = *cycle
            .iter()
            .min_by(|&&a, &&b| prob(parents[a], a).total_cmp(&prob(parents[b], b)).then(a.cmp(&b)))
            .expect("cycles are non-empty");
        let current = parents[weakest];
        let replacement = ranked(weakest)
            .into_iter()
            .find(|&p| p != current && !reaches(&parents, p, weakest))
            .unwrap_or(Parent::World);
        parents[weakest] = replacement;
    }
    parents
}

/// Objects ordered so every parent precedes its children.
pub fn topological_order(parents: &[Parent]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (child, parent) in parents.iter().enumerate() {
        if let Parent::Object(p) = *parent {
            if p >= n {
                return Err(Error::Dimension {
                    what: "parent index",
                    expected: n,
                    actual: p,
                });
            }
            children[p].push(child);
            indegree[child] += 1;
        }
    }
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&o| indegree[o] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(o) = queue.pop_front() {
        order.push(o);
        for &c in &children[o] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&o| indegree[o] > 0).unwrap_or(0);
        return Err(Error::Cycle(stuck));
    }
    Ok(order)
}

/// Converts per-object relative transforms into global ones by applying each
/// parent's global motion to its children, root to leaf.
pub fn relative_to_global(rel: &[PhaseTransform], parents: &[Parent]) -> Result<Vec<PhaseTransform>> {
    if rel.len() != parents.len() {
        return Err(Error::Dimension {
            what: "relative transforms",
            expected: parents.len(),
            actual: rel.len(),
        });
    }
    let order = topological_order(parents)?;
    let mut global: Vec<Option<PhaseTransform>> = vec![None; rel.len()];
    for o in order {
        let g = match parents[o] {
            Parent::World => rel[o].clone(),
            Parent::Object(p) => {
                let pg = global[p].as_ref().expect("parents precede children");
                compose(pg, &rel[o])?
            }
        };
        global[o] = Some(g);
    }
    Ok(global.into_iter().map(|g| g.expect("all visited")).collect())
}

/// Serializable snapshot of the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    /// Row-major `(n + 1) x n`, world row first.
    pub soft: Vec<f64>,
    /// `null` for world, otherwise the parent object index.
    pub parents: Vec<Parent>,
    pub object_ids: Vec<usize>,
}
