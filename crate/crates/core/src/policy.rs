//! Graph-neural policy over N5 moves.
//!
//! Node features feed two embedding stacks: GIN layers over the full
//! disjunctive graph and paired GAT layers over its job-arc and machine-arc
//! subgraphs. Node and pooled graph embeddings are concatenated, mapped by
//! an action head to `h'`, and a move `(a, b)` scores `h'_a . h'_b`. Only
//! candidate pairs are scored, so a policy evaluation stays linear in the
//! graph size; [`PolicyNet::dense_distribution`] exposes the full
//! `|O|^2 + 1` view.
//!
//! # Checkpoint layout
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "jssp-policy", "version": 1,
//!   "config": { PolicyConfig fields },
//!   "params":  [ { "name", "shape": [rows, cols], "values": [row-major] }, ... ],
//!   "buffers": [ same, normalization running statistics ],
//!   "training": null | { instances_seen, batches, best_validation, wall_seconds, optimizer }
//! }
//! ```
//!
//! Array names and order are fixed by the config, so loading rebuilds the
//! layout from `config` and then checks every name and shape.

use std::path::Path;

use ndarray::{s, Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Schedule;
use crate::graph::{ArcKind, GraphView};
use crate::n5::MoveSet;
use crate::nn::{
    masked_softmax, Adam, Adjacency, Ctx, Dense2D, GatCache, GatLayer, GinCache, GinLayer,
    ManifestError, Mlp, MlpCache, MlpShape, Mode, NamedArray, NormStats, ParamSet,
};

pub const DURATION_SCALE: f64 = 99.0;
pub const TIME_SCALE: f64 = 1000.0;
pub const FEATURES: usize = 3;

/// Which per-node topological embedding is merged into the action head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeEmbedding {
    /// Sum of the node embeddings of all GIN layers.
    SumOfLayers,
    /// Embedding of the last GIN layer only.
    LastLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Number of GIN layers and of GAT layer pairs.
    pub layers: usize,
    pub embed_dim: usize,
    pub tpm_hidden: usize,
    pub tpm_hidden_layers: usize,
    pub head_hidden: usize,
    pub head_hidden_layers: usize,
    pub score_dim: usize,
    pub attention_heads: usize,
    pub gin_eps: f64,
    pub node_embedding: NodeEmbedding,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            embed_dim: 128,
            tpm_hidden: 128,
            tpm_hidden_layers: 2,
            head_hidden: 64,
            head_hidden_layers: 4,
            score_dim: 64,
            attention_heads: 1,
            gin_eps: 0.0,
            node_embedding: NodeEmbedding::SumOfLayers,
        }
    }
}

impl PolicyConfig {
    /// Narrow network for tests and CPU-scale training: every width set to `width`.
    pub fn small(layers: usize, width: usize) -> Self {
        Self {
            layers,
            embed_dim: width,
            tpm_hidden: width,
            head_hidden: width,
            score_dim: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("tpm_hidden", self.tpm_hidden),
            ("head_hidden", self.head_hidden),
            ("score_dim", self.score_dim),
            ("attention_heads", self.attention_heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if !self.gin_eps.is_finite() {
            return Err("gin_eps must be finite".into());
        }
        Ok(())
    }
}

/// Node features `(p / 99, est / 1000, lst / 1000)` in graph node order.
pub fn build_features(g: &GraphView, sched: &Schedule) -> Dense2D {
    let n = g.num_nodes();
    assert_eq!(sched.est.len(), n, "schedule does not match graph");
    Dense2D::from_shape_fn((n, FEATURES), |(v, f)| match f {
        0 => g.duration(v) as f64 / DURATION_SCALE,
        1 => sched.est[v] as f64 / TIME_SCALE,
        _ => sched.lst[v] as f64 / TIME_SCALE,
    })
}

/// Everything the network reads from one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub features: Dense2D,
    pub full: Adjacency,
    pub jobs: Adjacency,
    pub machines: Adjacency,
}

impl PolicyInput {
    pub fn new(g: &GraphView, sched: &Schedule) -> Self {
        let n = g.num_nodes();
        let of_kind = |kind: Option<ArcKind>| {
            Adjacency::from_arcs(
                n,
                g.arcs()
                    .iter()
                    .filter(|a| kind.is_none_or(|k| a.kind == k))
                    .map(|a| (a.from, a.to)),
            )
        };
        Self {
            features: build_features(g, sched),
            full: of_kind(None),
            jobs: of_kind(Some(ArcKind::Conjunctive)),
            machines: of_kind(Some(ArcKind::Disjunctive)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut features = self.features.clone();
        for (v, &pv) in perm.iter().enumerate() {
            features.row_mut(pv).assign(&self.features.row(v));
        }
        Self {
            features,
            full: self.full.permuted(perm),
            jobs: self.jobs.permuted(perm),
            machines: self.machines.permuted(perm),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TpmOutput {
    pub node: Dense2D,
    pub graph: Array1<f64>,
    caches: Vec<GinCache>,
}

#[derive(Debug, Clone)]
pub struct CamOutput {
    pub node: Dense2D,
    pub graph: Array1<f64>,
    caches: Vec<(GatCache, GatCache)>,
}

/// Result of one forward evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PolicyForward {
    pub tpm: TpmOutput,
    pub cam: CamOutput,
    /// Action-head output `h'`, one row per node.
    pub latent: Dense2D,
    head: MlpCache,
    /// Batch statistics gathered in training mode.
    pub stats: Vec<NormStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Index into the state's [`MoveSet`].
    Move(usize),
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub instances_seen: u64,
    pub batches: u64,
    pub best_validation: Option<f64>,
    pub wall_seconds: f64,
    pub optimizer: Adam,
}

pub const CHECKPOINT_FORMAT: &str = "jssp-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: PolicyConfig,
    pub params: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
    pub training: Option<TrainingState>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a policy checkpoint (format '{format}', version {version})")]
    Format { format: String, version: u32 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parameter manifest mismatch: {0}")]
    Manifest(#[from] ManifestError),
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format {
                format: ck.format,
                version: ck.version,
            });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    config: PolicyConfig,
    tpm: Vec<GinLayer>,
    cam: Vec<(GatLayer, GatLayer)>,
    head: Mlp,
    pub params: ParamSet,
    pub buffers: ParamSet,
}

fn mean_rows(x: &Dense2D) -> Array1<f64> {
    x.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()))
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        config.validate().expect("invalid policy config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut params, mut buffers) = (ParamSet::new(), ParamSet::new());
        let p = config.embed_dim;
        let tpm = (0..config.layers)
            .map(|k| {
                let input = if k == 0 { FEATURES } else { p };
                let mut dims = vec![input];
                dims.extend(std::iter::repeat_n(
                    config.tpm_hidden,
                    config.tpm_hidden_layers,
                ));
                dims.push(p);
                let shape = MlpShape {
                    dims,
                    activate_output: true,
                    batch_norm: true,
                };
                GinLayer::new(
                    &mut params,
                    &mut buffers,
                    &format!("tpm.{k}"),
                    config.gin_eps,
                    &shape,
                    &mut rng,
                )
            })
            .collect();
        let cam = (0..config.layers)
            .map(|k| {
                let input = if k == 0 { FEATURES } else { p };
                (
                    GatLayer::new(
                        &mut params,
                        &format!("cam.{k}.jobs"),
                        input,
                        p,
                        config.attention_heads,
                        &mut rng,
                    ),
                    GatLayer::new(
                        &mut params,
                        &format!("cam.{k}.machines"),
                        input,
                        p,
                        config.attention_heads,
                        &mut rng,
                    ),
                )
            })
            .collect();
        let mut dims = vec![4 * p];
        dims.extend(std::iter::repeat_n(
            config.head_hidden,
            config.head_hidden_layers,
        ));
        dims.push(config.score_dim);
        let head_shape = MlpShape {
            dims,
            activate_output: false,
            batch_norm: false,
        };
        let head = Mlp::new(&mut params, &mut buffers, "head", &head_shape, &mut rng);
        Self {
            config,
            tpm,
            cam,
            head,
            params,
            buffers,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn to_checkpoint(&self, training: Option<TrainingState>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.to_named(),
            buffers: self.buffers.to_named(),
            training,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        ck.config.validate().map_err(CheckpointError::Config)?;
        let mut net = Self::new(ck.config.clone(), 0);
        net.params.load_named(&ck.params)?;
        net.buffers.load_named(&ck.buffers)?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn tpm_embed(&self, ctx: &Ctx, input: &PolicyInput) -> TpmOutput {
        let n = input.num_nodes();
        let p = self.config.embed_dim;
        let mut node = Dense2D::zeros((n, p));
        let mut graph = Array1::zeros(p);
        let mut caches = Vec::with_capacity(self.tpm.len());
        let mut h = input.features.clone();
        for (k, gin) in self.tpm.iter().enumerate() {
            let (out, cache) = gin.forward(ctx, &h, &input.full);
            graph += &mean_rows(&out);
            match self.config.node_embedding {
                NodeEmbedding::SumOfLayers => node += &out,
                NodeEmbedding::LastLayer if k + 1 == self.tpm.len() => node.assign(&out),
                NodeEmbedding::LastLayer => {}
            }
            caches.push(cache);
            h = out;
        }
        TpmOutput {
            node,
            graph,
            caches,
        }
    }

    pub fn cam_embed(&self, ctx: &Ctx, input: &PolicyInput) -> CamOutput {
        let mut h = input.features.clone();
        let mut caches = Vec::with_capacity(self.cam.len());
        for (gj, gm) in &self.cam {
            let (a, ca) = gj.forward(ctx, &h, &input.jobs);
            let (b, cb) = gm.forward(ctx, &h, &input.machines);
            h = (a + b) * 0.5;
            caches.push((ca, cb));
        }
        let graph = mean_rows(&h);
        CamOutput {
            node: h,
            graph,
            caches,
        }
    }

    /// Full forward pass with explicit weights and running statistics.
    pub fn forward_with(
        &self,
        params: &[f64],
        buffers: &[f64],
        mode: Mode,
        input: &PolicyInput,
    ) -> PolicyForward {
        let ctx = Ctx::new(params, buffers, mode);
        let tpm = self.tpm_embed(&ctx, input);
        let cam = self.cam_embed(&ctx, input);
        let n = input.num_nodes();
        let p = self.config.embed_dim;
        let mut merged = Dense2D::zeros((n, 4 * p));
        merged.slice_mut(s![.., 0..p]).assign(&tpm.node);
        merged.slice_mut(s![.., p..2 * p]).assign(&cam.node);
        merged.slice_mut(s![.., 2 * p..3 * p]).assign(&tpm.graph);
        merged.slice_mut(s![.., 3 * p..]).assign(&cam.graph);
        let (latent, head) = self.head.forward(&ctx, &merged);
        PolicyForward {
            tpm,
            cam,
            latent,
            head,
            stats: ctx.take_stats(),
        }
    }

    pub fn forward(&self, mode: Mode, input: &PolicyInput) -> PolicyForward {
        self.forward_with(self.params.values(), self.buffers.values(), mode, input)
    }

    /// Accumulates into `grads` the gradient of `sum_k dlogits[k] * logit_k`
    /// where `logit_k = h'_a . h'_b` for the `k`-th pair.
    pub fn backward(
        &self,
        params: &[f64],
        input: &PolicyInput,
        fwd: &PolicyForward,
        pairs: &[(usize, usize)],
        dlogits: &[f64],
        grads: &mut [f64],
    ) {
        let h = &fwd.latent;
        let mut dlatent = Dense2D::zeros(h.raw_dim());
        for (&(a, b), &d) in pairs.iter().zip(dlogits) {
            if d == 0.0 {
                continue;
            }
            dlatent.row_mut(a).scaled_add(d, &h.row(b));
            dlatent.row_mut(b).scaled_add(d, &h.row(a));
        }
        let dmerged = self.head.backward(params, &fwd.head, &dlatent, grads);
        let p = self.config.embed_dim;
        let n = dmerged.nrows().max(1) as f64;
        let d_tpm_node = dmerged.slice(s![.., 0..p]).to_owned();
        let d_cam_node = dmerged.slice(s![.., p..2 * p]).to_owned();
        let d_tpm_graph = dmerged.slice(s![.., 2 * p..3 * p]).sum_axis(Axis(0)) / n;
        let d_cam_graph = dmerged.slice(s![.., 3 * p..]).sum_axis(Axis(0)) / n;

        let last = self.tpm.len() - 1;
        let mut d = Dense2D::zeros(d_tpm_node.raw_dim());
        for k in (0..self.tpm.len()).rev() {
            let direct = match self.config.node_embedding {
                NodeEmbedding::SumOfLayers => true,
                NodeEmbedding::LastLayer => k == last,
            };
            if direct {
                d += &d_tpm_node;
            }
            d += &d_tpm_graph;
            d = self.tpm[k].backward(params, &fwd.tpm.caches[k], &input.full, &d, grads);
        }

        let mut d = d_cam_node;
        d += &d_cam_graph;
        for k in (0..self.cam.len()).rev() {
            let (gj, gm) = &self.cam[k];
            let (cj, cm) = &fwd.cam.caches[k];
            let half = &d * 0.5;
            let dj = gj.backward(params, cj, &half, grads);
            let dm = gm.backward(params, cm, &half, grads);
            d = dj + dm;
        }
    }

    /// Logits `h'_a . h'_b` of the candidate pairs.
    pub fn logits(&self, fwd: &PolicyForward, pairs: &[(usize, usize)]) -> Vec<f64> {
        pairs
            .iter()
            .map(|&(a, b)| fwd.latent.row(a).dot(&fwd.latent.row(b)))
            .collect()
    }

    /// Probabilities over the candidate moves; empty when there is none.
    pub fn move_probabilities(&self, fwd: &PolicyForward, moves: &MoveSet) -> Vec<f64> {
        let logits = self.logits(fwd, &moves.pairs);
        let mut probs = masked_softmax(&logits, &vec![true; logits.len()]);
        probs.pop();
        probs
    }

    /// Distribution over all `|O|^2` ordered node pairs plus the trailing
    /// dummy action, masked to the candidate moves. Quadratic; for
    /// inspection and tests.
    pub fn dense_distribution(&self, fwd: &PolicyForward, moves: &MoveSet) -> Vec<f64> {
        let scores = fwd.latent.dot(&fwd.latent.t());
        let mask = moves.mask();
        let flat: Vec<f64> = scores.iter().copied().collect();
        let flat_mask: Vec<bool> = mask.iter().copied().collect();
        masked_softmax(&flat, &flat_mask)
    }

    /// Adds `weight * grad log pi(action)` to `grads` and returns `log pi(action)`.
    #[allow(clippy::too_many_arguments)]
    pub fn log_prob_grad(
        &self,
        params: &[f64],
        input: &PolicyInput,
        fwd: &PolicyForward,
        moves: &MoveSet,
        action: Action,
        weight: f64,
        grads: &mut [f64],
    ) -> f64 {
        let Action::Move(k) = action else {
            return 0.0;
        };
        let logits = self.logits(fwd, &moves.pairs);
        let logp = crate::nn::log_softmax(&logits);
        let dlogits: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, lp)| weight * (if j == k { 1.0 } else { 0.0 } - lp.exp()))
            .collect();
        if weight != 0.0 {
            self.backward(params, input, fwd, &moves.pairs, &dlogits, grads);
        }
        logp[k]
    }
}

/// Categorical draw from `probs`. With no moves, the dummy action.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Action {
    if probs.is_empty() {
        return Action::Dummy;
    }
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if r < acc {
                return Action::Move(i);
            }
        }
    }
    Action::Move(last)
}

/// Most probable move; ties go to the lowest index.
pub fn greedy_action(probs: &[f64]) -> Action {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probs.iter().enumerate() {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    best.map_or(Action::Dummy, |(i, _)| Action::Move(i))
}
