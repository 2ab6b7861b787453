//! The nested frame/segment transformer and its single-scale ablations.
//!
//! Under the default configuration a 64×128×1 log-Mel sample flows as:
//!
//! ```text
//! frames 128×64 ─FC+e^f─▶ x' 128×16 ─frame blocks─▶ x̂ 128×16
//! segments 16×512 ─FC─▶ s' 16×256 ┐
//! x̂ regrouped 16×128 ─FC──────────┴─▶ s'' ─[cls; ·]+e^s─▶ 17×256
//!   ─segment blocks─▶ ŝ 17×256 ─row 0─▶ classifier ─▶ logits
//! ```
//!
//! The frequency variant runs the same branch over Mel bands instead of time
//! steps; the time-frequency variant runs both and concatenates their class
//! tokens.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Precision, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, LgfaConfig, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::{Bound, Encoder, Linear, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Which axis of the spectrogram a branch treats as its frame axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Builds the graph without the class token and position encodings,
    /// substituting literal zeros for the token.
    pub omit_learned_offsets: bool,
    pub capture_trace: bool,
}

/// Intermediate tensors of one branch.
#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub name: String,
    /// `x'` (nested branches only).
    pub frame_embeddings: Option<Tensor>,
    /// `x̂` (nested branches only).
    pub frame_encoding: Option<Tensor>,
    /// `s'`, or the chunk embeddings of a single-scale tower.
    pub segment_embeddings: Tensor,
    /// Token sequence entering the segment encoder.
    pub segment_sequence: Tensor,
    /// `ŝ`.
    pub output: Tensor,
    pub attention: Vec<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub branches: Vec<BranchTrace>,
    pub classifier_input: Option<Tensor>,
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub trace: Option<ForwardTrace>,
}

/// Frame transformer nested in a segment transformer.
#[derive(Clone, Debug)]
pub struct NestedBranch {
    pub name: String,
    pub orientation: Orientation,
    pub n_frames: usize,
    pub frame_width: usize,
    pub group: usize,
    pub frame_proj: Linear,
    pub frame_pos: ParamId,
    pub frame_encoder: Encoder,
    pub segment_proj: Linear,
    pub aggregate_proj: Linear,
    pub cls_token: ParamId,
    pub segment_pos: ParamId,
    pub segment_encoder: Encoder,
}

impl NestedBranch {
    fn new(
        store: &mut ParamStore,
        name: &str,
        orientation: Orientation,
        cfg: &LgfaConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (n_frames, frame_width, group) = match orientation {
            Orientation::Time => (cfg.n_frames, cfg.n_mels * cfg.channels, cfg.frames_per_segment),
            Orientation::Frequency => (cfg.n_mels, cfg.n_frames * cfg.channels, cfg.bands_per_segment),
        };
        let n_segments = n_frames / group;
        let frame_proj = Linear::new(store, &format!("{name}.frame_proj"), frame_width, cfg.frame_dim, rng);
        let frame_pos = store.add(format!("{name}.frame_pos"), Tensor::zeros(&[n_frames, cfg.frame_dim]));
        let frame_encoder = Encoder::new(
            store,
            &format!("{name}.frame_encoder"),
            cfg.depth,
            cfg.frame_dim,
            cfg.frame_heads,
            rng,
        )?;
        let segment_proj = Linear::new(
            store,
            &format!("{name}.segment_proj"),
            group * frame_width,
            cfg.segment_dim,
            rng,
        );
        let aggregate_proj = Linear::new(
            store,
            &format!("{name}.aggregate_proj"),
            group * cfg.frame_dim,
            cfg.segment_dim,
            rng,
        );
        let cls_token = store.add(format!("{name}.cls_token"), Tensor::zeros(&[1, cfg.segment_dim]));
        let segment_pos = store.add(
            format!("{name}.segment_pos"),
            Tensor::zeros(&[n_segments + 1, cfg.segment_dim]),
        );
        let segment_encoder = Encoder::new(
            store,
            &format!("{name}.segment_encoder"),
            cfg.depth,
            cfg.segment_dim,
            cfg.segment_heads,
            rng,
        )?;
        Ok(NestedBranch {
            name: name.to_string(),
            orientation,
            n_frames,
            frame_width,
            group,
            frame_proj,
            frame_pos,
            frame_encoder,
            segment_proj,
            aggregate_proj,
            cls_token,
            segment_pos,
            segment_encoder,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.n_frames / self.group
    }

    /// Tokens entering the segment encoder, class token included.
    pub fn token_count(&self) -> usize {
        self.n_segments() + 1
    }

    /// The spectrogram as an `n_frames × frame_width` matrix in this branch's orientation.
    pub fn frames(&self, spec: &Spectrogram) -> Result<Tensor> {
        let data = match self.orientation {
            Orientation::Time => spec.time_frames(),
            Orientation::Frequency => spec.band_frames(),
        };
        Tensor::new(vec![self.n_frames, self.frame_width], data)
    }

    /// `x'_i = FC(x_i) + e^f_i`.
    pub fn embed_frames(&self, g: &mut Graph, p: &Bound, frames: Var, opts: ForwardOptions) -> Result<Var> {
        if g.shape(frames) != [self.n_frames, self.frame_width] {
            return Err(Error::shape(
                "embed_frames",
                format!(
                    "frames {:?} do not match {}x{}",
                    g.shape(frames),
                    self.n_frames,
                    self.frame_width
                ),
            ));
        }
        let x = self.frame_proj.forward(g, p, frames)?;
        if opts.omit_learned_offsets {
            Ok(x)
        } else {
            g.add(x, p.var(self.frame_pos))
        }
    }

    pub fn frame_transformer(&self, g: &mut Graph, p: &Bound, x: Var, attn: Option<&mut Vec<Var>>) -> Result<Var> {
        self.frame_encoder.forward(g, p, x, attn)
    }

    /// Builds `[s_cls, s''_1, …, s''_n] + e^s` where
    /// `s''_j = FC(Vec(s_j)) + FC(Vec(x̂ rows of segment j))`.
    ///
    /// Returns `(s', sequence)`.
    pub fn aggregate_segments(
        &self,
        g: &mut Graph,
        p: &Bound,
        frames: Var,
        frame_encoding: Var,
        opts: ForwardOptions,
    ) -> Result<(Var, Var)> {
        if self.n_frames % self.group != 0 {
            return Err(Error::Config(format!(
                "{} frames are not divisible into segments of {}",
                self.n_frames, self.group
            )));
        }
        let n_seg = self.n_segments();
        // Row-major regrouping: row j holds frames j·k .. j·k+k-1 back to back.
        let raw = g.reshape(frames, &[n_seg, self.group * self.frame_width])?;
        let seg_emb = self.segment_proj.forward(g, p, raw)?;
        let d_f = g.shape(frame_encoding)[1];
        let grouped = g.reshape(frame_encoding, &[n_seg, self.group * d_f])?;
        let agg = self.aggregate_proj.forward(g, p, grouped)?;
        let combined = g.add(seg_emb, agg)?;
        let cls = if opts.omit_learned_offsets {
            let width = g.shape(combined)[1];
            g.constant(Tensor::zeros(&[1, width]))
        } else {
            p.var(self.cls_token)
        };
        let seq = g.concat_rows(&[cls, combined])?;
        let seq = if opts.omit_learned_offsets {
            seq
        } else {
            g.add(seq, p.var(self.segment_pos))?
        };
        Ok((seg_emb, seq))
    }

    pub fn segment_transformer(&self, g: &mut Graph, p: &Bound, seq: Var, attn: Option<&mut Vec<Var>>) -> Result<Var> {
        self.segment_encoder.forward(g, p, seq, attn)
    }

    /// Full branch; returns the encoded class token `ŝ_cls` (1×d_s).
    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        spec: &Spectrogram,
        opts: ForwardOptions,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let frames = g.constant(self.frames(spec)?);
        let x = self.embed_frames(g, p, frames, opts)?;
        let mut attn = Vec::new();
        let want = trace.is_some();
        let x_hat = self.frame_transformer(g, p, x, want.then_some(&mut attn))?;
        let (seg_emb, seq) = self.aggregate_segments(g, p, frames, x_hat, opts)?;
        let s_hat = self.segment_transformer(g, p, seq, want.then_some(&mut attn))?;
        if let Some(trace) = trace {
            trace.branches.push(BranchTrace {
                name: self.name.clone(),
                frame_embeddings: Some(g.value(x).clone()),
                frame_encoding: Some(g.value(x_hat).clone()),
                segment_embeddings: g.value(seg_emb).clone(),
                segment_sequence: g.value(seq).clone(),
                output: g.value(s_hat).clone(),
                attention: attn.iter().map(|&v| g.value(v).clone()).collect(),
            });
        }
        g.slice_rows(s_hat, 0, 1)
    }

    fn learned_offsets(&self) -> [ParamId; 3] {
        [self.cls_token, self.frame_pos, self.segment_pos]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chunking {
    /// One token per time step (F·C values).
    Frame,
    /// One token per `k` time steps.
    Segment(usize),
    /// Square `p×p` patches of the Mel/time grid.
    Square(usize),
}

/// A single transformer over one kind of chunk, with a class token.
#[derive(Clone, Debug)]
pub struct ChunkTower {
    pub chunking: Chunking,
    pub n_chunks: usize,
    pub chunk_dim: usize,
    pub proj: Linear,
    pub cls_token: ParamId,
    pub pos: ParamId,
    pub encoder: Encoder,
}

impl ChunkTower {
    fn new(store: &mut ParamStore, chunking: Chunking, cfg: &LgfaConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let fc = cfg.n_mels * cfg.channels;
        let (n_chunks, chunk_dim) = match chunking {
            Chunking::Frame => (cfg.n_frames, fc),
            Chunking::Segment(k) => (cfg.n_frames / k, k * fc),
            Chunking::Square(p) => (
                (cfg.n_mels / p) * (cfg.n_frames / p),
                p * p * cfg.channels,
            ),
        };
        let proj = Linear::new(store, "tower.chunk_proj", chunk_dim, cfg.segment_dim, rng);
        let cls_token = store.add("tower.cls_token", Tensor::zeros(&[1, cfg.segment_dim]));
        let pos = store.add("tower.pos", Tensor::zeros(&[n_chunks + 1, cfg.segment_dim]));
        let encoder = Encoder::new(
            store,
            "tower.encoder",
            cfg.depth,
            cfg.segment_dim,
            cfg.segment_heads,
            rng,
        )?;
        Ok(ChunkTower {
            chunking,
            n_chunks,
            chunk_dim,
            proj,
            cls_token,
            pos,
            encoder,
        })
    }

    pub fn token_count(&self) -> usize {
        self.n_chunks + 1
    }

    pub fn tokens(&self, spec: &Spectrogram) -> Result<Tensor> {
        let data = match self.chunking {
            // Frames are contiguous in the time-major view; segments regroup them.
            Chunking::Frame | Chunking::Segment(_) => spec.time_frames(),
            Chunking::Square(p) => {
                let (f_dim, t_dim, c_dim) = spec.shape();
                let mut out = Vec::with_capacity(spec.values().len());
                for pf in 0..f_dim / p {
                    for pt in 0..t_dim / p {
                        for f in pf * p..(pf + 1) * p {
                            for t in pt * p..(pt + 1) * p {
                                for c in 0..c_dim {
                                    out.push(spec.get(f, t, c) as f64);
                                }
                            }
                        }
                    }
                }
                out
            }
        };
        Tensor::new(vec![self.n_chunks, self.chunk_dim], data)
    }

    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        spec: &Spectrogram,
        opts: ForwardOptions,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let tokens = g.constant(self.tokens(spec)?);
        let emb = self.proj.forward(g, p, tokens)?;
        let cls = if opts.omit_learned_offsets {
            let width = g.shape(emb)[1];
            g.constant(Tensor::zeros(&[1, width]))
        } else {
            p.var(self.cls_token)
        };
        let seq = g.concat_rows(&[cls, emb])?;
        let seq = if opts.omit_learned_offsets {
            seq
        } else {
            g.add(seq, p.var(self.pos))?
        };
        let mut attn = Vec::new();
        let want = trace.is_some();
        let out = self.encoder.forward(g, p, seq, want.then_some(&mut attn))?;
        if let Some(trace) = trace {
            trace.branches.push(BranchTrace {
                name: "tower".into(),
                frame_embeddings: None,
                frame_encoding: None,
                segment_embeddings: g.value(emb).clone(),
                segment_sequence: g.value(seq).clone(),
                output: g.value(out).clone(),
                attention: attn.iter().map(|&v| g.value(v).clone()).collect(),
            });
        }
        g.slice_rows(out, 0, 1)
    }
}

#[derive(Clone, Debug)]
pub enum Architecture {
    Nested {
        time: Option<NestedBranch>,
        frequency: Option<NestedBranch>,
    },
    Single(ChunkTower),
}

/// Static description of a built model, recorded in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub variant: Variant,
    pub ablation: Ablation,
    /// Tokens per transformer (class token included), outermost first.
    pub token_counts: Vec<usize>,
    pub classifier_input_width: usize,
    pub n_params: usize,
}

#[derive(Clone, Debug)]
pub struct LgfaModel {
    config: LgfaConfig,
    params: ParamStore,
    arch: Architecture,
    classifier: Linear,
}

impl LgfaModel {
    /// Builds and initialises a model; every weight is drawn from a ChaCha
    /// stream seeded by `seed`, while class tokens and position encodings
    /// start at zero.
    pub fn new(config: LgfaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = match config.ablation {
            Ablation::Full => {
                let time = match config.variant {
                    Variant::TimeOnly | Variant::TimeFrequency => Some(NestedBranch::new(
                        &mut params,
                        "time",
                        Orientation::Time,
                        &config,
                        &mut rng,
                    )?),
                    Variant::FrequencyOnly => None,
                };
                let frequency = match config.variant {
                    Variant::FrequencyOnly | Variant::TimeFrequency => Some(NestedBranch::new(
                        &mut params,
                        "freq",
                        Orientation::Frequency,
                        &config,
                        &mut rng,
                    )?),
                    Variant::TimeOnly => None,
                };
                Architecture::Nested { time, frequency }
            }
            Ablation::FrameOnly => {
                Architecture::Single(ChunkTower::new(&mut params, Chunking::Frame, &config, &mut rng)?)
            }
            Ablation::SegmentOnly => Architecture::Single(ChunkTower::new(
                &mut params,
                Chunking::Segment(config.frames_per_segment),
                &config,
                &mut rng,
            )?),
            Ablation::VitSquare => Architecture::Single(ChunkTower::new(
                &mut params,
                Chunking::Square(config.patch_size),
                &config,
                &mut rng,
            )?),
        };
        let classifier = Linear::new(
            &mut params,
            "classifier",
            config.classifier_input_width(),
            config.n_classes,
            &mut rng,
        );
        Ok(LgfaModel {
            config,
            params,
            arch,
            classifier,
        })
    }

    pub fn config(&self) -> &LgfaConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn branch(&self, orientation: Orientation) -> Option<&NestedBranch> {
        match &self.arch {
            Architecture::Nested { time, frequency } => match orientation {
                Orientation::Time => time.as_ref(),
                Orientation::Frequency => frequency.as_ref(),
            },
            Architecture::Single(_) => None,
        }
    }

    pub fn summary(&self) -> ModelSummary {
        let token_counts = match &self.arch {
            Architecture::Nested { time, frequency } => time
                .iter()
                .chain(frequency)
                .flat_map(|b| [b.token_count(), b.n_frames])
                .collect(),
            Architecture::Single(t) => vec![t.token_count()],
        };
        ModelSummary {
            variant: self.config.variant,
            ablation: self.config.ablation,
            token_counts,
            classifier_input_width: self.classifier.d_in,
            n_params: self.params.numel(),
        }
    }

    /// Class tokens and position encodings.
    pub fn learned_offsets(&self) -> Vec<ParamId> {
        match &self.arch {
            Architecture::Nested { time, frequency } => time
                .iter()
                .chain(frequency)
                .flat_map(NestedBranch::learned_offsets)
                .collect(),
            Architecture::Single(t) => vec![t.cls_token, t.pos],
        }
    }

    /// Attention and MLP weights of every transformer block.
    pub fn block_internals(&self) -> Vec<ParamId> {
        match &self.arch {
            Architecture::Nested { time, frequency } => time
                .iter()
                .chain(frequency)
                .flat_map(|b| {
                    let mut ids = b.frame_encoder.internal_params();
                    ids.extend(b.segment_encoder.internal_params());
                    ids
                })
                .collect(),
            Architecture::Single(t) => t.encoder.internal_params(),
        }
    }

    pub fn check_input(&self, spec: &Spectrogram) -> Result<()> {
        let want = (self.config.n_mels, self.config.n_frames, self.config.channels);
        if spec.shape() != want {
            return Err(Error::shape(
                "forward",
                format!("spectrogram {:?} does not match configured {want:?}", spec.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, spec: &Spectrogram, opts: ForwardOptions) -> Result<ForwardOutput> {
        let p = self.params.bind(g);
        self.forward_bound(g, &p, spec, opts)
    }

    /// Forward pass against parameters already bound on `g`.
    pub fn forward_bound(
        &self,
        g: &mut Graph,
        p: &Bound,
        spec: &Spectrogram,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.check_input(spec)?;
        let mut trace = opts.capture_trace.then(ForwardTrace::default);
        let pooled = match &self.arch {
            Architecture::Nested { time, frequency } => {
                let mut tokens = Vec::with_capacity(2);
                for branch in time.iter().chain(frequency) {
                    tokens.push(branch.forward(g, p, spec, opts, trace.as_mut())?);
                }
                if tokens.len() == 1 {
                    tokens[0]
                } else {
                    g.concat_cols(&tokens)?
                }
            }
            Architecture::Single(tower) => tower.forward(g, p, spec, opts, trace.as_mut())?,
        };
        if g.shape(pooled) != [1, self.classifier.d_in] {
            return Err(Error::shape(
                "classifier",
                format!("pooled token {:?} vs classifier width {}", g.shape(pooled), self.classifier.d_in),
            ));
        }
        if let Some(t) = trace.as_mut() {
            t.classifier_input = Some(g.value(pooled).clone());
        }
        let logits = self.classifier.forward(g, p, pooled)?;
        Ok(ForwardOutput { logits, trace })
    }

    pub fn logits(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, spec, ForwardOptions::default())?;
        Ok(g.value(out.logits).data().to_vec())
    }

    /// Softmax class posteriors.
    pub fn posteriors(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let mut p = self.logits(spec)?;
        crate::tensor::softmax(&mut p);
        Ok(p)
    }

    /// Cross-entropy of one sample; adds `weight · ∂loss/∂θ` into the
    /// parameter gradient buffers. Returns the loss and the logits.
    pub fn accumulate_gradients(&mut self, spec: &Spectrogram, label: usize, weight: f64) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward_bound(&mut g, &p, spec, ForwardOptions::default())?;
        let loss = g.cross_entropy(out.logits, &[label])?;
        let grads = g.backward(loss)?;
        self.params.accumulate_grads(&p, &grads, weight)?;
        Ok((g.value(loss).data()[0], g.value(out.logits).data().to_vec()))
    }

    /// Sets every attention and MLP weight and bias to zero.
    pub fn zero_block_internals(&mut self) {
        for id in self.block_internals() {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_for(cfg: &LgfaConfig, seed: u64) -> Spectrogram {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_mels * cfg.n_frames * cfg.channels;
        let values = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        Spectrogram::new(values, cfg.n_mels, cfg.n_frames, cfg.channels, "t", 0.01).unwrap()
    }

    #[test]
    fn offsets_are_zero_at_init() {
        for variant in [Variant::TimeOnly, Variant::FrequencyOnly, Variant::TimeFrequency] {
            let cfg = LgfaConfig {
                variant,
                ..LgfaConfig::gradcheck()
            };
            let model = LgfaModel::new(cfg, 5).unwrap();
            for id in model.learned_offsets() {
                assert!(model.params().get(id).data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let model = LgfaModel::new(LgfaConfig::gradcheck(), 0).unwrap();
        let bad = Spectrogram::new(vec![0.0; 8 * 4], 8, 4, 1, "x", 0.01).unwrap();
        assert!(matches!(model.logits(&bad).unwrap_err(), Error::Shape { .. }));
    }

    #[test]
    fn zero_features_zero_bias_give_zero_embeddings() {
        let mut model = LgfaModel::new(LgfaConfig::gradcheck(), 1).unwrap();
        let bias = model.branch(Orientation::Time).unwrap().frame_proj.bias;
        model.params_mut().get_mut(bias).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let spec = Spectrogram::new(vec![0.0; 64], 8, 8, 1, "z", 0.01).unwrap();
        let branch = model.branch(Orientation::Time).unwrap();
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let frames = g.constant(branch.frames(&spec).unwrap());
        let x = branch.embed_frames(&mut g, &p, frames, ForwardOptions::default()).unwrap();
        assert!(g.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_are_deterministic() {
        let cfg = LgfaConfig::gradcheck();
        let spec = spec_for(&cfg, 2);
        let a = LgfaModel::new(cfg.clone(), 9).unwrap().logits(&spec).unwrap();
        let b = LgfaModel::new(cfg, 9).unwrap().logits(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn trace_captures_every_stage() {
        let cfg = LgfaConfig::gradcheck();
        let model = LgfaModel::new(cfg.clone(), 3).unwrap();
        let mut g = Graph::new();
        let out = model
            .forward(
                &mut g,
                &spec_for(&cfg, 1),
                ForwardOptions {
                    capture_trace: true,
                    ..Default::default()
                },
            )
            .unwrap();
        let trace = out.trace.unwrap();
        let b = &trace.branches[0];
        assert_eq!(b.frame_embeddings.as_ref().unwrap().shape(), &[8, 4]);
        assert_eq!(b.segment_sequence.shape(), &[5, 8]);
        // depth 1, two heads in each encoder
        assert_eq!(b.attention.len(), 4);
    }
}
