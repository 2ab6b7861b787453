//! Named parameter storage and the transformer building blocks: linear
//! projection, layer normalisation, multi-head self-attention, the GELU MLP,
//! and the pre-norm residual block that stacks them.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const MLP_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Records every parameter as a differentiable leaf on `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| graph.leaf(t.clone())).collect(),
        }
    }

    /// Adds `scale · ∂loss/∂p` into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients, scale: f64) -> Result<()> {
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.vars) {
            let g = grads
                .get(var)
                .ok_or_else(|| Error::Usage("parameter missing from backward pass".into()))?;
            tensor.accumulate_grad(g, scale)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }
}

/// Graph handles of a [`ParamStore`] bound for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles created by the caller, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(d_in);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[d_in, d_out], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::uniform(&[d_out], bound, rng));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[d], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), LAYER_NORM_EPS)
    }
}

/// Multi-head scaled dot-product self-attention with separate Q/K/V and
/// output projections.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d} is not divisible by {heads} heads"
            )));
        }
        Ok(SelfAttention {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            output: Linear::new(store, &format!("{name}.output"), d, d, rng),
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.forward_with_weights(g, p, x).map(|(out, _)| out)
    }

    /// Returns the output together with each head's attention matrix.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let d = self.query.d_in;
        if g.shape(x).get(1) != Some(&d) {
            return Err(Error::shape(
                "multi_head_self_attention",
                format!("input {:?} does not have width {d}", g.shape(x)),
            ));
        }
        let q = self.query.forward(g, p, x)?;
        let k = self.key.forward(g, p, x)?;
        let v = self.value.forward(g, p, x)?;
        let d_head = d / self.heads;
        let scale = 1.0 / (d_head as f64).sqrt();

        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * d_head, d_head)?,
                    g.slice_cols(k, h * d_head, d_head)?,
                    g.slice_cols(v, h * d_head, d_head)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            outputs.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat_cols(&outputs)?
        };
        Ok((self.output.forward(g, p, merged)?, weights))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}

/// Two linear layers with a GELU in between; hidden width `MLP_RATIO · d`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), d, MLP_RATIO * d, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), MLP_RATIO * d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }
}

/// Pre-norm transformer block:
/// `y = x + MSA(LN(x))`, `out = y + MLP(LN(y))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Block {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            attn: SelfAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, attn_out: Option<&mut Vec<Var>>) -> Result<Var> {
        let h = self.norm1.forward(g, p, x)?;
        let (a, weights) = self.attn.forward_with_weights(g, p, h)?;
        if let Some(out) = attn_out {
            out.extend(weights);
        }
        let y = g.add(a, x)?;
        let h = self.norm2.forward(g, p, y)?;
        let m = self.mlp.forward(g, p, h)?;
        g.add(m, y)
    }

    /// Attention and MLP weights, i.e. everything inside the residual branches
    /// except the normalisation affine parameters.
    pub fn internal_params(&self) -> Vec<ParamId> {
        let mut ids = self.attn.params();
        ids.extend(self.mlp.params());
        ids
    }
}

/// A stack of [`Block`]s applied in sequence.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<Block>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|l| Block::new(store, &format!("{name}.blocks.{l}"), d, heads, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder { blocks })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        mut x: Var,
        mut attn_out: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, p, x, attn_out.as_deref_mut())?;
        }
        Ok(x)
    }

    pub fn internal_params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(Block::internal_params).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = SelfAttention::new(&mut store, "a", 10, 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_token_attention_is_value_then_output_projection() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attn = SelfAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::uniform(&[1, 8], 1.0, &mut rng));
        let (out, weights) = attn.forward_with_weights(&mut g, &p, x).unwrap();
        for w in &weights {
            assert_eq!(g.value(*w).data(), &[1.0]);
        }
        let v = attn.value.forward(&mut g, &p, x).unwrap();
        let expected = attn.output.forward(&mut g, &p, v).unwrap();
        assert!(g.value(out).max_abs_diff(g.value(expected)) < 1e-12);
    }

    #[test]
    fn segment_scale_attention_preserves_shape() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = SelfAttention::new(&mut store, "a", 256, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::uniform(&[17, 256], 1.0, &mut rng));
        let out = attn.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(out), &[17, 256]);
    }

    #[test]
    fn mlp_zero_weights_and_shape() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&mut store, "m", 16, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::uniform(&[16, 16], 1.0, &mut rng));
        let out = mlp.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(out), &[16, 16]);

        for id in mlp.params() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::uniform(&[16, 16], 1.0, &mut rng));
        let out = mlp.forward(&mut g, &p, x).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::new(&mut store, "e", 3, 8, 2, &mut rng).unwrap();
        for id in enc.internal_params() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::uniform(&[5, 8], 2.0, &mut rng));
        let out = enc.forward(&mut g, &p, x, None).unwrap();
        assert_eq!(g.value(out).max_abs_diff(g.value(x)), 0.0);
    }
}
