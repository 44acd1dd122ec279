//! Transformer-based multiple-instance estimator of path informativeness.
//!
//! A path `(r1..rl)` for question `q` is encoded by running a small pre-norm
//! transformer over `[P q + e0, P r1 + e1, .., P rl + el]` (with `P` a learned
//! projection of frozen text embeddings and `e_i` learned positions) and
//! reading out the first position. Positive bags (all candidate paths reaching
//! one answer) are pooled with gated attention `a_i = softmax(w . tanh(V h_i))`;
//! negative bags are single paths and skip pooling. A two-layer MLP over
//! `[bag ; P q]` predicts the bag label, trained with binary cross-entropy.
//! The unnormalized attention score `w . tanh(V h_z)` ranks paths.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::kg::TripleStore;
use crate::optim::{AdamW, AdamWConfig, ParamStore};
use crate::paths::RelationPath;
use crate::tape::{Tape, Var, PROB_EPS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_factor: usize,
    pub max_positions: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            model_dim: 128,
            layers: 2,
            heads: 4,
            ffn_factor: 4,
            max_positions: 4,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            epochs: 600,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, longest_path: usize) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.ffn_factor == 0 {
            return Err(Error::Config("ffn_factor must be positive".into()));
        }
        if self.max_positions < longest_path + 1 {
            return Err(Error::Config(format!(
                "max_positions {} cannot hold paths of length {longest_path} plus the question",
                self.max_positions
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagLabel {
    Positive,
    Negative,
}

impl BagLabel {
    fn target(self) -> f64 {
        match self {
            BagLabel::Positive => 1.0,
            BagLabel::Negative => 0.0,
        }
    }
}

/// `-sum_pos log p - sum_neg log(1 - p)` with probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn mil_loss(predictions: &[(f64, BagLabel)]) -> f64 {
    predictions
        .iter()
        .map(|&(p, label)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            match label {
                BagLabel::Positive => -p.ln(),
                BagLabel::Negative => -(1.0 - p).ln(),
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathScore {
    pub path: RelationPath,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagAggregate {
    pub bag_vector: Vec<f64>,
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
}

/// One question's bags, as consumed by training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub question: String,
    pub positive_bags: Vec<Vec<RelationPath>>,
    pub negatives: Vec<RelationPath>,
}

/// A [`TrainingExample`] with embeddings looked up: row 0 of `inputs` is the
/// question, the other rows are the distinct relations of its paths.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    id: String,
    inputs: Tensor,
    paths: Vec<Vec<usize>>,
    positive_bags: Vec<Vec<usize>>,
    negatives: Vec<usize>,
}

impl PreparedExample {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_bags(&self) -> usize {
        self.positive_bags.len() + self.negatives.len()
    }
}

struct Rows {
    inputs: Vec<f64>,
    dim: usize,
    index: HashMap<u32, usize>,
}

impl Rows {
    fn new(question: &Embedding) -> Self {
        Rows {
            inputs: question.values().to_vec(),
            dim: question.dim(),
            index: HashMap::new(),
        }
    }

    fn path_rows(
        &mut self,
        path: &RelationPath,
        store: &TripleStore,
        provider: &dyn EmbeddingProvider,
        cache: &mut EmbeddingCache,
    ) -> Result<Vec<usize>> {
        let mut rows = vec![0];
        for &r in path.relations() {
            let row = match self.index.get(&r.0) {
                Some(&row) => row,
                None => {
                    let e = cache.get(provider, store.relation_label(r)?)?;
                    check_dim(self.dim, e.dim())?;
                    self.inputs.extend_from_slice(e.values());
                    let row = self.index.len() + 1;
                    self.index.insert(r.0, row);
                    row
                }
            };
            rows.push(row);
        }
        Ok(rows)
    }

    fn into_tensor(self) -> Tensor {
        let n = self.inputs.len() / self.dim;
        Tensor::from_vec(n, self.dim, self.inputs)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}

#[derive(Clone, Debug)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    proj: usize,
    pos: usize,
    layers: Vec<LayerIdx>,
    att_w: usize,
    att_v: usize,
    cls_w1: usize,
    cls_b1: usize,
    cls_w2: usize,
    cls_b2: usize,
}

/// Parameter names and shapes, in storage order.
fn parameter_shapes(config: &EstimatorConfig, input_dim: usize) -> Vec<(String, usize, usize)> {
    let d = config.model_dim;
    let f = d * config.ffn_factor;
    let mut shapes = vec![
        ("input_projection".to_owned(), input_dim, d),
        ("positional".to_owned(), config.max_positions, d),
    ];
    for l in 0..config.layers {
        for (name, r, c) in [
            ("ln1.gamma", 1, d),
            ("ln1.beta", 1, d),
            ("attn.wq", d, d),
            ("attn.bq", 1, d),
            ("attn.wk", d, d),
            ("attn.bk", 1, d),
            ("attn.wv", d, d),
            ("attn.bv", 1, d),
            ("attn.wo", d, d),
            ("attn.bo", 1, d),
            ("ln2.gamma", 1, d),
            ("ln2.beta", 1, d),
            ("ffn.w1", d, f),
            ("ffn.b1", 1, f),
            ("ffn.w2", f, d),
            ("ffn.b2", 1, d),
        ] {
            shapes.push((format!("layer{l}.{name}"), r, c));
        }
    }
    shapes.extend([
        ("attention.w".to_owned(), 1, d),
        ("attention.V".to_owned(), d, d),
        ("classifier.w1".to_owned(), 2 * d, d),
        ("classifier.b1".to_owned(), 1, d),
        ("classifier.w2".to_owned(), d, 1),
        ("classifier.b2".to_owned(), 1, 1),
    ]);
    shapes
}

impl Layout {
    fn resolve(params: &ParamStore, config: &EstimatorConfig, input_dim: usize) -> Result<Layout> {
        for (name, r, c) in parameter_shapes(config, input_dim) {
            let i = params
                .index_of(&name)
                .ok_or_else(|| Error::Config(format!("missing estimator tensor `{name}`")))?;
            if params.get(i).shape() != (r, c) {
                return Err(Error::Config(format!(
                    "estimator tensor `{name}` has shape {:?}, expected {:?}",
                    params.get(i).shape(),
                    (r, c)
                )));
            }
        }
        let ix = |name: &str| params.index_of(name).expect("checked above");
        let layers = (0..config.layers)
            .map(|l| {
                let p = |n: &str| ix(&format!("layer{l}.{n}"));
                LayerIdx {
                    ln1_g: p("ln1.gamma"),
                    ln1_b: p("ln1.beta"),
                    wq: p("attn.wq"),
                    bq: p("attn.bq"),
                    wk: p("attn.wk"),
                    bk: p("attn.bk"),
                    wv: p("attn.wv"),
                    bv: p("attn.bv"),
                    wo: p("attn.wo"),
                    bo: p("attn.bo"),
                    ln2_g: p("ln2.gamma"),
                    ln2_b: p("ln2.beta"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                }
            })
            .collect();
        Ok(Layout {
            proj: ix("input_projection"),
            pos: ix("positional"),
            layers,
            att_w: ix("attention.w"),
            att_v: ix("attention.V"),
            cls_w1: ix("classifier.w1"),
            cls_b1: ix("classifier.b1"),
            cls_w2: ix("classifier.w2"),
            cls_b2: ix("classifier.b2"),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MilEstimator {
    config: EstimatorConfig,
    input_dim: usize,
    params: ParamStore,
    layout: Layout,
}

impl MilEstimator {
    /// Fresh parameters: matrices `U(+-1/sqrt(fan_in))`, biases zero, norms
    /// identity, all drawn from the config seed.
    pub fn new(config: EstimatorConfig, input_dim: usize) -> Result<Self> {
        config.validate(config.max_positions.saturating_sub(1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, r, c) in parameter_shapes(&config, input_dim) {
            let t = if name.ends_with(".gamma") {
                Tensor::filled(r, c, 1.0)
            } else if name.ends_with(".beta") || (r == 1 && name.contains(".b")) {
                Tensor::zeros(r, c)
            } else if name == "positional" || name == "attention.w" {
                Tensor::uniform_fan_in(r, c, c, &mut rng)
            } else {
                Tensor::uniform_fan_in(r, c, r, &mut rng)
            };
            params.add(name, t);
        }
        let layout = Layout::resolve(&params, &config, input_dim)?;
        Ok(MilEstimator {
            config,
            input_dim,
            params,
            layout,
        })
    }

    pub fn from_params(config: EstimatorConfig, input_dim: usize, params: ParamStore) -> Result<Self> {
        config.validate(config.max_positions.saturating_sub(1))?;
        let layout = Layout::resolve(&params, &config, input_dim)?;
        if !params.all_finite() {
            return Err(Error::Config("estimator parameters contain non-finite values".into()));
        }
        Ok(MilEstimator {
            config,
            input_dim,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Looks up a parameter tensor by name, for inspection and tests.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.params.index_of(name)?;
        Some(self.params.get_mut(i))
    }

    fn encoder_block(&self, tape: &mut Tape<'_>, pv: &[Var], layer: &LayerIdx, x: Var) -> Var {
        let d = self.config.model_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let h = tape.layer_norm(x, pv[layer.ln1_g], pv[layer.ln1_b]);
        let q = tape.matmul(h, pv[layer.wq]);
        let q = tape.add_row(q, pv[layer.bq]);
        let k = tape.matmul(h, pv[layer.wk]);
        let k = tape.add_row(k, pv[layer.bk]);
        let v = tape.matmul(h, pv[layer.wv]);
        let v = tape.add_row(v, pv[layer.bv]);
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(s);
            outs.push(tape.matmul(a, vh));
        }
        let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let o = tape.matmul(o, pv[layer.wo]);
        let o = tape.add_row(o, pv[layer.bo]);
        let x = tape.add(x, o);
        let h = tape.layer_norm(x, pv[layer.ln2_g], pv[layer.ln2_b]);
        let f = tape.matmul(h, pv[layer.w1]);
        let f = tape.add_row(f, pv[layer.b1]);
        let f = tape.gelu(f);
        let f = tape.matmul(f, pv[layer.w2]);
        let f = tape.add_row(f, pv[layer.b2]);
        tape.add(x, f)
    }

    /// First-position encoder output for the sequence `projected[rows]`.
    fn encode_rows(&self, tape: &mut Tape<'_>, pv: &[Var], projected: Var, rows: &[usize]) -> Var {
        let x = tape.gather_rows(projected, rows);
        let pos = tape.slice_rows(pv[self.layout.pos], 0, rows.len());
        let mut x = tape.add(x, pos);
        for layer in &self.layout.layers {
            x = self.encoder_block(tape, pv, layer, x);
        }
        tape.row(x, 0)
    }

    /// `K x 1` column of `w . tanh(V h_i)` for stacked encodings `K x d`.
    fn attention_scores(&self, tape: &mut Tape<'_>, pv: &[Var], stacked: Var) -> Var {
        let vt = tape.transpose(pv[self.layout.att_v]);
        let t = tape.matmul(stacked, vt);
        let t = tape.tanh(t);
        let wt = tape.transpose(pv[self.layout.att_w]);
        tape.matmul(t, wt)
    }

    /// Returns `(bag_vector, weights 1 x K, scores K x 1)`.
    fn pool(&self, tape: &mut Tape<'_>, pv: &[Var], members: &[Var]) -> (Var, Var, Var) {
        let stacked = tape.concat_rows(members);
        let scores = self.attention_scores(tape, pv, stacked);
        let row = tape.transpose(scores);
        let weights = tape.softmax_rows(row);
        let bag = tape.matmul(weights, stacked);
        (bag, weights, scores)
    }

    fn classifier_logit(&self, tape: &mut Tape<'_>, pv: &[Var], bag: Var, question: Var) -> Var {
        let x = tape.concat_cols(&[bag, question]);
        let h = tape.matmul(x, pv[self.layout.cls_w1]);
        let h = tape.add_row(h, pv[self.layout.cls_b1]);
        let h = tape.gelu(h);
        let o = tape.matmul(h, pv[self.layout.cls_w2]);
        tape.add_row(o, pv[self.layout.cls_b2])
    }

    fn check_input(&self, e: &Embedding) -> Result<()> {
        check_dim(self.input_dim, e.dim())
    }

    /// Encoder output at the question position for one path.
    pub fn encode_path(&self, question: &Embedding, relations: &[Embedding]) -> Result<Vec<f64>> {
        if relations.is_empty() || relations.len() + 1 > self.config.max_positions {
            return Err(Error::Config(format!(
                "path length {} outside 1..={}",
                relations.len(),
                self.config.max_positions - 1
            )));
        }
        self.check_input(question)?;
        let mut data = question.values().to_vec();
        for r in relations {
            self.check_input(r)?;
            data.extend_from_slice(r.values());
        }
        let inputs = Tensor::from_vec(relations.len() + 1, self.input_dim, data);
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let x = tape.leaf(inputs);
        let projected = tape.matmul(x, pv[self.layout.proj]);
        let rows: Vec<usize> = (0..=relations.len()).collect();
        let h = self.encode_rows(&mut tape, &pv, projected, &rows);
        Ok(tape.value(h).data().to_vec())
    }

    /// The learned projection of a question embedding (classifier input).
    pub fn project_question(&self, question: &Embedding) -> Result<Vec<f64>> {
        self.check_input(question)?;
        let q = Tensor::row_vector(question.values());
        Ok(q.matmul(self.params.get(self.layout.proj)).into_data())
    }

    /// `w . tanh(V h_z)`.
    pub fn path_informativeness(&self, h_z: &[f64]) -> Result<f64> {
        check_dim(self.config.model_dim, h_z.len())?;
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let h = tape.leaf(Tensor::row_vector(h_z));
        let s = self.attention_scores(&mut tape, &pv, h);
        Ok(tape.value(s).item())
    }

    pub fn aggregate_positive_bag(&self, members: &[Vec<f64>]) -> Result<BagAggregate> {
        if members.is_empty() {
            return Err(Error::Config("positive bag without members".into()));
        }
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let mut vars = Vec::with_capacity(members.len());
        for m in members {
            check_dim(self.config.model_dim, m.len())?;
            vars.push(tape.leaf(Tensor::row_vector(m)));
        }
        let (bag, weights, scores) = self.pool(&mut tape, &pv, &vars);
        Ok(BagAggregate {
            bag_vector: tape.value(bag).data().to_vec(),
            weights: tape.value(weights).data().to_vec(),
            scores: tape.value(scores).data().to_vec(),
        })
    }

    /// `sigmoid(MLP([bag ; question]))`.
    pub fn classify_bag(&self, bag_vector: &[f64], question_projected: &[f64]) -> Result<f64> {
        check_dim(self.config.model_dim, bag_vector.len())?;
        check_dim(self.config.model_dim, question_projected.len())?;
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let b = tape.leaf(Tensor::row_vector(bag_vector));
        let q = tape.leaf(Tensor::row_vector(question_projected));
        let logit = self.classifier_logit(&mut tape, &pv, b, q);
        let x = tape.value(logit).item();
        Ok(1.0 / (1.0 + (-x).exp()))
    }

    pub fn prepare(
        &self,
        example: &TrainingExample,
        store: &TripleStore,
        provider: &dyn EmbeddingProvider,
        cache: &mut EmbeddingCache,
    ) -> Result<PreparedExample> {
        let question = provider.embed(&example.question)?;
        self.check_input(&question)?;
        let mut rows = Rows::new(&question);
        let mut paths: Vec<Vec<usize>> = Vec::new();
        let mut path_index: HashMap<&RelationPath, usize> = HashMap::new();
        let intern = |p: &'_ RelationPath,
                          rows: &mut Rows,
                          paths: &mut Vec<Vec<usize>>,
                          cache: &mut EmbeddingCache|
         -> Result<usize> {
            if p.len() + 1 > self.config.max_positions {
                return Err(Error::Config(format!(
                    "path of length {} exceeds max_positions {}",
                    p.len(),
                    self.config.max_positions
                )));
            }
            paths.push(rows.path_rows(p, store, provider, cache)?);
            Ok(paths.len() - 1)
        };
        let mut positive_bags = Vec::new();
        for bag in &example.positive_bags {
            let mut members = Vec::with_capacity(bag.len());
            for p in bag {
                let i = match path_index.get(p) {
                    Some(&i) => i,
                    None => {
                        let i = intern(p, &mut rows, &mut paths, cache)?;
                        path_index.insert(p, i);
                        i
                    }
                };
                members.push(i);
            }
            if !members.is_empty() {
                positive_bags.push(members);
            }
        }
        let mut negatives = Vec::with_capacity(example.negatives.len());
        for p in &example.negatives {
            let i = match path_index.get(p) {
                Some(&i) => i,
                None => {
                    let i = intern(p, &mut rows, &mut paths, cache)?;
                    path_index.insert(p, i);
                    i
                }
            };
            negatives.push(i);
        }
        Ok(PreparedExample {
            id: example.id.clone(),
            inputs: rows.into_tensor(),
            paths,
            positive_bags,
            negatives,
        })
    }

    fn loss_on_tape<'a>(&'a self, tape: &mut Tape<'a>, ex: &PreparedExample) -> (Vec<Var>, Var) {
        let pv = self.params.bind(tape);
        let inputs = tape.leaf(ex.inputs.clone());
        let projected = tape.matmul(inputs, pv[self.layout.proj]);
        let question = tape.row(projected, 0);
        let encoded: Vec<Var> = ex
            .paths
            .iter()
            .map(|rows| self.encode_rows(tape, &pv, projected, rows))
            .collect();
        let mut terms = Vec::with_capacity(ex.num_bags());
        for bag in &ex.positive_bags {
            let members: Vec<Var> = bag.iter().map(|&i| encoded[i]).collect();
            let (pooled, _, _) = self.pool(tape, &pv, &members);
            let logit = self.classifier_logit(tape, &pv, pooled, question);
            terms.push(tape.bce_with_logit(logit, BagLabel::Positive.target()));
        }
        for &i in &ex.negatives {
            // singleton negative bag: the bag vector is the path encoding itself
            let logit = self.classifier_logit(tape, &pv, encoded[i], question);
            terms.push(tape.bce_with_logit(logit, BagLabel::Negative.target()));
        }
        let loss = tape.sum(&terms);
        (pv, loss)
    }

    /// Bag-level BCE loss of one question.
    pub fn loss(&self, ex: &PreparedExample) -> f64 {
        if ex.num_bags() == 0 {
            return 0.0;
        }
        let mut tape = Tape::new();
        let (_, loss) = self.loss_on_tape(&mut tape, ex);
        tape.value(loss).item()
    }

    /// Loss and per-parameter gradients, in parameter storage order.
    pub fn loss_and_gradients(&self, ex: &PreparedExample) -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let (pv, loss) = self.loss_on_tape(&mut tape, ex);
        let mut grads = tape.backward(loss);
        let value = tape.value(loss).item();
        (value, self.params.collect_grads(&pv, &mut grads))
    }

    /// Bag probabilities for one question, positives first then negatives.
    pub fn bag_probabilities(&self, ex: &PreparedExample) -> Vec<(f64, BagLabel)> {
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let inputs = tape.leaf(ex.inputs.clone());
        let projected = tape.matmul(inputs, pv[self.layout.proj]);
        let question = tape.row(projected, 0);
        let encoded: Vec<Var> = ex
            .paths
            .iter()
            .map(|rows| self.encode_rows(&mut tape, &pv, projected, rows))
            .collect();
        let mut out = Vec::new();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for bag in &ex.positive_bags {
            let members: Vec<Var> = bag.iter().map(|&i| encoded[i]).collect();
            let (pooled, _, _) = self.pool(&mut tape, &pv, &members);
            let logit = self.classifier_logit(&mut tape, &pv, pooled, question);
            out.push((sig(tape.value(logit).item()), BagLabel::Positive));
        }
        for &i in &ex.negatives {
            let logit = self.classifier_logit(&mut tape, &pv, encoded[i], question);
            out.push((sig(tape.value(logit).item()), BagLabel::Negative));
        }
        out
    }

    /// Informativeness scores for `paths` under `question`, in input order.
    /// Each score depends only on its own path.
    pub fn score_paths(
        &self,
        question: &str,
        paths: &[RelationPath],
        store: &TripleStore,
        provider: &dyn EmbeddingProvider,
        cache: &mut EmbeddingCache,
    ) -> Result<Vec<PathScore>> {
        if paths.is_empty() {
            return Ok(Vec::new());
        }
        let example = TrainingExample {
            id: String::new(),
            question: question.to_owned(),
            positive_bags: vec![],
            negatives: paths.to_vec(),
        };
        let ex = self.prepare(&example, store, provider, cache)?;
        let mut tape = Tape::new();
        let pv = self.params.bind(&mut tape);
        let inputs = tape.leaf(ex.inputs.clone());
        let projected = tape.matmul(inputs, pv[self.layout.proj]);
        let mut out = Vec::with_capacity(paths.len());
        for (path, &i) in paths.iter().zip(&ex.negatives) {
            let h = self.encode_rows(&mut tape, &pv, projected, &ex.paths[i]);
            let s = self.attention_scores(&mut tape, &pv, h);
            out.push(PathScore {
                path: path.clone(),
                score: tape.value(s).item(),
            });
        }
        Ok(out)
    }

    /// Runs `config.epochs` passes of AdamW, one step per question, visiting
    /// questions in a seeded shuffled order.
    pub fn train(&mut self, examples: &[PreparedExample]) -> Result<TrainingLog> {
        let usable: Vec<&PreparedExample> = examples.iter().filter(|e| e.num_bags() > 0).collect();
        if usable.len() < examples.len() {
            log::warn!(
                "{} questions without bags skipped",
                examples.len() - usable.len()
            );
        }
        if usable.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: self.config.learning_rate,
                weight_decay: self.config.weight_decay,
                ..Default::default()
            },
            &self.params,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0f_0bde_u64);
        let mut order: Vec<usize> = (0..usable.len()).collect();
        let mut log = TrainingLog::default();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &k in &order {
                let ex = usable[k];
                let (loss, grads) = self.loss_and_gradients(ex);
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        epoch: epoch + 1,
                        question: ex.id.clone(),
                    });
                }
                total += loss;
                opt.step(&mut self.params, &grads);
            }
            let mean = total / usable.len() as f64;
            log::debug!("estimator epoch {} mean loss {mean:.6}", epoch + 1);
            log.epoch_losses.push(mean);
        }
        Ok(log)
    }
}

/// Builds an estimator for `provider`'s dimension and trains it on `dataset`.
pub fn train_estimator(
    config: &EstimatorConfig,
    dataset: &[TrainingExample],
    store: &TripleStore,
    provider: &dyn EmbeddingProvider,
) -> Result<(MilEstimator, TrainingLog)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let longest = dataset
        .iter()
        .flat_map(|e| e.positive_bags.iter().flatten().chain(&e.negatives))
        .map(RelationPath::len)
        .max()
        .unwrap_or(1);
    config.validate(longest)?;
    let mut model = MilEstimator::new(config.clone(), provider.dimension())?;
    let mut cache = EmbeddingCache::new();
    let prepared = dataset
        .iter()
        .map(|e| model.prepare(e, store, provider, &mut cache))
        .collect::<Result<Vec<_>>>()?;
    let log = model.train(&prepared)?;
    Ok((model, log))
}
