//! Autoregressive relation-path generator.
//!
//! Each step scores `vocab + END` from `[h_q ; mean of the prefix's relation
//! embeddings]` through a two-layer GELU network. A path's probability is the
//! product of its relation steps and the END step that follows it; paths at
//! `max_length` are force-terminated and still pay for END. Training minimizes
//! the mean negative log-likelihood of the pseudo-supervision paths, which is
//! the KL divergence to their uniform target up to the constant `log |Z*|`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::kg::{RelationId, TripleStore};
use crate::optim::{AdamW, AdamWConfig, ParamStore};
use crate::paths::RelationPath;
use crate::prompt::FinetuneRecord;
use crate::question::QuestionSample;
use crate::supervision::PseudoSupervision;
use crate::tape::{gelu, log_sum_exp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub max_length: usize,
    pub beam_size: usize,
    pub hidden: usize,
    pub relation_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_length: 2,
            beam_size: 5,
            hidden: 64,
            relation_dim: 32,
            learning_rate: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        if self.hidden == 0 || self.relation_dim == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("generator learning rate must be positive".into()));
        }
        Ok(())
    }
}

const EMB: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;

fn parameter_shapes(config: &GeneratorConfig, input_dim: usize, vocab: usize) -> [(&'static str, usize, usize); 5] {
    [
        ("relation_embeddings", vocab, config.relation_dim),
        ("w1", input_dim + config.relation_dim, config.hidden),
        ("b1", 1, config.hidden),
        ("w2", config.hidden, vocab + 1),
        ("b2", 1, vocab + 1),
    ]
}

/// A question prepared for distillation: its embedding and distinct targets.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillExample {
    pub id: String,
    pub question: Embedding,
    pub paths: Vec<RelationPath>,
}

#[derive(Clone, Debug, Default)]
pub struct DistillLog {
    pub epoch_nll: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    input_dim: usize,
    vocab: Vec<String>,
    params: ParamStore,
}

#[derive(Debug)]
struct Entry {
    score: f64,
    finished: bool,
    prefix: Vec<RelationId>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // max-heap order: higher score, then finished, then smaller ids
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.finished.cmp(&other.finished))
            .then(other.prefix.cmp(&self.prefix))
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig, input_dim: usize, vocab: Vec<String>) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::Config("generator vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, r, c) in parameter_shapes(&config, input_dim, vocab.len()) {
            let t = match name {
                "b1" | "b2" => Tensor::zeros(r, c),
                "relation_embeddings" => Tensor::uniform_fan_in(r, c, c, &mut rng),
                _ => Tensor::uniform_fan_in(r, c, r, &mut rng),
            };
            params.add(name, t);
        }
        Ok(Generator {
            config,
            input_dim,
            vocab,
            params,
        })
    }

    /// A generator over every relation of `store`, in id order.
    pub fn for_store(config: GeneratorConfig, input_dim: usize, store: &TripleStore) -> Result<Self> {
        let vocab = store
            .relation_ids()
            .map(|r| store.relation_label(r).map(str::to_owned))
            .collect::<Result<_>>()?;
        Generator::new(config, input_dim, vocab)
    }

    pub fn from_params(
        config: GeneratorConfig,
        input_dim: usize,
        vocab: Vec<String>,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = parameter_shapes(&config, input_dim, vocab.len());
        if params.len() != shapes.len() {
            return Err(Error::Config("generator checkpoint has the wrong tensor count".into()));
        }
        for (i, (name, r, c)) in shapes.into_iter().enumerate() {
            if params.name(i) != name || params.get(i).shape() != (r, c) {
                return Err(Error::Config(format!(
                    "generator tensor {i} is `{}` {:?}, expected `{name}` {:?}",
                    params.name(i),
                    params.get(i).shape(),
                    (r, c)
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Config("generator parameters contain non-finite values".into()));
        }
        Ok(Generator {
            config,
            input_dim,
            vocab,
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn set_beam_size(&mut self, k: usize) {
        self.config.beam_size = k.max(1);
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Index of the END token in the step distribution.
    pub fn end_token(&self) -> usize {
        self.vocab.len()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Errors unless `store` has exactly this generator's relations, in order.
    pub fn check_vocab(&self, store: &TripleStore) -> Result<()> {
        let same = store.num_relations() == self.vocab.len()
            && store
                .relation_ids()
                .zip(&self.vocab)
                .all(|(r, l)| store.relation_label(r).is_ok_and(|s| s == l));
        if same {
            Ok(())
        } else {
            Err(Error::Config(
                "generator vocabulary does not match the graph's relations".into(),
            ))
        }
    }

    fn check_question(&self, q: &Embedding) -> Result<()> {
        if q.dim() == self.input_dim {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.input_dim,
                actual: q.dim(),
            })
        }
    }

    fn check_path(&self, z: &RelationPath) -> Result<()> {
        if let Some(r) = z.relations().iter().find(|r| r.0 as usize >= self.vocab.len()) {
            return Err(Error::OutOfVocab(format!("relation id {}", r.0)));
        }
        if z.len() > self.config.max_length {
            return Err(Error::Config(format!(
                "path of length {} exceeds max_length {}",
                z.len(),
                self.config.max_length
            )));
        }
        Ok(())
    }

    /// Log-softmax over `vocab + END` after `prefix`.
    pub fn step_log_probs(&self, question: &Embedding, prefix: &[RelationId]) -> Result<Vec<f64>> {
        self.check_question(question)?;
        if let Some(r) = prefix.iter().find(|r| r.0 as usize >= self.vocab.len()) {
            return Err(Error::OutOfVocab(format!("relation id {}", r.0)));
        }
        Ok(self.step_unchecked(question.values(), prefix))
    }

    fn step_unchecked(&self, q: &[f64], prefix: &[RelationId]) -> Vec<f64> {
        let e = self.config.relation_dim;
        let emb = self.params.get(EMB);
        let mut x = Vec::with_capacity(self.input_dim + e);
        x.extend_from_slice(q);
        let mut mean = vec![0.0; e];
        if !prefix.is_empty() {
            for r in prefix {
                for (m, v) in mean.iter_mut().zip(emb.row(r.0 as usize)) {
                    *m += v;
                }
            }
            let n = prefix.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        x.extend_from_slice(&mean);
        let mut h = Tensor::row_vector(&x).matmul(self.params.get(W1));
        h.add_assign(self.params.get(B1));
        let h = h.map(gelu);
        let mut logits = h.matmul(self.params.get(W2));
        logits.add_assign(self.params.get(B2));
        let lse = log_sum_exp(logits.data());
        logits.data().iter().map(|l| l - lse).collect()
    }

    /// `log P(r1..rl, END | q)`.
    pub fn path_log_likelihood(&self, question: &Embedding, z: &RelationPath) -> Result<f64> {
        self.check_question(question)?;
        self.check_path(z)?;
        let rels = z.relations();
        let mut total = 0.0;
        for t in 0..=rels.len() {
            let lp = self.step_unchecked(question.values(), &rels[..t]);
            total += if t < rels.len() {
                lp[rels[t].0 as usize]
            } else {
                lp[self.end_token()]
            };
        }
        Ok(total)
    }

    /// `log P(r1..rl | q)` without termination.
    pub fn prefix_log_prob(&self, question: &Embedding, prefix: &[RelationId]) -> Result<f64> {
        self.check_question(question)?;
        let mut total = 0.0;
        for t in 0..prefix.len() {
            total += self.step_log_probs(question, &prefix[..t])?[prefix[t].0 as usize];
        }
        Ok(total)
    }

    /// The `config.beam_size` most probable terminated paths, best first.
    pub fn beam_search(&self, question: &Embedding) -> Result<Vec<(RelationPath, f64)>> {
        self.top_k(question, self.config.beam_size)
    }

    /// Exact top-`k` paths of length `1..=max_length` by log-likelihood.
    ///
    /// Best-first search: every extension lowers the score, so the first `k`
    /// terminated sequences popped are the `k` best. Ties go to terminated
    /// entries, then to smaller relation ids.
    pub fn top_k(&self, question: &Embedding, k: usize) -> Result<Vec<(RelationPath, f64)>> {
        self.check_question(question)?;
        let q = question.values();
        let end = self.end_token();
        let mut heap = BinaryHeap::new();
        heap.push(Entry {
            score: 0.0,
            finished: false,
            prefix: Vec::new(),
        });
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let Some(entry) = heap.pop() else { break };
            if entry.finished {
                out.push((RelationPath::new(entry.prefix), entry.score));
                continue;
            }
            let lp = self.step_unchecked(q, &entry.prefix);
            if !entry.prefix.is_empty() {
                heap.push(Entry {
                    score: entry.score + lp[end],
                    finished: true,
                    prefix: entry.prefix.clone(),
                });
            }
            if entry.prefix.len() < self.config.max_length {
                for (r, l) in lp[..end].iter().enumerate() {
                    let mut prefix = entry.prefix.clone();
                    prefix.push(RelationId(r as u32));
                    heap.push(Entry {
                        score: entry.score + l,
                        finished: false,
                        prefix,
                    });
                }
            }
        }
        Ok(out)
    }

    fn nll_on_tape<'a>(&'a self, tape: &mut Tape<'a>, ex: &DistillExample) -> (Vec<Var>, Var) {
        let pv = self.params.bind(tape);
        let v = self.vocab.len();
        let steps: usize = ex.paths.iter().map(|z| z.len() + 1).sum();
        let mut qrep = Vec::with_capacity(steps * self.input_dim);
        let mut avg = Tensor::zeros(steps, v);
        let mut targets = Vec::with_capacity(steps);
        let mut row = 0;
        for z in &ex.paths {
            let rels = z.relations();
            for t in 0..=rels.len() {
                qrep.extend_from_slice(ex.question.values());
                for r in &rels[..t] {
                    let c = r.0 as usize;
                    avg.set(row, c, avg.get(row, c) + 1.0 / t as f64);
                }
                targets.push(if t < rels.len() { rels[t].0 as usize } else { v });
                row += 1;
            }
        }
        let q = tape.leaf(Tensor::from_vec(steps, self.input_dim, qrep));
        let a = tape.leaf(avg);
        let mean = tape.matmul(a, pv[EMB]);
        let x = tape.concat_cols(&[q, mean]);
        let h = tape.matmul(x, pv[W1]);
        let h = tape.add_row(h, pv[B1]);
        let h = tape.gelu(h);
        let logits = tape.matmul(h, pv[W2]);
        let logits = tape.add_row(logits, pv[B2]);
        let ce = tape.cross_entropy(logits, &targets);
        let loss = tape.scale(ce, 1.0 / ex.paths.len() as f64);
        (pv, loss)
    }

    fn check_example(&self, ex: &DistillExample) -> Result<()> {
        self.check_question(&ex.question)?;
        if ex.paths.is_empty() {
            return Err(Error::Unsupervisable(ex.id.clone()));
        }
        ex.paths.iter().try_for_each(|z| self.check_path(z))
    }

    /// `-(1/|Z*|) sum log P(z)` over the example's targets.
    pub fn nll(&self, ex: &DistillExample) -> Result<f64> {
        self.check_example(ex)?;
        let mut tape = Tape::new();
        let (_, loss) = self.nll_on_tape(&mut tape, ex);
        Ok(tape.value(loss).item())
    }

    pub fn nll_and_gradients(&self, ex: &DistillExample) -> Result<(f64, Vec<Tensor>)> {
        self.check_example(ex)?;
        let mut tape = Tape::new();
        let (pv, loss) = self.nll_on_tape(&mut tape, ex);
        let mut grads = tape.backward(loss);
        Ok((tape.value(loss).item(), self.params.collect_grads(&pv, &mut grads)))
    }

    /// `KL(Q || P)` for the uniform target `Q` over the example's paths,
    /// evaluated term by term from the definition.
    pub fn kl_to_target(&self, ex: &DistillExample) -> Result<f64> {
        self.check_example(ex)?;
        let q = 1.0 / ex.paths.len() as f64;
        let mut kl = 0.0;
        for z in &ex.paths {
            kl += q * (q.ln() - self.path_log_likelihood(&ex.question, z)?);
        }
        Ok(kl)
    }
}

/// Embeds each question and deduplicates its supervision paths.
pub fn prepare_distillation(
    dataset: &[(QuestionSample, PseudoSupervision)],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<DistillExample>> {
    dataset
        .iter()
        .map(|(sample, sup)| {
            let mut seen = HashSet::new();
            let paths: Vec<RelationPath> =
                sup.paths.iter().filter(|p| seen.insert(*p)).cloned().collect();
            if paths.is_empty() {
                return Err(Error::Unsupervisable(sample.id.clone()));
            }
            Ok(DistillExample {
                id: sample.id.clone(),
                question: provider.embed(&sample.question)?,
                paths,
            })
        })
        .collect()
}

/// Trains `generator` in place; `on_epoch(epoch, model, mean_nll)` runs after
/// every epoch.
pub fn distill_into<F>(
    generator: &mut Generator,
    examples: &[DistillExample],
    mut on_epoch: F,
) -> Result<DistillLog>
where
    F: FnMut(usize, &Generator, f64),
{
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    examples.iter().try_for_each(|ex| generator.check_example(ex))?;
    let config = generator.config.clone();
    let mut opt = AdamW::new(
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
        &generator.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = DistillLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (nll, grads) = generator.nll_and_gradients(&examples[i])?;
            if !nll.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    question: examples[i].id.clone(),
                });
            }
            total += nll;
            opt.step(&mut generator.params, &grads);
        }
        let mean = total / examples.len() as f64;
        log::debug!("generator epoch {} mean nll {mean:.6}", epoch + 1);
        log.epoch_nll.push(mean);
        on_epoch(epoch + 1, generator, mean);
    }
    Ok(log)
}

/// Fits a fresh generator over `store`'s relations to the pseudo supervision.
pub fn distill(
    config: &GeneratorConfig,
    dataset: &[(QuestionSample, PseudoSupervision)],
    store: &TripleStore,
    provider: &dyn EmbeddingProvider,
) -> Result<(Generator, DistillLog)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let examples = prepare_distillation(dataset, provider)?;
    let mut generator = Generator::for_store(config.clone(), provider.dimension(), store)?;
    let log = distill_into(&mut generator, &examples, |_, _, _| {})?;
    Ok((generator, log))
}

/// One record per question, topic entity and supervision path.
pub fn emit_finetune_dataset(
    dataset: &[(QuestionSample, PseudoSupervision)],
    store: &TripleStore,
) -> Result<Vec<FinetuneRecord>> {
    let mut out = Vec::new();
    for (sample, sup) in dataset {
        if sup.paths.is_empty() {
            return Err(Error::Unsupervisable(sample.id.clone()));
        }
        for &e in &sample.question_entities {
            let topic = store.entity_label(e)?;
            for z in &sup.paths {
                out.push(FinetuneRecord::new(&sample.question, topic, &z.labels(store)?));
            }
        }
    }
    Ok(out)
}
