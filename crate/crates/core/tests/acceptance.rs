//! Acceptance suite. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pathmil::config::PipelineConfig;
use pathmil::embedding::{Embedding, EmbeddingCache, EmbeddingProvider, HashingEmbedder};
use pathmil::estimator::{BagLabel, EstimatorConfig, MilEstimator, TrainingExample};
use pathmil::eval::{answer_recall, classify_failure, f1_score, hit, hits_at_1, FailureClass, QuestionResult};
use pathmil::fixtures::{sports_questions, sports_store, toy_questions, toy_store, write_toy_dataset};
use pathmil::generator::{distill_into, emit_finetune_dataset, DistillExample, Generator, GeneratorConfig};
use pathmil::kg::RelationId;
use pathmil::paths::{
    enumerate_candidate_paths, ground_paths, reachable_entities, weakly_supervised_paths, RelationPath,
};
use pathmil::pipeline::{files, Pipeline, Stage};
use pathmil::prompt::{verbalize_evidence, EvidenceText};
use pathmil::question::QuestionSample;
use pathmil::reasoner::mock_union_reasoner;
use pathmil::supervision::{
    classify_negatives, construct_question_data, NegativeSamplingConfig, PseudoSupervision,
};
use pathmil::synthetic::{planted_benchmark, planted_recovery, PlantedConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_sequences, max_relative_error, oracle_reach, random_graph};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, budget: Duration, what: &str) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure!(start.elapsed() <= budget, "{what} took {secs:.1}s, budget {}s", budget.as_secs());
    Ok(secs)
}

fn reachability_oracles() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let g = random_graph(seed, 50, 8, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let max_hop = rng.random_range(1..=3);
        let starts: Vec<String> = (0..rng.random_range(1..=2))
            .map(|_| g.entities[rng.random_range(0..g.entities.len())].clone())
            .collect();
        let answers: Vec<String> = (0..rng.random_range(1..=3))
            .map(|_| g.entities[rng.random_range(0..g.entities.len())].clone())
            .collect();
        let store = &g.store;
        let start_ids: Vec<_> = starts.iter().map(|s| common::entity(store, s)).collect();

        let mut expected_candidates = BTreeSet::new();
        let mut expected_weak = BTreeSet::new();
        for seq in all_sequences(&g.relations, max_hop) {
            let mut any = false;
            let mut hits_answer = false;
            for s in &starts {
                let ends = oracle_reach(&g, s, &seq);
                if let Some(path) = seq.iter().map(|r| store.relation(r)).collect::<Option<Vec<_>>>() {
                    let got: BTreeSet<String> = reachable_entities(store, common::entity(store, s), &RelationPath::new(path))
                        .map_err(|e| e.to_string())?
                        .into_iter()
                        .map(|e| store.entity_label(e).unwrap().to_owned())
                        .collect();
                    ensure!(got == ends, "graph {seed}: reach({s}, {seq:?}) = {got:?}, oracle {ends:?}");
                    checked += 1;
                }
                any |= !ends.is_empty();
                hits_answer |= ends.iter().any(|e| answers.contains(e));
            }
            if any {
                expected_candidates.insert(seq.clone());
            }
            if hits_answer {
                expected_weak.insert(seq);
            }
        }
        let candidates = enumerate_candidate_paths(store, &start_ids, max_hop).map_err(|e| e.to_string())?;
        let got: BTreeSet<Vec<String>> = candidates.iter().map(|p| common::labels_of(store, p)).collect();
        ensure!(got.len() == candidates.len(), "graph {seed}: duplicate candidates");
        ensure!(got == expected_candidates, "graph {seed}: candidate set differs from oracle");
        let sample = QuestionSample {
            id: format!("g{seed}"),
            question: "q".into(),
            question_entities: start_ids.clone(),
            answers: answers.iter().map(|a| common::entity(store, a)).collect(),
        };
        let weak = weakly_supervised_paths(store, &sample, &candidates).map_err(|e| e.to_string())?;
        let got: BTreeSet<Vec<String>> = weak.iter().map(|p| common::labels_of(store, p)).collect();
        ensure!(got == expected_weak, "graph {seed}: weak set differs from oracle");
    }
    let secs = within(start, Duration::from_secs(30), "oracle sweep")?;
    Ok(format!("100 graphs, {checked} reach queries, {secs:.1}s"))
}

fn randomize(params: &mut pathmil::optim::ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for i in 0..params.len() {
        for x in params.get_mut(i).data_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
}

fn finite_difference<F: FnMut(&mut pathmil::optim::ParamStore) -> f64>(
    params: &mut pathmil::optim::ParamStore,
    mut f: F,
) -> Vec<Vec<f64>> {
    let h = 1e-5;
    let mut out = Vec::new();
    for i in 0..params.len() {
        let mut g = Vec::with_capacity(params.get(i).len());
        for j in 0..params.get(i).len() {
            let orig = params.get(i).data()[j];
            params.get_mut(i).data_mut()[j] = orig + h;
            let up = f(params);
            params.get_mut(i).data_mut()[j] = orig - h;
            let down = f(params);
            params.get_mut(i).data_mut()[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let store = toy_store();
    let provider = HashingEmbedder::new(8).map_err(|e| e.to_string())?;
    let mut cache = EmbeddingCache::new();
    let q = toy_questions()[7].resolve(&store).map_err(|e| e.to_string())?;
    let cands = enumerate_candidate_paths(&store, &q.question_entities, 2).map_err(|e| e.to_string())?;
    let data = construct_question_data(&NegativeSamplingConfig::default(), &store, &q, &cands, &provider, &mut cache)
        .map_err(|e| e.to_string())?;
    let example: TrainingExample = data.training_example(&q);
    ensure!(example.positive_bags.iter().any(|b| b.len() > 1), "fixture needs a multi-path bag");
    let mut worst_est = 0.0f64;
    let mut worst_gen = 0.0f64;
    for seed in 0..5u64 {
        let config = EstimatorConfig {
            model_dim: 8,
            layers: 2,
            heads: 2,
            ffn_factor: 2,
            max_positions: 3,
            seed,
            ..Default::default()
        };
        let mut model = MilEstimator::new(config, 8).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        randomize(model.params_mut(), &mut rng, 0.5);
        let prepared = model.prepare(&example, &store, &provider, &mut cache).map_err(|e| e.to_string())?;
        let (_, analytic) = model.loss_and_gradients(&prepared);
        let cfg = model.config().clone();
        let numeric = finite_difference(&mut model.params().clone(), |p| {
            MilEstimator::from_params(cfg.clone(), 8, p.clone()).unwrap().loss(&prepared)
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            worst_est = worst_est.max(max_relative_error(a.data(), n, 1e-6));
        }

        let gconfig = GeneratorConfig {
            max_length: 3,
            hidden: 8,
            relation_dim: 8,
            seed,
            ..Default::default()
        };
        let vocab: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
        let mut gen = Generator::new(gconfig.clone(), 8, vocab.clone()).map_err(|e| e.to_string())?;
        randomize(gen.params_mut(), &mut rng, 0.5);
        let ex = DistillExample {
            id: "g".into(),
            question: Embedding::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()),
            paths: vec![
                RelationPath::new(vec![RelationId(1), RelationId(3)]),
                RelationPath::new(vec![RelationId(0)]),
                RelationPath::new(vec![RelationId(4), RelationId(4), RelationId(2)]),
            ],
        };
        let (_, analytic) = gen.nll_and_gradients(&ex).map_err(|e| e.to_string())?;
        let numeric = finite_difference(&mut gen.params().clone(), |p| {
            Generator::from_params(gconfig.clone(), 8, vocab.clone(), p.clone()).unwrap().nll(&ex).unwrap()
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            worst_gen = worst_gen.max(max_relative_error(a.data(), n, 1e-6));
        }
    }
    ensure!(worst_est <= 1e-4, "estimator max relative error {worst_est:.2e}");
    ensure!(worst_gen <= 1e-4, "generator max relative error {worst_gen:.2e}");
    let secs = within(start, Duration::from_secs(60), "gradient checks")?;
    Ok(format!("5 seeds, max rel err estimator {worst_est:.1e}, generator {worst_gen:.1e}, {secs:.1}s"))
}

fn attention_algebra() -> Outcome {
    let d = 8;
    let config = EstimatorConfig {
        model_dim: d,
        layers: 1,
        heads: 2,
        ffn_factor: 2,
        max_positions: 3,
        ..Default::default()
    };
    let mut model = MilEstimator::new(config, d).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..8 {
        let members: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let agg = model.aggregate_positive_bag(&members).map_err(|e| e.to_string())?;
        let sum: f64 = agg.weights.iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-6, "weights sum to {sum}");
        ensure!(agg.weights.iter().all(|&w| w > 0.0), "nonpositive weight");
    }

    // V = I and w = 4 e_1 make s_i = 4 tanh(h_i[0]); pick h_i[0] = atanh(s_i / 4).
    let v = model.tensor_mut("attention.V").ok_or("no attention.V")?;
    v.data_mut().fill(0.0);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    let w = model.tensor_mut("attention.w").ok_or("no attention.w")?;
    w.data_mut().fill(0.0);
    w.set(0, 0, 4.0);
    let members: Vec<Vec<f64>> = [1.0f64, 2.0, 3.0]
        .iter()
        .map(|s| {
            let mut h = vec![0.0; d];
            h[0] = (s / 4.0).atanh();
            h
        })
        .collect();
    let agg = model.aggregate_positive_bag(&members).map_err(|e| e.to_string())?;
    let rounded: Vec<f64> = agg.weights.iter().map(|w| (w * 1e4).round() / 1e4).collect();
    ensure!(rounded == vec![0.0900, 0.2447, 0.6652], "softmax(1,2,3) gave {:?}", agg.weights);

    let single = vec![members[2].clone()];
    let agg = model.aggregate_positive_bag(&single).map_err(|e| e.to_string())?;
    ensure!(agg.bag_vector == single[0], "singleton pooling changed the vector");

    // Negative bags: the classifier sees the raw path encoding.
    let store = toy_store();
    let provider = HashingEmbedder::new(d).map_err(|e| e.to_string())?;
    let mut cache = EmbeddingCache::new();
    let model = MilEstimator::new(model.config().clone(), d).map_err(|e| e.to_string())?;
    let question = "Which movies did Tom Cruise act in?";
    let negatives: Vec<RelationPath> = [vec!["acted_in", "has_genre"], vec!["wrote"]]
        .iter()
        .map(|l| RelationPath::from_labels(&store, l).unwrap())
        .collect();
    let ex = TrainingExample {
        id: "neg".into(),
        question: question.into(),
        positive_bags: vec![],
        negatives: negatives.clone(),
    };
    let prepared = model.prepare(&ex, &store, &provider, &mut cache).map_err(|e| e.to_string())?;
    let probs = model.bag_probabilities(&prepared);
    let qe = provider.embed(question).map_err(|e| e.to_string())?;
    let qp = model.project_question(&qe).map_err(|e| e.to_string())?;
    for (z, (p, label)) in negatives.iter().zip(&probs) {
        ensure!(*label == BagLabel::Negative, "expected negative bag");
        let rels: Vec<Embedding> = z
            .labels(&store)
            .unwrap()
            .iter()
            .map(|l| provider.embed(l).unwrap())
            .collect();
        let h = model.encode_path(&qe, &rels).map_err(|e| e.to_string())?;
        let direct = model.classify_bag(&h, &qp).map_err(|e| e.to_string())?;
        ensure!(direct.to_bits() == p.to_bits(), "negative bag {p} != direct classification {direct}");
    }
    Ok("weights sum to 1, softmax(1,2,3) = (0.0900, 0.2447, 0.6652), singleton bags bitwise".into())
}

fn planted_supervision_recovery() -> Outcome {
    let start = Instant::now();
    let bench = planted_benchmark(&PlantedConfig::default());
    ensure!(bench.questions.len() == 200, "benchmark size {}", bench.questions.len());
    ensure!(bench.questions.iter().all(|q| q.spurious.len() >= 3), "fewer than 3 spurious paths");
    let config = EstimatorConfig {
        model_dim: 32,
        layers: 1,
        heads: 2,
        ffn_factor: 2,
        max_positions: 4,
        learning_rate: 1e-3,
        epochs: 120,
        ..Default::default()
    };
    let provider = HashingEmbedder::new(256).map_err(|e| e.to_string())?;
    let (_, report) = planted_recovery(&bench, 150, &config, &NegativeSamplingConfig::default(), &provider)
        .map_err(|e| e.to_string())?;
    let secs = within(start, Duration::from_secs(300), "planted benchmark")?;
    let detail = format!(
        "{} held out, estimator {:.0}%, similarity {:.0}%, {secs:.0}s",
        report.held_out,
        100.0 * report.estimator,
        100.0 * report.similarity
    );
    ensure!(report.held_out == 50, "{detail}");
    ensure!(report.estimator >= 0.9, "{detail}");
    ensure!(report.estimator - report.similarity >= 0.10, "{detail}");
    Ok(detail)
}

fn sampler_arithmetic() -> Outcome {
    let config = NegativeSamplingConfig::default();
    let q = config.quotas(100);
    ensure!(
        (q.truncated, q.extended, q.deviated, q.other) == (90, 360, 270, 180),
        "quotas for 100 weak paths: {q:?}"
    );
    let provider = HashingEmbedder::new(16).map_err(|e| e.to_string())?;
    let mut max_total = 0;
    for seed in 0..40u64 {
        let g = random_graph(seed, 40, 14, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = &g.store;
        let starts = vec![common::entity(store, &g.entities[rng.random_range(0..g.entities.len())])];
        let answers: Vec<_> = (0..rng.random_range(1..=6))
            .map(|_| common::entity(store, &g.entities[rng.random_range(0..g.entities.len())]))
            .collect();
        let sample = QuestionSample {
            id: format!("f{seed}"),
            question: "which entity is linked".into(),
            question_entities: starts.clone(),
            answers,
        };
        let cands = enumerate_candidate_paths(store, &starts, 3).map_err(|e| e.to_string())?;
        let mut cache = EmbeddingCache::new();
        let cfg = NegativeSamplingConfig { seed, ..config };
        let data = construct_question_data(&cfg, store, &sample, &cands, &provider, &mut cache).map_err(|e| e.to_string())?;
        let total = data.weak_positive.len() + data.negatives.paths.len();
        max_total = max_total.max(total);
        ensure!(total <= 1000, "instance {seed}: {total} retained paths");

        let weak = data.weak_positive;
        let negatives: Vec<RelationPath> = cands.iter().filter(|c| !weak.contains(c)).cloned().collect();
        let part = classify_negatives(&weak, &negatives);
        let mut seen: BTreeMap<RelationPath, usize> = BTreeMap::new();
        for class in [&part.truncated, &part.extended, &part.deviated, &part.other] {
            for z in class {
                *seen.entry(z.clone()).or_default() += 1;
            }
        }
        ensure!(seen.len() == negatives.len(), "instance {seed}: partition is not total");
        ensure!(seen.values().all(|&c| c == 1), "instance {seed}: classes overlap");
    }
    Ok(format!("quotas (90, 360, 270, 180); 40 fuzzed graphs, largest retained set {max_total}"))
}

fn kl_identity() -> Outcome {
    let vocab: Vec<String> = (0..4).map(|i| format!("r{i}")).collect();
    let config = GeneratorConfig {
        max_length: 2,
        hidden: 16,
        relation_dim: 8,
        epochs: 10,
        learning_rate: 0.05,
        ..Default::default()
    };
    let mut gen = Generator::new(config, 6, vocab).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let examples: Vec<DistillExample> = (0..3)
        .map(|i| DistillExample {
            id: format!("k{i}"),
            question: Embedding::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()),
            paths: (0..=i)
                .map(|j| RelationPath::new(vec![RelationId(j as u32), RelationId(((j + i) % 4) as u32)]))
                .collect(),
        })
        .collect();
    // Enumerate every sequence of length 1..=2 and build P from step
    // probabilities, independent of the training-loss code path.
    let sequences: Vec<Vec<u32>> = all_sequences(&["0".into(), "1".into(), "2".into(), "3".into()], 2)
        .into_iter()
        .map(|s| s.iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    let mut checkpoints = 0;
    let mut worst = 0.0f64;
    let mut failure = None;
    distill_into(&mut gen, &examples, |_, g, _| {
        checkpoints += 1;
        for ex in &examples {
            let log_p = |seq: &[u32]| -> f64 {
                let mut lp = 0.0;
                let mut prefix = Vec::new();
                for &r in seq {
                    lp += g.step_log_probs(&ex.question, &prefix).unwrap()[r as usize];
                    prefix.push(RelationId(r));
                }
                lp + g.step_log_probs(&ex.question, &prefix).unwrap()[g.end_token()]
            };
            let target: Vec<Vec<u32>> = ex.paths.iter().map(|z| z.relations().iter().map(|r| r.0).collect()).collect();
            let q = 1.0 / target.len() as f64;
            let kl: f64 = sequences
                .iter()
                .filter(|s| target.contains(s))
                .map(|s| q * (q.ln() - log_p(s)))
                .sum();
            let nll = g.nll(ex).unwrap();
            let gap = (kl - (nll - (target.len() as f64).ln())).abs();
            let direct = (g.kl_to_target(ex).unwrap() - kl).abs();
            worst = worst.max(gap).max(direct);
            if gap > 1e-9 && failure.is_none() {
                failure = Some(format!("example {} gap {gap:.2e}", ex.id));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(f) = failure {
        return Err(f);
    }
    ensure!(checkpoints == 10, "{checkpoints} checkpoints");
    ensure!(worst <= 1e-9, "max gap {worst:.2e}");
    Ok(format!("10 checkpoints x 3 questions, max |KL - (NLL - log|Z*|)| = {worst:.1e}"))
}

fn toy_config(dir: &Path, overrides: &[String]) -> Result<PipelineConfig, String> {
    let path = write_toy_dataset(dir).map_err(|e| e.to_string())?;
    PipelineConfig::load(&path, overrides).map_err(|e| e.to_string())
}

fn beam_optimality() -> Outcome {
    let mut compared = 0;
    for seed in 0..6u64 {
        let v = 2 + (seed as usize % 5);
        let l = 1 + (seed as usize % 3);
        let vocab: Vec<String> = (0..v).map(|i| format!("r{i}")).collect();
        let config = GeneratorConfig {
            max_length: l,
            hidden: 8,
            relation_dim: 4,
            seed,
            ..Default::default()
        };
        let mut gen = Generator::new(config, 5, vocab.clone()).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        randomize(gen.params_mut(), &mut rng, 1.5);
        let q = Embedding::new((0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut all: Vec<(Vec<u32>, f64)> = all_sequences(&vocab, l)
            .into_iter()
            .map(|s| {
                let ids: Vec<u32> = s.iter().map(|x| x[1..].parse().unwrap()).collect();
                let path = RelationPath::new(ids.iter().map(|&i| RelationId(i)).collect());
                (ids, gen.path_log_likelihood(&q, &path).unwrap())
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1));
        for k in [1usize, 3, 5] {
            gen.set_beam_size(k);
            let beams = gen.beam_search(&q).map_err(|e| e.to_string())?;
            let want: Vec<&Vec<u32>> = all.iter().take(k).map(|(s, _)| s).collect();
            let got: Vec<Vec<u32>> = beams.iter().map(|(z, _)| z.relations().iter().map(|r| r.0).collect()).collect();
            ensure!(got.iter().collect::<Vec<_>>() == want, "V={v} L={l} K={k}: beam {got:?} vs exhaustive {want:?}");
            for ((_, a), (_, b)) in beams.iter().zip(&all) {
                ensure!((a - b).abs() < 1e-9, "score mismatch {a} vs {b}");
            }
            compared += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = toy_config(dir.path(), &[])?;
    let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
    for stage in [
        Stage::Ingest,
        Stage::Enumerate,
        Stage::BuildBags,
        Stage::TrainEstimator,
        Stage::Score,
        Stage::SelectSupervision,
        Stage::TrainGenerator,
    ] {
        pipeline.run(stage).map_err(|e| e.to_string())?;
    }
    let store = pipeline.load_store().map_err(|e| e.to_string())?;
    let mut gen = pipeline.load_generator().map_err(|e| e.to_string())?;
    let provider = HashingEmbedder::new(64).map_err(|e| e.to_string())?;
    let records = pipeline.test_records().map_err(|e| e.to_string())?;
    let mut recalls = Vec::new();
    for k in [1usize, 3, 5] {
        gen.set_beam_size(k);
        let mut total = 0.0;
        for r in &records {
            let s = r.resolve(&store).map_err(|e| e.to_string())?;
            let q = provider.embed(&s.question).map_err(|e| e.to_string())?;
            let paths: Vec<RelationPath> = gen.beam_search(&q).map_err(|e| e.to_string())?.into_iter().map(|(z, _)| z).collect();
            let evidence = ground_paths(&store, &s.question_entities, &paths).map_err(|e| e.to_string())?;
            let ends: Vec<String> = evidence
                .iter()
                .flat_map(|ev| ev.ends.iter().map(|&e| store.entity_label(e).unwrap().to_owned()))
                .collect();
            total += answer_recall(&ends, &r.answers).map_err(|e| e.to_string())?;
        }
        recalls.push(total / records.len() as f64);
    }
    ensure!(recalls.windows(2).all(|w| w[1] >= w[0]), "answer recall not monotone in K: {recalls:?}");
    Ok(format!(
        "{compared} exhaustive comparisons; toy answer recall at K=1,3,5: {:.3}, {:.3}, {:.3}",
        recalls[0], recalls[1], recalls[2]
    ))
}

fn metric_suite() -> Outcome {
    let f = f1_score(&["a", "b"], &["b", "c"]).map_err(|e| e.to_string())?;
    ensure!(f == 0.5, "F1 = {f}");
    let cases: [(&[&str], &[&str], bool, bool); 5] = [
        (&["a"], &["a"], true, true),
        (&["x", "a"], &["a"], true, false),
        (&["a", "x"], &["a"], true, true),
        (&["x"], &["a"], false, false),
        (&[], &["a"], false, false),
    ];
    for (p, g, h, h1) in cases {
        ensure!(hit(p, g).unwrap() == h, "Hit({p:?}, {g:?})");
        ensure!(hits_at_1(p, g).unwrap() == h1, "Hits@1({p:?}, {g:?})");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool = ["a", "b", "c", "d", "e"];
    let pick = |rng: &mut ChaCha8Rng| -> Vec<String> {
        pool.iter().filter(|_| rng.random_bool(0.4)).map(|s| s.to_string()).collect()
    };
    let mut misses = 0;
    for i in 0..500 {
        let mut gold = pick(&mut rng);
        if gold.is_empty() {
            gold.push("a".into());
        }
        let r = QuestionResult {
            id: format!("m{i}"),
            predicted: pick(&mut rng),
            gold,
            grounded_ends: pick(&mut rng),
            ..Default::default()
        };
        let is_hit = hit(&r.predicted, &r.gold).unwrap();
        let class = classify_failure(&r).unwrap();
        ensure!(is_hit == (class == FailureClass::None), "hit/none mismatch on {r:?}");
        if !is_hit {
            misses += 1;
            let covered = r.grounded_ends.iter().any(|e| r.gold.contains(e));
            let expected = if covered { FailureClass::Reasoning } else { FailureClass::PathGeneration };
            ensure!(class == expected, "misclassified {r:?}");
        }
    }

    let store = toy_store();
    let mut reasoning_errors = 0;
    for r in toy_questions() {
        let s = r.resolve(&store).map_err(|e| e.to_string())?;
        let cands = enumerate_candidate_paths(&store, &s.question_entities, 2).map_err(|e| e.to_string())?;
        for z in cands.iter().take(6) {
            let ev = EvidenceText::resolve_all(&store, &ground_paths(&store, &s.question_entities, std::slice::from_ref(z)).unwrap())
                .map_err(|e| e.to_string())?;
            let resp = mock_union_reasoner(&r.question, &ev);
            let res = QuestionResult {
                id: r.id.clone(),
                predicted: resp.answers,
                gold: r.answers.clone(),
                grounded_ends: ev.iter().flat_map(|e| e.end_entities.clone()).collect(),
                ..Default::default()
            };
            reasoning_errors += (classify_failure(&res).unwrap() == FailureClass::Reasoning) as usize;
        }
    }
    ensure!(reasoning_errors == 0, "union mock produced {reasoning_errors} reasoning errors");
    Ok(format!("F1 = 0.5, truth tables, {misses} misses partitioned, union mock reasoning errors 0"))
}

fn read_artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        // wall-clock latencies differ run to run
        if name.starts_with("transcript") || name.starts_with("report") {
            continue;
        }
        out.insert(name, std::fs::read(&p).unwrap());
    }
    out
}

fn toy_pipeline() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = toy_config(dir.path(), &[])?;
    let out_dir = config.output_dir.clone();
    let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
    pipeline.run(Stage::Pipeline).map_err(|e| e.to_string())?;
    let first = read_artifacts(&out_dir);
    let report1 = std::fs::read_to_string(pipeline.path(files::REPORT_JSON)).map_err(|e| e.to_string())?;
    pipeline.run(Stage::Pipeline).map_err(|e| e.to_string())?;
    let second = read_artifacts(&out_dir);
    let report: serde_json::Value = serde_json::from_str(&report1).map_err(|e| e.to_string())?;
    let hit = report["metrics"]["hit"].as_f64().unwrap_or(-1.0);
    let f1 = report["metrics"]["f1"].as_f64().unwrap_or(-1.0);
    let n = report["metrics"]["n"].as_u64().unwrap_or(0);
    let secs = within(start, Duration::from_secs(120), "two toy pipeline runs")?;
    let detail = format!("n={n} Hit={hit:.3} F1={f1:.3}, two runs {secs:.1}s");
    ensure!(first.len() >= 12, "only {} artifacts", first.len());
    ensure!(first == second, "artifacts differ between runs ({detail})");
    ensure!(hit == 1.0 && f1 >= 0.9, "{detail}");
    Ok(format!("{detail}, {} artifacts byte-identical", first.len()))
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn prompt_fidelity() -> Outcome {
    let store = toy_store();
    let pinon = common::entity(&store, "Dominique Pinon");
    let paths: Vec<RelationPath> = [vec!["acted_in"], vec!["acted_in", "release_year"]]
        .iter()
        .map(|l| RelationPath::from_labels(&store, l).unwrap())
        .collect();
    let ev = EvidenceText::resolve_all(&store, &ground_paths(&store, &[pinon], &paths).unwrap()).map_err(|e| e.to_string())?;
    let text = verbalize_evidence("Which movies did Dominique Pinon act in?", &ev);
    ensure!(text == golden("reasoning_prompt.txt"), "reasoning prompt differs:\n{text}");

    let sports = sports_store();
    let record = &sports_questions()[0];
    let s = record.resolve(&sports).map_err(|e| e.to_string())?;
    let z = RelationPath::from_labels(&sports, &["parent", "play_for"]).map_err(|e| e.to_string())?;
    let ev = EvidenceText::resolve_all(&sports, &ground_paths(&sports, &s.question_entities, std::slice::from_ref(&z)).unwrap())
        .map_err(|e| e.to_string())?;
    ensure!(
        verbalize_evidence(&record.question, &ev) == golden("reasoning_prompt_sports.txt"),
        "sports reasoning prompt differs"
    );
    let sup = PseudoSupervision {
        id: s.id.clone(),
        paths: vec![z],
        scores: vec![1.0],
    };
    let records = emit_finetune_dataset(&[(s, sup)], &sports).map_err(|e| e.to_string())?;
    let emitted: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    ensure!(emitted == golden("finetune_sports.jsonl"), "finetune record differs:\n{emitted}");
    Ok("reasoning prompts and finetune record match golden files byte for byte".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("reachability oracle equivalence", reachability_oracles),
        ("gradient checks", gradient_checks),
        ("attention-MIL algebra", attention_algebra),
        ("planted-path supervision recovery", planted_supervision_recovery),
        ("negative-sampler arithmetic", sampler_arithmetic),
        ("KL identity", kl_identity),
        ("beam-search optimality and recall trend", beam_optimality),
        ("metric unit suite", metric_suite),
        ("end-to-end toy pipeline", toy_pipeline),
        ("prompt fidelity", prompt_fidelity),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
