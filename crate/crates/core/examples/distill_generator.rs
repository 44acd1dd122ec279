//! Distills a relation-path generator from fixed pseudo supervision on the
//! toy graph and decodes the best paths for a question.

use pathmil::embedding::{EmbeddingProvider, HashingEmbedder};
use pathmil::fixtures::{toy_questions, toy_store};
use pathmil::generator::{distill, GeneratorConfig};
use pathmil::paths::RelationPath;
use pathmil::supervision::PseudoSupervision;

fn main() -> pathmil::Result<()> {
    let store = toy_store();
    let provider = HashingEmbedder::new(64)?;
    let targets: [&[&str]; 4] = [&["directed"], &["directed"], &["wrote"], &["wrote"]];
    let mut dataset = Vec::new();
    for (record, labels) in toy_questions().iter().zip(targets) {
        let sample = record.resolve(&store)?;
        let sup = PseudoSupervision {
            id: sample.id.clone(),
            paths: vec![RelationPath::from_labels(&store, labels)?],
            scores: vec![1.0],
        };
        dataset.push((sample, sup));
    }
    let config = GeneratorConfig {
        beam_size: 3,
        epochs: 100,
        ..Default::default()
    };
    let (generator, log) = distill(&config, &dataset, &store, &provider)?;
    println!("final mean NLL {:.4}", log.epoch_nll.last().unwrap());
    for (sample, _) in &dataset {
        let q = provider.embed(&sample.question)?;
        println!("{}", sample.question);
        for (z, lp) in generator.beam_search(&q)? {
            println!("  {:>8.4}  {}", lp, z.labels(&store)?.join(" -> "));
        }
    }
    Ok(())
}
