//! Builds answer bags and samples classed negatives for one toy question, and
//! prints the quota split for a large weak set.

use pathmil::embedding::{EmbeddingCache, HashingEmbedder};
use pathmil::fixtures::{toy_questions, toy_store};
use pathmil::paths::enumerate_candidate_paths;
use pathmil::supervision::{construct_question_data, NegativeSamplingConfig};

fn main() -> pathmil::Result<()> {
    let store = toy_store();
    let config = NegativeSamplingConfig::default();
    let q = toy_questions()[7].resolve(&store)?;
    let candidates = enumerate_candidate_paths(&store, &q.question_entities, 2)?;
    let provider = HashingEmbedder::new(64)?;
    let mut cache = EmbeddingCache::new();
    let data = construct_question_data(&config, &store, &q, &candidates, &provider, &mut cache)?;
    println!("{}", q.question);
    for bag in &data.bags.positive {
        let members: Vec<String> = bag.members.iter().map(|z| z.labels(&store).map(|l| l.join(" -> "))).collect::<pathmil::Result<_>>()?;
        println!("  bag {}: {}", store.entity_label(bag.answer)?, members.join(" | "));
    }
    for (z, class) in data.negatives.paths.iter().zip(&data.negatives.classes) {
        println!("  negative {:?}: {}", class, z.labels(&store)?.join(" -> "));
    }
    let quotas = config.quotas(100);
    println!(
        "quotas for 100 weak paths: truncated {}, extended {}, deviated {}, other {}",
        quotas.truncated, quotas.extended, quotas.deviated, quotas.other
    );
    Ok(())
}
