//! Lists candidate relation paths for each toy question and marks the ones
//! that reach a gold answer.

use pathmil::fixtures::{toy_questions, toy_store};
use pathmil::paths::{enumerate_candidate_paths, weakly_supervised_paths};

fn main() -> pathmil::Result<()> {
    let store = toy_store();
    for record in toy_questions().iter().take(4) {
        let q = record.resolve(&store)?;
        let candidates = enumerate_candidate_paths(&store, &q.question_entities, 2)?;
        let weak = weakly_supervised_paths(&store, &q, &candidates)?;
        println!("{} ({} candidates)", record.question, candidates.len());
        for z in &candidates {
            let mark = if weak.contains(z) { "*" } else { " " };
            println!("  {mark} {}", z.labels(&store)?.join(" -> "));
        }
    }
    Ok(())
}
