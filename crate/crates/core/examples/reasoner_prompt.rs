//! Verbalizes grounded evidence into the reasoning prompt, answers it with
//! the offline union reasoner, and shows a path-generation training record.

use pathmil::fixtures::sports_store;
use pathmil::paths::{ground_paths, RelationPath};
use pathmil::prompt::{verbalize_evidence, EvidenceText, FinetuneRecord};
use pathmil::reasoner::mock_union_reasoner;

fn main() -> pathmil::Result<()> {
    let store = sports_store();
    let question = "Which team does the son of LeBron James play for?";
    let lebron = store.entity("LeBron James").expect("bundled entity");
    let z = RelationPath::from_labels(&store, &["parent", "play_for"])?;
    let evidence = EvidenceText::resolve_all(&store, &ground_paths(&store, &[lebron], &[z])?)?;
    println!("{}\n", verbalize_evidence(question, &evidence));
    let response = mock_union_reasoner(question, &evidence);
    println!("answers: {:?} (input tokens {})\n", response.answers, response.usage.input_tokens);
    let record = FinetuneRecord::new(question, "LeBron James", &["parent", "play_for"]);
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    Ok(())
}
