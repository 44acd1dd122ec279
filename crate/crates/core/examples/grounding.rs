//! Grounds a two-hop relation path over the bundled sports chain.

use pathmil::fixtures::sports_store;
use pathmil::paths::{ground_paths, reachable_entities, RelationPath};
use pathmil::prompt::EvidenceText;

fn main() -> pathmil::Result<()> {
    let store = sports_store();
    let lebron = store.entity("LeBron James").expect("bundled entity");
    let z = RelationPath::from_labels(&store, &["parent", "play_for"])?;
    for e in reachable_entities(&store, lebron, &z)? {
        println!("reached {}", store.entity_label(e)?);
    }
    let evidence = ground_paths(&store, &[lebron], &[z])?;
    for ev in EvidenceText::resolve_all(&store, &evidence)? {
        println!("{} -[{}]-> {}", ev.topic_entity, ev.relations.join(" -> "), ev.end_entities.join(", "));
    }
    Ok(())
}
