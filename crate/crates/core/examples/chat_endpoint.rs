//! Asks a chat-completion endpoint to answer from grounded evidence.
//! Needs `PATHMIL_ENDPOINT` (a `/v1/chat/completions` URL) and the API key
//! variable named in the endpoint config; prints the request otherwise.

use pathmil::fixtures::sports_store;
use pathmil::paths::{ground_paths, RelationPath};
use pathmil::prompt::{reasoning_input, EvidenceText, REASONING_INSTRUCTION};
use pathmil::reasoner::{EndpointConfig, HttpChatClient, LlmReasoner, Reasoner};

fn main() -> pathmil::Result<()> {
    let store = sports_store();
    let question = "Which team does the son of LeBron James play for?";
    let lebron = store.entity("LeBron James").expect("bundled entity");
    let z = RelationPath::from_labels(&store, &["parent", "play_for"])?;
    let evidence = EvidenceText::resolve_all(&store, &ground_paths(&store, &[lebron], &[z])?)?;
    let Ok(url) = std::env::var("PATHMIL_ENDPOINT") else {
        println!("system:\n{REASONING_INSTRUCTION}\n\nuser:\n{}", reasoning_input(question, &evidence));
        return Ok(());
    };
    let client = HttpChatClient::new(EndpointConfig {
        url,
        ..Default::default()
    });
    let response = LlmReasoner::new(client).reason(question, &evidence)?;
    println!("answers {:?}, usage {:?}", response.answers, response.usage);
    Ok(())
}
