//! Answer generation from grounded evidence: a chat-completion client, the
//! LLM-backed reasoner, and an offline reasoner that returns the union of
//! evidence end entities.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kg::TripleStore;
use crate::prompt::{
    parse_generated_path, path_generation_input, reasoning_input, verbalize_evidence, EvidenceText,
    PathParse, PATH_GENERATION_INSTRUCTION, REASONING_INSTRUCTION,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatReply {
    pub content: String,
    pub usage: Usage,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<ChatReply>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            concurrency: 4,
            temperature: 0.0,
        }
    }
}

/// Chat-completion client over HTTP with JSON bodies.
pub struct HttpChatClient {
    config: EndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: EndpointConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            config,
            api_key,
            agent,
        }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<ChatReply, (bool, String)> {
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((false, format!("HTTP {status}: {text}")));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("malformed reply: {e}")))?;
        parse_chat_reply(&value).map_err(|e| (false, e))
    }
}

/// Extracts content and token usage from a chat-completion response body.
pub fn parse_chat_reply(value: &Value) -> std::result::Result<ChatReply, String> {
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("reply has no choices[0].message.content")?
        .to_owned();
    let input = value.pointer("/usage/prompt_tokens").and_then(Value::as_u64);
    let output = value.pointer("/usage/completion_tokens").and_then(Value::as_u64);
    Ok(ChatReply {
        usage: Usage {
            calls: 1,
            input_tokens: input.unwrap_or(0),
            output_tokens: output.unwrap_or_else(|| whitespace_tokens(&content)),
        },
        content,
    })
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<ChatReply> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(mut reply) => {
                    if reply.usage.input_tokens == 0 {
                        reply.usage.input_tokens = whitespace_tokens(system) + whitespace_tokens(user);
                    }
                    return Ok(reply);
                }
                Err((true, msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
                Err((false, msg)) => return Err(Error::Endpoint(msg)),
            }
        }
        Err(Error::Endpoint(format!(
            "gave up after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonerResponse {
    pub answers: Vec<String>,
    pub raw: String,
    pub usage: Usage,
}

/// Nonempty trimmed lines with list markers (`1.`, `2)`, `-`, `*`) removed,
/// first occurrence kept.
pub fn parse_answers(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let a = strip_marker(line.trim()).trim();
        if !a.is_empty() && !out.iter().any(|o| o == a) {
            out.push(a.to_owned());
        }
    }
    out
}

fn strip_marker(line: &str) -> &str {
    for m in ["- ", "* ", "\u{2022} "] {
        if let Some(rest) = line.strip_prefix(m) {
            return rest;
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r;
        }
    }
    line
}

pub trait Reasoner: Send + Sync {
    fn reason(&self, question: &str, evidence: &[EvidenceText]) -> Result<ReasonerResponse>;
}

pub struct LlmReasoner<C> {
    client: C,
}

impl<C: ChatClient> LlmReasoner<C> {
    pub fn new(client: C) -> Self {
        LlmReasoner { client }
    }
}

impl<C: ChatClient> Reasoner for LlmReasoner<C> {
    fn reason(&self, question: &str, evidence: &[EvidenceText]) -> Result<ReasonerResponse> {
        if evidence.is_empty() {
            log::info!("no evidence for question {question:?}; asking from the question alone");
        }
        let reply = self
            .client
            .complete(REASONING_INSTRUCTION, &reasoning_input(question, evidence))?;
        Ok(ReasonerResponse {
            answers: parse_answers(&reply.content),
            raw: reply.content,
            usage: reply.usage,
        })
    }
}

/// Offline stand-in: answers every end entity of the evidence, in order of
/// first appearance, without any model call.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnionReasoner;

pub fn mock_union_reasoner(question: &str, evidence: &[EvidenceText]) -> ReasonerResponse {
    let mut answers: Vec<String> = Vec::new();
    for e in evidence {
        for end in &e.end_entities {
            if !answers.contains(end) {
                answers.push(end.clone());
            }
        }
    }
    let raw = answers.join("\n");
    ReasonerResponse {
        usage: Usage {
            calls: 0,
            input_tokens: whitespace_tokens(&verbalize_evidence(question, evidence)),
            output_tokens: whitespace_tokens(&raw),
        },
        answers,
        raw,
    }
}

impl Reasoner for UnionReasoner {
    fn reason(&self, question: &str, evidence: &[EvidenceText]) -> Result<ReasonerResponse> {
        Ok(mock_union_reasoner(question, evidence))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasonerRequest {
    pub id: String,
    pub question: String,
    pub evidence: Vec<EvidenceText>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedResponse {
    pub id: String,
    pub response: ReasonerResponse,
    pub seconds: f64,
}

/// Answers every request with at most `concurrency` in flight. Results come
/// back in request order regardless of completion order.
pub fn reason_all(
    reasoner: &dyn Reasoner,
    requests: &[ReasonerRequest],
    concurrency: usize,
) -> Vec<Result<TimedResponse>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TimedResponse>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let workers = concurrency.clamp(1, requests.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let start = Instant::now();
                let out = reasoner.reason(&req.question, &req.evidence).map(|response| TimedResponse {
                    id: req.id.clone(),
                    response,
                    seconds: start.elapsed().as_secs_f64(),
                });
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every request answered"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmPathGeneration {
    pub parse: PathParse,
    pub raw: String,
    pub usage: Usage,
}

/// Asks a chat model for a relation path using the path-generation prompt.
pub fn generate_path_with_llm(
    client: &dyn ChatClient,
    question: &str,
    topic_entity: &str,
    store: &TripleStore,
) -> Result<LlmPathGeneration> {
    let reply = client.complete(
        PATH_GENERATION_INSTRUCTION,
        &path_generation_input(question, topic_entity),
    )?;
    Ok(LlmPathGeneration {
        parse: parse_generated_path(&reply.content, store),
        raw: reply.content,
        usage: reply.usage,
    })
}
