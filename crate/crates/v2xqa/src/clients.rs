//! Answer-producing model backends behind one interface: a remote
//! chat-completion HTTP endpoint, a ground-truth oracle over the fixture
//! scenes, and a uniform-random responder as the chance floor.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{gold_letter_for, McqaSample, SceneRecord};
use crate::protocol::PromptBundle;
use crate::taskbank::OptionLetter;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// JSON pointer into the response body for the generated text.
    #[serde(default = "default_pointer")]
    pub response_text_pointer: String,
}

fn default_path() -> String {
    "/v1/chat/completions".into()
}
fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> f64 {
    0.5
}
fn default_concurrency() -> usize {
    4
}
fn default_pointer() -> String {
    "/choices/0/message/content".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportStatus {
    Ok,
    Timeout,
    HttpError,
    ExhaustedRetries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw_text: Option<String>,
    pub latency_secs: f64,
    pub transport_status: TransportStatus,
}

impl ModelReply {
    pub fn text(&self) -> &str {
        self.raw_text.as_deref().unwrap_or("")
    }
}

/// Inline the fixture evidence tokens under the "Image evidence:" heading of
/// a rendered prompt, for endpoints that cannot take attachments.
pub fn inline_evidence(bundle: &PromptBundle, evidence: &[String]) -> String {
    let inlined_note = format!("{}\nEvidence tokens: {}", bundle.image_note, evidence.join(" "));
    bundle.user_text.replacen(&bundle.image_note, &inlined_note, 1)
}

fn resolve_token(endpoint: &ModelEndpoint) -> Result<Option<String>> {
    match &endpoint.auth_token_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| Error::Config(format!("auth token environment variable {var} not set"))),
    }
}

/// Send one prompt to a chat-completion-style endpoint, retrying transient
/// failures with exponential backoff and full jitter. Transport failures are
/// reported in the reply status, never raised past the harness.
pub fn query_remote(endpoint: &ModelEndpoint, bundle: &PromptBundle, evidence: &[String]) -> Result<ModelReply> {
    let token = resolve_token(endpoint)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(endpoint.request_timeout_secs))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let user_text = inline_evidence(bundle, evidence);
    let body = json!({
        "model": endpoint.model_name,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": user_text},
        ],
    });
    let url = format!("{}{}", endpoint.base_url.trim_end_matches('/'), endpoint.path);

    let start = Instant::now();
    let mut rng = rand::thread_rng();
    let mut last_was_timeout = false;
    for attempt in 0..=endpoint.max_retries {
        if attempt > 0 {
            let cap = endpoint.backoff_base_secs * f64::from(1u32 << (attempt - 1).min(16));
            let sleep = rng.gen::<f64>() * cap;
            std::thread::sleep(Duration::from_secs_f64(sleep));
        }
        let mut req = client.post(&url).json(&body);
        if let Some(t) = &token {
            req = req.bearer_auth(t);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let value: serde_json::Value = match resp.json() {
                        Ok(v) => v,
                        Err(_) => {
                            last_was_timeout = false;
                            continue;
                        }
                    };
                    let text = value
                        .pointer(&endpoint.response_text_pointer)
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_string();
                    return Ok(ModelReply {
                        raw_text: Some(text),
                        latency_secs: start.elapsed().as_secs_f64(),
                        transport_status: TransportStatus::Ok,
                    });
                }
                let transient = status.is_server_error() || status.as_u16() == 429;
                if !transient {
                    return Ok(ModelReply {
                        raw_text: None,
                        latency_secs: start.elapsed().as_secs_f64(),
                        transport_status: TransportStatus::HttpError,
                    });
                }
                last_was_timeout = false;
            }
            Err(e) => {
                last_was_timeout = e.is_timeout();
            }
        }
    }
    Ok(ModelReply {
        raw_text: None,
        latency_secs: start.elapsed().as_secs_f64(),
        transport_status: if last_was_timeout {
            TransportStatus::Timeout
        } else {
            TransportStatus::ExhaustedRetries
        },
    })
}

/// Fan a batch of prompts out to the endpoint with at most
/// `max_concurrency` in-flight requests. Results are keyed by sample id, so
/// aggregation is order-independent.
pub fn query_remote_batch(
    endpoint: &ModelEndpoint,
    items: &[(u64, PromptBundle, Vec<String>)],
) -> Result<BTreeMap<u64, ModelReply>> {
    if endpoint.max_concurrency == 0 {
        return Err(Error::Config("max_concurrency must be >= 1".into()));
    }
    resolve_token(endpoint)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<u64, ModelReply>> = Mutex::new(BTreeMap::new());
    let n_workers = endpoint.max_concurrency.min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let (sample_id, bundle, evidence) = &items[i];
                let reply = query_remote(endpoint, bundle, evidence).unwrap_or(ModelReply {
                    raw_text: None,
                    latency_secs: 0.0,
                    transport_status: TransportStatus::ExhaustedRetries,
                });
                results.lock().unwrap().insert(*sample_id, reply);
            });
        }
    });
    Ok(results.into_inner().unwrap())
}

/// Ground-truth reader: recomputes the presented gold slot from the scene's
/// latent truth, independently of the gold stored on the sample.
pub fn mock_oracle(sample: &McqaSample, scenes: &BTreeMap<u64, &SceneRecord>) -> Result<OptionLetter> {
    let scene = scenes
        .get(&sample.scene_id)
        .ok_or(Error::UnknownScene(sample.scene_id))?;
    let value = scene.truth.attrs[sample.task_id.ordinal()];
    let q_index = sample
        .qid
        .rsplit('Q')
        .next()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::UnknownQid(sample.qid.clone()))?
        - 1;
    let original = gold_letter_for(sample.task_id, q_index, value);
    let slot = sample
        .option_order
        .iter()
        .position(|&o| o as usize == original.index())
        .expect("option order is a permutation");
    Ok(OptionLetter::from_index(slot).unwrap())
}

/// Deterministic uniform responder over {A,B,C,D}.
pub struct RandomResponder {
    rng: ChaCha8Rng,
}

impl RandomResponder {
    pub fn new(seed: u64) -> RandomResponder {
        RandomResponder {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_letter(&mut self) -> OptionLetter {
        OptionLetter::ALL[self.rng.gen_range(0..4)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_samples, gen_fixtures, scene_map, shuffle_options, FixtureConfig};
    use crate::taskbank::load_task_bank;

    #[test]
    fn oracle_matches_gold_even_after_shuffle() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(12, 12, 21, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 21).unwrap();
        let by_id = scene_map(&scenes);
        for s in &samples {
            assert_eq!(mock_oracle(s, &by_id).unwrap(), s.gold_letter);
            let shuffled = shuffle_options(s, 5);
            assert_eq!(mock_oracle(&shuffled, &by_id).unwrap(), shuffled.gold_letter);
        }
    }

    #[test]
    fn oracle_rejects_missing_scene() {
        let bank = load_task_bank().unwrap();
        let scenes = gen_fixtures(2, 2, 3, &FixtureConfig::default()).unwrap();
        let samples = build_samples(&scenes, &bank, 3).unwrap();
        let empty = BTreeMap::new();
        assert!(matches!(mock_oracle(&samples[0], &empty), Err(Error::UnknownScene(_))));
    }

    #[test]
    fn random_responder_is_reproducible_and_roughly_uniform() {
        let mut a = RandomResponder::new(99);
        let mut b = RandomResponder::new(99);
        let seq_a: Vec<OptionLetter> = (0..100).map(|_| a.next_letter()).collect();
        let seq_b: Vec<OptionLetter> = (0..100).map(|_| b.next_letter()).collect();
        assert_eq!(seq_a, seq_b);

        let mut r = RandomResponder::new(7);
        let mut counts = [0usize; 4];
        let n = 10_608;
        for _ in 0..n {
            counts[r.next_letter().index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn inline_evidence_lands_under_heading() {
        let bundle = PromptBundle {
            system_text: "sys".into(),
            user_text: "Image evidence:\nOne image is provided: vehicle-side (ego) view.\n\nQuestion:".into(),
            image_note: "One image is provided: vehicle-side (ego) view.".into(),
            evidence_refs: vec![],
        };
        let tokens = vec!["a_vs1".to_string(), "v2".to_string()];
        let text = inline_evidence(&bundle, &tokens);
        assert!(text.contains("Image evidence:\nOne image is provided: vehicle-side (ego) view.\nEvidence tokens: a_vs1 v2"));
    }
}
