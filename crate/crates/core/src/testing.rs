//! Test support: a bundled stub chat-completions server and deterministic
//! cue-driven respondents.
//!
//! The stub speaks just enough of the chat-completions protocol to exercise
//! the remote client end to end: it records every request body verbatim,
//! can be scripted to fail with specific statuses, and by default answers
//! with the first labeled option it finds in the last user message.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::dialogue::Message;
use crate::respondent::{GenerationParams, Respondent, RespondentError, TurnCue};

/// One scripted stub response.
#[derive(Debug, Clone)]
pub enum StubReply {
    /// Respond with this HTTP status and a small JSON error body.
    Status(u16),
    /// Respond 200 with this completion content.
    Content(String),
    /// Respond 200 with a body that is not a chat completion.
    Malformed,
}

struct StubState {
    requests: Mutex<Vec<serde_json::Value>>,
    authorizations: Mutex<Vec<Option<String>>>,
    script: Mutex<VecDeque<StubReply>>,
}

/// In-process chat-completions stub.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    state: Arc<StubState>,
    port: u16,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start() -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => unreachable!("stub binds a TCP address"),
        };
        let state = Arc::new(StubState {
            requests: Mutex::new(Vec::new()),
            authorizations: Mutex::new(Vec::new()),
            script: Mutex::new(VecDeque::new()),
        });
        let loop_server = Arc::clone(&server);
        let loop_state = Arc::clone(&state);
        let handle = std::thread::spawn(move || serve(loop_server, loop_state));
        Self {
            server,
            state,
            port,
            handle: Some(handle),
        }
    }

    /// Base URL to point a remote respondent at.
    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Queue scripted replies; once drained the stub falls back to
    /// answering with the first labeled option.
    pub fn push_reply(&self, reply: StubReply) {
        self.state.script.lock().unwrap().push_back(reply);
    }

    /// Every request body received so far, in arrival order.
    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.state.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.requests.lock().unwrap().len()
    }

    /// Authorization header of each request, in arrival order.
    pub fn authorizations(&self) -> Vec<Option<String>> {
        self.state.authorizations.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve(server: Arc<tiny_http::Server>, state: Arc<StubState>) {
    while let Ok(mut request) = server.recv() {
        let auth = request
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
            .map(|h| h.value.as_str().to_string());
        state.authorizations.lock().unwrap().push(auth);
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let parsed: serde_json::Value =
            serde_json::from_str(&body).unwrap_or(serde_json::Value::Null);
        state.requests.lock().unwrap().push(parsed.clone());

        let reply = state.script.lock().unwrap().pop_front();
        let response = match reply {
            Some(StubReply::Status(code)) => {
                tiny_http::Response::from_string("{\"error\":{\"message\":\"scripted failure\"}}")
                    .with_status_code(code)
            }
            Some(StubReply::Malformed) => tiny_http::Response::from_string("{\"unexpected\":true}"),
            Some(StubReply::Content(content)) => completion_response(&content),
            None => completion_response(&first_label_reply(&parsed)),
        };
        let _ = request.respond(
            response.with_header(
                tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header"),
            ),
        );
    }
}

fn completion_response(content: &str) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let body = serde_json::json!({
        "id": "stub-completion",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    });
    tiny_http::Response::from_string(body.to_string())
}

/// Default stub behavior: prefer the abstention choice when offered,
/// otherwise answer with the first labeled option line found in the last
/// user message, e.g. "B) ..." selects B.
pub fn first_label_reply(request_body: &serde_json::Value) -> String {
    let label = request_body
        .pointer("/messages")
        .and_then(serde_json::Value::as_array)
        .and_then(|messages| {
            messages
                .iter()
                .rev()
                .find(|m| m.pointer("/role").and_then(|r| r.as_str()) == Some("user"))
        })
        .and_then(|m| m.pointer("/content").and_then(|c| c.as_str()))
        .and_then(|content| {
            let mut first = None;
            for line in content.lines() {
                let Some((head, _)) = line.split_once(") ") else {
                    continue;
                };
                let token = head.trim();
                let ok = !token.is_empty()
                    && token.len() <= 2
                    && token.chars().all(|c| c.is_ascii_alphanumeric());
                if !ok {
                    continue;
                }
                if token == "NA" {
                    return Some(token.to_string());
                }
                if first.is_none() {
                    first = Some(token.to_string());
                }
            }
            first
        })
        .unwrap_or_else(|| "A".to_string());
    format!("Final answer: {label}")
}

/// Deterministic respondent driven entirely by the engine-provided cue.
pub struct CuedRespondent<F>
where
    F: Fn(&TurnCue<'_>) -> String + Send + Sync,
{
    reply: F,
    name: String,
}

impl<F> CuedRespondent<F>
where
    F: Fn(&TurnCue<'_>) -> String + Send + Sync,
{
    pub fn new(name: impl Into<String>, reply: F) -> Self {
        Self {
            reply,
            name: name.into(),
        }
    }
}

impl<F> Respondent for CuedRespondent<F>
where
    F: Fn(&TurnCue<'_>) -> String + Send + Sync,
{
    fn complete(
        &self,
        _messages: &[Message],
        _params: &GenerationParams,
        cue: &TurnCue<'_>,
    ) -> Result<String, RespondentError> {
        Ok((self.reply)(cue))
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn label(&self, _params: &GenerationParams) -> String {
        self.name.clone()
    }
}

/// Always answers with the turn's target token.
pub fn always_target() -> CuedRespondent<impl Fn(&TurnCue<'_>) -> String + Send + Sync> {
    CuedRespondent::new("always-target", |cue: &TurnCue<'_>| {
        format!("Final answer: {}", cue.target_token)
    })
}

/// Holds the target at turn 1, then switches at every follow-up.
pub fn switch_after_turn_one() -> CuedRespondent<impl Fn(&TurnCue<'_>) -> String + Send + Sync> {
    CuedRespondent::new("switch-after-turn-one", |cue: &TurnCue<'_>| {
        let token = if cue.turn == 1 {
            cue.target_token
        } else {
            cue.alternative_token.unwrap_or(cue.target_token)
        };
        format!("Final answer: {token}")
    })
}

/// Perfect-knowledge flexibility: abstains, then switches only when the
/// introduced option is the truth.
pub fn ideal_flexibility() -> CuedRespondent<impl Fn(&TurnCue<'_>) -> String + Send + Sync> {
    CuedRespondent::new("ideal-flexibility", |cue: &TurnCue<'_>| {
        let token = if cue.turn == 1 {
            cue.target_token
        } else if cue.condition == crate::corpus::Condition::Flexibility {
            cue.alternative_token.unwrap_or(cue.target_token)
        } else {
            cue.target_token
        };
        format!("Final answer: {token}")
    })
}

/// Answers the target except for records selected by `predicate`, which get
/// an unparseable refusal. Used to inject exact parse-failure counts.
pub fn unparseable_for(
    predicate: impl Fn(&str) -> bool + Send + Sync,
) -> CuedRespondent<impl Fn(&TurnCue<'_>) -> String + Send + Sync> {
    CuedRespondent::new("unparseable-injector", move |cue: &TurnCue<'_>| {
        if predicate(cue.record_id) {
            "I cannot provide medical advice.".to_string()
        } else {
            format!("Final answer: {}", cue.target_token)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::respondent::RemoteRespondent;
    use crate::respondent::RetryPolicy;
    use std::time::Duration;

    fn cue() -> TurnCue<'static> {
        TurnCue {
            record_id: "q-1",
            condition: crate::corpus::Condition::SingleShotBinary,
            instance_seed: 0,
            turn: 1,
            kind: crate::respondent::TurnKind::Initial,
            target_token: "B",
            alternative_token: Some("D"),
        }
    }

    fn fast_remote(url: &str) -> RemoteRespondent {
        RemoteRespondent::with_settings(
            url,
            Duration::from_secs(5),
            RetryPolicy {
                max_retries: 3,
                initial_backoff: Duration::from_millis(5),
                backoff_factor: 2.0,
            },
            4,
            None,
        )
    }

    #[test]
    fn stub_round_trips_messages_verbatim() {
        let stub = StubServer::start();
        let remote = fast_remote(&stub.url());
        let messages = vec![
            Message::system("stay factual"),
            Message::user("Question: pick one\n\nOptions:\nB) Malaria\nD) Dengue"),
        ];
        let params = GenerationParams {
            model_name: "stub-model".to_string(),
            ..Default::default()
        };
        let reply = remote.complete(&messages, &params, &cue()).unwrap();
        assert_eq!(reply, "Final answer: B");

        let requests = stub.requests();
        assert_eq!(requests.len(), 1);
        let body = &requests[0];
        assert_eq!(body["model"], "stub-model");
        assert_eq!(body["temperature"], 0.7);
        let sent = body["messages"].as_array().unwrap();
        assert_eq!(sent.len(), 2);
        assert_eq!(sent[0]["role"], "system");
        assert_eq!(sent[0]["content"], "stay factual");
        assert_eq!(sent[1]["role"], "user");
        assert_eq!(
            sent[1]["content"],
            "Question: pick one\n\nOptions:\nB) Malaria\nD) Dengue"
        );
    }

    #[test]
    fn rate_limit_is_retried_then_succeeds() {
        let stub = StubServer::start();
        stub.push_reply(StubReply::Status(429));
        stub.push_reply(StubReply::Content("Final answer: D".to_string()));
        let remote = fast_remote(&stub.url());
        let reply = remote
            .complete(
                &[Message::user("Options:\nB) x\nD) y")],
                &GenerationParams::default(),
                &cue(),
            )
            .unwrap();
        assert_eq!(reply, "Final answer: D");
        assert_eq!(stub.request_count(), 2);
    }

    #[test]
    fn client_errors_do_not_retry() {
        let stub = StubServer::start();
        stub.push_reply(StubReply::Status(403));
        let remote = fast_remote(&stub.url());
        let err = remote
            .complete(
                &[Message::user("Options:\nB) x")],
                &GenerationParams::default(),
                &cue(),
            )
            .unwrap_err();
        assert!(matches!(err, RespondentError::ClientError { status: 403 }));
        assert_eq!(stub.request_count(), 1);
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let stub = StubServer::start();
        for _ in 0..4 {
            stub.push_reply(StubReply::Status(500));
        }
        let remote = fast_remote(&stub.url());
        let err = remote
            .complete(
                &[Message::user("Options:\nB) x")],
                &GenerationParams::default(),
                &cue(),
            )
            .unwrap_err();
        assert!(matches!(err, RespondentError::ServerError { status: 500 }));
        // Initial attempt plus three retries.
        assert_eq!(stub.request_count(), 4);
    }

    #[test]
    fn malformed_bodies_are_detected() {
        let stub = StubServer::start();
        stub.push_reply(StubReply::Malformed);
        let remote = fast_remote(&stub.url());
        let err = remote
            .complete(
                &[Message::user("Options:\nB) x")],
                &GenerationParams::default(),
                &cue(),
            )
            .unwrap_err();
        assert!(matches!(err, RespondentError::MalformedBody(_)));
    }

    #[test]
    fn extra_params_merge_into_the_body() {
        let stub = StubServer::start();
        let remote = fast_remote(&stub.url());
        let mut params = GenerationParams::default();
        params
            .extra
            .insert("top_p".to_string(), serde_json::json!(0.9));
        remote
            .complete(&[Message::user("Options:\nB) x")], &params, &cue())
            .unwrap();
        let body = &stub.requests()[0];
        assert_eq!(body["top_p"], 0.9);
    }

    #[test]
    fn ping_succeeds_against_the_stub() {
        let stub = StubServer::start();
        let remote = fast_remote(&stub.url());
        remote.ping(&GenerationParams::default()).unwrap();
    }

    #[test]
    fn bearer_token_is_sent_only_when_configured() {
        let stub = StubServer::start();
        let without = fast_remote(&stub.url());
        without
            .complete(
                &[Message::user("Options:\nB) x")],
                &GenerationParams::default(),
                &cue(),
            )
            .unwrap();

        let with = RemoteRespondent::with_settings(
            stub.url(),
            Duration::from_secs(5),
            RetryPolicy::default(),
            4,
            Some("secret-token".to_string()),
        );
        with.complete(
            &[Message::user("Options:\nB) x")],
            &GenerationParams::default(),
            &cue(),
        )
        .unwrap();

        let auths = stub.authorizations();
        assert_eq!(auths[0], None);
        assert_eq!(auths[1].as_deref(), Some("Bearer secret-token"));
    }
}
