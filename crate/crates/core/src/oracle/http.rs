//! Client for OpenAI-compatible chat-completion endpoints.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AnswerAttempt, AttemptSource, Oracle, OracleError, OracleRequest};

pub const API_KEY_ENV: &str = "ECORAG_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// Total attempts per request, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            attempts: 3,
            backoff: Duration::from_millis(500),
            api_key: std::env::var(API_KEY_ENV).ok(),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Moves bytes to the endpoint. `Err` means no HTTP response was received.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &[u8],
        timeout: Duration,
    ) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &[u8],
        _timeout: Duration,
    ) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp
            .into_body()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard { gate: self }
    }
}

struct InFlightGuard<'a> {
    gate: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpOracle<T = UreqTransport> {
    config: HttpConfig,
    transport: T,
    gate: InFlight,
}

impl HttpOracle<UreqTransport> {
    pub fn new(config: HttpConfig) -> Self {
        let transport = UreqTransport::new(config.timeout);
        Self::with_transport(config, transport)
    }
}

impl<T: Transport> HttpOracle<T> {
    pub fn with_transport(config: HttpConfig, transport: T) -> Self {
        let gate = InFlight {
            limit: config.max_in_flight.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        };
        Self {
            config,
            transport,
            gate,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Request body for `prompt`; the prompt string is embedded unchanged.
    pub fn request_body(&self, prompt: &str) -> Vec<u8> {
        serde_json::to_vec(&json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }))
        .expect("request body serializes")
    }
}

fn parse_content(body: &str) -> Result<String, OracleError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| OracleError::Response(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| OracleError::Response("missing choices[0].message.content".into()))
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

impl<T: Transport> Oracle for HttpOracle<T> {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        let prompt = request.render()?;
        let body = self.request_body(&prompt);
        let url = self.config.endpoint();
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();

        let _slot = self.gate.acquire();
        let started = Instant::now();
        for attempt in 1..=attempts {
            match self.transport.post_json(
                &url,
                self.config.api_key.as_deref(),
                &body,
                self.config.timeout,
            ) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return Ok(AnswerAttempt {
                        raw_text: parse_content(&resp.body)?,
                        latency: started.elapsed(),
                        source: AttemptSource::Http,
                    });
                }
                Ok(resp) if !retryable(resp.status) => {
                    return Err(OracleError::Status {
                        status: resp.status,
                        body: resp.body,
                    });
                }
                Ok(resp) => last = format!("status {}: {}", resp.status, resp.body),
                Err(e) => last = e,
            }
            log::debug!("attempt {attempt}/{attempts} to {url} failed: {last}");
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(OracleError::Transport {
            attempts,
            message: last,
        })
    }

    fn identity(&self) -> String {
        format!("http:{}@{}", self.config.model, self.config.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::TemplateId;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replays canned responses and records every request body.
    struct Recording {
        replies: Mutex<Vec<Result<HttpResponse, String>>>,
        bodies: Mutex<Vec<Vec<u8>>>,
        keys: Mutex<Vec<Option<String>>>,
        concurrent: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Recording {
        fn new(mut replies: Vec<Result<HttpResponse, String>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                bodies: Mutex::new(Vec::new()),
                keys: Mutex::new(Vec::new()),
                concurrent: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for Recording {
        fn post_json(
            &self,
            _url: &str,
            api_key: Option<&str>,
            body: &[u8],
            _timeout: Duration,
        ) -> Result<HttpResponse, String> {
            let now = self.concurrent.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            self.bodies.lock().unwrap().push(body.to_vec());
            self.keys.lock().unwrap().push(api_key.map(str::to_owned));
            let reply = self.replies.lock().unwrap().pop().unwrap_or_else(|| ok("fallback"));
            self.concurrent.fetch_sub(1, Ordering::SeqCst);
            reply
        }
    }

    fn ok(content: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                .to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: code,
            body: "err".into(),
        })
    }

    fn config() -> HttpConfig {
        HttpConfig {
            backoff: Duration::ZERO,
            api_key: Some("sk-test".into()),
            ..HttpConfig::new("http://localhost:9/", "reader")
        }
    }

    #[test]
    fn reads_first_choice_content() {
        let o = HttpOracle::with_transport(config(), Recording::new(vec![ok("Paris")]));
        let a = o.generate(&OracleRequest::closed_book("q")).unwrap();
        assert_eq!(a.raw_text, "Paris");
        assert_eq!(a.source, AttemptSource::Http);
        assert_eq!(o.config.endpoint(), "http://localhost:9/v1/chat/completions");
        assert_eq!(o.transport().keys.lock().unwrap()[0].as_deref(), Some("sk-test"));
    }

    #[test]
    fn prompt_bytes_are_sent_unchanged() {
        let o = HttpOracle::with_transport(config(), Recording::new(vec![ok("x")]));
        let req = OracleRequest {
            question: "who sang \"Blinded by the Light\"? ünïcødé\ttab".into(),
            context: Some("line one\nline \\ two {braces}}".into()),
            template: TemplateId::Qa,
        };
        // braces in the context are data, not placeholders
        let prompt = req.render().unwrap();
        o.generate(&req).unwrap();
        let sent = o.transport().bodies.lock().unwrap()[0].clone();
        let v: serde_json::Value = serde_json::from_slice(&sent).unwrap();
        assert_eq!(v["messages"][0]["content"].as_str().unwrap().as_bytes(), prompt.as_bytes());
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["model"], "reader");
        assert_eq!(v["temperature"], 0);
    }

    #[test]
    fn gives_up_after_three_server_errors() {
        let o = HttpOracle::with_transport(
            config(),
            Recording::new(vec![status(500), status(500), status(500), ok("late")]),
        );
        match o.generate(&OracleRequest::closed_book("q")) {
            Err(OracleError::Transport { attempts, message }) => {
                assert_eq!(attempts, 3);
                assert!(message.contains("500"));
            }
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(o.transport().bodies.lock().unwrap().len(), 3);
    }

    #[test]
    fn recovers_within_retry_budget() {
        let o = HttpOracle::with_transport(
            config(),
            Recording::new(vec![Err("connection reset".into()), status(503), ok("Paris")]),
        );
        assert_eq!(o.generate(&OracleRequest::closed_book("q")).unwrap().raw_text, "Paris");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let o = HttpOracle::with_transport(config(), Recording::new(vec![status(401), ok("x")]));
        assert!(matches!(
            o.generate(&OracleRequest::closed_book("q")),
            Err(OracleError::Status { status: 401, .. })
        ));
        assert_eq!(o.transport().bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body_is_reported() {
        let o = HttpOracle::with_transport(
            config(),
            Recording::new(vec![Ok(HttpResponse {
                status: 200,
                body: "{}".into(),
            })]),
        );
        assert!(matches!(
            o.generate(&OracleRequest::closed_book("q")),
            Err(OracleError::Response(_))
        ));
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let cfg = HttpConfig {
            max_in_flight: 2,
            ..config()
        };
        let o = HttpOracle::with_transport(cfg, Recording::new(Vec::new()));
        std::thread::scope(|s| {
            for i in 0..8 {
                let o = &o;
                s.spawn(move || o.generate(&OracleRequest::closed_book(format!("q{i}"))).unwrap());
            }
        });
        assert!(o.transport().peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(o.transport().bodies.lock().unwrap().len(), 8);
    }
}
