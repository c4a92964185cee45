use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    BackendConfig, BackendError, BackendKind, CognitionBackend, CognitionRequest, CognitionResponse, DetectorBackend,
    DetectorRequest, DetectorResponse, EditBackend, EditRequest, EditResponse,
};

const MAX_BACKOFF: Duration = Duration::from_secs(60);

/// Delay slept before retry `i` (0-based): `retry_backoff_ms * 2^i`, capped at 60 s.
pub fn backoff_delays(cfg: &BackendConfig) -> Vec<Duration> {
    (0..cfg.max_retries)
        .map(|i| {
            let factor = 1u64.checked_shl(i).unwrap_or(u64::MAX);
            Duration::from_millis(cfg.retry_backoff_ms.saturating_mul(factor)).min(MAX_BACKOFF)
        })
        .collect()
}

enum AttemptFailure {
    Timeout,
    Transport(String),
}

/// Blocking JSON-over-HTTP client for one backend endpoint.
pub struct HttpBackend {
    cfg: BackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, String> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| e.to_string())?;
        let token = cfg.resolved_token();
        Ok(HttpBackend { cfg, token, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn url(&self, kind: BackendKind) -> String {
        format!("{}{}", self.cfg.endpoint_url.trim_end_matches('/'), kind.path())
    }

    fn attempt<Req: Serialize>(&self, url: &str, body: &Req) -> Result<Vec<u8>, AttemptFailure> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(classify_reqwest)?;
        let status = response.status();
        if status != reqwest::StatusCode::OK {
            return Err(AttemptFailure::Transport(format!("HTTP status {status}")));
        }
        response.bytes().map(|b| b.to_vec()).map_err(classify_reqwest)
    }

    /// Posts `body`, retrying timeouts and transport failures with exponential
    /// backoff. Malformed or schema-invalid responses are not retried.
    pub fn post<Req, Resp>(
        &self,
        kind: BackendKind,
        body: &Req,
        validate: impl Fn(&Resp) -> Result<(), BackendError>,
    ) -> Result<Resp, BackendError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let url = self.url(kind);
        let delays = backoff_delays(&self.cfg);
        let max_attempts = self.cfg.max_retries + 1;
        let mut last = AttemptFailure::Transport("no attempt made".into());
        for attempt in 1..=max_attempts {
            let started = Instant::now();
            let outcome = self.attempt(&url, body);
            log::debug!(
                "{kind} attempt {attempt}/{max_attempts} to {url} finished in {} ms",
                started.elapsed().as_millis()
            );
            match outcome {
                Ok(bytes) => {
                    let parsed: Resp = serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol {
                        kind,
                        attempts: attempt,
                        message: format!("malformed body: {e}"),
                    })?;
                    validate(&parsed).map_err(|e| match e {
                        BackendError::Protocol { message, .. } => BackendError::Protocol {
                            kind,
                            attempts: attempt,
                            message,
                        },
                        other => other,
                    })?;
                    return Ok(parsed);
                }
                Err(failure) => {
                    if let AttemptFailure::Transport(msg) = &failure {
                        log::warn!("{kind} attempt {attempt} failed: {msg}");
                    } else {
                        log::warn!("{kind} attempt {attempt} timed out");
                    }
                    last = failure;
                    if let Some(delay) = delays.get(attempt as usize - 1) {
                        std::thread::sleep(*delay);
                    }
                }
            }
        }
        if self.cfg.max_retries == 0 {
            return Err(match last {
                AttemptFailure::Timeout => BackendError::Timeout { kind, attempts: 1 },
                AttemptFailure::Transport(message) => BackendError::Transport {
                    kind,
                    attempts: 1,
                    message,
                },
            });
        }
        Err(BackendError::Exhausted {
            kind,
            attempts: max_attempts,
            last: match last {
                AttemptFailure::Timeout => "timeout".into(),
                AttemptFailure::Transport(message) => message,
            },
        })
    }
}

fn classify_reqwest(e: reqwest::Error) -> AttemptFailure {
    if e.is_timeout() {
        AttemptFailure::Timeout
    } else {
        AttemptFailure::Transport(e.to_string())
    }
}

impl CognitionBackend for HttpBackend {
    fn complete(&self, request: &CognitionRequest) -> Result<CognitionResponse, BackendError> {
        self.post(BackendKind::Cognition, request, |r: &CognitionResponse| {
            r.validate(request.task)
        })
    }
}

impl DetectorBackend for HttpBackend {
    fn score(&self, request: &DetectorRequest) -> Result<DetectorResponse, BackendError> {
        self.post(BackendKind::Detector, request, DetectorResponse::validate)
    }
}

impl EditBackend for HttpBackend {
    fn apply(&self, request: &EditRequest) -> Result<EditResponse, BackendError> {
        self.post(BackendKind::Edit, request, EditResponse::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_exponential_and_non_decreasing() {
        let mut cfg = BackendConfig::new("http://x");
        cfg.max_retries = 5;
        cfg.retry_backoff_ms = 10;
        let d = backoff_delays(&cfg);
        assert_eq!(d.len(), 5);
        assert_eq!(d[0], Duration::from_millis(10));
        assert_eq!(d[4], Duration::from_millis(160));
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn backoff_caps() {
        let mut cfg = BackendConfig::new("http://x");
        cfg.max_retries = 16;
        cfg.retry_backoff_ms = 10_000;
        let d = backoff_delays(&cfg);
        assert!(d.iter().all(|x| *x <= MAX_BACKOFF));
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }
}
