use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendManifest, EmbedRequest, EmbedResponse, EmbeddingBackend, InfillBackend, InfillCall, InfillResponse,
    RankBackend, RankRequest, RankResponse, RetryPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    /// Header carrying the auth token, e.g. `Authorization`.
    pub auth_header: Option<String>,
    /// Environment variable holding the token.
    pub auth_token_env: Option<String>,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
            auth_header: None,
            auth_token_env: None,
            max_in_flight: 8,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking JSON-over-HTTP client shared by the three endpoint wrappers.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base: String,
    retry: RetryPolicy,
    auth: Option<(String, String)>,
    in_flight: Arc<InFlight>,
}

impl HttpBackend {
    pub fn new(cfg: &HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport {
                message: e.to_string(),
                transient: false,
            })?;
        let auth = match (&cfg.auth_header, &cfg.auth_token_env) {
            (Some(header), Some(var)) => {
                let token = std::env::var(var).map_err(|_| {
                    BackendError::Unavailable(format!("auth token variable `{var}` is not set"))
                })?;
                Some((header.clone(), token))
            }
            _ => None,
        };
        Ok(Self {
            client,
            base: cfg.endpoint.trim_end_matches('/').to_string(),
            retry: cfg.retry,
            auth,
            in_flight: Arc::new(InFlight {
                limit: cfg.max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            }),
        })
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{path}", self.base);
        self.retry.run(|| {
            let _slot = self.in_flight.acquire();
            let mut req = self.client.post(&url).json(body);
            if let Some((h, v)) = &self.auth {
                req = req.header(h.as_str(), v.as_str());
            }
            let resp = req.send().map_err(|e| BackendError::Transport {
                message: e.to_string(),
                transient: e.is_timeout() || e.is_connect() || e.is_request(),
            })?;
            let status = resp.status();
            if status.as_u16() == 503 {
                return Err(BackendError::Unavailable(resp.text().unwrap_or_default()));
            }
            if !status.is_success() {
                return Err(BackendError::Status {
                    status: status.as_u16(),
                    body: resp.text().unwrap_or_default(),
                });
            }
            resp.json::<Resp>()
                .map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
        })
    }

    pub fn get_json<Resp: DeserializeOwned>(&self, path: &str) -> Result<Resp, BackendError> {
        let url = format!("{}{path}", self.base);
        self.retry.run(|| {
            let _slot = self.in_flight.acquire();
            let resp = self.client.get(&url).send().map_err(|e| BackendError::Transport {
                message: e.to_string(),
                transient: e.is_timeout() || e.is_connect(),
            })?;
            if !resp.status().is_success() {
                return Err(BackendError::Status {
                    status: resp.status().as_u16(),
                    body: resp.text().unwrap_or_default(),
                });
            }
            resp.json::<Resp>()
                .map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
        })
    }
}

impl HttpBackend {
    pub fn manifest(&self) -> Result<BackendManifest, BackendError> {
        self.get_json("/manifest")
    }
}

/// `/embed` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub http: HttpBackend,
    pub model: String,
    pub dim: Option<usize>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendError> {
        let req = EmbedRequest {
            model: self.model.clone(),
            texts: texts.to_vec(),
        };
        let resp: EmbedResponse = self.http.post_json("/embed", &req)?;
        resp.validate(texts.len(), self.dim)?;
        Ok(resp)
    }
}

/// `/infill` client; ignores the in-process span hints.
#[derive(Debug, Clone)]
pub struct HttpInfiller {
    pub http: HttpBackend,
    pub model: String,
}

impl InfillBackend for HttpInfiller {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
        let resp: InfillResponse = self.http.post_json("/infill", &call.request)?;
        resp.validate()?;
        Ok(resp)
    }
}

/// `/rank` client.
#[derive(Debug, Clone)]
pub struct HttpRanker {
    pub http: HttpBackend,
    pub model: String,
}

impl RankBackend for HttpRanker {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn rank(&self, request: &RankRequest) -> Result<RankResponse, BackendError> {
        let resp: RankResponse = self.http.post_json("/rank", request)?;
        resp.validate(request.candidates.len())?;
        Ok(resp)
    }
}
