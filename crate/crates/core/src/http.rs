use std::time::Duration;

use serde_json::Value;

pub const ENV_API_KEY: &str = "TULIP_API_KEY";
pub const ENV_BASE_URL: &str = "TULIP_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone)]
pub(crate) struct HttpFailure {
    pub status: Option<u16>,
    pub message: String,
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            Some(s) => write!(f, "HTTP {s}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Base URL and key shared by the HTTP backends.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            timeout: Duration::from_secs(120),
        }
    }

    /// `TULIP_BASE_URL` (default: OpenAI) and `TULIP_API_KEY`.
    pub fn from_env() -> Self {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Self::new(base, key)
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build()
            .into()
    }

    /// POSTs JSON to `{base_url}/{path}`. Transport errors are retried
    /// once; HTTP error statuses are not.
    pub(crate) fn post_json(&self, agent: &ureq::Agent, path: &str, body: &Value) -> Result<Value, HttpFailure> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut request = agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let text = response.body_mut().read_to_string().map_err(|e| HttpFailure {
                        status: Some(status),
                        message: format!("failed to read body: {e}"),
                    })?;
                    if !(200..300).contains(&status) {
                        return Err(HttpFailure {
                            status: Some(status),
                            message: excerpt(&text),
                        });
                    }
                    return serde_json::from_str(&text).map_err(|e| HttpFailure {
                        status: Some(status),
                        message: format!("malformed JSON body ({e}): {}", excerpt(&text)),
                    });
                }
                Err(e) if attempt < 2 => {
                    tracing::warn!("transport error on {url}, retrying: {e}");
                }
                Err(e) => {
                    return Err(HttpFailure {
                        status: None,
                        message: format!("transport error: {e}"),
                    })
                }
            }
        }
    }
}

pub(crate) fn excerpt(text: &str) -> String {
    const LIMIT: usize = 300;
    if text.len() <= LIMIT {
        return text.to_string();
    }
    let mut end = LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}
