//! Chat backends: live HTTP (chat-completions wire format) and a
//! scripted mock for deterministic tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::ChatRequest;
use crate::error::GatewayError;

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

/// One scripted stimulus/response rule. All set conditions must match.
#[derive(Debug, Clone, Default)]
pub struct ScriptRule {
    pub model_id: Option<String>,
    pub system_contains: Option<String>,
    pub user_contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn matches(&self, request: &ChatRequest) -> bool {
        if let Some(m) = &self.model_id {
            if &request.model_id != m {
                return false;
            }
        }
        if let Some(s) = &self.system_contains {
            if !request.role_system.contains(s.as_str()) {
                return false;
            }
        }
        if let Some(u) = &self.user_contains {
            if !request.role_user.contains(u.as_str()) {
                return false;
            }
        }
        true
    }
}

/// Deterministic mock backend answering from an ordered rule list
/// (first match wins). Unmatched requests are a backend failure so test
/// fixtures fail loudly instead of silently degrading.
pub struct ScriptedChatBackend {
    id: String,
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
}

impl ScriptedChatBackend {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedChatBackend {
            id: id.into(),
            rules: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Shorthand for a rule keyed only on user-message content.
    pub fn respond_to(self, user_contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rule(ScriptRule {
            user_contains: Some(user_contains.into()),
            response: response.into(),
            ..ScriptRule::default()
        })
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.response.clone())
            .ok_or_else(|| GatewayError::BackendUnavailable {
                backend_id: self.id.clone(),
                reason: format!(
                    "no scripted response for model={} user={:.80}",
                    request.model_id, request.role_user
                ),
            })
    }
}

/// Live backend speaking the JSON chat-completions wire format:
/// system+user messages, temperature, and max_tokens.
pub struct HttpChatBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatCompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpChatBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable {
                backend_id: endpoint.clone(),
                reason: e.to_string(),
            })?;
        Ok(HttpChatBackend {
            id: endpoint.clone(),
            endpoint,
            api_key,
            client,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut messages = Vec::new();
        if !request.role_system.is_empty() {
            messages.push(json!({"role": "system", "content": request.role_system}));
        }
        messages.push(json!({"role": "user", "content": request.role_user}));
        let body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let fail = |reason: String| GatewayError::BackendUnavailable {
            backend_id: self.id.clone(),
            reason,
        };
        let response = http.send().map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("http status {}", response.status())));
        }
        let parsed: ChatCompletionsResponse =
            response.json().map_err(|e| fail(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| fail("response had no choices".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let backend = ScriptedChatBackend::new("m")
            .rule(ScriptRule {
                system_contains: Some("expert".into()),
                user_contains: Some("ping".into()),
                response: "expert pong".into(),
                ..ScriptRule::default()
            })
            .respond_to("ping", "plain pong");
        let req = ChatRequest::new("x", "an expert system", "ping");
        assert_eq!(backend.complete(&req).unwrap(), "expert pong");
        let req = ChatRequest::new("x", "other", "ping");
        assert_eq!(backend.complete(&req).unwrap(), "plain pong");
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn unmatched_request_fails() {
        let backend = ScriptedChatBackend::new("m").respond_to("ping", "pong");
        let req = ChatRequest::new("x", "", "unknown");
        assert!(backend.complete(&req).is_err());
    }

    #[test]
    fn model_id_condition() {
        let backend = ScriptedChatBackend::new("m").rule(ScriptRule {
            model_id: Some("voter-2".into()),
            response: "yes".into(),
            ..ScriptRule::default()
        });
        assert!(backend.complete(&ChatRequest::new("voter-1", "", "x")).is_err());
        assert_eq!(
            backend.complete(&ChatRequest::new("voter-2", "", "x")).unwrap(),
            "yes"
        );
    }
}
