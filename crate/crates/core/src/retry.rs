//! Chat-then-parse with a single format-reminder retry.
//!
//! Structured-output parsing fails occasionally even at temperature 0;
//! one retry with an explicit reminder appended to the user message
//! recovers most cases. The appended suffix changes the request digest,
//! so retries never collide with the original cache entry.

use std::fmt::Write as _;

use crate::error::{GatewayError, ParseError};
use crate::gateway::{GatewayScope, ModelRouter, Role};
use crate::prompts::RenderedPrompt;

pub const FORMAT_REMINDER: &str = "Answer strictly in the specified format.";

/// Result of a chat+parse attempt after the retry budget is spent.
#[derive(Debug)]
pub enum ChatParseOutcome<T> {
    Parsed(T),
    /// Both attempts produced unparseable content; the last response is
    /// kept for the trace.
    Failed { error: ParseError, content: String },
}

/// Sends `prompt`, parses the response, and on a parse failure retries
/// once with [`FORMAT_REMINDER`] appended. Backend failures propagate.
pub fn chat_parsed<T>(
    scope: &GatewayScope<'_>,
    role: Role,
    router: &ModelRouter,
    prompt: &RenderedPrompt,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<ChatParseOutcome<T>, GatewayError> {
    let request = router.request(role, &prompt.system, &prompt.user);
    let response = scope.chat(role, &request)?;
    match parse(&response.content) {
        Ok(value) => Ok(ChatParseOutcome::Parsed(value)),
        Err(first_error) => {
            log::debug!("{role:?} parse failed ({first_error}); retrying with format reminder");
            let mut reminded = prompt.user.clone();
            let _ = write!(reminded, "\n{FORMAT_REMINDER}");
            let request = router.request(role, &prompt.system, &reminded);
            let response = scope.chat(role, &request)?;
            match parse(&response.content) {
                Ok(value) => Ok(ChatParseOutcome::Parsed(value)),
                Err(error) => Ok(ChatParseOutcome::Failed {
                    error,
                    content: response.content,
                }),
            }
        }
    }
}
