//! Page retrieval for a target: a live search API client and a fixture
//! directory provider for offline runs.
//!
//! Live search results drift over time, so the fixture provider
//! (`fixtures/search/<target-slug>/page<N>.txt`) is the canonical path
//! for reproducible runs.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde_json::Value;

use super::slugify;
use crate::error::KnowledgeError;

pub const DEFAULT_SEARCH_TIMEOUT: Duration = Duration::from_secs(10);

/// One retrieved page, reduced to visible text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageText {
    pub text: String,
    pub url: Option<String>,
}

/// Source of candidate pages for a target.
pub trait SearchProvider: Send + Sync {
    /// Returns up to `top_k` page texts, most relevant first.
    fn retrieve(&self, target: &str, top_k: usize) -> Result<Vec<PageText>, KnowledgeError>;
}

/// Reads stored pages from `<root>/<target-slug>/page<N>.txt` in
/// numeric order.
pub struct FixtureSearchProvider {
    root: PathBuf,
}

impl FixtureSearchProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureSearchProvider { root: root.into() }
    }
}

impl SearchProvider for FixtureSearchProvider {
    fn retrieve(&self, target: &str, top_k: usize) -> Result<Vec<PageText>, KnowledgeError> {
        let dir = self.root.join(slugify(target));
        let mut numbered: Vec<(u32, PathBuf)> = match std::fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(Result::ok)
                .filter_map(|e| {
                    let path = e.path();
                    let name = path.file_name()?.to_str()?;
                    let n: u32 = name.strip_prefix("page")?.strip_suffix(".txt")?.parse().ok()?;
                    Some((n, path))
                })
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(source) => {
                return Err(KnowledgeError::Io {
                    path: dir.display().to_string(),
                    source,
                })
            }
        };
        numbered.sort_by_key(|(n, _)| *n);

        let mut pages = Vec::new();
        for (_, path) in numbered.into_iter().take(top_k) {
            let text = std::fs::read_to_string(&path).map_err(|source| KnowledgeError::Io {
                path: path.display().to_string(),
                source,
            })?;
            pages.push(PageText {
                text: text.trim().to_string(),
                url: Some(format!("fixture://{}", path.display())),
            });
        }
        if pages.is_empty() {
            return Err(KnowledgeError::EmptyResults(target.to_string()));
        }
        Ok(pages)
    }
}

/// Live search client. The query endpoint returns JSON holding a result
/// array (`results` or `organic_results`) of objects with a `url` or
/// `link`; each page is then fetched and stripped to its core text.
pub struct HttpSearchProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSearchProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, KnowledgeError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| KnowledgeError::SearchUnavailable(e.to_string()))?;
        Ok(HttpSearchProvider {
            endpoint,
            api_key,
            client,
        })
    }

    fn result_urls(&self, target: &str, top_k: usize) -> Result<Vec<String>, KnowledgeError> {
        let mut req = self
            .client
            .get(&self.endpoint)
            .query(&[("q", target), ("num", &top_k.to_string())]);
        if let Some(key) = &self.api_key {
            req = req.query(&[("api_key", key.as_str())]);
        }
        let response = req
            .send()
            .map_err(|e| KnowledgeError::SearchUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(KnowledgeError::SearchUnavailable(format!(
                "http status {}",
                response.status()
            )));
        }
        let value: Value = response
            .json()
            .map_err(|e| KnowledgeError::SearchUnavailable(e.to_string()))?;
        let items = value
            .get("results")
            .or_else(|| value.get("organic_results"))
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        Ok(items
            .iter()
            .filter_map(|item| {
                item.get("url")
                    .or_else(|| item.get("link"))
                    .and_then(Value::as_str)
                    .map(str::to_string)
            })
            .take(top_k)
            .collect())
    }
}

impl SearchProvider for HttpSearchProvider {
    fn retrieve(&self, target: &str, top_k: usize) -> Result<Vec<PageText>, KnowledgeError> {
        let urls = self.result_urls(target, top_k)?;
        let mut pages = Vec::new();
        for url in urls {
            match self.client.get(&url).send().and_then(|r| r.error_for_status()) {
                Ok(resp) => match resp.text() {
                    Ok(html) => {
                        let text = strip_html(&html);
                        if !text.is_empty() {
                            pages.push(PageText {
                                text,
                                url: Some(url),
                            });
                        }
                    }
                    Err(e) => log::warn!("failed to read page body {url}: {e}"),
                },
                Err(e) => log::warn!("failed to fetch page {url}: {e}"),
            }
        }
        if pages.is_empty() {
            return Err(KnowledgeError::EmptyResults(target.to_string()));
        }
        Ok(pages)
    }
}

/// Reduces an HTML document to visible text: drops script/style/nav
/// blocks and comments, strips tags, decodes common entities, collapses
/// whitespace.
pub fn strip_html(html: &str) -> String {
    static BLOCKS: OnceLock<Regex> = OnceLock::new();
    static COMMENTS: OnceLock<Regex> = OnceLock::new();
    static TAGS: OnceLock<Regex> = OnceLock::new();
    let blocks = BLOCKS.get_or_init(|| {
        Regex::new(r"(?is)<(script|style|nav|noscript|header|footer)\b.*?</\1\s*>").unwrap()
    });
    let comments = COMMENTS.get_or_init(|| Regex::new(r"(?s)<!--.*?-->").unwrap());
    let tags = TAGS.get_or_init(|| Regex::new(r"(?s)<[^>]*>").unwrap());

    let text = blocks.replace_all(html, " ");
    let text = comments.replace_all(&text, " ");
    let text = tags.replace_all(&text, " ");
    let text = text
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'");
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pages(dir: &std::path::Path, slug: &str, n: usize) {
        let d = dir.join(slug);
        std::fs::create_dir_all(&d).unwrap();
        for i in 1..=n {
            std::fs::write(d.join(format!("page{i}.txt")), format!("page {i} body")).unwrap();
        }
    }

    #[test]
    fn fixture_pages_come_back_in_stored_order() {
        let dir = tempfile::tempdir().unwrap();
        write_pages(dir.path(), "atheism", 3);
        let provider = FixtureSearchProvider::new(dir.path());
        let pages = provider.retrieve("Atheism", 3).unwrap();
        assert_eq!(pages.len(), 3);
        assert_eq!(pages[0].text, "page 1 body");
        assert_eq!(pages[2].text, "page 3 body");
    }

    #[test]
    fn fixture_pages_cap_at_top_k() {
        let dir = tempfile::tempdir().unwrap();
        write_pages(dir.path(), "atheism", 5);
        let provider = FixtureSearchProvider::new(dir.path());
        let pages = provider.retrieve("Atheism", 3).unwrap();
        assert_eq!(pages.len(), 3);
        assert_eq!(pages[2].text, "page 3 body");
    }

    #[test]
    fn empty_fixture_dir_is_empty_results() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("atheism")).unwrap();
        let provider = FixtureSearchProvider::new(dir.path());
        assert!(matches!(
            provider.retrieve("Atheism", 3),
            Err(KnowledgeError::EmptyResults(_))
        ));
        // A target with no directory at all behaves the same way.
        assert!(matches!(
            provider.retrieve("Unknown Target", 3),
            Err(KnowledgeError::EmptyResults(_))
        ));
    }

    #[test]
    fn strip_html_drops_scripts_and_tags() {
        let html = r#"<html><head><style>p{color:red}</style>
            <script>var x = "<p>";</script></head>
            <body><nav><a href="/">home</a></nav>
            <!-- comment -->
            <p>Real &amp; <b>visible</b>&nbsp;text.</p></body></html>"#;
        assert_eq!(strip_html(html), "Real & visible text.");
    }
}
