//! Sliding-window chunking with sentence-boundary snapping.
//!
//! A token is one Han code point or one whitespace-delimited word
//! otherwise, which keeps a 300-token window at roughly 300 Chinese
//! characters or 1200 English characters. Window ends prefer to land on
//! sentence-ending punctuation found within the final 15% of the window.

use super::KnowledgeChunk;
use crate::gateway::is_han;

pub const DEFAULT_CHUNK_SIZE: usize = 300;
pub const DEFAULT_OVERLAP: usize = 30;

/// Sentence-ending punctuation for both English and Chinese corpora.
pub const SENTENCE_ENDINGS: [char; 7] = ['.', '!', '?', '。', '！', '？', '…'];

/// Fraction of the window scanned backwards for a sentence boundary.
const BOUNDARY_SEARCH_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Splits text into tokens: each Han code point stands alone, anything
/// else groups into whitespace-delimited words.
pub fn tokenize(text: &str) -> Vec<TokenSpan> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = word_start.take() {
                tokens.push(TokenSpan {
                    byte_start: start,
                    byte_end: i,
                });
            }
        } else if is_han(c) {
            if let Some(start) = word_start.take() {
                tokens.push(TokenSpan {
                    byte_start: start,
                    byte_end: i,
                });
            }
            tokens.push(TokenSpan {
                byte_start: i,
                byte_end: i + c.len_utf8(),
            });
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(start) = word_start {
        tokens.push(TokenSpan {
            byte_start: start,
            byte_end: text.len(),
        });
    }
    tokens
}

/// Token count under the chunker's token definition.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

fn ends_sentence(text: &str, token: TokenSpan) -> bool {
    text[token.byte_start..token.byte_end]
        .chars()
        .next_back()
        .is_some_and(|c| SENTENCE_ENDINGS.contains(&c))
}

/// Sliding-window chunking with stride `chunk_size - overlap`.
///
/// Every source token lands in at least one chunk; each chunk holds at
/// most `chunk_size` tokens; on punctuation-free input consecutive
/// chunks share exactly `overlap` tokens. Non-final window ends are
/// pulled back to the nearest sentence-ending token within the final
/// 15% of the window when one exists.
pub fn chunk_text(text: &str, chunk_size: usize, overlap: usize) -> Vec<KnowledgeChunk> {
    assert!(chunk_size > overlap, "chunk_size must exceed overlap");
    let tokens = tokenize(text);
    let total = tokens.len();
    if total == 0 {
        return Vec::new();
    }

    let boundary_window = (chunk_size as f64 * BOUNDARY_SEARCH_FRACTION) as usize;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let hard_end = (start + chunk_size).min(total);
        let mut end = hard_end;
        if hard_end < total && boundary_window > 0 {
            let search_floor = hard_end.saturating_sub(boundary_window).max(start + 1);
            for p in (search_floor..hard_end).rev() {
                if ends_sentence(text, tokens[p]) {
                    end = p + 1;
                    break;
                }
            }
        }

        let byte_start = tokens[start].byte_start;
        let byte_end = tokens[end - 1].byte_end;
        chunks.push(KnowledgeChunk {
            text: text[byte_start..byte_end].to_string(),
            token_span: (start, end),
            source_url: None,
            embedding: None,
        });

        if end == total {
            break;
        }
        start = if end > overlap {
            (end - overlap).max(start + 1)
        } else {
            end
        };
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn empty_text_yields_no_chunks() {
        assert!(chunk_text("", 300, 30).is_empty());
        assert!(chunk_text("   \n\t ", 300, 30).is_empty());
    }

    #[test]
    fn short_text_is_a_single_chunk() {
        let text = words(100);
        let chunks = chunk_text(&text, 300, 30);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].token_span, (0, 100));
    }

    #[test]
    fn punctuation_free_text_strides_by_270() {
        let text = words(650);
        let chunks = chunk_text(&text, 300, 30);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[0].token_span, (0, 300));
        assert_eq!(chunks[1].token_span, (270, 570));
        assert_eq!(chunks[2].token_span, (540, 650));
        assert_eq!(chunks[2].token_span.1 - chunks[2].token_span.0, 110);
    }

    #[test]
    fn window_end_snaps_back_to_sentence_boundary() {
        // Sentence ends at token index 279 (within the last 45 tokens of
        // the first 300-token window), so the window ends there.
        let mut toks: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        toks[279] = "w279.".to_string();
        let text = toks.join(" ");
        let chunks = chunk_text(&text, 300, 30);
        assert_eq!(chunks[0].token_span, (0, 280));
        assert!(chunks[0].text.ends_with("w279."));
        assert_eq!(chunks[1].token_span.0, 250);
    }

    #[test]
    fn boundary_outside_search_window_is_ignored() {
        // Token 100 ends a sentence but sits outside the final 15% of
        // the window, so the chunk still ends at 300.
        let mut toks: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        toks[100] = "w100!".to_string();
        let text = toks.join(" ");
        let chunks = chunk_text(&text, 300, 30);
        assert_eq!(chunks[0].token_span, (0, 300));
    }

    #[test]
    fn han_characters_are_single_tokens() {
        let text = "Manjianghong 满江红 sues";
        let tokens = tokenize(text);
        assert_eq!(tokens.len(), 5);
        assert_eq!(token_count("满江红"), 3);
        assert_eq!(token_count("满江红sues满"), 5);
    }

    #[test]
    fn chinese_sentence_punct_counts_as_boundary() {
        // 400 Han chars, a 。 after position 280 (inside the final 15%).
        let mut s = String::new();
        for i in 0..400 {
            s.push('德');
            if i == 280 {
                s.push('。');
            }
        }
        let chunks = chunk_text(&s, 300, 30);
        // The 。 itself is a token; chunk ends right after it.
        assert!(chunks[0].text.ends_with('。'));
    }

    #[test]
    fn full_coverage_and_exact_overlap_on_plain_text() {
        for n in [1usize, 5, 299, 300, 301, 500, 899, 1200] {
            let text = words(n);
            let chunks = chunk_text(&text, 300, 30);
            let mut covered = vec![false; n];
            for c in &chunks {
                assert!(c.token_span.1 - c.token_span.0 <= 300);
                for t in c.token_span.0..c.token_span.1 {
                    covered[t] = true;
                }
            }
            assert!(covered.iter().all(|&b| b), "n={n}");
            for pair in chunks.windows(2) {
                assert_eq!(pair[0].token_span.1 - pair[1].token_span.0, 30, "n={n}");
            }
        }
    }
}
