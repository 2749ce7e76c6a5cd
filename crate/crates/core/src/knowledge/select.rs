//! Relevance ranking and greedy dedup selection of knowledge chunks.

use super::{KnowledgeChunk, RawKnowledge};
use crate::error::KnowledgeError;
use crate::gateway::EmbeddingVector;

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.85;

/// Greedy selection over explicit similarities.
///
/// Candidates are ranked by `target_sims` descending (ties broken by
/// original index); the scan keeps a candidate iff its similarity to
/// every already-kept candidate is at or below `threshold`, stopping
/// after `k` keeps. Returns kept indices in kept order.
pub fn greedy_select(
    target_sims: &[f64],
    pairwise: &dyn Fn(usize, usize) -> f64,
    k: usize,
    threshold: f64,
) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..target_sims.len()).collect();
    ranked.sort_by(|&a, &b| {
        target_sims[b]
            .partial_cmp(&target_sims[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for idx in ranked {
        if kept.len() == k {
            break;
        }
        if kept.iter().all(|&j| pairwise(idx, j) <= threshold) {
            kept.push(idx);
        }
    }
    kept
}

/// Ranks embedded chunks against the target embedding, deduplicates
/// greedily at `threshold`, keeps at most `k`, and concatenates the
/// keepers in relevance order.
pub fn select_raw_knowledge(
    target: &str,
    chunks: Vec<KnowledgeChunk>,
    target_embedding: &EmbeddingVector,
    k: usize,
    threshold: f64,
) -> Result<RawKnowledge, KnowledgeError> {
    let embeddings: Vec<&EmbeddingVector> = chunks
        .iter()
        .map(|c| {
            c.embedding
                .as_ref()
                .ok_or_else(|| KnowledgeError::NotEmbedded(c.text.chars().take(40).collect()))
        })
        .collect::<Result<_, _>>()?;

    let target_sims: Vec<f64> = embeddings
        .iter()
        .map(|e| e.cosine(target_embedding))
        .collect();
    let pairwise = |a: usize, b: usize| embeddings[a].cosine(embeddings[b]);
    let kept = greedy_select(&target_sims, &pairwise, k, threshold);

    let selected: Vec<KnowledgeChunk> = kept.into_iter().map(|i| chunks[i].clone()).collect();
    Ok(RawKnowledge::from_chunks(target, selected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EmbeddingVector, EMBEDDING_DIM};

    fn basis_vector(axis: usize, model: &str) -> EmbeddingVector {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[axis] = 1.0;
        EmbeddingVector::new(v, model).unwrap()
    }

    fn chunk(text: &str, emb: EmbeddingVector) -> KnowledgeChunk {
        KnowledgeChunk {
            text: text.to_string(),
            token_span: (0, 1),
            source_url: None,
            embedding: Some(emb),
        }
    }

    #[test]
    fn identical_embeddings_keep_one() {
        let e = basis_vector(0, "m");
        let chunks = vec![chunk("first", e.clone()), chunk("second", e.clone())];
        let raw = select_raw_knowledge("t", chunks, &e, 3, 0.85).unwrap();
        assert_eq!(raw.chunks.len(), 1);
        assert_eq!(raw.chunks[0].text, "first");
    }

    #[test]
    fn orthogonal_embeddings_keep_all_in_relevance_order() {
        // Target is closest to axis 2, then 0, then 1.
        let mut t = vec![0.0; EMBEDDING_DIM];
        t[2] = 0.8;
        t[0] = 0.5;
        t[1] = 0.3;
        let target = EmbeddingVector::new(t, "m").unwrap();
        let chunks = vec![
            chunk("axis0", basis_vector(0, "m")),
            chunk("axis1", basis_vector(1, "m")),
            chunk("axis2", basis_vector(2, "m")),
        ];
        let raw = select_raw_knowledge("t", chunks, &target, 3, 0.85).unwrap();
        let texts: Vec<&str> = raw.chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["axis2", "axis0", "axis1"]);
        assert_eq!(raw.concatenated, "axis2 axis0 axis1");
    }

    #[test]
    fn unembedded_chunk_is_an_error()  {
        let e = basis_vector(0, "m");
        let chunks = vec![KnowledgeChunk {
            text: "no embedding".into(),
            token_span: (0, 1),
            source_url: None,
            embedding: None,
        }];
        assert!(matches!(
            select_raw_knowledge("t", chunks, &e, 3, 0.85),
            Err(KnowledgeError::NotEmbedded(_))
        ));
    }

    #[test]
    fn five_chunk_matrix_matches_exhaustive_greedy() {
        // Hand-built similarity structure: target sims and a pairwise
        // matrix with one redundant pair (0,1) and one pair just at the
        // threshold (2,3), which must be kept (only exceeding is
        // discarded).
        let target_sims = [0.9, 0.8, 0.7, 0.6, 0.5];
        let m = [
            [1.00, 0.95, 0.10, 0.10, 0.10],
            [0.95, 1.00, 0.20, 0.10, 0.10],
            [0.10, 0.20, 1.00, 0.85, 0.10],
            [0.10, 0.10, 0.85, 1.00, 0.10],
            [0.10, 0.10, 0.10, 0.10, 1.00],
        ];
        let kept = greedy_select(&target_sims, &|a, b| m[a][b], 3, 0.85);
        // Rank order 0,1,2,3,4; 1 collides with 0; 3 sits exactly at the
        // threshold so it stays.
        assert_eq!(kept, vec![0, 2, 3]);
    }

    #[test]
    fn selection_stops_at_k() {
        let sims = [0.9, 0.8, 0.7, 0.6];
        let kept = greedy_select(&sims, &|_, _| 0.0, 3, 0.85);
        assert_eq!(kept, vec![0, 1, 2]);
    }

    #[test]
    fn tie_breaks_by_original_index() {
        let sims = [0.5, 0.5, 0.5];
        let kept = greedy_select(&sims, &|_, _| 0.0, 3, 0.85);
        assert_eq!(kept, vec![0, 1, 2]);
    }
}
