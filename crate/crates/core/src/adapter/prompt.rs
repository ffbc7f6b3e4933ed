use crate::rng::{fnv1a, normal_vec, StreamRng};
use rand::SeedableRng;

pub const PROMPT_DIM: usize = 32;
pub const ALPHA_PREFIX: &str = "alpha map of";

/// Bag of hashed tokens: each lowercase whitespace token maps to a fixed
/// Gaussian vector; the sum is scaled to unit length. An empty prompt is
/// the zero vector.
pub fn embed_prompt(text: &str, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for token in text.split_whitespace() {
        let mut rng = StreamRng::seed_from_u64(fnv1a(token.to_lowercase().as_bytes()));
        for (a, v) in acc.iter_mut().zip(normal_vec(&mut rng, dim)) {
            *a += v;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    acc
}

/// Prompt used for the alpha frame.
pub fn alpha_prompt(text: &str) -> String {
    format!("{ALPHA_PREFIX} {text}")
}

/// Embeddings of the RGB and alpha prompts.
pub fn prompt_pair(text: &str, dim: usize) -> [Vec<f64>; 2] {
    [embed_prompt(text, dim), embed_prompt(&alpha_prompt(text), dim)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let a = embed_prompt("a red apple", PROMPT_DIM);
        assert_eq!(a, embed_prompt("a  red\tapple", PROMPT_DIM));
        assert_eq!(a, embed_prompt("A Red apple", PROMPT_DIM));
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(embed_prompt("", PROMPT_DIM).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_changes_the_embedding() {
        let [rgb, alpha] = prompt_pair("glass vase", PROMPT_DIM);
        assert_ne!(rgb, alpha);
        assert_ne!(embed_prompt("glass vase", PROMPT_DIM), embed_prompt("glass cup", PROMPT_DIM));
    }
}
