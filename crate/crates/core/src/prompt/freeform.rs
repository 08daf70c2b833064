use super::lexicon::{longest_match, Lexicon};
use super::{split_words, word_level, word_span, ConceptSpan, ParsedPrompt};

/// Pluggable concept/attribute extraction for prompts outside the benchmark
/// grammars. Implementations return word-level spans; see
/// [`super::map_to_tokens`] for sub-word alignment.
pub trait ConceptExtractor: Send + Sync {
    fn extract(&self, prompt: &str) -> ParsedPrompt;
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "one", "two", "three", "four", "five", "six", "many",
    "several", "his", "her", "their", "its", "my", "your", "our",
];

const BOUNDARIES: &[&str] = &[
    "and", "or", "but", ",", ".", ";", "!", "?", "of", "in", "on", "at", "with", "near", "by", "beside", "behind",
    "under", "over", "above", "below", "next", "to", "from", "into", "onto", "inside", "outside", "between", "against",
    "across", "around", "wearing", "holding", "sitting", "standing", "riding", "eating", "playing", "lying", "walking",
    "running", "is", "are", "was", "were", "has", "have",
];

/// Dependency-free noun-chunk heuristic.
///
/// The prompt is cut into chunks at conjunctions, punctuation, prepositions
/// and a few common verbs. Leading determiners are dropped; the last word
/// of a chunk is its head noun (the concept) and every preceding word is a
/// modifier (an attribute). Multi-word colors from the lexicon stay one
/// attribute.
#[derive(Debug, Clone, Default)]
pub struct HeuristicChunker {
    lexicon: Lexicon,
}

impl HeuristicChunker {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }
}

fn is_one_of(word: &str, list: &[&str]) -> bool {
    list.iter().any(|w| word.eq_ignore_ascii_case(w))
}

impl ConceptExtractor for HeuristicChunker {
    fn extract(&self, prompt: &str) -> ParsedPrompt {
        let words = split_words(prompt);
        let mut chunks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for (i, w) in words.iter().enumerate() {
            if is_one_of(w.text, BOUNDARIES) {
                if start < i {
                    chunks.push((start, i));
                }
                start = i + 1;
            }
        }
        if start < words.len() {
            chunks.push((start, words.len()));
        }

        let mut concepts = Vec::new();
        for (mut from, to) in chunks {
            while from < to && is_one_of(words[from].text, DETERMINERS) {
                from += 1;
            }
            if from == to {
                continue;
            }
            let head = to - 1;
            let mut attributes = Vec::new();
            let mut at = from;
            while at < head {
                let len = longest_match(&self.lexicon.colors, &words[..head], at).unwrap_or(1);
                attributes.push(word_span(prompt, &words, at, at + len));
                at += len;
            }
            concepts.push(ConceptSpan {
                index: concepts.len() + 1,
                concept: word_span(prompt, &words, head, to),
                attributes,
            });
        }
        word_level(prompt, &words, concepts)
    }
}
