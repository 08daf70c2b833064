//! Prompt analysis: which words are concepts, which are their attributes,
//! and where they land in the text encoder's token sequence.
//!
//! Parsers work at word level first. Every span carries the byte range of
//! its words in the raw prompt, so [`map_to_tokens`] can re-index it onto
//! any sub-word tokenization afterwards.

mod freeform;
mod lexicon;
mod template;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use freeform::{ConceptExtractor, HeuristicChunker};
pub use lexicon::Lexicon;
pub use template::{parse_template, Template};

/// A contiguous run of tokens in the prompt's tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    /// First token index (inclusive).
    pub start: usize,
    /// One past the last token index.
    pub end: usize,
    pub surface: String,
    /// Byte range of the span in the raw prompt.
    pub chars: Range<usize>,
}

impl TokenSpan {
    pub fn indices(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, token: usize) -> bool {
        self.indices().contains(&token)
    }
}

/// A concept noun and the attribute spans bound to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpan {
    /// 1-based concept index.
    pub index: usize,
    pub concept: TokenSpan,
    pub attributes: Vec<TokenSpan>,
}

impl ConceptSpan {
    /// Concept and attribute token indices, ascending.
    pub fn protected_tokens(&self) -> BTreeSet<usize> {
        self.concept
            .indices()
            .chain(self.attributes.iter().flat_map(TokenSpan::indices))
            .collect()
    }

    /// `(concept surface, attribute surfaces)`, the shape gold annotations use.
    pub fn structure(&self) -> (String, Vec<String>) {
        (
            self.concept.surface.clone(),
            self.attributes.iter().map(|a| a.surface.clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrompt {
    pub raw: String,
    pub concepts: Vec<ConceptSpan>,
    pub token_count: usize,
    pub special_token_indices: BTreeSet<usize>,
}

impl ParsedPrompt {
    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn structure(&self) -> Vec<(String, Vec<String>)> {
        self.concepts.iter().map(ConceptSpan::structure).collect()
    }

    /// Tokens of every concept except `k` (0-based position in `concepts`),
    /// with their attributes. These are the columns a region of concept `k`
    /// must not attend to.
    pub fn foreign_tokens(&self, k: usize) -> BTreeSet<usize> {
        self.concepts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, c)| c.protected_tokens())
            .collect()
    }

    /// Token index to surface, for tokens inside any concept or attribute span.
    pub fn token_surfaces(&self) -> Vec<(usize, String)> {
        let mut out: Vec<(usize, String)> = self
            .concepts
            .iter()
            .flat_map(|c| std::iter::once(&c.concept).chain(&c.attributes))
            .flat_map(|s| s.indices().map(move |t| (t, s.surface.clone())))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Checks the structural invariants: spans in range, concept indices
    /// 1..=n, no overlap between any two spans, no special token inside a span.
    pub fn validate(&self) -> Result<()> {
        let mut owner: Vec<Option<usize>> = vec![None; self.token_count];
        for (pos, c) in self.concepts.iter().enumerate() {
            if c.index != pos + 1 {
                return Err(Error::Config(format!(
                    "concept at position {pos} has index {}",
                    c.index
                )));
            }
            for span in std::iter::once(&c.concept).chain(&c.attributes) {
                if span.start >= span.end || span.end > self.token_count {
                    return Err(Error::Config(format!(
                        "span {:?} {}..{} outside 0..{}",
                        span.surface, span.start, span.end, self.token_count
                    )));
                }
                for t in span.indices() {
                    if self.special_token_indices.contains(&t) {
                        return Err(Error::Config(format!(
                            "special token {t} inside span {:?}",
                            span.surface
                        )));
                    }
                    if let Some(prev) = owner[t].replace(c.index) {
                        return Err(Error::Config(format!(
                            "token {t} claimed by concepts {prev} and {}",
                            c.index
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One token of a tokenization. `chars` is `None` for special tokens
/// (start/end of sequence, padding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub chars: Option<Range<usize>>,
}

/// Re-indexes word-level spans onto a sub-word tokenization.
///
/// A token covers a word when their byte ranges intersect at all, so a span
/// may pick up a fragment shared with a neighbouring word.
pub fn map_to_tokens(parsed: &ParsedPrompt, tokenization: &[Token]) -> Result<ParsedPrompt> {
    let mut last_end = 0;
    for range in tokenization.iter().filter_map(|t| t.chars.as_ref()) {
        if range.start < last_end || range.end < range.start {
            return Err(Error::ShapeMismatch(
                "token byte ranges must be sorted and non-overlapping".into(),
            ));
        }
        last_end = range.end;
    }

    let remap = |span: &TokenSpan| -> Result<TokenSpan> {
        let covering: Vec<usize> = tokenization
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let r = t.chars.as_ref()?;
                (r.start < span.chars.end && span.chars.start < r.end).then_some(i)
            })
            .collect();
        match (covering.first(), covering.last()) {
            (Some(&first), Some(&last)) => Ok(TokenSpan {
                start: first,
                end: last + 1,
                surface: span.surface.clone(),
                chars: span.chars.clone(),
            }),
            _ => Err(Error::Alignment {
                surface: span.surface.clone(),
                start: span.chars.start,
                end: span.chars.end,
            }),
        }
    };

    let concepts = parsed
        .concepts
        .iter()
        .map(|c| {
            Ok(ConceptSpan {
                index: c.index,
                concept: remap(&c.concept)?,
                attributes: c.attributes.iter().map(remap).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ParsedPrompt {
        raw: parsed.raw.clone(),
        concepts,
        token_count: tokenization.len(),
        special_token_indices: tokenization
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.chars.is_none().then_some(i))
            .collect(),
    })
}

/// A word of the raw prompt with its byte range. Commas and periods are
/// words of their own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Word<'a> {
    pub text: &'a str,
    pub range: Range<usize>,
}

pub(crate) fn split_words(prompt: &str) -> Vec<Word<'_>> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in prompt.char_indices() {
        let is_punct = matches!(ch, ',' | '.' | ';' | '!' | '?');
        if ch.is_whitespace() || is_punct {
            if let Some(s) = start.take() {
                words.push(Word {
                    text: &prompt[s..i],
                    range: s..i,
                });
            }
            if is_punct {
                let end = i + ch.len_utf8();
                words.push(Word {
                    text: &prompt[i..end],
                    range: i..end,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push(Word {
            text: &prompt[s..],
            range: s..prompt.len(),
        });
    }
    words
}

/// Word-level span over `words[from..to]`.
pub(crate) fn word_span(prompt: &str, words: &[Word<'_>], from: usize, to: usize) -> TokenSpan {
    let chars = words[from].range.start..words[to - 1].range.end;
    TokenSpan {
        start: from,
        end: to,
        surface: prompt[chars.clone()].to_string(),
        chars,
    }
}

pub(crate) fn word_level(prompt: &str, words: &[Word<'_>], concepts: Vec<ConceptSpan>) -> ParsedPrompt {
    ParsedPrompt {
        raw: prompt.to_string(),
        concepts,
        token_count: words.len(),
        special_token_indices: BTreeSet::new(),
    }
}

/// Template grammars first, then the heuristic chunker.
pub fn parse_prompt(prompt: &str) -> ParsedPrompt {
    Template::ALL
        .iter()
        .find_map(|&t| parse_template(prompt, t).ok())
        .unwrap_or_else(|| HeuristicChunker::default().extract(prompt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(id: u32, r: Range<usize>) -> Token {
        Token { id, chars: Some(r) }
    }

    fn special(id: u32) -> Token {
        Token { id, chars: None }
    }

    #[test]
    fn split_words_separates_commas() {
        let words: Vec<&str> = split_words("a man, red shirt").iter().map(|w| w.text).collect();
        assert_eq!(words, ["a", "man", ",", "red", "shirt"]);
    }

    #[test]
    fn identity_mapping_for_one_token_per_word() {
        let parsed = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        let words = split_words(&parsed.raw);
        let toks: Vec<Token> = words
            .iter()
            .enumerate()
            .map(|(i, w)| tok(i as u32, w.range.clone()))
            .collect();
        let mapped = map_to_tokens(&parsed, &toks).unwrap();
        assert_eq!(mapped.concepts, parsed.concepts);
        assert!(mapped.special_token_indices.is_empty());
    }

    #[test]
    fn subword_split_covers_all_pieces() {
        // "a yellow suitcase" with "suitcase" split as "suit" + "case".
        let prompt = "a yellow suitcase and a red car";
        let parsed = parse_template(prompt, Template::Cc500).unwrap();
        let toks = vec![
            special(0),
            tok(1, 0..1),
            tok(2, 2..8),
            tok(3, 9..13),
            tok(4, 13..17),
            tok(5, 18..21),
            tok(6, 22..23),
            tok(7, 24..27),
            tok(8, 28..31),
            special(9),
        ];
        let mapped = map_to_tokens(&parsed, &toks).unwrap();
        let suitcase = &mapped.concepts[0].concept;
        assert_eq!((suitcase.start, suitcase.end), (3, 5));
        assert_eq!(suitcase.len(), 2);
        assert_eq!(mapped.special_token_indices, BTreeSet::from([0, 9]));
        mapped.validate().unwrap();
    }

    #[test]
    fn partial_overlap_includes_fragment() {
        let parsed = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        // A token straddling "red" and " car" belongs to both words' spans.
        let toks = vec![
            tok(0, 0..1),
            tok(1, 2..7),
            tok(2, 7..9),
            tok(3, 10..13),
            tok(4, 14..15),
            tok(5, 16..20),
            tok(6, 21..26),
        ];
        let mapped = map_to_tokens(&parsed, &toks).unwrap();
        assert_eq!(mapped.concepts[0].attributes[0].indices(), 1..2);
        assert_eq!(mapped.concepts[0].concept.indices(), 1..3);
    }

    #[test]
    fn missing_coverage_is_an_alignment_error() {
        let parsed = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        let toks = vec![tok(0, 0..1), tok(1, 2..5)];
        let err = map_to_tokens(&parsed, &toks).unwrap_err();
        assert!(matches!(err, Error::Alignment { ref surface, .. } if surface == "car"));
    }

    #[test]
    fn unsorted_tokenization_is_rejected() {
        let parsed = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        let toks = vec![tok(0, 2..5), tok(1, 0..1)];
        assert!(matches!(map_to_tokens(&parsed, &toks), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn foreign_tokens_excludes_own_concept() {
        let parsed = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        assert_eq!(parsed.foreign_tokens(0), BTreeSet::from([5, 6]));
        assert_eq!(parsed.foreign_tokens(1), BTreeSet::from([1, 2]));
    }

    #[test]
    fn parse_prompt_prefers_templates() {
        let parsed = parse_prompt("a man, red shirt, blue pants, white shoes, black hat");
        // Template parse: the person is shared context, not a concept.
        assert_eq!(parsed.concept_count(), 4);
        let free = parse_prompt("a dog with a pink scarf");
        assert_eq!(free.concept_count(), 2);
    }
}
