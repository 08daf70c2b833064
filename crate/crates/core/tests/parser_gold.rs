use serde::Deserialize;
use spdiffusion::prompt::{map_to_tokens, ConceptExtractor, HeuristicChunker, Token};
use spdiffusion::tokenizer::ToyTokenizer;

#[derive(Deserialize)]
struct GoldConcept {
    surface: String,
    attributes: Vec<String>,
}

#[derive(Deserialize)]
struct GoldRecord {
    prompt: String,
    concepts: Vec<GoldConcept>,
}

fn gold() -> Vec<GoldRecord> {
    include_str!("data/gold_freeform.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("gold line parses"))
        .collect()
}

#[test]
fn freeform_matches_hand_annotations() {
    let chunker = HeuristicChunker::default();
    let records = gold();
    assert_eq!(records.len(), 20);
    for rec in records {
        let parsed = chunker.extract(&rec.prompt);
        let expected: Vec<(String, Vec<String>)> = rec
            .concepts
            .iter()
            .map(|c| (c.surface.clone(), c.attributes.clone()))
            .collect();
        assert_eq!(parsed.structure(), expected, "prompt {:?}", rec.prompt);
        parsed.validate().unwrap();
    }
}

#[test]
fn gold_prompts_align_to_toy_tokens() {
    let tokenizer = ToyTokenizer::default();
    let chunker = HeuristicChunker::default();
    for rec in gold() {
        let parsed = chunker.extract(&rec.prompt);
        let tokens = tokenizer.tokenize(&rec.prompt);
        let mapped = map_to_tokens(&parsed, &tokens).unwrap();
        mapped.validate().unwrap();
        for c in &mapped.concepts {
            for span in std::iter::once(&c.concept).chain(&c.attributes) {
                // Every covering token's bytes lie inside the word's bytes
                // (the toy tokenizer never straddles words).
                for t in span.indices() {
                    let r = tokens[t].chars.clone().unwrap();
                    assert!(r.start >= span.chars.start && r.end <= span.chars.end);
                }
                assert_eq!(&rec.prompt[span.chars.clone()], span.surface);
            }
        }
    }
}

#[test]
fn multi_word_attribute_covers_both_words() {
    let prompt = "a light blue car and a red bench";
    let parsed = HeuristicChunker::default().extract(prompt);
    let tokens = ToyTokenizer::default().tokenize(prompt);
    let mapped = map_to_tokens(&parsed, &tokens).unwrap();
    let attr = &mapped.concepts[0].attributes[0];
    assert_eq!(attr.surface, "light blue");
    // BOS, "a", "light", "blue" -> tokens 2 and 3.
    assert_eq!(attr.indices(), 2..4);
    let covered: Vec<&str> = attr
        .indices()
        .map(|t| &prompt[tokens[t].chars.clone().unwrap()])
        .collect();
    assert_eq!(covered, ["light", "blue"]);
}

#[test]
fn sub_word_concept_spans_every_piece() {
    let prompt = "a yellow suitcase";
    let parsed = HeuristicChunker::default().extract(prompt);
    let tokens: Vec<Token> = ToyTokenizer::default().tokenize(prompt);
    let mapped = map_to_tokens(&parsed, &tokens).unwrap();
    let span = &mapped.concepts[0].concept;
    assert_eq!(span.len(), 2);
    assert!(mapped.special_token_indices.contains(&0));
    assert!(!span.indices().any(|t| mapped.special_token_indices.contains(&t)));
}
