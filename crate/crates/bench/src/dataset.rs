//! Seeded benchmark prompt sets with gold annotations.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spdiffusion::prompt::{ConceptSpan, Lexicon, ParsedPrompt, Template, TokenSpan};

pub const PROMPTS_PER_SET: usize = 100;
pub const SEEDS_PER_PROMPT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub text: String,
    /// Word-level annotation, written while the prompt is assembled.
    pub gold: ParsedPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDataset {
    pub template: Template,
    pub seed: u64,
    pub items: Vec<DatasetItem>,
    pub seeds_per_prompt: usize,
}

impl PromptDataset {
    /// Generation seeds for one prompt: `0..seeds_per_prompt`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        0..self.seeds_per_prompt as u64
    }
}

/// Assembles a prompt word by word and records word-index spans, using the
/// same word boundaries as the prompt parser (commas are words).
struct Builder {
    text: String,
    words: usize,
    concepts: Vec<ConceptSpan>,
}

impl Builder {
    fn new() -> Self {
        Self {
            text: String::new(),
            words: 0,
            concepts: Vec::new(),
        }
    }

    fn word(&mut self, w: &str) {
        if !self.text.is_empty() && w != "," {
            self.text.push(' ');
        }
        self.text.push_str(w);
        self.words += 1;
    }

    /// Pushes a (possibly multi-word) phrase and returns its span.
    fn phrase(&mut self, phrase: &str) -> TokenSpan {
        let start = self.words;
        let mut from = None;
        for w in phrase.split_whitespace() {
            self.word(w);
            from.get_or_insert(self.text.len() - w.len());
        }
        let from = from.expect("vocabulary entries are non-empty");
        TokenSpan {
            start,
            end: self.words,
            surface: self.text[from..].to_string(),
            chars: from..self.text.len(),
        }
    }

    fn concept(&mut self, concept: TokenSpan, attributes: Vec<TokenSpan>) {
        self.concepts.push(ConceptSpan {
            index: self.concepts.len() + 1,
            concept,
            attributes,
        });
    }

    fn finish(self) -> DatasetItem {
        DatasetItem {
            gold: ParsedPrompt {
                raw: self.text.clone(),
                concepts: self.concepts,
                token_count: self.words,
                special_token_indices: Default::default(),
            },
            text: self.text,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &'a [String]) -> &'a str {
    list.choose(rng).expect("bundled vocabulary is non-empty")
}

fn cc500_item(rng: &mut ChaCha8Rng, lex: &Lexicon) -> DatasetItem {
    let mut b = Builder::new();
    for half in 0..2 {
        if half == 1 {
            b.word("and");
        }
        b.word("a");
        let color = b.phrase(pick(rng, &lex.colors));
        let object = b.phrase(pick(rng, &lex.objects));
        b.concept(object, vec![color]);
    }
    b.finish()
}

fn wearing_item(rng: &mut ChaCha8Rng, lex: &Lexicon) -> DatasetItem {
    let mut b = Builder::new();
    b.word("a");
    b.word(if rng.random_bool(0.5) { "man" } else { "woman" });
    let colors: Vec<&String> = lex.colors.choose_multiple(rng, 4).collect();
    let mut clothing: Vec<&String> = lex.clothing.iter().collect();
    clothing.shuffle(rng);
    for (color, item) in colors.into_iter().zip(clothing) {
        b.word(",");
        let color = b.phrase(color);
        let item = b.phrase(item);
        b.concept(item, vec![color]);
    }
    b.finish()
}

fn animals_item(rng: &mut ChaCha8Rng, lex: &Lexicon) -> DatasetItem {
    let mut b = Builder::new();
    let animals: Vec<&String> = lex.animals.choose_multiple(rng, 2).collect();
    for (half, animal) in animals.into_iter().enumerate() {
        if half == 0 {
            b.word("a");
        } else {
            b.word("and");
        }
        let color = b.phrase(pick(rng, &lex.colors));
        let item = b.phrase(pick(rng, &lex.clothing));
        let animal = b.phrase(animal);
        b.concept(animal, vec![color, item]);
    }
    b.finish()
}

/// 100 prompts in the template's exact grammar. Same seed, same dataset.
///
/// Wearing-100 draws four distinct colors and four distinct clothing items;
/// Animals-100 draws two distinct animals.
pub fn generate_dataset(template: Template, seed: u64) -> PromptDataset {
    let lex = Lexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ template_salt(template));
    let items = (0..PROMPTS_PER_SET)
        .map(|_| match template {
            Template::Cc500 => cc500_item(&mut rng, &lex),
            Template::Wearing100 => wearing_item(&mut rng, &lex),
            Template::Animals100 => animals_item(&mut rng, &lex),
        })
        .collect();
    PromptDataset {
        template,
        seed,
        items,
        seeds_per_prompt: SEEDS_PER_PROMPT,
    }
}

fn template_salt(template: Template) -> u64 {
    match template {
        Template::Cc500 => 0xCC50_0000,
        Template::Wearing100 => 0x3EA1_0100,
        Template::Animals100 => 0xA41A_0100,
    }
}
