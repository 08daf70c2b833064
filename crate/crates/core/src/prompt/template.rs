use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexicon::{longest_match, Lexicon};
use super::{split_words, word_level, word_span, ConceptSpan, ParsedPrompt, TokenSpan, Word};
use crate::error::{Error, Result};

/// The three benchmark prompt grammars.
///
/// - `Cc500`: `a [color] [object] and a [color] [object]`
/// - `Wearing100`: `a man/woman, [color] [clothing], ...` with four pairs
/// - `Animals100`: `a [color] [clothing] [animal] and [color] [clothing] [animal]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Template {
    Cc500,
    Wearing100,
    Animals100,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Cc500, Template::Wearing100, Template::Animals100];

    pub fn name(self) -> &'static str {
        match self {
            Template::Cc500 => "CC-500",
            Template::Wearing100 => "Wearing-100",
            Template::Animals100 => "Animals-100",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Template::Cc500 => "cc500",
            Template::Wearing100 => "wearing100",
            Template::Animals100 => "animals100",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(char::is_ascii_alphanumeric)
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "cc500" => Ok(Template::Cc500),
            "wearing100" => Ok(Template::Wearing100),
            "animals100" => Ok(Template::Animals100),
            _ => Err(Error::Config(format!("unknown dataset template {s:?}"))),
        }
    }
}

const PEOPLE: [&str; 2] = ["man", "woman"];

struct Cursor<'p, 'w> {
    prompt: &'p str,
    words: &'w [Word<'p>],
    at: usize,
    template: Template,
}

impl<'p, 'w> Cursor<'p, 'w> {
    fn position(&self) -> usize {
        self.words.get(self.at).map_or(self.prompt.len(), |w| w.range.start)
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::TemplateMismatch {
            template: self.template.name(),
            position: self.position(),
            reason: reason.into(),
        })
    }

    fn peek(&self) -> Option<&'p str> {
        self.words.get(self.at).map(|w| w.text)
    }

    fn peek_is(&self, word: &str) -> bool {
        self.peek().is_some_and(|w| w.eq_ignore_ascii_case(word))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        if self.peek_is(word) {
            self.at += 1;
            Ok(())
        } else {
            self.fail(format!("expected {word:?}"))
        }
    }

    fn article(&mut self) -> Result<()> {
        if self.peek_is("a") || self.peek_is("an") {
            self.at += 1;
            Ok(())
        } else {
            self.fail("expected article \"a\"/\"an\"")
        }
    }

    fn optional_article(&mut self) {
        if self.peek_is("a") || self.peek_is("an") {
            self.at += 1;
        }
    }

    fn lexicon_entry(&mut self, entries: &[String], what: &str) -> Result<TokenSpan> {
        match longest_match(entries, self.words, self.at) {
            Some(len) => {
                let span = word_span(self.prompt, self.words, self.at, self.at + len);
                self.at += len;
                Ok(span)
            }
            None => self.fail(format!("expected a {what}")),
        }
    }

    /// One or more words up to (not including) `stop` or the end.
    fn words_until(&mut self, stop: &str, what: &str) -> Result<TokenSpan> {
        let from = self.at;
        while self.peek().is_some_and(|w| !w.eq_ignore_ascii_case(stop) && w != ",") {
            self.at += 1;
        }
        if self.at == from {
            return self.fail(format!("expected a {what}"));
        }
        Ok(word_span(self.prompt, self.words, from, self.at))
    }

    fn end(&self) -> Result<()> {
        if self.at == self.words.len() {
            Ok(())
        } else {
            self.fail("unexpected trailing words")
        }
    }
}

/// Parses a prompt under one benchmark grammar into word-level spans.
pub fn parse_template(prompt: &str, template: Template) -> Result<ParsedPrompt> {
    let lexicon = Lexicon::bundled();
    let words = split_words(prompt);
    let mut cur = Cursor {
        prompt,
        words: &words,
        at: 0,
        template,
    };
    let mut concepts = Vec::new();
    let mut push = |concept: TokenSpan, attributes: Vec<TokenSpan>| {
        let index = concepts.len() + 1;
        concepts.push(ConceptSpan {
            index,
            concept,
            attributes,
        });
    };

    match template {
        Template::Cc500 => {
            for half in 0..2 {
                if half == 1 {
                    cur.expect("and")?;
                }
                cur.article()?;
                let color = cur.lexicon_entry(&lexicon.colors, "color")?;
                let object = cur.words_until("and", "object")?;
                push(object, vec![color]);
            }
        }
        Template::Wearing100 => {
            cur.article()?;
            match cur.peek() {
                Some(p) if PEOPLE.iter().any(|q| p.eq_ignore_ascii_case(q)) => cur.at += 1,
                _ => return cur.fail("expected \"man\" or \"woman\""),
            }
            for _ in 0..4 {
                cur.expect(",")?;
                let color = cur.lexicon_entry(&lexicon.colors, "color")?;
                let clothing = cur.words_until(",", "clothing item")?;
                push(clothing, vec![color]);
            }
        }
        Template::Animals100 => {
            for half in 0..2 {
                if half == 0 {
                    cur.article()?;
                } else {
                    cur.expect("and")?;
                    cur.optional_article();
                }
                let color = cur.lexicon_entry(&lexicon.colors, "color")?;
                let clothing = cur.lexicon_entry(&lexicon.clothing, "clothing item")?;
                let animal = cur.words_until("and", "animal")?;
                push(animal, vec![color, clothing]);
            }
        }
    }
    cur.end()?;
    Ok(word_level(prompt, &words, concepts))
}
