//! Deterministic toy tokenizer used with the toy backend.
//!
//! Words are cut into pieces of at most [`ToyTokenizer::piece_len`] bytes so
//! longer words exercise sub-word alignment. The sequence is framed by
//! start/end tokens and padded to a fixed length, like CLIP's 77-token
//! context.

use crate::prompt::{split_words, Token};

pub const BOS_ID: u32 = 49406;
pub const EOS_ID: u32 = 49407;
pub const PAD_ID: u32 = 0;

#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    pub max_len: usize,
    pub piece_len: usize,
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        Self {
            max_len: 77,
            piece_len: 6,
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ToyTokenizer {
    pub fn piece_id(piece: &str) -> u32 {
        1 + (fnv1a(piece.to_ascii_lowercase().as_bytes()) % 49_000) as u32
    }

    /// Tokenizes `prompt`, truncating content so the end token always fits.
    pub fn tokenize(&self, prompt: &str) -> Vec<Token> {
        let mut tokens = vec![Token {
            id: BOS_ID,
            chars: None,
        }];
        let budget = self.max_len.saturating_sub(2);
        'words: for word in split_words(prompt) {
            let mut start = word.range.start;
            while start < word.range.end {
                if tokens.len() > budget {
                    break 'words;
                }
                let mut end = (start + self.piece_len).min(word.range.end);
                while !prompt.is_char_boundary(end) {
                    end += 1;
                }
                tokens.push(Token {
                    id: Self::piece_id(&prompt[start..end]),
                    chars: Some(start..end),
                });
                start = end;
            }
        }
        tokens.push(Token {
            id: EOS_ID,
            chars: None,
        });
        while tokens.len() < self.max_len {
            tokens.push(Token {
                id: PAD_ID,
                chars: None,
            });
        }
        tokens
    }
}
