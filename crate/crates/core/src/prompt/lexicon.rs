use super::Word;

const COLORS: &str = include_str!("../../data/colors.txt");
const OBJECTS: &str = include_str!("../../data/objects.txt");
const CLOTHING: &str = include_str!("../../data/clothing.txt");
const ANIMALS: &str = include_str!("../../data/animals.txt");

/// Bundled vocabulary. Entries may span several words ("light blue").
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub colors: Vec<String>,
    pub objects: Vec<String>,
    pub clothing: Vec<String>,
    pub animals: Vec<String>,
}

fn lines(data: &str) -> Vec<String> {
    data.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self {
            colors: lines(COLORS),
            objects: lines(OBJECTS),
            clothing: lines(CLOTHING),
            animals: lines(ANIMALS),
        }
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Length in words of the longest entry matching `words[at..]`, if any.
pub(crate) fn longest_match(entries: &[String], words: &[Word<'_>], at: usize) -> Option<usize> {
    entries
        .iter()
        .filter_map(|entry| {
            let parts: Vec<&str> = entry.split_whitespace().collect();
            let matched = parts.len() <= words.len().saturating_sub(at)
                && parts
                    .iter()
                    .zip(&words[at..])
                    .all(|(p, w)| w.text.eq_ignore_ascii_case(p));
            matched.then_some(parts.len())
        })
        .max()
}
