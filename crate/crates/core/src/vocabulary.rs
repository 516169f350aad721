//! Tokenization and the filtered token/id dictionary.
//!
//! Ids are dense and assigned by descending collection frequency, ties broken
//! lexicographically. When padding is reserved it takes the last id and has no
//! surface form the tokenizer could produce.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::WordId;

/// Surface form written for the padding id in vocabulary files.
pub const PADDING_LITERAL: &str = "<PAD>";

const HEADER: &str = "#vocab-version:1";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A normalized token: lowercased, trimmed of surrounding punctuation, never empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Normalizes one whitespace-free piece of text. Returns `None` when
    /// nothing alphanumeric is left.
    pub fn normalize(piece: &str) -> Option<Token> {
        let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            None
        } else {
            Some(Token(trimmed.to_lowercase()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits on Unicode whitespace, strips leading/trailing non-alphanumeric
/// characters from each piece and lowercases it. Interior punctuation stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace().filter_map(Token::normalize).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum token length in characters.
    pub min_token_length: usize,
    /// Minimum number of occurrences in the whole collection.
    pub min_collection_frequency: u64,
    /// Tokens occurring in more than this fraction of documents are dropped.
    pub max_document_frequency_fraction: f64,
    /// Keep only the most frequent survivors.
    pub max_vocabulary_size: Option<usize>,
    pub stopwords: Option<BTreeSet<String>>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_token_length: 1,
            min_collection_frequency: 1,
            max_document_frequency_fraction: 1.0,
            max_vocabulary_size: None,
            stopwords: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), VocabError> {
        if self.min_token_length < 1 {
            return Err(VocabError::InvalidConfig("min_token_length must be >= 1".into()));
        }
        if self.min_collection_frequency < 1 {
            return Err(VocabError::InvalidConfig(
                "min_collection_frequency must be >= 1".into(),
            ));
        }
        let f = self.max_document_frequency_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(VocabError::InvalidConfig(format!(
                "max_document_frequency_fraction must be in (0, 1], got {f}"
            )));
        }
        if self.max_vocabulary_size == Some(0) {
            return Err(VocabError::InvalidConfig("max_vocabulary_size must be >= 1".into()));
        }
        Ok(())
    }

    fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.as_ref().is_some_and(|s| s.contains(token))
    }
}

/// Immutable bidirectional token/id map with frequency statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, WordId>,
    collection_frequency: Vec<u64>,
    document_frequency: Vec<u64>,
    padding_id: Option<WordId>,
    filter_config: FilterConfig,
}

impl Vocabulary {
    /// Counts token statistics over `corpus` and keeps the tokens passing
    /// every bound in `config`.
    pub fn build<I, D, T>(
        corpus: I,
        config: &FilterConfig,
        reserve_padding: bool,
    ) -> Result<Vocabulary, VocabError>
    where
        I: IntoIterator<Item = (D, T)>,
        T: AsRef<str>,
    {
        config.validate()?;
        let mut cf: HashMap<String, u64> = HashMap::new();
        let mut df: HashMap<String, u64> = HashMap::new();
        let mut n_docs = 0u64;
        let mut seen = HashSet::new();
        for (_, text) in corpus {
            n_docs += 1;
            seen.clear();
            for token in tokenize(text.as_ref()) {
                let token = token.0;
                *cf.entry(token.clone()).or_default() += 1;
                if seen.insert(token.clone()) {
                    *df.entry(token).or_default() += 1;
                }
            }
        }
        if n_docs == 0 {
            return Err(VocabError::EmptyCorpus);
        }

        let mut retained: Vec<(String, u64, u64)> = cf
            .into_iter()
            .filter(|(token, count)| {
                let doc_count = df[token];
                token.chars().count() >= config.min_token_length
                    && *count >= config.min_collection_frequency
                    && (doc_count as f64 / n_docs as f64) <= config.max_document_frequency_fraction
                    && !config.is_stopword(token)
            })
            .map(|(token, count)| {
                let doc_count = df[&token];
                (token, count, doc_count)
            })
            .collect();
        retained.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = config.max_vocabulary_size {
            retained.truncate(max);
        }
        if retained.is_empty() {
            return Err(VocabError::EmptyVocabulary);
        }

        let mut vocab = Vocabulary {
            tokens: Vec::with_capacity(retained.len()),
            id_of: HashMap::with_capacity(retained.len()),
            collection_frequency: Vec::with_capacity(retained.len()),
            document_frequency: Vec::with_capacity(retained.len()),
            padding_id: None,
            filter_config: config.clone(),
        };
        for (token, count, doc_count) in retained {
            vocab.push(token, count, doc_count);
        }
        if reserve_padding {
            vocab.padding_id = Some(vocab.tokens.len());
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String, cf: u64, df: u64) {
        self.id_of.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.collection_frequency.push(cf);
        self.document_frequency.push(df);
    }

    /// Total number of ids, padding included.
    pub fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.padding_id.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of real (non-padding) tokens.
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn padding_id(&self) -> Option<WordId> {
        self.padding_id
    }

    pub fn filter_config(&self) -> &FilterConfig {
        &self.filter_config
    }

    pub fn id(&self, token: &str) -> Option<WordId> {
        self.id_of.get(token).copied()
    }

    /// Surface form of `id`; the padding id yields [`PADDING_LITERAL`].
    pub fn token(&self, id: WordId) -> Option<&str> {
        if Some(id) == self.padding_id {
            Some(PADDING_LITERAL)
        } else {
            self.tokens.get(id).map(String::as_str)
        }
    }

    /// Real tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn collection_frequency(&self, id: WordId) -> u64 {
        self.collection_frequency.get(id).copied().unwrap_or(0)
    }

    pub fn document_frequency(&self, id: WordId) -> u64 {
        self.document_frequency.get(id).copied().unwrap_or(0)
    }

    /// Maps in-vocabulary tokens to ids in order; out-of-vocabulary tokens are dropped.
    pub fn encode<I>(&self, tokens: I) -> Vec<WordId>
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        tokens
            .into_iter()
            .filter_map(|t| self.id_of.get(t.as_ref()).copied())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{HEADER}")?;
        for (i, token) in self.tokens.iter().enumerate() {
            writeln!(
                out,
                "{token}\t{}\t{}",
                self.collection_frequency[i], self.document_frequency[i]
            )?;
        }
        if self.padding_id.is_some() {
            writeln!(out, "{PADDING_LITERAL}\t0\t0")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Vocabulary::write_to`]. The filter
    /// configuration is not part of the file and is supplied by the caller.
    pub fn read_from<R: BufRead>(input: R, filter_config: FilterConfig) -> Result<Vocabulary, VocabError> {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            id_of: HashMap::new(),
            collection_frequency: Vec::new(),
            document_frequency: Vec::new(),
            padding_id: None,
            filter_config,
        };
        let parse_err = |line: usize, message: &str| VocabError::Parse {
            line,
            message: message.to_string(),
        };
        let mut saw_header = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if !saw_header {
                if line != HEADER {
                    return Err(parse_err(lineno, "missing header"));
                }
                saw_header = true;
                continue;
            }
            if vocab.padding_id.is_some() {
                return Err(parse_err(lineno, "entries after padding line"));
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(lineno, "expected 3 tab-separated fields"));
            }
            if fields[0] == PADDING_LITERAL {
                if fields[1] != "0" || fields[2] != "0" {
                    return Err(parse_err(lineno, "padding line must carry zero counts"));
                }
                vocab.padding_id = Some(vocab.tokens.len());
                continue;
            }
            if Token::normalize(fields[0]).map(|t| t.0).as_deref() != Some(fields[0]) {
                return Err(parse_err(lineno, "token is not normalized"));
            }
            let cf = fields[1].parse().map_err(|_| parse_err(lineno, "bad collection frequency"))?;
            let df = fields[2].parse().map_err(|_| parse_err(lineno, "bad document frequency"))?;
            if vocab.id_of.contains_key(fields[0]) {
                return Err(parse_err(lineno, "duplicate token"));
            }
            vocab.push(fields[0].to_string(), cf, df);
        }
        if !saw_header {
            return Err(parse_err(1, "missing header"));
        }
        if vocab.tokens.is_empty() {
            return Err(VocabError::EmptyVocabulary);
        }
        Ok(vocab)
    }
}
