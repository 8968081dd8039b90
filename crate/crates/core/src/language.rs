//! Tokenization, vocabulary and the expression encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{LstmParams, Tensor};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

const EDGE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, splits on whitespace and strips `.,!?;:` from token edges.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.trim_matches(EDGE_PUNCT).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyExpression);
    }
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        if r.tokens.len() < RESERVED.len() || r.tokens[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Vocab("reserved tokens missing or reordered".into()));
        }
        Vocab::from_words(r.tokens[RESERVED.len()..].to_vec())
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds a vocabulary from non-reserved words in id order.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenizes and maps `text`, appending `<eos>`.
    pub fn encode(&self, text: &str) -> Result<Expression> {
        let mut ids: Vec<usize> = tokenize(text)?.iter().map(|t| self.id(t)).collect();
        if ids.iter().all(|&i| i < RESERVED.len()) {
            return Err(Error::Vocab(format!("no in-vocabulary word in `{text}`")));
        }
        ids.push(EOS);
        Ok(Expression {
            text: text.to_string(),
            ids,
        })
    }
}

/// Counts tokens over `corpus` and keeps those seen at least `min_count`
/// times, ordered by descending count then token.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for t in tokenize(doc.as_ref())? {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_words(kept.into_iter().map(|(t, _)| t).collect())
}

/// A referring expression as token ids, terminated by `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expression {
    pub text: String,
    pub ids: Vec<usize>,
}

impl Expression {
    pub fn from_ids(text: impl Into<String>, mut ids: Vec<usize>) -> Result<Self> {
        if ids.last() != Some(&EOS) {
            ids.push(EOS);
        }
        if ids[..ids.len() - 1].iter().any(|&i| i == EOS || i == BOS || i == PAD) {
            return Err(Error::Vocab("control token inside expression".into()));
        }
        if ids.len() < 2 {
            return Err(Error::EmptyExpression);
        }
        Ok(Expression { text: text.into(), ids })
    }

    /// Word ids without the terminal `<eos>`.
    pub fn words(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Language LSTM inputs: `<bos>` followed by the words.
    pub fn input_ids(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.words().iter().copied()).collect()
    }

    /// Prediction targets: the words followed by `<eos>`.
    pub fn target_ids(&self) -> &[usize] {
        &self.ids
    }

    /// Number of scored tokens, `<eos>` included.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_ids(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&i| i >= vocab_size) {
            Some(i) => Err(Error::Vocab(format!(
                "token id {i} out of range for vocabulary of {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Runs the language LSTM over `<bos>, w_1, …, w_n` and returns the hidden
/// state after each input (`n + 1` states).
pub fn encode_expression(expr: &Expression, embedding: &Tensor, lstm: &LstmParams) -> Result<Vec<Vec<f64>>> {
    if embedding.rank() != 2 || embedding.dims()[1] != lstm.input_dim {
        return Err(Error::Dimension(format!(
            "embedding {:?} does not feed an LSTM with input {}",
            embedding.dims(),
            lstm.input_dim
        )));
    }
    lstm.validate()?;
    expr.check_ids(embedding.dims()[0])?;
    let inputs: Vec<&[f64]> = expr.input_ids().iter().map(|&i| embedding.row(i)).collect();
    Ok(lstm.run_sequence(&inputs).into_iter().map(|c| c.h).collect())
}
