//! Vocabulary, model inputs and target-domain masking.
//!
//! A user input is `prompt ++ title_1 ++ ... ++ title_L ++ [USER]`; an item
//! input is the same with a single title. The representation is read at the
//! `[USER]` position.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, DomainId, Item, UserSequence};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const COMPRESSION_PROMPT: &str =
    "Compress the following description about the user or item into the last token:";

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const USER: &str = "[USER]";

pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub pad: u32,
    pub unk: u32,
    pub user: u32,
    pub prompt_ids: Vec<u32>,
    /// Number of ids assigned to corpus tokens (they occupy `3..3 + n`).
    pub corpus_tokens: usize,
    pub min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: BTreeMap<String, u32>,
    specials: BTreeMap<String, u32>,
    prompt: String,
    prompt_ids: Vec<u32>,
    corpus_tokens: usize,
    min_count: usize,
}

impl Vocabulary {
    /// Ids 0..3 are the specials; corpus tokens follow, ranked by
    /// (frequency desc, token asc); prompt words not seen in the corpus come
    /// last.
    pub fn build(corpus: &Corpus, min_count: usize) -> Result<Self> {
        if corpus.items.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for item in &corpus.items {
            for tok in tokenize(&item.title) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut tokens: Vec<String> = vec![PAD.into(), UNK.into(), USER.into()];
        tokens.extend(ranked.iter().map(|(t, _)| t.to_string()));
        let corpus_tokens = ranked.len();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut prompt_ids = Vec::new();
        for word in tokenize(COMPRESSION_PROMPT) {
            let id = match index.get(word) {
                Some(&id) => id,
                None => {
                    let id = tokens.len() as u32;
                    tokens.push(word.to_string());
                    index.insert(word.to_string(), id);
                    id
                }
            };
            prompt_ids.push(id);
        }
        Ok(Vocabulary {
            tokens,
            index,
            pad: 0,
            unk: 1,
            user: 2,
            prompt_ids,
            corpus_tokens,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.user
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        let specials = [PAD, UNK, USER]
            .iter()
            .map(|s| (s.to_string(), self.index[*s]))
            .collect();
        let tokens = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_special(*i as u32))
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let file = VocabFile {
            tokens,
            specials,
            prompt: COMPRESSION_PROMPT.to_string(),
            prompt_ids: self.prompt_ids.clone(),
            corpus_tokens: self.corpus_tokens,
            min_count: self.min_count,
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let n = file.tokens.len() + file.specials.len();
        let mut tokens = vec![String::new(); n];
        for (t, &id) in file.tokens.iter().chain(file.specials.iter()) {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("vocabulary id {id} out of range")))?;
            *slot = t.clone();
        }
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidConfig("vocabulary ids are not dense".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let special = |s: &str| {
            file.specials
                .get(s)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("vocabulary lacks {s}")))
        };
        Ok(Vocabulary {
            pad: special(PAD)?,
            unk: special(UNK)?,
            user: special(USER)?,
            tokens,
            index,
            prompt_ids: file.prompt_ids,
            corpus_tokens: file.corpus_tokens,
            min_count: file.min_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Token ids fed to the encoder plus the position the representation is read from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub token_ids: Vec<u32>,
    /// Position of `[USER]`, or of the last content token when the user token is disabled.
    pub user_token_pos: usize,
    /// Item domain for title tokens, `None` for prompt and special tokens.
    pub domain_tags: Vec<Option<DomainId>>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputOptions {
    pub prompt: bool,
    pub user_token: bool,
    pub max_len: usize,
}

impl Default for InputOptions {
    fn default() -> Self {
        InputOptions {
            prompt: true,
            user_token: true,
            max_len: 256,
        }
    }
}

fn assemble(titles: &[(&Item, Vec<u32>)], vocab: &Vocabulary, opts: &InputOptions) -> ModelInput {
    let prompt: &[u32] = if opts.prompt { &vocab.prompt_ids } else { &[] };
    let mut input = ModelInput {
        token_ids: prompt.to_vec(),
        user_token_pos: 0,
        domain_tags: vec![None; prompt.len()],
    };
    for (item, ids) in titles {
        input.token_ids.extend_from_slice(ids);
        input.domain_tags.extend(std::iter::repeat_n(Some(item.domain), ids.len()));
    }
    if opts.user_token {
        input.token_ids.push(vocab.user);
        input.domain_tags.push(None);
    }
    input.user_token_pos = input.token_ids.len() - 1;
    input
}

fn fixed_len(vocab: &Vocabulary, opts: &InputOptions) -> usize {
    (if opts.prompt { vocab.prompt_ids.len() } else { 0 }) + usize::from(opts.user_token)
}

/// Builds `prompt ++ titles ++ [USER]`, dropping the oldest items whole
/// until the input fits `opts.max_len`.
pub fn build_user_input(
    seq: &UserSequence,
    corpus: &Corpus,
    vocab: &Vocabulary,
    opts: &InputOptions,
) -> Result<ModelInput> {
    if seq.history.is_empty() {
        return Err(Error::InvalidConfig("user history is empty".into()));
    }
    let titles: Vec<(&Item, Vec<u32>)> = seq
        .history_items()
        .map(|id| {
            let item = corpus.item(id);
            (item, vocab.encode_text(&item.title))
        })
        .collect();
    let budget = opts.max_len.saturating_sub(fixed_len(vocab, opts));
    let mut used = 0;
    let mut keep_from = titles.len();
    while keep_from > 0 && used + titles[keep_from - 1].1.len() <= budget {
        used += titles[keep_from - 1].1.len();
        keep_from -= 1;
    }
    if keep_from == titles.len() {
        let last = titles.last().expect("non-empty history").0;
        return Err(Error::TitleTooLong(last.key.clone(), opts.max_len));
    }
    Ok(assemble(&titles[keep_from..], vocab, opts))
}

pub fn build_item_input(item: &Item, vocab: &Vocabulary, opts: &InputOptions) -> Result<ModelInput> {
    let ids = vocab.encode_text(&item.title);
    if ids.len() + fixed_len(vocab, opts) > opts.max_len {
        return Err(Error::TitleTooLong(item.key.clone(), opts.max_len));
    }
    Ok(assemble(&[(item, ids)], vocab, opts))
}

/// Removes each target-domain history item independently with probability
/// `ratio`. Other items and the order are untouched; if everything would be
/// removed, the most recent history item survives.
pub fn mask_history(seq: &UserSequence, corpus: &Corpus, ratio: f64, rng: &mut Rng) -> UserSequence {
    let mut out = seq.clone();
    if ratio <= 0.0 || seq.history.is_empty() {
        return out;
    }
    let keep: Vec<bool> = seq
        .history
        .iter()
        .map(|h| corpus.domain_of(h.item) != seq.target_domain || rng.random::<f64>() >= ratio)
        .collect();
    out.history = seq
        .history
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(h, _)| *h)
        .collect();
    if out.history.is_empty() {
        out.history.push(*seq.history.last().expect("non-empty history"));
    }
    out
}
