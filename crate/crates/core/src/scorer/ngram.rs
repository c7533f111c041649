use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::tokenize::tokenize;
use super::{ScoreError, Scored, ScorerBackend};
use crate::domain::{ScoreMode, Utterance};

/// Vocabulary entry that absorbs tokens unseen during training.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Left padding before the first token of a sequence. It conditions but is
/// never predicted, so it is not part of the vocabulary.
const START: u32 = u32::MAX;

/// Add-one smoothed n-gram language model.
///
/// `P(w | h) = (count(h, w) + 1) / (count(h) + V)` where `h` is the previous
/// `order - 1` tokens and `V` the vocabulary size, so every conditional
/// distribution is normalized over the vocabulary. Deterministic and cheap,
/// it stands in for a neural model wherever exact expected values matter.
#[derive(Debug, Clone)]
pub struct NGramReferenceScorer {
    order: usize,
    backend_id: String,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unknown: Option<u32>,
    counts: HashMap<Vec<u32>, HashMap<u32, u64>>,
    context_totals: HashMap<Vec<u32>, u64>,
    max_context_tokens: Option<usize>,
    max_in_flight: usize,
}

impl NGramReferenceScorer {
    /// An untrained model over a fixed vocabulary: every distribution is uniform.
    pub fn with_vocabulary<I, S>(order: usize, vocabulary: I) -> Result<Self, ScoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if order == 0 {
            return Err(ScoreError::InvalidInput("n-gram order must be at least 1".into()));
        }
        let tokens: Vec<String> = vocabulary.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(ScoreError::InvalidInput("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(ScoreError::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let unknown = index.get(UNKNOWN_TOKEN).copied();
        let mut model = Self {
            order,
            backend_id: String::new(),
            tokens,
            index,
            unknown,
            counts: HashMap::new(),
            context_totals: HashMap::new(),
            max_context_tokens: None,
            max_in_flight: std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        model.backend_id = model.fingerprint();
        Ok(model)
    }

    /// Trains on `sequences`, each tokenized and padded independently. The
    /// vocabulary is every training token plus [`UNKNOWN_TOKEN`].
    pub fn train<'a, I>(order: usize, sequences: I) -> Result<Self, ScoreError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let tokenized: Vec<Vec<String>> = sequences.into_iter().map(tokenize).collect();
        let mut vocab: Vec<String> = tokenized.iter().flatten().cloned().collect();
        vocab.push(UNKNOWN_TOKEN.to_owned());
        vocab.sort();
        vocab.dedup();
        let mut model = Self::with_vocabulary(order, vocab)?;
        for seq in &tokenized {
            let ids: Vec<u32> = seq.iter().map(|t| model.index[t]).collect();
            let padded = model.pad(&ids);
            for pos in (order - 1)..padded.len() {
                let history = padded[pos + 1 - order..pos].to_vec();
                *model.counts.entry(history.clone()).or_default().entry(padded[pos]).or_default() += 1;
                *model.context_totals.entry(history).or_default() += 1;
            }
        }
        model.backend_id = model.fingerprint();
        Ok(model)
    }

    /// Bounds the visible context. The limit is part of the backend id since
    /// it changes which utterances get scored.
    pub fn with_max_context_tokens(mut self, limit: usize) -> Self {
        self.max_context_tokens = Some(limit);
        self.backend_id = format!("{}-ctx{limit}", self.fingerprint());
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.tokens
    }

    pub fn vocabulary_size(&self) -> usize {
        self.tokens.len()
    }

    /// `ln P(token | history)`, where `history` holds preceding tokens (only
    /// the last `order - 1` matter; shorter histories are start-padded).
    pub fn log_prob(&self, history: &[&str], token: &str) -> Result<f64, ScoreError> {
        let ids: Vec<u32> = history.iter().map(|t| self.id_of(t)).collect::<Result<_, _>>()?;
        let padded = self.pad(&ids);
        let h = &padded[padded.len() - (self.order - 1)..];
        Ok(self.log_prob_ids(h, self.id_of(token)?))
    }

    fn log_prob_ids(&self, history: &[u32], token: u32) -> f64 {
        let seen = self.counts.get(history).and_then(|next| next.get(&token)).copied().unwrap_or(0);
        let total = self.context_totals.get(history).copied().unwrap_or(0);
        ((seen + 1) as f64 / (total + self.tokens.len() as u64) as f64).ln()
    }

    fn id_of(&self, token: &str) -> Result<u32, ScoreError> {
        self.index.get(token).copied().or(self.unknown).ok_or_else(|| ScoreError::OutOfVocabulary(token.to_owned()))
    }

    fn pad(&self, ids: &[u32]) -> Vec<u32> {
        let mut padded = vec![START; self.order - 1];
        padded.extend_from_slice(ids);
        padded
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.order as u64).to_le_bytes());
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0x1f]);
        }
        let sorted: BTreeMap<&Vec<u32>, BTreeMap<&u32, &u64>> =
            self.counts.iter().map(|(h, next)| (h, next.iter().collect())).collect();
        for (h, next) in sorted {
            for id in h {
                hasher.update(id.to_le_bytes());
            }
            for (t, c) in next {
                hasher.update(t.to_le_bytes());
                hasher.update(c.to_le_bytes());
            }
            hasher.update([0x1e]);
        }
        let digest = hex::encode(hasher.finalize());
        format!("ngram{}-addone-{}", self.order, &digest[..12])
    }
}

impl ScorerBackend for NGramReferenceScorer {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn max_context_tokens(&self) -> Option<usize> {
        self.max_context_tokens
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn count_tokens(&self, text: &str) -> Option<usize> {
        Some(tokenize(text).len())
    }

    fn score(&self, context: &[Utterance], continuation: &Utterance, mode: ScoreMode) -> Result<Scored, ScoreError> {
        let continuation_tokens = tokenize(continuation.text());
        if continuation_tokens.is_empty() {
            return Err(ScoreError::EmptyTokenization(continuation.text().to_owned()));
        }
        let mut ids = Vec::new();
        for u in context {
            for t in tokenize(u.text()) {
                ids.push(self.id_of(&t)?);
            }
        }
        let context_len = ids.len();
        for t in &continuation_tokens {
            ids.push(self.id_of(t)?);
        }
        let padded = self.pad(&ids);
        let first = match mode {
            ScoreMode::Conditional => context_len,
            ScoreMode::Joint => 0,
        };
        let offset = self.order - 1;
        let mut total = 0.0;
        for pos in first..ids.len() {
            let p = pos + offset;
            total += self.log_prob_ids(&padded[p - offset..p], padded[p]);
        }
        Ok(Scored { log_likelihood: total, token_count: (ids.len() - first) as u32 })
    }
}
