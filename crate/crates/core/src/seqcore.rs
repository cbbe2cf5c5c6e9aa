//! Vocabulary, token sequences and count-preserving hypothesis collections.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Bijection between token strings and dense integer ids, with two reserved
/// ids for the start and end markers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    bos_id: TokenId,
    eos_id: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_parts(r.tokens, r.bos_id, r.eos_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            bos_id: v.bos,
            eos_id: v.eos,
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.bos == other.bos && self.eos == other.eos && self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    /// Builds a vocabulary with `<s>` at id 0, `</s>` at id 1 and the given
    /// words after them in order.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_parts(tokens, 0, 1)
    }

    pub fn from_parts(tokens: Vec<String>, bos: TokenId, eos: TokenId) -> Result<Self> {
        if bos == eos {
            return Err(Error::Config("bos and eos ids must differ".into()));
        }
        if bos as usize >= tokens.len() || eos as usize >= tokens.len() {
            return Err(Error::Config(format!(
                "bos/eos ids ({bos}, {eos}) out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Self {
            tokens,
            index,
            bos,
            eos,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Ids that may appear inside a sequence (everything except bos and eos).
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as TokenId).filter(move |&i| i != self.bos && i != self.eos)
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - 2
    }

    /// Validates raw ids against this vocabulary.
    pub fn sequence(&self, ids: Vec<TokenId>) -> Result<TokenSequence> {
        if let Some(bad) = ids.iter().find(|&&i| !self.contains_id(i)) {
            return Err(Error::data(format!("token id {bad} outside vocabulary of size {}", self.len())));
        }
        Ok(TokenSequence(ids))
    }

    /// Looks up each token string; unknown tokens are reported together.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenSequence> {
        let mut ids = Vec::with_capacity(tokens.len());
        let mut unknown = BTreeSet::new();
        for t in tokens {
            match self.id(t.as_ref()) {
                Some(id) => ids.push(id),
                None => {
                    unknown.insert(t.as_ref().to_string());
                }
            }
        }
        if !unknown.is_empty() {
            return Err(Error::data(format!(
                "tokens not in vocabulary: {}",
                unknown.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(TokenSequence(ids))
    }

    /// Whitespace-tokenizes `text` (see [`split_tokens`]) and encodes it.
    pub fn parse(&self, text: &str) -> Result<TokenSequence> {
        self.encode(&split_tokens(text))
    }

    /// Inverse of [`Vocabulary::parse`].
    pub fn render(&self, seq: &TokenSequence) -> String {
        join_tokens(seq.ids().iter().map(|&i| self.token(i)))
    }

    /// Token strings concatenated without separators (used for character metrics).
    pub fn surface_chars(&self, seq: &TokenSequence) -> String {
        seq.ids().iter().map(|&i| self.token(i)).collect()
    }
}

/// Splits on ASCII whitespace. Inside a token, `\ ` is a literal space and
/// `\\` a literal backslash.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                in_token = true;
                match chars.next() {
                    Some(n) => cur.push(n),
                    None => cur.push('\\'),
                }
            }
            c if c.is_ascii_whitespace() => {
                if in_token {
                    out.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        out.push(cur);
    }
    out
}

pub fn join_tokens<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> String {
    let mut out = String::new();
    for (i, t) in tokens.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        for c in t.chars() {
            if c == '\\' || c.is_ascii_whitespace() {
                out.push('\\');
            }
            out.push(c);
        }
    }
    out
}

/// Interned token ids, without bos and implicitly terminated by eos.
///
/// Ordering is lexicographic over ids, which is the tie-break order used by
/// every decoder and decision rule.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Wraps ids without validation; see [`Vocabulary::sequence`].
    pub fn from_ids(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// One hypothesis with its multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub seq: TokenSequence,
    pub model_tag: Option<String>,
    /// Natural-log probability under the generating distribution.
    pub logprob: Option<f64>,
    pub token_logprobs: Option<Vec<f64>>,
    /// Number of draws this entry stands for; at least 1.
    pub weight: u32,
    /// Generation hit the length limit before emitting eos.
    pub truncated: bool,
}

impl Hypothesis {
    pub fn new(seq: TokenSequence) -> Self {
        Self {
            seq,
            model_tag: None,
            logprob: None,
            token_logprobs: None,
            weight: 1,
            truncated: false,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = Some(tag.into());
        self
    }

    pub fn with_weight(mut self, weight: u32) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_logprob(mut self, logprob: f64) -> Self {
        self.logprob = Some(logprob);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectionKind {
    SingleModel,
    Union,
}

/// Multiset of hypotheses over one vocabulary.
///
/// Duplicates are kept as separate entries (or as one entry with a larger
/// weight); the total count always equals the number of draws represented.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCollection {
    vocab: Arc<Vocabulary>,
    items: Vec<Hypothesis>,
    kind: CollectionKind,
    source_tags: BTreeSet<String>,
}

impl HypothesisCollection {
    /// Hypotheses from a single model. Every item is stamped with `tag`.
    pub fn single(vocab: Arc<Vocabulary>, tag: impl Into<String>, items: Vec<Hypothesis>) -> Result<Self> {
        let tag = tag.into();
        let items = items
            .into_iter()
            .map(|mut h| {
                h.model_tag = Some(tag.clone());
                h
            })
            .collect();
        let c = Self {
            vocab,
            items,
            kind: CollectionKind::SingleModel,
            source_tags: BTreeSet::from([tag]),
        };
        c.validate()?;
        Ok(c)
    }

    /// Collection whose items may come from several models; tags are taken
    /// from the items.
    pub fn union_of(vocab: Arc<Vocabulary>, items: Vec<Hypothesis>) -> Result<Self> {
        let source_tags = items.iter().filter_map(|h| h.model_tag.clone()).collect();
        let c = Self {
            vocab,
            items,
            kind: CollectionKind::Union,
            source_tags,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        for h in &self.items {
            if h.weight == 0 {
                return Err(Error::Domain("hypothesis weight must be at least 1".into()));
            }
            if let Some(lp) = h.logprob {
                if !(lp <= 0.0) {
                    return Err(Error::Domain(format!("hypothesis logprob {lp} is not <= 0")));
                }
            }
            if let Some(bad) = h.seq.ids().iter().find(|&&i| !self.vocab.contains_id(i)) {
                return Err(Error::data(format!("token id {bad} outside vocabulary")));
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn items(&self) -> &[Hypothesis] {
        &self.items
    }

    pub fn kind(&self) -> CollectionKind {
        self.kind
    }

    pub fn source_tags(&self) -> &BTreeSet<String> {
        &self.source_tags
    }

    /// The single tag of a single-model collection.
    pub fn tag(&self) -> Option<&str> {
        match self.kind {
            CollectionKind::SingleModel => self.source_tags.iter().next().map(String::as_str),
            CollectionKind::Union => None,
        }
    }

    /// Number of distinct entries (not draws).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Σ weight: the number of draws this collection represents.
    pub fn total_count(&self) -> u64 {
        self.items.iter().map(|h| h.weight as u64).sum()
    }

    /// Merges entries with equal token ids into one entry per string, summing
    /// weights. Count preserving; the first occurrence supplies the metadata.
    pub fn merged(&self) -> Self {
        let mut pos: HashMap<&TokenSequence, usize> = HashMap::new();
        let mut items: Vec<Hypothesis> = Vec::new();
        for h in &self.items {
            match pos.get(&h.seq) {
                Some(&i) => items[i].weight += h.weight,
                None => {
                    pos.insert(&h.seq, items.len());
                    items.push(h.clone());
                }
            }
        }
        Self {
            items,
            ..self.clone()
        }
    }

    /// Set semantics: one entry of weight 1 per distinct string. Not count
    /// preserving; only used when deduplication is explicitly requested.
    pub fn deduplicated(&self) -> Self {
        let mut m = self.merged();
        for h in &mut m.items {
            h.weight = 1;
        }
        m
    }

    /// Groups entries by surface string, in first-occurrence order.
    pub fn collapse_to_counted_strings(&self) -> Vec<CountedString> {
        let mut pos: HashMap<&TokenSequence, usize> = HashMap::new();
        let mut out: Vec<CountedString> = Vec::new();
        for h in &self.items {
            let i = *pos.entry(&h.seq).or_insert_with(|| {
                out.push(CountedString {
                    seq: h.seq.clone(),
                    count: 0,
                    per_model: BTreeMap::new(),
                });
                out.len() - 1
            });
            out[i].count += h.weight as u64;
            *out[i].per_model.entry(h.model_tag.clone()).or_insert(0) += h.weight as u64;
        }
        out
    }
}

/// A distinct string with its total multiplicity and the split by model tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountedString {
    pub seq: TokenSequence,
    pub count: u64,
    pub per_model: BTreeMap<Option<String>, u64>,
}

/// Multiset union (⊎) of collections sharing one vocabulary. Entries are
/// concatenated in input order and keep their weights and tags.
pub fn union_preserving_counts(collections: &[HypothesisCollection]) -> Result<HypothesisCollection> {
    let first = collections
        .first()
        .ok_or_else(|| Error::Domain("union of zero collections".into()))?;
    check_shared_vocab(collections)?;
    let items = collections.iter().flat_map(|c| c.items.iter().cloned()).collect();
    let source_tags = collections
        .iter()
        .flat_map(|c| c.source_tags.iter().cloned())
        .collect();
    Ok(HypothesisCollection {
        vocab: first.vocab.clone(),
        items,
        kind: CollectionKind::Union,
        source_tags,
    })
}

pub(crate) fn check_shared_vocab(collections: &[HypothesisCollection]) -> Result<()> {
    if let Some(first) = collections.first() {
        for c in &collections[1..] {
            if !Arc::ptr_eq(&first.vocab, &c.vocab) && *first.vocab != *c.vocab {
                return Err(Error::Config("collections use different vocabularies".into()));
            }
        }
    }
    Ok(())
}

/// Rebuilds a collection from counted strings: one entry per (string, model).
pub fn expand_counted_strings(vocab: Arc<Vocabulary>, counted: &[CountedString]) -> Result<HypothesisCollection> {
    let mut items = Vec::new();
    for c in counted {
        for (tag, &n) in &c.per_model {
            let mut h = Hypothesis::new(c.seq.clone()).with_weight(n as u32);
            h.model_tag = tag.clone();
            items.push(h);
        }
    }
    HypothesisCollection::union_of(vocab, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(["a", "b"]).unwrap())
    }

    fn seq(v: &Vocabulary, s: &str) -> TokenSequence {
        v.encode(&s.chars().map(|c| c.to_string()).collect::<Vec<_>>()).unwrap()
    }

    fn coll(v: &Arc<Vocabulary>, tag: &str, strs: &[(&str, u32)]) -> HypothesisCollection {
        let items = strs
            .iter()
            .map(|&(s, w)| Hypothesis::new(seq(v, s)).with_weight(w))
            .collect();
        HypothesisCollection::single(v.clone(), tag, items).unwrap()
    }

    fn multiset(c: &HypothesisCollection) -> BTreeMap<TokenSequence, u64> {
        c.collapse_to_counted_strings().into_iter().map(|c| (c.seq, c.count)).collect()
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_bad_markers() {
        assert!(Vocabulary::new(["a", "a"]).is_err());
        assert!(Vocabulary::new(["<s>"]).is_err());
        assert!(Vocabulary::from_parts(vec!["x".into(), "y".into()], 0, 0).is_err());
        assert!(Vocabulary::from_parts(vec!["x".into()], 0, 1).is_err());
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.token(2), "a");
        assert_eq!(v.content_ids().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn unknown_tokens_are_listed() {
        let v = Vocabulary::new(["a"]).unwrap();
        let err = v.encode(&["a", "zz", "q", "zz"]).unwrap_err().to_string();
        assert!(err.contains("q, zz"), "{err}");
    }

    #[test]
    fn tokenizer_escapes_round_trip() {
        let toks = vec!["a b".to_string(), "c\\d".to_string(), "e".to_string()];
        let text = join_tokens(toks.iter().map(String::as_str));
        assert_eq!(text, "a\\ b c\\\\d e");
        assert_eq!(split_tokens(&text), toks);
        assert_eq!(split_tokens("  x   y "), vec!["x", "y"]);
        assert!(split_tokens("").is_empty());
    }

    #[test]
    fn union_adds_multiplicities() {
        let v = ab();
        let u = union_preserving_counts(&[coll(&v, "A", &[("aa", 2)]), coll(&v, "B", &[("aa", 1), ("ab", 1)])]).unwrap();
        assert_eq!(u.kind(), CollectionKind::Union);
        assert_eq!(u.total_count(), 4);
        let m = multiset(&u);
        assert_eq!(m[&seq(&v, "aa")], 3);
        assert_eq!(m[&seq(&v, "ab")], 1);
    }

    #[test]
    fn union_of_one_is_identity() {
        let v = ab();
        let c = coll(&v, "A", &[("a", 1), ("b", 3)]);
        let u = union_preserving_counts(std::slice::from_ref(&c)).unwrap();
        assert_eq!(u.kind(), CollectionKind::Union);
        assert_eq!(u.items(), c.items());
    }

    #[test]
    fn effective_beam_of_four_by_ten() {
        let v = ab();
        let cs: Vec<_> = (0..4)
            .map(|m| coll(&v, &format!("m{m}"), &[("a", 1); 10]))
            .collect();
        assert_eq!(union_preserving_counts(&cs).unwrap().total_count(), 40);
    }

    #[test]
    fn union_rejects_mismatched_vocabularies() {
        let v1 = ab();
        let v2 = Arc::new(Vocabulary::new(["a", "c"]).unwrap());
        let err = union_preserving_counts(&[coll(&v1, "A", &[("a", 1)]), coll(&v2, "B", &[("a", 1)])]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn collapse_groups_by_string_and_model() {
        let v = ab();
        assert!(coll(&v, "A", &[]).collapse_to_counted_strings().is_empty());
        let u = union_preserving_counts(&[coll(&v, "A", &[("aa", 1)]), coll(&v, "B", &[("aa", 1)])]).unwrap();
        let c = u.collapse_to_counted_strings();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].count, 2);
        assert_eq!(c[0].per_model[&Some("A".to_string())], 1);
        assert_eq!(c[0].per_model[&Some("B".to_string())], 1);
    }

    #[test]
    fn invalid_items_rejected() {
        let v = ab();
        let bad_w = Hypothesis::new(seq(&v, "a")).with_weight(0);
        assert!(HypothesisCollection::single(v.clone(), "A", vec![bad_w]).is_err());
        let bad_lp = Hypothesis::new(seq(&v, "a")).with_logprob(0.5);
        assert!(HypothesisCollection::single(v.clone(), "A", vec![bad_lp]).is_err());
        let bad_id = Hypothesis::new(TokenSequence::from_ids(vec![9]));
        assert!(HypothesisCollection::single(v, "A", vec![bad_id]).is_err());
    }

    #[test]
    fn merged_and_deduplicated() {
        let v = ab();
        let c = coll(&v, "A", &[("a", 1), ("b", 2), ("a", 3)]);
        let m = c.merged();
        assert_eq!(m.len(), 2);
        assert_eq!(m.total_count(), 6);
        assert_eq!(c.deduplicated().total_count(), 2);
    }

    fn arb_collection(v: Arc<Vocabulary>, tag: &'static str) -> impl Strategy<Value = HypothesisCollection> {
        proptest::collection::vec((proptest::collection::vec(2u32..4, 0..3), 1u32..4), 0..6).prop_map(move |xs| {
            let items = xs
                .into_iter()
                .map(|(ids, w)| Hypothesis::new(TokenSequence::from_ids(ids)).with_weight(w))
                .collect();
            HypothesisCollection::single(v.clone(), tag, items).unwrap()
        })
    }

    proptest! {
        #[test]
        fn union_is_commutative_associative_and_additive(
            (a, b, c) in {
                let v = ab();
                (arb_collection(v.clone(), "A"), arb_collection(v.clone(), "B"), arb_collection(v, "C"))
            }
        ) {
            let ab_c = union_preserving_counts(&[union_preserving_counts(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let a_bc = union_preserving_counts(&[a.clone(), union_preserving_counts(&[b.clone(), c.clone()]).unwrap()]).unwrap();
            let cba = union_preserving_counts(&[c.clone(), b.clone(), a.clone()]).unwrap();
            prop_assert_eq!(multiset(&ab_c), multiset(&a_bc));
            prop_assert_eq!(multiset(&ab_c), multiset(&cba));
            prop_assert_eq!(ab_c.total_count(), a.total_count() + b.total_count() + c.total_count());
        }

        #[test]
        fn collapse_then_expand_is_identity(
            (a, b) in { let v = ab(); (arb_collection(v.clone(), "A"), arb_collection(v, "B")) }
        ) {
            let u = union_preserving_counts(&[a, b]).unwrap();
            let counted = u.collapse_to_counted_strings();
            prop_assert_eq!(counted.iter().map(|c| c.count).sum::<u64>(), u.total_count());
            for c in &counted {
                prop_assert_eq!(c.per_model.values().sum::<u64>(), c.count);
            }
            let back = expand_counted_strings(u.vocab().clone(), &counted).unwrap();
            prop_assert_eq!(multiset(&back), multiset(&u));
            prop_assert_eq!(back.collapse_to_counted_strings().len(), counted.len());
        }
    }
}
