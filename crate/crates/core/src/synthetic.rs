//! Seeded synthetic corpora whose topics the stub embedder can tell apart.
//!
//! Every topic owns a disjoint vocabulary built from its name: the name
//! itself, a few topic-wide words and three subtopic word groups. A chunk is a
//! four-word heading followed by two eight-word sentences drawn according to
//! a [`SentenceMix`], so a document of such chunks splits back into the same
//! chunks at a chunk size of [`WORDS_PER_CHUNK`].

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Chunk, Document};
use crate::providers::StubEmbedder;

pub const WORDS_PER_CHUNK: usize = 20;
const BODY_SENTENCES: usize = 2;

/// Word make-up of an eight-word body sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceMix {
    pub name: usize,
    pub common: usize,
    pub subtopic: usize,
}

impl SentenceMix {
    /// Subtopics dominate, so each subtopic block is a dense region joined
    /// to its siblings by a few edges.
    pub const DISTINCT: Self = Self { name: 2, common: 1, subtopic: 5 };
    /// Topic-wide words dominate and subtopic blocks blend together.
    pub const BLURRED: Self = Self { name: 2, common: 2, subtopic: 4 };
}
const SUBTOPICS: usize = 3;

const NAMES: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu", "xi",
    "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
];
const SYLLABLES: [&str; 16] = [
    "ar", "bel", "cor", "dun", "esk", "fal", "gor", "hin", "ith", "jor", "kel", "lum", "mor", "nax", "oth", "pyr",
];

pub fn topic_name(t: usize) -> String {
    NAMES.get(t).map_or_else(|| format!("topic{t}"), |n| n.to_string())
}

/// Words of one topic. No two of them, and none of them and the heading
/// words, share a stub embedding bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicVocabulary {
    pub name: String,
    /// Topic-wide words used in every subtopic.
    pub common: Vec<String>,
    pub subtopics: Vec<Vec<String>>,
}

const HEADING: [&str; 2] = ["Notes", "on"];

/// Vocabulary of topic `t`: the topic name followed by syllables, skipping
/// any word whose stub bucket is already taken.
pub fn vocabulary(t: usize) -> TopicVocabulary {
    let name = topic_name(t);
    let hasher = StubEmbedder::default();
    let mut taken: HashSet<usize> = HEADING.iter().chain([&name.as_str()]).filter_map(|w| hasher.bucket(w)).collect();
    let singles = SYLLABLES.iter().map(|a| a.to_string());
    let pairs = SYLLABLES.iter().flat_map(|a| SYLLABLES.iter().map(move |b| format!("{a}{b}")));
    let mut words = singles
        .chain(pairs)
        .map(|suffix| format!("{name}{suffix}"))
        .filter(|w| hasher.bucket(w).is_some_and(|b| taken.insert(b)));
    let mut take = |n: usize| words.by_ref().take(n).collect::<Vec<_>>();
    let subtopics = (0..SUBTOPICS).map(|_| take(4)).collect();
    let common = take(4);
    TopicVocabulary { name, common, subtopics }
}

impl TopicVocabulary {
    fn sentence(&self, sub: usize, mix: SentenceMix, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut words = vec![self.name.clone(); mix.name];
        words.extend((0..mix.common).map(|_| self.common.choose(rng).unwrap().clone()));
        words.extend((0..mix.subtopic).map(|_| self.subtopics[sub].choose(rng).unwrap().clone()));
        words.shuffle(rng);
        words
    }

    fn heading(&self, sub: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let detail = self.subtopics[sub].choose(rng).unwrap();
        let mut words: Vec<String> = HEADING.iter().map(|w| w.to_string()).collect();
        words.extend([self.name.clone(), detail.clone()]);
        words
    }
}

fn join_sentences(sentences: Vec<Vec<String>>) -> String {
    sentences.into_iter().map(|s| format!("{}.", s.join(" "))).collect::<Vec<_>>().join(" ")
}

fn chunk_text(vocab: &TopicVocabulary, sub: usize, mix: SentenceMix, rng: &mut ChaCha8Rng) -> String {
    let mut sentences = vec![vocab.heading(sub, rng)];
    sentences.extend((0..BODY_SENTENCES).map(|_| vocab.sentence(sub, mix, rng)));
    join_sentences(sentences)
}

/// One document per topic, named after the topic, each walking through its
/// subtopics in contiguous blocks.
pub fn topic_blocks(topics: usize, chunks_per_topic: usize, seed: u64) -> Vec<Chunk> {
    topic_blocks_with(topics, chunks_per_topic, seed, SentenceMix::DISTINCT)
}

pub fn topic_blocks_with(topics: usize, chunks_per_topic: usize, seed: u64, mix: SentenceMix) -> Vec<Chunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(topics * chunks_per_topic);
    for t in 0..topics {
        let vocab = vocabulary(t);
        for i in 0..chunks_per_topic {
            let sub = i * SUBTOPICS / chunks_per_topic.max(1);
            out.push(Chunk::new(vocab.name.clone(), i as u64, chunk_text(&vocab, sub, mix, &mut rng)));
        }
    }
    out
}

/// Topic index of a chunk from [`topic_blocks`] or [`bench_chunks`].
pub fn topic_of_doc(doc_id: &str) -> Option<usize> {
    let base = doc_id.split('-').next().unwrap_or(doc_id);
    NAMES
        .iter()
        .position(|n| *n == base)
        .or_else(|| base.strip_prefix("topic").and_then(|n| n.parse().ok()))
}

/// A single document that cycles through `topics`, emitting `segment`
/// single-topic chunks and then one bridge chunk that mixes the current topic
/// with the next. Returns the chunks and the topics each one draws from.
pub fn mixed_topics(topics: usize, total: usize, segment: usize, seed: u64) -> (Vec<Chunk>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabs: Vec<TopicVocabulary> = (0..topics).map(vocabulary).collect();
    let mut chunks = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut t = 0;
    while chunks.len() < total {
        for _ in 0..segment.min(total - chunks.len()) {
            let sub = rng.gen_range(0..SUBTOPICS);
            chunks.push(Chunk::new("mixed", chunks.len() as u64, chunk_text(&vocabs[t], sub, SentenceMix::DISTINCT, &mut rng)));
            labels.push(vec![t]);
        }
        if chunks.len() < total {
            let next = (t + 1) % topics;
            let mut sentences = vec![vocabs[t].heading(rng.gen_range(0..SUBTOPICS), &mut rng)];
            let mix = SentenceMix::DISTINCT;
            sentences.push(vocabs[t].sentence(rng.gen_range(0..SUBTOPICS), mix, &mut rng));
            sentences.push(vocabs[next].sentence(rng.gen_range(0..SUBTOPICS), mix, &mut rng));
            chunks.push(Chunk::new("mixed", chunks.len() as u64, join_sentences(sentences)));
            labels.push(vec![t, next]);
            t = next;
        }
    }
    (chunks, labels)
}

/// Corpus for scaling runs: documents of `doc_len` chunks, each on a random
/// topic out of `total / 100` (at least 4), in random subtopic blocks.
pub fn bench_chunks(total: usize, doc_len: usize, seed: u64) -> Vec<Chunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = (total / 100).max(4);
    let vocabs: Vec<TopicVocabulary> = (0..topics).map(vocabulary).collect();
    let mut out = Vec::with_capacity(total);
    let mut doc = 0;
    while out.len() < total {
        let t = rng.gen_range(0..topics);
        let doc_id = format!("{}-{doc}", vocabs[t].name);
        let mut sub = rng.gen_range(0..SUBTOPICS);
        for i in 0..doc_len.min(total - out.len()) {
            if rng.gen_bool(0.1) {
                sub = rng.gen_range(0..SUBTOPICS);
            }
            out.push(Chunk::new(doc_id.clone(), i as u64, chunk_text(&vocabs[t], sub, SentenceMix::DISTINCT, &mut rng)));
        }
        doc += 1;
    }
    out
}

/// Groups chunks back into whole documents, in first-seen order.
pub fn to_documents(chunks: &[Chunk]) -> Vec<Document> {
    let mut docs: Vec<Document> = Vec::new();
    for c in chunks {
        match docs.iter_mut().find(|d| d.doc_id == c.doc_id) {
            Some(d) => {
                d.text.push(' ');
                d.text.push_str(&c.text);
            }
            None => docs.push(Document::new(c.doc_id.clone(), c.text.clone())),
        }
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_document;

    #[test]
    fn generation_is_seeded() {
        assert_eq!(topic_blocks(4, 10, 1), topic_blocks(4, 10, 1));
        assert_ne!(topic_blocks(4, 10, 1), topic_blocks(4, 10, 2));
        assert_eq!(bench_chunks(300, 50, 9), bench_chunks(300, 50, 9));
    }

    #[test]
    fn documents_split_back_into_the_same_chunks() {
        let chunks = bench_chunks(230, 50, 3);
        let mut again = Vec::new();
        for d in to_documents(&chunks) {
            again.extend(split_document(&d, WORDS_PER_CHUNK).unwrap());
        }
        again.sort_by(|a, b| (&a.doc_id, a.seq_index).cmp(&(&b.doc_id, b.seq_index)));
        let mut want = chunks;
        want.sort_by(|a, b| (&a.doc_id, a.seq_index).cmp(&(&b.doc_id, b.seq_index)));
        assert_eq!(again, want);
    }

    #[test]
    fn mixed_corpus_has_bridges() {
        let (chunks, labels) = mixed_topics(4, 200, 9, 5);
        assert_eq!(chunks.len(), 200);
        assert_eq!(labels.iter().filter(|l| l.len() == 2).count(), 20);
        assert!(chunks.iter().all(|c| c.approx_tokens == WORDS_PER_CHUNK));
    }

    #[test]
    fn vocabulary_buckets_are_distinct() {
        let e = StubEmbedder::default();
        for t in 0..30 {
            let v = vocabulary(t);
            let words: Vec<&String> = v.subtopics.iter().flatten().chain(&v.common).collect();
            assert_eq!(words.len(), 16);
            let mut buckets: HashSet<usize> = ["notes", "on", v.name.as_str()].iter().filter_map(|w| e.bucket(w)).collect();
            let base = buckets.len();
            buckets.extend(words.iter().filter_map(|w| e.bucket(w)));
            assert_eq!(buckets.len(), base + 16, "topic {t}");
        }
    }

    #[test]
    fn topic_lookup() {
        assert_eq!(topic_of_doc("gamma"), Some(2));
        assert_eq!(topic_of_doc("omega-17"), Some(23));
        assert_eq!(topic_of_doc("topic31-2"), Some(31));
        assert_eq!(topic_of_doc("mixed"), None);
    }
}
