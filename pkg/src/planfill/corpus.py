"""Synthetic corpus with known structure, plus keyphrase extraction.

Documents pair a short topic-naming prompt with a multi-sentence target
built from templated sentence frames.  Frames interleave function words
with topic-specific entity phrases and per-topic filler words, so every
keyphrase occurs contiguously in the target and the keyphrase coverage of
content words is controllable.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

# Function words (plus punctuation) that never count as content and break
# keyphrase runs.
STOPWORDS = frozenset(
    """the a an of to in on for with and or but is are was were be been it its
    this that these those as at by from has have had not no so if then they
    we you he she will would can could may might do does did there when while
    about more most some any all each much very . ,""".split()
)


@dataclass
class Document:
    prompt: list
    target: list  # list of sentences, each a list of tokens
    keyphrases: list  # list of phrases, each a list of tokens

    def flat_target(self):
        return [t for sent in self.target for t in sent]


@dataclass
class GrammarConfig:
    n_topics: int = 40
    entities_per_topic: int = 8
    sentences_per_doc: tuple = (4, 6)
    sentence_length: tuple = (10, 20)
    filler_pool: int = 900
    entity_pool: int = 20  # candidate words per topic
    kp_coverage: float = 0.30
    max_phrase_len: int = 10

    def validate(self):
        if self.sentences_per_doc[0] > self.sentences_per_doc[1]:
            raise ValueError("empty sentences_per_doc range")
        if not (0.0 < self.kp_coverage < 1.0):
            raise ValueError("kp_coverage must be in (0, 1)")
        if self.n_topics < 1 or self.entities_per_topic < 1:
            raise ValueError("need at least one topic and entity")


_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"

# Base sentence frames: "P" marks an entity-phrase slot, "F" a filler slot,
# anything else is a literal function word.
_FRAMES = [
    ["the", "P", "is", "F", "of", "the", "P"],
    ["it", "was", "F", "that", "the", "P", "had", "F"],
    ["the", "P", "can", "F", "with", "the", "P"],
    ["there", "was", "a", "F", "in", "the", "P"],
    ["the", "P", "of", "F", "was", "not", "F"],
    ["so", "the", "P", "would", "F", "the", "P"],
]

_EXT_STOPS = ["and", "with", "in", "for", "by"]

_PHRASE_LENS = [1, 1, 1, 2, 2, 2, 2, 3]  # cycled over entities_per_topic


def _word_pool(rng, n, syllables=(2, 3)):
    """Generate n unique pronounceable pseudo-words."""
    seen = set()
    out = []
    while len(out) < n:
        k = rng.integers(syllables[0], syllables[1] + 1)
        w = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(k)
        )
        if w not in seen and w not in STOPWORDS:
            seen.add(w)
            out.append(w)
    return out


class _Grammar:
    """Fixed inventory (topics, entities, filler table) for one corpus seed."""

    def __init__(self, cfg, rng):
        n_entity_words = cfg.n_topics * cfg.entity_pool
        pool = _word_pool(rng, cfg.n_topics + n_entity_words + cfg.filler_pool)
        self.topics = pool[: cfg.n_topics]
        entity_words = pool[cfg.n_topics : cfg.n_topics + n_entity_words]
        self.fillers = pool[cfg.n_topics + n_entity_words :]
        self.phrases = []  # per topic: list of entity phrases
        for t in range(cfg.n_topics):
            words = entity_words[t * cfg.entity_pool : (t + 1) * cfg.entity_pool]
            phrases, idx = [], 0
            for j in range(cfg.entities_per_topic):
                length = min(_PHRASE_LENS[j % len(_PHRASE_LENS)], cfg.max_phrase_len)
                if idx + length > len(words):
                    idx = 0
                phrases.append(tuple(words[idx : idx + length]))
                idx += length
            self.phrases.append(phrases)
        # Mostly-deterministic filler choice per (topic, frame, slot): a main
        # word plus two alternates sampled at render time.
        self.filler_table = {}
        n_slots = max(len([x for x in f if x == "F"]) for f in _FRAMES) + 12
        for t in range(cfg.n_topics):
            for fi in range(len(_FRAMES)):
                for si in range(n_slots):
                    picks = rng.choice(len(self.fillers), size=3, replace=False)
                    self.filler_table[(t, fi, si)] = tuple(self.fillers[p] for p in picks)

    def filler(self, topic, frame_idx, slot, rng):
        main, alt1, alt2 = self.filler_table[(topic, frame_idx, slot)]
        u = rng.random()
        return main if u < 0.85 else (alt1 if u < 0.95 else alt2)


def _render_sentence(gram, cfg, topic, rng):
    frame_idx = int(rng.integers(len(_FRAMES)))
    frame = _FRAMES[frame_idx]
    topic_phrases = gram.phrases[topic]
    picks = rng.choice(len(topic_phrases), size=frame.count("P"), replace=False)
    phrases = [topic_phrases[p] for p in picks]
    tokens, used, slot, pi = [], [], 0, 0
    for item in frame:
        if item == "P":
            tokens.extend(phrases[pi])
            used.append(phrases[pi])
            pi += 1
        elif item == "F":
            tokens.append(gram.filler(topic, frame_idx, slot, rng))
            slot += 1
        else:
            tokens.append(item)
    # Pad with "<stop> <filler>" units until the content-word count hits the
    # coverage target for this sentence's phrase tokens.
    n_phrase_tokens = sum(len(p) for p in used)
    want_content = max(n_phrase_tokens + 1, round(n_phrase_tokens / cfg.kp_coverage))
    n_content = sum(1 for t in tokens if t not in STOPWORDS)
    while n_content < want_content and len(tokens) <= cfg.sentence_length[1] - 3:
        tokens.append(_EXT_STOPS[int(rng.integers(len(_EXT_STOPS)))])
        tokens.append(gram.filler(topic, frame_idx, slot, rng))
        slot += 1
        n_content += 1
    tokens.append(".")
    return tokens, used


def synth_corpus(cfg, n_docs, rng):
    """Generate n_docs deterministic synthetic documents.

    Duplicate targets are resampled so a document-level split never shares
    a target across splits.
    """
    cfg.validate()
    gram = _Grammar(cfg, rng)
    docs, seen_targets = [], set()
    while len(docs) < n_docs:
        topic = int(rng.integers(cfg.n_topics))
        n_sent = int(rng.integers(cfg.sentences_per_doc[0], cfg.sentences_per_doc[1] + 1))
        sentences, used_phrases = [], []
        for _ in range(n_sent):
            toks, used = _render_sentence(gram, cfg, topic, rng)
            sentences.append(toks)
            used_phrases.extend(used)
        keyphrases, seen = [], set()
        for p in used_phrases:
            if p not in seen:
                seen.add(p)
                keyphrases.append(list(p))
        prompt = ["about", "the", gram.topics[topic], "with",
                  gram.filler(topic, 0, 11, rng)]
        key = tuple(t for s in sentences for t in s)
        if key in seen_targets:
            continue
        seen_targets.add(key)
        docs.append(Document(prompt, sentences, keyphrases))
    return docs


def split(corpus, fractions=(0.75, 0.125, 0.125)):
    """Deterministic positional split into (train, valid, test)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(corpus)
    n_train = round(fractions[0] * n)
    n_valid = round(fractions[1] * n)
    return (
        corpus[:n_train],
        corpus[n_train : n_train + n_valid],
        corpus[n_train + n_valid :],
    )


def _binom_ll(k, n, p):
    if p <= 0.0 or p >= 1.0:
        # MLE edge: terms with zero counts contribute zero
        out = 0.0
        if k > 0:
            out += k * math.log(p) if p > 0 else float("-inf")
        if n - k > 0:
            out += (n - k) * math.log(1.0 - p) if p < 1 else float("-inf")
        return out
    return k * math.log(p) + (n - k) * math.log(1.0 - p)


def llr_statistic(k1, n1, k2, n2):
    """-2 ln(lambda) for 'word rate equal in both corpora' vs 'fg exceeds bg'."""
    p1 = k1 / n1
    p2 = k2 / n2
    p = (k1 + k2) / (n1 + n2)
    return 2.0 * (
        _binom_ll(k1, n1, p1)
        + _binom_ll(k2, n2, p2)
        - _binom_ll(k1, n1, p)
        - _binom_ll(k2, n2, p)
    )


def topic_signatures(foreground_counts, background_counts, threshold=10.83):
    """Words whose foreground rate significantly exceeds the background rate."""
    n1 = sum(foreground_counts.values())
    n2 = sum(background_counts.values())
    if n1 <= 0 or n2 <= 0:
        raise ValueError("counts must have positive totals")
    out = set()
    for w, k1 in foreground_counts.items():
        k2 = background_counts.get(w, 0)
        if k1 / n1 <= k2 / n2:
            continue
        if llr_statistic(k1, n1, k2, n2) > threshold:
            out.add(w)
    return out


def extract_keyphrases(doc, signatures, max_len=10):
    """Signature-bearing contiguous content-word runs from the target.

    Runs are maximal within a sentence, must contain at least one signature
    word, and runs longer than max_len are discarded.  Duplicates keep their
    first occurrence only.
    """
    phrases, seen = [], set()
    for sent in doc.target:
        run = []
        for tok in sent + ["."]:
            if tok in STOPWORDS:
                if run:
                    key = tuple(run)
                    if (
                        len(run) <= max_len
                        and key not in seen
                        and any(t in signatures for t in run)
                    ):
                        seen.add(key)
                        phrases.append(list(run))
                    run = []
            else:
                run.append(tok)
    return phrases


def doc_topic_key(doc):
    """Grouping key for signature extraction: the prompt's first content
    word (the topic, for prompts that name one)."""
    for tok in doc.prompt:
        if tok not in STOPWORDS:
            return tok
    return ""


def extract_corpus_keyphrases(docs, threshold=10.83, max_len=10):
    """Re-derive every document's keyphrases from topic signatures.

    Documents sharing a topic key form the foreground; everything else is
    the background.
    """
    groups = {}
    for doc in docs:
        groups.setdefault(doc_topic_key(doc), []).append(doc)
    totals = Counter()
    group_counts = {}
    for key, members in groups.items():
        c = Counter()
        for doc in members:
            c.update(doc.flat_target())
        group_counts[key] = c
        totals.update(c)
    signatures = {}
    for key, fg in group_counts.items():
        bg = totals - fg
        if sum(bg.values()) <= 0:
            bg = Counter({"[none]": 1})
        signatures[key] = topic_signatures(fg, bg, threshold)
    return [
        Document(
            doc.prompt,
            doc.target,
            extract_keyphrases(doc, signatures[doc_topic_key(doc)], max_len),
        )
        for doc in docs
    ]


def kp_content_coverage(docs):
    """Fraction of content-word tokens covered by keyphrase occurrences."""
    covered = total = 0
    for doc in docs:
        flat = doc.flat_target()
        mark = [False] * len(flat)
        for phrase in doc.keyphrases:
            L = len(phrase)
            for i in range(len(flat) - L + 1):
                if flat[i : i + L] == phrase:
                    for j in range(i, i + L):
                        mark[j] = True
        for tok, m in zip(flat, mark):
            if tok not in STOPWORDS:
                total += 1
                covered += int(m)
    return covered / total if total else 0.0


def save_corpus(docs, path):
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            f.write(
                json.dumps(
                    {
                        "prompt": doc.prompt,
                        "target": doc.target,
                        "keyphrases": doc.keyphrases,
                    }
                )
                + "\n"
            )


def load_corpus(path):
    docs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            docs.append(Document(obj["prompt"], obj["target"], obj["keyphrases"]))
    return docs
