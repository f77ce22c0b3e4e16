"""Word-level vocabulary shared by the planner, generator and fluency LM.

Eight reserved tokens occupy ids 0..7 and are never assigned to corpus
words.  The vocabulary is a pure function of the corpus word multiset and
min_count (frequency ties broken lexicographically).
"""

from collections import Counter
from dataclasses import dataclass, field

PAD = "[PAD]"
UNK = "[UNK]"
BOS = "[BOS]"
EOS = "[EOS]"
MASK = "[MASK]"
SEN = "[SEN]"
BOK = "[BOK]"
SEP = "[SEP]"

SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, MASK, SEN, BOK, SEP)

PAD_ID, UNK_ID, BOS_ID, EOS_ID, MASK_ID, SEN_ID, BOK_ID, SEP_ID = range(8)


@dataclass
class Vocabulary:
    token_to_id: dict = field(default_factory=dict)
    id_to_token: list = field(default_factory=list)

    def __len__(self):
        return len(self.id_to_token)

    @property
    def pad(self):
        return PAD_ID

    @property
    def unk(self):
        return UNK_ID

    @property
    def bos(self):
        return BOS_ID

    @property
    def eos(self):
        return EOS_ID

    @property
    def mask(self):
        return MASK_ID

    @property
    def sen(self):
        return SEN_ID

    @property
    def bok(self):
        return BOK_ID

    @property
    def sep(self):
        return SEP_ID

    def encode(self, tokens):
        """Map tokens to ids; out-of-vocabulary words become UNK."""
        t2i = self.token_to_id
        return [t2i.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        i2t = self.id_to_token
        return [i2t[i] for i in ids]

    def save(self, path):
        """Persist as newline-delimited "token<TAB>id", sorted by id."""
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path):
        id_to_token = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.split("\t")
                idx = int(idx)
                if idx != len(id_to_token):
                    raise ValueError(f"vocabulary file out of order at id {idx}")
                id_to_token.append(tok)
        if list(id_to_token[:8]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary file missing reserved tokens at ids 0-7")
        return cls({t: i for i, t in enumerate(id_to_token)}, id_to_token)


def build_vocab(corpus, min_count=1):
    """Build a deterministic vocabulary over the corpus documents.

    Every word (in prompts, targets and keyphrases) with frequency >=
    min_count gets an id; ordering is by descending frequency then
    lexicographic.  Words colliding with a reserved surface form are
    dropped (they encode as UNK).
    """
    if not corpus:
        raise ValueError("empty corpus")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for doc in corpus:
        counts.update(doc.prompt)
        for sent in doc.target:
            counts.update(sent)
        for phrase in doc.keyphrases:
            counts.update(phrase)
    reserved = set(SPECIAL_TOKENS)
    words = sorted(
        (w for w, c in counts.items() if c >= min_count and w not in reserved),
        key=lambda w: (-counts[w], w),
    )
    id_to_token = list(SPECIAL_TOKENS) + words
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token)
