"""Per-token observable features: lemma, POS cluster, chunk, semantic, case, length.

Every feature maps a token to a small categorical code. Feature vectors use
0-based codes; a masked feature is all ``MASKED`` (-1) so ablations change
the observation model rather than the code space.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .corpus import KIND_PUNCT, KIND_SYMBOL, KIND_WORD, NA_VALUE
from .errors import EmptyVocabulary, InvalidSpec, MissingResource, UnknownTag
from . import resources

MASKED = -1

FEATURE_NAMES = ("lemma", "pos", "chunk", "semantic", "case", "length")

POS_CLUSTERS = ("CD", "NN", "NNP", "VB", "PUNCT", "IN", "SYM")
CHUNKS = ("NP", "VP", "PP", "NA")
SEMANTIC = ("Title", "FirstName", "LastName", "Location", "Time", "None")
CASES = ("UpperInitial", "Lower", "AllCaps", "Mixed", "NA")
LENGTH_BUCKETS = ("1", "2", "3", "4-5", "6-8", "9+")

_WORD_TAGS = (
    "CC CD DT EX FW IN JJ JJR JJS LS MD NN NNS NNP NNPS PDT POS PRP PRP$ "
    "RB RBR RBS RP SYM TO UH VB VBD VBG VBN VBP VBZ WDT WP WP$ WRB"
).split()
_PUNCT_TAGS = ["$", "#", "``", "''", "(", ")", "-LRB-", "-RRB-", ",", ".", ":"]
CANONICAL_POS = tuple(_WORD_TAGS + _PUNCT_TAGS)

_CLUSTER_OF = {
    "CD": "CD",
    "NN": "NN",
    "NNS": "NN",
    "NNP": "NNP",
    "NNPS": "NNP",
    "VB": "VB",
    "VBD": "VB",
    "VBG": "VB",
    "VBN": "VB",
    "VBP": "VB",
    "VBZ": "VB",
    "MD": "VB",
    "IN": "IN",
    "CC": "IN",
    "TO": "IN",
}
for _t in (",", ".", ":", "``", "''", "(", ")", "-LRB-", "-RRB-"):
    _CLUSTER_OF[_t] = "PUNCT"


def pos_cluster(tag, strict=False):
    """Collapse a Penn Treebank tag into one of the seven coarse clusters.

    Tags outside the canonical set fall into SYM, or raise
    :class:`UnknownTag` under ``strict``. An absent value (NA) is SYM.
    """
    if tag == NA_VALUE:
        return "SYM"
    if strict and tag not in CANONICAL_POS:
        raise UnknownTag(f"POS tag {tag!r} not in the canonical set")
    return _CLUSTER_OF.get(tag, "SYM")


def chunk_flatten(value):
    """Reduce a BIO chunk label to its phrase type (NP/VP/PP), else NA."""
    if value in (None, "", NA_VALUE, "O"):
        return "NA"
    if len(value) > 2 and value[1] == "-":
        value = value[2:]
    return value if value in ("NP", "VP", "PP") else "NA"


def case_feature(surface):
    letters = [c for c in surface if c.isalpha()]
    if not letters:
        return "NA"
    if letters[0].isupper() and all(c.islower() for c in letters[1:]):
        return "UpperInitial"
    if all(c.isupper() for c in letters):
        return "AllCaps"
    if all(c.islower() for c in letters):
        return "Lower"
    return "Mixed"


def length_feature(surface):
    n = len(surface)
    if n <= 3:
        return LENGTH_BUCKETS[n - 1]
    if n <= 5:
        return "4-5"
    if n <= 8:
        return "6-8"
    return "9+"


def lemmatise(surface, table):
    low = surface.lower()
    return table.get(low, low)


@dataclass(frozen=True)
class LexiconSet:
    """The word lists consulted by the semantic feature, plus the lemma table."""

    titles: frozenset
    firstnames: dict
    lastnames: dict
    locations: frozenset
    timewords: frozenset
    lemma_table: dict = field(default_factory=dict)


def default_lexicons():
    return LexiconSet(
        titles=resources.load_wordlist("titles.txt"),
        firstnames=resources.load_ranked("firstnames.tsv"),
        lastnames=resources.load_ranked("lastnames.tsv"),
        locations=resources.load_wordlist("locations.txt"),
        timewords=resources.load_wordlist("timewords.txt"),
        lemma_table=resources.load_lemma_table(),
    )


_TIME_PATTERNS = (
    re.compile(r"\d\d"),                      # bare hour written as two digits
    re.compile(r"\d{1,2}:\d{2}"),             # 3:30
    re.compile(r"\d{1,2}\.\d{2}"),            # 3.30
    re.compile(r"\d{1,2}(?::\d{2})?(?:am|pm)"),  # 7pm, 7:30pm
)


def _matches_time(low):
    return any(p.fullmatch(low) for p in _TIME_PATTERNS)


def semantic_feature(token, lexicons):
    """Classify a token against the lexicons, most specific class first.

    Priority runs Title > first/last name > Location > Time. Name class is
    decided by frequency rank (lower rank wins, ties go to LastName). Word
    lists only apply to word tokens; time patterns apply to any token.
    """
    low = token.surface.lower()
    if token.kind == KIND_WORD:
        if low in lexicons.titles:
            return "Title"
        first = lexicons.firstnames.get(low)
        last = lexicons.lastnames.get(low)
        if first is not None or last is not None:
            if last is None or (first is not None and first < last):
                return "FirstName"
            return "LastName"
        if low in lexicons.locations:
            return "Location"
    if low in lexicons.timewords or _matches_time(low):
        return "Time"
    return "None"


# ---------------------------------------------------------------------------
# Gazetteer
# ---------------------------------------------------------------------------

class Gazetteer:
    """Ranked lemma vocabulary mapping tokens to ids.

    Ids 1..V cover the vocabulary in descending corpus frequency; V+1 is
    out-of-vocabulary and V+2 is not-a-word (punctuation and symbols).
    """

    def __init__(self, ids, lemma_table):
        if not ids:
            raise EmptyVocabulary("gazetteer has no entries")
        self.ids = dict(ids)
        self.lemma_table = dict(lemma_table)
        v = len(self.ids)
        if sorted(self.ids.values()) != list(range(1, v + 1)):
            raise InvalidSpec("gazetteer ids must be exactly 1..V")
        self.oov_id = v + 1
        self.naw_id = v + 2

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return (
            isinstance(other, Gazetteer)
            and self.ids == other.ids
            and self.lemma_table == other.lemma_table
        )

    @property
    def cardinality(self):
        """Number of distinct ids a token can map to."""
        return len(self.ids) + 2

    def lookup(self, token):
        if token.kind in (KIND_PUNCT, KIND_SYMBOL):
            return self.naw_id
        lemma = lemmatise(token.surface, self.lemma_table)
        got = self.ids.get(lemma)
        if got is None:
            # surfaces whose lemma is unlisted may still match directly
            got = self.ids.get(token.surface.lower())
        return got if got is not None else self.oov_id

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("gazetteer v1\n")
            fh.write(f"entries {len(self.ids)} lemma_rows {len(self.lemma_table)}\n")
            for lemma, i in sorted(self.ids.items(), key=lambda kv: kv[1]):
                fh.write(f"{lemma}\t{i}\n")
            for surface, lemma in sorted(self.lemma_table.items()):
                fh.write(f"{surface}\t>\t{lemma}\n")

    @classmethod
    def load(cls, path):
        from .errors import ModelFormatError

        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "gazetteer v1":
                raise ModelFormatError(f"bad gazetteer header {header!r}")
            counts = fh.readline().split()
            n_ids, n_rows = int(counts[1]), int(counts[3])
            ids = {}
            for _ in range(n_ids):
                lemma, i = fh.readline().rstrip("\n").split("\t")
                ids[lemma] = int(i)
            table = {}
            for _ in range(n_rows):
                surface, _, lemma = fh.readline().rstrip("\n").split("\t")
                table[surface] = lemma
        return cls(ids, table)


def build_gazetteer(docs, lemma_table, window=3, min_freq=3, max_size=1200):
    """Build the lemma vocabulary from gold-tagged training documents.

    Candidates are lemmas seen within ``window`` tokens of any gold span
    (span tokens included). A candidate enters the vocabulary when its
    whole-corpus lemma frequency reaches ``min_freq``; the vocabulary is
    cut to the ``max_size`` most frequent (ties broken alphabetically).
    """
    freq = {}
    candidates = set()
    for doc in docs:
        lemmas = [
            None
            if t.kind in (KIND_PUNCT, KIND_SYMBOL)
            else lemmatise(t.surface, lemma_table)
            for t in doc.tokens
        ]
        for lem in lemmas:
            if lem is not None:
                freq[lem] = freq.get(lem, 0) + 1
        for span in doc.gold_spans:
            lo = max(0, span.start_token - window)
            hi = min(len(doc.tokens) - 1, span.end_token + window)
            for i in range(lo, hi + 1):
                if lemmas[i] is not None:
                    candidates.add(lemmas[i])
    kept = [lem for lem in candidates if freq[lem] >= min_freq]
    kept.sort(key=lambda lem: (-freq[lem], lem))
    kept = kept[:max_size]
    if not kept:
        raise EmptyVocabulary(
            f"no lemma near a gold span reaches frequency {min_freq}"
        )
    return Gazetteer({lem: i + 1 for i, lem in enumerate(kept)}, lemma_table)


# ---------------------------------------------------------------------------
# Feature vectors
# ---------------------------------------------------------------------------

def feature_cardinalities(gazetteer):
    return {
        "lemma": (gazetteer.cardinality if gazetteer is not None else 0),
        "pos": len(POS_CLUSTERS),
        "chunk": len(CHUNKS),
        "semantic": len(SEMANTIC),
        "case": len(CASES),
        "length": len(LENGTH_BUCKETS),
    }


def featurize(doc, gazetteer, lexicons, mask=()):
    """Encode a document as a ``(T, 6)`` int16 matrix of 0-based codes.

    Column order follows :data:`FEATURE_NAMES`. Masked features are -1
    throughout. POS and chunk columns come from the document's annotation
    columns and degrade to their NA codes when absent.
    """
    mask = set(mask)
    unknown = mask - set(FEATURE_NAMES)
    if unknown:
        raise InvalidSpec(f"unknown feature names in mask: {sorted(unknown)}")
    if "lemma" not in mask and gazetteer is None:
        raise MissingResource("featurize needs a gazetteer unless lemma is masked")
    if "semantic" not in mask and lexicons is None:
        raise MissingResource("featurize needs lexicons unless semantic is masked")

    T = len(doc.tokens)
    out = np.full((T, len(FEATURE_NAMES)), MASKED, dtype=np.int16)
    pos_col = doc.column("pos")
    chunk_col = doc.column("chunk")
    for t, tok in enumerate(doc.tokens):
        if "lemma" not in mask:
            out[t, 0] = gazetteer.lookup(tok) - 1
        if "pos" not in mask:
            out[t, 1] = POS_CLUSTERS.index(pos_cluster(pos_col[t]))
        if "chunk" not in mask:
            out[t, 2] = CHUNKS.index(chunk_flatten(chunk_col[t]))
        if "semantic" not in mask:
            out[t, 3] = SEMANTIC.index(semantic_feature(tok, lexicons))
        if "case" not in mask:
            out[t, 4] = CASES.index(case_feature(tok.surface))
        if "length" not in mask:
            out[t, 5] = LENGTH_BUCKETS.index(length_feature(tok.surface))
    return out
