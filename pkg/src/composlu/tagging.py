"""Label-set algebra for spoken sequence labeling.

Covers the three tag vocabularies (base labels, BIO expansion, BIO plus the
null subtoken tag), span <-> BIO codecs with deterministic repair of
malformed model output, subword alignment, and the enriched-transcript
codec used by the direct sequence-to-sequence baselines.

All functions here are pure and total on their stated domains; decoders of
model output never raise on malformed input, they repair and count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import AlignError, SpanError, VocabError

O_TAG = "O"
NULL_TAG = "∅"  # tag carried by non-first subtokens of a word
SUBWORD_PREFIX = "##"  # marks a continuation subtoken

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"


class LabelSet:
    """Base labels plus their derived BIO and BIO+null vocabularies.

    ``bio`` is [O, l1_B, l1_I, l2_B, ...]; ``aligned`` appends the null tag
    last, so |bio| == 2|base|+1 and |aligned| == |bio|+1.
    """

    def __init__(self, base: Sequence[str]):
        base = list(base)
        if len(set(base)) != len(base):
            raise VocabError(f"duplicate base labels: {base}")
        for reserved in (O_TAG, NULL_TAG):
            if reserved in base:
                raise VocabError(f"reserved symbol {reserved!r} cannot be a base label")
        self.base = base
        self.bio: List[str] = [O_TAG]
        for lbl in base:
            self.bio.append(f"{lbl}_B")
            self.bio.append(f"{lbl}_I")
        self.aligned: List[str] = self.bio + [NULL_TAG]
        self.bio_index: Dict[str, int] = {t: i for i, t in enumerate(self.bio)}
        self.aligned_index: Dict[str, int] = {t: i for i, t in enumerate(self.aligned)}

    @property
    def n_aligned(self) -> int:
        return len(self.aligned)

    def aligned_ids(self, tags: Sequence[str]) -> List[int]:
        try:
            return [self.aligned_index[t] for t in tags]
        except KeyError as e:
            raise VocabError(f"unknown tag symbol {e.args[0]!r}") from None

    def aligned_tags(self, ids: Sequence[int]) -> List[str]:
        return [self.aligned[i] for i in ids]

    @classmethod
    def load(cls, path) -> "LabelSet":
        with open(path, encoding="utf-8") as f:
            return cls([line.strip() for line in f if line.strip()])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for lbl in self.base:
                f.write(lbl + "\n")


@dataclass(frozen=True)
class EntitySpan:
    """One labeled mention: inclusive word indices into its sentence."""

    label: str
    start: int
    end: int
    mention: str

    @classmethod
    def from_words(cls, label: str, start: int, end: int, words: Sequence[str]) -> "EntitySpan":
        return cls(label, start, end, " ".join(words[start : end + 1]))


def validate_spans(spans: Sequence[EntitySpan], n_words: int):
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for s in ordered:
        if not (0 <= s.start <= s.end < n_words):
            raise SpanError(f"span {s} outside sentence of {n_words} words")
    for a, b in zip(ordered, ordered[1:]):
        if b.start <= a.end:
            raise SpanError(f"overlapping spans: {a} and {b}")
    return ordered


def spans_to_bio(spans: Sequence[EntitySpan], n_words: int) -> List[str]:
    """Word-level BIO tags; adjacent same-label spans restart with B."""
    ordered = validate_spans(spans, n_words)
    tags = [O_TAG] * n_words
    for s in ordered:
        tags[s.start] = f"{s.label}_B"
        for i in range(s.start + 1, s.end + 1):
            tags[i] = f"{s.label}_I"
    return tags


def bio_to_spans(tags: Sequence[str], words: Optional[Sequence[str]] = None,
                 label_set: Optional[LabelSet] = None) -> List[EntitySpan]:
    """Decode BIO tags to spans, repairing malformed sequences.

    Repair rule: an I tag with no open span of the same label acts as B.
    With ``label_set`` given, unknown symbols raise VocabError; otherwise
    any ``X_B``/``X_I``/``O`` shaped symbol is accepted.
    """
    spans: List[EntitySpan] = []
    start = None
    label = None

    def close(end: int):
        nonlocal start, label
        if start is not None:
            mention = " ".join(words[start : end + 1]) if words is not None else ""
            spans.append(EntitySpan(label, start, end, mention))
        start, label = None, None

    for i, t in enumerate(tags):
        if label_set is not None and t not in label_set.bio_index:
            raise VocabError(f"unknown tag symbol {t!r}")
        if t == O_TAG:
            close(i - 1)
            continue
        if t.endswith("_B") or t.endswith("_I"):
            lbl = t[:-2]
            if t.endswith("_B") or label != lbl:
                close(i - 1)
                start, label = i, lbl
            # matching _I continues the open span
        else:
            raise VocabError(f"unknown tag symbol {t!r}")
    close(len(tags) - 1)
    return spans


@dataclass
class Tokenization:
    """Word <-> subtoken alignment for one sentence.

    Non-first subtokens carry the ``##`` continuation prefix; stripping the
    prefix and concatenating a word's subtokens reproduces the word.
    """

    words: List[str]
    subtokens: List[str]
    word_of_subtoken: List[int]
    first_flags: List[bool]

    def __post_init__(self):
        if not (len(self.subtokens) == len(self.word_of_subtoken) == len(self.first_flags)):
            raise AlignError("tokenization field lengths disagree")


def align_to_subtokens(tags: Sequence[str], tok: Tokenization) -> List[str]:
    """Place each word tag on its first subtoken; others get the null tag."""
    if len(tags) != len(tok.words):
        raise AlignError(f"{len(tags)} tags for {len(tok.words)} words")
    return [tags[w] if first else NULL_TAG
            for w, first in zip(tok.word_of_subtoken, tok.first_flags)]


def collapse_from_subtokens(tags: Sequence[str], tok: Tokenization) -> Tuple[List[str], int]:
    """Inverse of align_to_subtokens for evaluation.

    Keeps the tag on each word's first subtoken. Non-null tags found on
    continuation subtokens are ignored; a null tag found on a first
    subtoken maps to O. Both repairs are tallied in the returned count.
    """
    if len(tags) != len(tok.subtokens):
        raise AlignError(f"{len(tags)} tags for {len(tok.subtokens)} subtokens")
    ignored = 0
    out = [O_TAG] * len(tok.words)
    for t, w, first in zip(tags, tok.word_of_subtoken, tok.first_flags):
        if first:
            if t == NULL_TAG:
                ignored += 1
            else:
                out[w] = t
        elif t != NULL_TAG:
            ignored += 1
    return out, ignored


# ---------------------------------------------------------------------------
# Enriched transcripts (direct sequence-to-sequence targets)
# ---------------------------------------------------------------------------


def open_marker(label: str) -> str:
    return f"⟨{label}⟩"


def close_marker(label: str) -> str:
    return f"⟨/{label}⟩"


def _marker_label(token: str) -> Optional[Tuple[str, bool]]:
    """(label, is_close) when the token is a marker, else None."""
    if len(token) >= 3 and token[0] == "⟨" and token[-1] == "⟩":
        inner = token[1:-1]
        if inner.startswith("/"):
            return inner[1:], True
        return inner, False
    return None


def build_enriched_sequence(words: Sequence[str], spans: Sequence[EntitySpan]) -> List[str]:
    """Transcript with each entity phrase wrapped in open/close markers."""
    ordered = validate_spans(spans, len(words))
    starts = {s.start: s for s in ordered}
    out: List[str] = []
    for i, w in enumerate(words):
        if i in starts:
            out.append(open_marker(starts[i].label))
        out.append(w)
        for s in ordered:
            if s.end == i:
                out.append(close_marker(s.label))
    return out


def parse_enriched_sequence(tokens: Sequence[str]) -> Tuple[List[str], List[EntitySpan], int]:
    """Recover (words, spans, n_malformed_markers) from an enriched
    transcript. Total on arbitrary token sequences: unmatched, crossed, or
    empty marker pairs are dropped and counted, never raised."""
    words: List[str] = []
    spans: List[EntitySpan] = []
    malformed = 0
    open_label: Optional[str] = None
    open_start = 0
    for token in tokens:
        mk = _marker_label(token)
        if mk is None:
            words.append(token)
            continue
        label, is_close = mk
        if not is_close:
            if open_label is not None:
                malformed += 1  # previous open never closed
            open_label, open_start = label, len(words)
        else:
            if open_label == label and len(words) > open_start:
                spans.append(EntitySpan.from_words(label, open_start, len(words) - 1, words))
                open_label = None
            elif open_label == label:
                malformed += 2  # empty pair: both markers dropped
                open_label = None
            else:
                malformed += 1  # close without matching open
    if open_label is not None:
        malformed += 1
    return words, spans, malformed


# ---------------------------------------------------------------------------
# Deterministic subword splitter and tokenizer
# ---------------------------------------------------------------------------

# Fixed syllable-like chunk table; greedy longest-match from the left with
# single characters as fallback. Guarantees multi-subtoken words exist.
SUBWORD_CHUNKS: Tuple[str, ...] = tuple(
    sorted(
        [c + v for c in "bcdfghjklmnprstvwyz" for v in "aeiou"]
        + [v + c for v in "aeiou" for c in "lnrst"]
        + ["ing", "ion", "igh", "ght", "ck", "th", "sh", "ch", "qu", "ee", "oo", "ay", "ey", "oy"],
        key=len,
        reverse=True,
    )
)


def split_word(word: str) -> List[str]:
    """Greedy longest-match split; continuation pieces carry ``##``."""
    pieces: List[str] = []
    i = 0
    while i < len(word):
        for chunk in SUBWORD_CHUNKS:
            if word.startswith(chunk, i):
                pieces.append(chunk)
                i += len(chunk)
                break
        else:
            pieces.append(word[i])
            i += 1
    return [pieces[0]] + [SUBWORD_PREFIX + p for p in pieces[1:]]


def tokenization_from_subtokens(subtokens: Sequence[str]) -> Tuple[Tokenization, int]:
    """Rebuild the word alignment of an arbitrary subtoken sequence.

    Model output may start with a continuation piece; such pieces open a
    new word anyway and are counted as repairs.
    """
    words: List[str] = []
    word_of: List[int] = []
    firsts: List[bool] = []
    repairs = 0
    for st in subtokens:
        cont = st.startswith(SUBWORD_PREFIX)
        body = st[len(SUBWORD_PREFIX):] if cont else st
        if cont and words:
            words[-1] += body
            word_of.append(len(words) - 1)
            firsts.append(False)
        else:
            if cont:
                repairs += 1
            words.append(body)
            word_of.append(len(words) - 1)
            firsts.append(True)
    return Tokenization(words, list(subtokens), word_of, firsts), repairs


class Tokenizer:
    """Closed-vocabulary subword tokenizer shared by every system.

    The subtoken vocabulary is derived deterministically from the word
    list: specials, then all subtokens in sorted order, then any marker
    tokens (a reserved range disjoint from words).
    """

    def __init__(self, words: Sequence[str], markers: Sequence[str] = ()):
        self.word_vocab = list(words)
        self._split_cache: Dict[str, List[str]] = {w: split_word(w) for w in self.word_vocab}
        pieces = sorted({st for parts in self._split_cache.values() for st in parts})
        self.id_of: Dict[str, int] = {BOS_TOKEN: 0, EOS_TOKEN: 1}
        for st in pieces:
            self.id_of[st] = len(self.id_of)
        self.marker_ids: Dict[str, int] = {}
        for m in markers:
            self.id_of[m] = len(self.id_of)
            self.marker_ids[m] = self.id_of[m]
        self.token_of: List[str] = [None] * len(self.id_of)
        for t, i in self.id_of.items():
            self.token_of[i] = t
        self.bos_id = 0
        self.eos_id = 1

    @property
    def vocab_size(self) -> int:
        return len(self.token_of)

    def tokenize(self, words: Sequence[str]) -> Tokenization:
        subtokens: List[str] = []
        word_of: List[int] = []
        firsts: List[bool] = []
        for wi, w in enumerate(words):
            parts = self._split_cache.get(w) or split_word(w)
            for k, p in enumerate(parts):
                subtokens.append(p)
                word_of.append(wi)
                firsts.append(k == 0)
        return Tokenization(list(words), subtokens, word_of, firsts)

    def encode_words(self, words: Sequence[str]) -> List[int]:
        tok = self.tokenize(words)
        return self.encode_subtokens(tok.subtokens)

    def encode_subtokens(self, subtokens: Iterable[str]) -> List[int]:
        try:
            return [self.id_of[st] for st in subtokens]
        except KeyError as e:
            raise VocabError(f"token {e.args[0]!r} not in vocabulary") from None

    def encode_mixed(self, tokens: Sequence[str]) -> List[int]:
        """Encode a word-level sequence that may contain marker tokens."""
        ids: List[int] = []
        for t in tokens:
            if t in self.marker_ids:
                ids.append(self.marker_ids[t])
            else:
                ids.extend(self.encode_subtokens(self._split_cache.get(t) or split_word(t)))
        return ids

    def decode_to_words(self, ids: Sequence[int]) -> Tuple[List[str], Tokenization, int]:
        """ids -> (words, tokenization, repairs); specials are skipped."""
        subtokens = []
        for i in ids:
            if i in (self.bos_id, self.eos_id):
                continue
            if not 0 <= i < len(self.token_of):
                raise VocabError(f"token id {i} out of range")
            subtokens.append(self.token_of[i])
        tok, repairs = tokenization_from_subtokens(subtokens)
        return tok.words, tok, repairs

    def decode_mixed(self, ids: Sequence[int]) -> Tuple[List[str], int]:
        """ids -> word-level tokens where markers stand alone and never
        absorb continuation pieces. For enriched-transcript output."""
        tokens: List[str] = []
        last_is_word = False
        repairs = 0
        for i in ids:
            if i in (self.bos_id, self.eos_id):
                continue
            if not 0 <= i < len(self.token_of):
                raise VocabError(f"token id {i} out of range")
            st = self.token_of[i]
            if st in self.marker_ids:
                tokens.append(st)
                last_is_word = False
                continue
            cont = st.startswith(SUBWORD_PREFIX)
            body = st[len(SUBWORD_PREFIX):] if cont else st
            if cont and last_is_word:
                tokens[-1] += body
            else:
                if cont:
                    repairs += 1
                tokens.append(body)
                last_is_word = True
        return tokens, repairs
