"""Closed-vocabulary tokenizer and answer canonicalization.

The query/answer language is a closed template grammar, so the tokenizer
is word-level: lowercase, split off sentence punctuation, look up ids.
Canonicalization turns any answer string (including arbitrary model
output) into a comparable record where explanation conjuncts are a set,
making "no A and no B" equal to "no B and no A".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .rules import (
    ANSWER_CAN,
    ANSWER_CANNOT,
    ANSWER_FORBIDDEN,
    REASON_ON_TOP_OF_SPHERE,
    REASON_SPHERE_UNDER,
)
from .scenes import COLORS, MATERIALS, SHAPES, SIZES

PAD, SOS, EOS, SEPA = "[PAD]", "[SOS]", "[EOS]", "[SEPA]"
SPECIALS = (PAD, SOS, EOS, SEPA)

ANSWER_INVALID = "invalid"

_TEMPLATE_WORDS = (
    "please", "put", "the", "on", "top", "of", "under",
    "exchange", "color", "position", "and",
)
_ANSWER_WORDS = (
    "no", "problem", "this", "action", "cannot", "be", "done",
    "because", "there", "is", "forbidden", "you", "an", "object",
)
_PUNCT = (".", ",")


class OOVError(ValueError):
    def __init__(self, word: str):
        super().__init__(f"word not in vocabulary: {word!r}")
        self.word = word


def normalize(text: str) -> str:
    """Lowercase and split punctuation off word ends; canonical token stream."""
    spaced = re.sub(r"([.,])", r" \1 ", text.lower())
    return " ".join(spaced.split())


class Vocabulary:
    """token <-> id bijection with stable special ids."""

    def __init__(self, tokens: list[str]):
        if list(tokens[: len(SPECIALS)]) != list(SPECIALS):
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def sos_id(self) -> int:
        return self.ids[SOS]

    @property
    def eos_id(self) -> int:
        return self.ids[EOS]

    @property
    def sepa_id(self) -> int:
        return self.ids[SEPA]

    @classmethod
    def default(cls) -> "Vocabulary":
        words: list[str] = list(SPECIALS)
        for group in (_TEMPLATE_WORDS, _ANSWER_WORDS, SIZES, COLORS, MATERIALS, SHAPES, _PUNCT):
            for w in group:
                if w not in words:
                    words.append(w)
        return cls(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([t for t in tokens if t])

    def encode(self, text: str, max_len: int = 64, *, start: str = SOS) -> list[int]:
        """[start] words [EOS], padded to max_len. Raises on OOV or overflow."""
        words = normalize(text).split()
        ids = [self.ids[start]]
        for w in words:
            if w not in self.ids:
                raise OOVError(w)
            ids.append(self.ids[w])
        ids.append(self.eos_id)
        if len(ids) > max_len:
            raise ValueError(
                f"encoded length {len(ids)} exceeds max_len {max_len}"
            )
        ids.extend([self.pad_id] * (max_len - len(ids)))
        return ids

    def decode(self, ids) -> str:
        """Token stream back to normalized text; stops at [EOS], skips specials."""
        words = []
        for i in ids:
            tok = self.tokens[int(i)] if 0 <= int(i) < len(self.tokens) else PAD
            if tok == EOS:
                break
            if tok in (PAD, SOS, SEPA):
                continue
            words.append(tok)
        return " ".join(words)


@dataclass(frozen=True)
class CanonicalAnswer:
    answer_type: str
    missing: frozenset[str] = frozenset()
    forbidden_reason: str | None = None


_CAN_PREFIX = "no problem ."
_CANNOT_PREFIX = "this action cannot be done ."
_FORBIDDEN_PREFIX = "this action is forbidden ."
_REASON_TEXTS = {
    REASON_SPHERE_UNDER: "you cannot put the sphere under an object",
    REASON_ON_TOP_OF_SPHERE: "you cannot put an object on top of the sphere",
}

INVALID_ANSWER = CanonicalAnswer(ANSWER_INVALID)


def _extract_conjuncts(tokens: list[str]) -> frozenset[str]:
    out = []
    i = 0
    while i < len(tokens):
        if tokens[i] == "no":
            j = i + 1
            words = []
            while j < len(tokens) and tokens[j] not in ("and", ".", ",", "no"):
                words.append(tokens[j])
                j += 1
            if words:
                out.append(" ".join(words))
            i = j
        else:
            i += 1
    return frozenset(out)


def canonicalize_answer(text: str) -> CanonicalAnswer:
    """Total function from any answer string to its canonical record."""
    norm = normalize(text)
    if norm.startswith(_CAN_PREFIX):
        return CanonicalAnswer(ANSWER_CAN)
    if norm.startswith(_CANNOT_PREFIX):
        rest = norm[len(_CANNOT_PREFIX) :]
        return CanonicalAnswer(ANSWER_CANNOT, _extract_conjuncts(rest.split()))
    if norm.startswith(_FORBIDDEN_PREFIX):
        rest = norm[len(_FORBIDDEN_PREFIX) :]
        reason = None
        for key, phrase in _REASON_TEXTS.items():
            if phrase in rest:
                reason = key
                rest = rest.replace(phrase, " ")
                break
        return CanonicalAnswer(
            ANSWER_FORBIDDEN, _extract_conjuncts(rest.split()), reason
        )
    return INVALID_ANSWER


def explanation_score(pred: CanonicalAnswer, gold: CanonicalAnswer) -> float:
    """Jaccard overlap of missing-object sets; Jaccard(empty, empty) = 1.

    On pairs where either side carries a forbidden reason, a reason
    mismatch scores 0 regardless of the sets.
    """
    if pred.forbidden_reason != gold.forbidden_reason and (
        pred.forbidden_reason or gold.forbidden_reason
    ):
        return 0.0
    if not pred.missing and not gold.missing:
        return 1.0
    union = pred.missing | gold.missing
    inter = pred.missing & gold.missing
    return len(inter) / len(union)


def answers_equal(pred: CanonicalAnswer, gold: CanonicalAnswer) -> bool:
    """Exact-set equality: type, conjunct set, and reason all match."""
    return (
        pred.answer_type == gold.answer_type
        and pred.missing == gold.missing
        and pred.forbidden_reason == gold.forbidden_reason
    )
