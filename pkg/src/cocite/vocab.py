"""Word-level vocabulary and tokenization.

The tokenizer is deliberately simple: lowercase, split on whitespace, map
through a corpus-built vocabulary with an [UNK] fallback. Sequences open
with [CLS], or with a per-domain special token such as [CVD] when a domain
is named, and are padded to the model's maximum length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import Counter

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)


class UnknownDomainError(KeyError):
    def __init__(self, domain: str):
        super().__init__(domain)
        self.domain = domain

    def __str__(self) -> str:
        return f"domain {self.domain!r} has no registered domain token"


def domain_token(domain: str) -> str:
    return f"[{domain.upper()}]"


@dataclass(frozen=True)
class Vocabulary:
    """Dense token -> id map with reserved and per-domain special tokens."""

    tokens: tuple[str, ...]
    domain_tokens: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        for name in RESERVED:
            if name not in ids:
                raise ValueError(f"reserved token {name} missing from vocabulary")
        for domain, tok in self.domain_tokens.items():
            if tok not in ids:
                raise ValueError(f"domain token {tok} for {domain!r} missing")
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def cls_id(self) -> int:
        return self._ids[CLS]

    @property
    def sep_id(self) -> int:
        return self._ids[SEP]

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(self.domain_tokens)

    def domain_token_id(self, domain: str) -> int:
        tok = self.domain_tokens.get(domain)
        if tok is None:
            raise UnknownDomainError(domain)
        return self._ids[tok]

    def special_ids(self) -> frozenset[int]:
        """Ids of reserved and domain tokens; excluded from lexical statistics."""
        ids = {self._ids[t] for t in RESERVED}
        ids.update(self._ids[t] for t in self.domain_tokens.values())
        return frozenset(ids)

    def word_ids(self, text: str) -> list[int]:
        """Lexical ids of a text: words mapped through the vocabulary, [UNK] dropped."""
        unk = self.unk_id
        out = []
        for word in text.lower().split():
            i = self._ids.get(word, unk)
            if i != unk:
                out.append(i)
        return out

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "domain_tokens": dict(self.domain_tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tokens=tuple(d["tokens"]), domain_tokens=dict(d["domain_tokens"]))


def build_vocabulary(
    texts: list[str],
    vocab_size: int,
    domains: tuple[str, ...] = (),
) -> Vocabulary:
    """Build a vocabulary from a corpus, capped at ``vocab_size`` entries.

    Reserved tokens come first, then one special token per domain (sorted),
    then the most frequent words; frequency ties break lexicographically so
    the result is deterministic.
    """
    domains = tuple(sorted(set(domains)))
    specials = list(RESERVED) + [domain_token(d) for d in domains]
    if vocab_size < len(specials):
        raise ValueError(
            f"vocab_size {vocab_size} cannot hold {len(specials)} special tokens"
        )
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(text.lower().split())
    budget = vocab_size - len(specials)
    words = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    tokens = tuple(specials + [w for w, _ in words])
    return Vocabulary(tokens=tokens, domain_tokens={d: domain_token(d) for d in domains})


@dataclass(frozen=True)
class TokenSequence:
    """Padded id sequence plus its attention mask (1 = real token, 0 = pad)."""

    ids: np.ndarray
    mask: np.ndarray

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def tokenize(
    text: str,
    vocab: Vocabulary,
    max_seq_len: int,
    domain: str | None = None,
) -> TokenSequence:
    """Turn a text into ids: leading [CLS] (or the domain token), then words.

    The sequence is truncated and padded to exactly ``max_seq_len``.
    Raises UnknownDomainError for a domain without a registered token.
    """
    first = vocab.cls_id if domain is None else vocab.domain_token_id(domain)
    unk = vocab.unk_id
    ids = [first]
    for word in text.lower().split():
        if len(ids) == max_seq_len:
            break
        ids.append(vocab._ids.get(word, unk))
    ids = ids[:max_seq_len]
    n_real = len(ids)
    ids.extend([vocab.pad_id] * (max_seq_len - n_real))
    mask = np.zeros(max_seq_len, dtype=np.int64)
    mask[:n_real] = 1
    return TokenSequence(ids=np.asarray(ids, dtype=np.int64), mask=mask)
