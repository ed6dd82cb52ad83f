"""Byte-level tokenizer: one payload byte is one token.

Ids ``0..255`` are the byte values themselves, ``256`` is padding and ``257``
is the unknown token (never produced by :func:`encode`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyPayload, InvalidHexChar, NonByteToken, OddLength

VOCAB_SIZE = 258
PAD_ID = 256
UNK_ID = 257
DEFAULT_MAX_LEN = 730
FULL_PAYLOAD_MAX_LEN = 1460

_HEX = frozenset("0123456789abcdefABCDEF")


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    mask: np.ndarray
    true_len: int

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.true_len == other.true_len
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.mask, other.mask)
        )


def encode(payload: bytes, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Token ids for ``payload``, truncated to its first ``max_len`` bytes and padded."""
    if len(payload) == 0:
        raise EmptyPayload("cannot encode an empty payload")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    n = min(len(payload), max_len)
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[:n] = np.frombuffer(bytes(payload[:n]), dtype=np.uint8)
    mask = np.zeros(max_len, dtype=np.int8)
    mask[:n] = 1
    return TokenSequence(ids, mask, n)


def decode(seq: TokenSequence) -> bytes:
    head = np.asarray(seq.ids[: seq.true_len])
    bad = np.flatnonzero((head < 0) | (head > 255))
    if bad.size:
        i = int(bad[0])
        raise NonByteToken(f"token id {int(head[i])} at position {i} is not a byte")
    return head.astype(np.uint8).tobytes()


def encode_batch(payloads: Sequence[bytes], max_len: int, trim: bool = False):
    """Stack payloads into ``(ids, mask)`` arrays of shape ``(n, L)``.

    With ``trim`` the width ``L`` is the longest (truncated) payload in the
    batch rather than ``max_len``.
    """
    lens = [min(len(p), max_len) for p in payloads]
    if any(n == 0 for n in lens):
        raise EmptyPayload("cannot encode an empty payload")
    width = max(lens) if (trim and lens) else max_len
    ids = np.full((len(payloads), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(payloads), width), dtype=np.int8)
    for row, (p, n) in enumerate(zip(payloads, lens)):
        ids[row, :n] = np.frombuffer(bytes(p[:n]), dtype=np.uint8)
        mask[row, :n] = 1
    return ids, mask


def hex_to_bytes(s: str) -> bytes:
    for i, ch in enumerate(s):
        if ch not in _HEX:
            raise InvalidHexChar(ch, i)
    if len(s) % 2:
        raise OddLength(f"hex string has odd length {len(s)}")
    return bytes.fromhex(s)


def bytes_to_hex(b: bytes) -> str:
    return bytes(b).hex()


@dataclass
class TokenizedDataset:
    """Payloads, truncated to ``max_len`` and kept as bytes, plus integer labels."""

    payloads: list
    labels: np.ndarray
    max_len: int
    n_classes: int

    @classmethod
    def from_records(cls, records, max_len: int, n_classes: int | None = None):
        payloads = [bytes(r.payload[:max_len]) for r in records]
        if any(len(p) == 0 for p in payloads):
            raise EmptyPayload("dataset contains an empty payload")
        labels = np.array([r.label for r in records], dtype=np.int64)
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels.size else 0
        return cls(payloads, labels, max_len, n_classes)

    def __len__(self):
        return len(self.payloads)

    def batch(self, index, trim: bool = True):
        """``(ids, mask, labels)`` for the rows in ``index``."""
        rows = [self.payloads[i] for i in index]
        ids, mask = encode_batch(rows, self.max_len, trim=trim)
        return ids, mask, self.labels[np.asarray(index, dtype=np.int64)]
