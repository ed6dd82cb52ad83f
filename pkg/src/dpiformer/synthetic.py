"""Synthetic payload corpora with planted byte motifs.

Class ``k`` payloads carry motif ``k`` at a random offset inside the first
``visible_len`` bytes (so truncation to the model's window never hides it);
in binary mode class 0 is plain uniform noise.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .dataset import LabeledRecord, make_rng


def make_motifs(n: int, motif_len: int, rng) -> List[bytes]:
    motifs: List[bytes] = []
    while len(motifs) < n:
        m = rng.integers(0, 256, motif_len, dtype=np.uint8).tobytes()
        if m not in motifs:
            motifs.append(m)
    return motifs


def motif_dataset(n_samples: int = 2000, n_classes: int = 2, seed: int = 0, min_len: int = 40,
                  max_len: int = 200, motif_len: int = 6, visible_len: int = 64,
                  benign_class: bool = True) -> List[LabeledRecord]:
    """Labeled payloads with class counts differing by at most one.

    With ``benign_class`` label 0 is motif-free noise and labels ``1..n-1``
    carry distinct motifs; otherwise every label carries its own motif.
    """
    if min_len < motif_len or visible_len < motif_len:
        raise ValueError("payloads and the visible window must fit the motif")
    rng = make_rng(seed)
    n_motifs = n_classes - 1 if benign_class else n_classes
    motifs = make_motifs(n_motifs, motif_len, rng)
    names = (["benign"] if benign_class else []) + [f"motif{i}" for i in range(n_motifs)]
    out = []
    for label in range(n_classes):
        motif = None if (benign_class and label == 0) else motifs[label - (1 if benign_class else 0)]
        for _ in range(n_samples // n_classes + (label < n_samples % n_classes)):
            length = int(rng.integers(min_len, max_len + 1))
            body = bytearray(rng.integers(0, 256, length, dtype=np.uint8).tobytes())
            if motif is not None:
                off = int(rng.integers(0, min(length, visible_len) - motif_len + 1))
                body[off:off + motif_len] = motif
            name = None if motif is None else names[label]
            out.append(LabeledRecord(bytes(body), label, name))
    return [out[i] for i in rng.permutation(len(out))]
