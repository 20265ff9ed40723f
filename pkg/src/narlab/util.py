"""Seed derivation and small batching helpers shared across modules."""

from __future__ import annotations

import hashlib

import numpy as np

from .vocab import PAD_ID


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Derive an independent Generator from a base seed and a tag path.

    Tags are hashed (not Python ``hash``, which is process-randomized) so
    the stream depends only on the seed and the tag values.  The same
    (seed, tags) always yields the same stream; distinct tag paths yield
    statistically independent streams.
    """
    h = hashlib.blake2s(digest_size=8)
    for tag in tags:
        h.update(str(tag).encode("utf-8"))
        h.update(b"\x1f")
    key = int.from_bytes(h.digest(), "big")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def stable_bucket(parts, n_buckets: int, *, key: str = "") -> int:
    """Map a tuple of values to a bucket in [0, n_buckets) via a keyed hash.

    Deterministic across processes and platforms; used for disjoint
    train/valid/test/mono partitioning of generated corpora.
    """
    h = hashlib.blake2b(digest_size=8, key=key.encode("utf-8")[:64])
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big") % n_buckets


def pad_batch(seqs, pad: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences into a padded (B, L) int array.

    Returns the padded array and a (B,) array of true lengths.  An empty
    sequence list is rejected; callers batch only non-empty groups.
    """
    if len(seqs) == 0:
        raise ValueError("pad_batch needs at least one sequence")
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lens.max())), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = np.asarray(s, dtype=np.int64)
    return out, lens
