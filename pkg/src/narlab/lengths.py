"""Target-length prediction and length-parallel decoding with teacher reranking.

The student emits one candidate per length in [T + C - B, T + C + B]; the
AR teacher scores each candidate and the best one is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

RANK_MODES = ("sum_logprob", "mean_logprob")


@dataclass(frozen=True)
class LengthPolicy:
    C: int = 0
    B: int = 0

    def __post_init__(self):
        if self.B < 0:
            raise ValueError(f"half-width B must be nonnegative, got {self.B}")


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def estimate_C(corpus) -> int:
    """Round-half-away-from-zero mean of len(tgt) - len(src) over the corpus."""
    pairs = list(corpus)
    if not pairs:
        raise ValueError("cannot estimate C from an empty corpus")
    diffs = [len(t) - len(s) for s, t in pairs]
    return _round_half_away(sum(diffs) / len(diffs))


def candidate_lengths(T: int, policy: LengthPolicy) -> list:
    """[T+C-B, T+C+B] with sub-1 values clamped away; never empty."""
    if T < 1:
        raise ValueError(f"source length must be >= 1, got {T}")
    center = T + policy.C
    cands = [L for L in range(center - policy.B, center + policy.B + 1) if L >= 1]
    return cands if cands else [1]


@dataclass
class ScoredCandidate:
    length: int
    tokens: list
    score: float


def _usable_lengths(student, teacher, T: int, policy: LengthPolicy) -> list:
    """Candidates that both models can represent: the student emits L
    positions, the teacher scores BOS + L positions."""
    limit = min(student.config.max_len, teacher.config.max_len - 1)
    usable = [L for L in candidate_lengths(T, policy) if L <= limit]
    if not usable:
        raise ValueError(
            f"no candidate length for source length {T} fits within "
            f"max_len (limit {limit}, policy {policy})"
        )
    return usable


def _rank_key(cand: ScoredCandidate, center: int):
    # maximize score; break ties toward the predicted length, then shorter
    return (cand.score, -abs(cand.length - center), -cand.length)


def score_candidates(student, teacher, src, policy: LengthPolicy,
                     rank_mode: str = "sum_logprob") -> list:
    """Emit and teacher-score every candidate length for one sentence."""
    if rank_mode not in RANK_MODES:
        raise ValueError(f"rank_mode must be one of {RANK_MODES}, got {rank_mode!r}")
    if student.config.vocab_size != teacher.config.vocab_size:
        raise ValueError(
            f"student/teacher vocab mismatch: {student.config.vocab_size} "
            f"vs {teacher.config.vocab_size}"
        )
    out = []
    for L in _usable_lengths(student, teacher, len(src), policy):
        tokens = student.nar_greedy_emit(src, L)
        total, mean = teacher.sequence_logprob(src, tokens)
        out.append(ScoredCandidate(L, tokens, total if rank_mode == "sum_logprob" else mean))
    return out


def length_parallel_decode(student, teacher, src, policy: LengthPolicy,
                           rank_mode: str = "sum_logprob") -> list:
    """The winning candidate's token sequence."""
    cands = score_candidates(student, teacher, src, policy, rank_mode)
    center = len(src) + policy.C
    return max(cands, key=lambda c: _rank_key(c, center)).tokens


def length_parallel_decode_corpus(student, teacher, srcs, policy: LengthPolicy,
                                  rank_mode: str = "sum_logprob") -> list:
    """Batched equivalent of per-sentence length_parallel_decode.

    Groups sentences by source length so emissions and teacher scorings run
    as rectangular batches; selection uses the same ranking key.
    """
    if rank_mode not in RANK_MODES:
        raise ValueError(f"rank_mode must be one of {RANK_MODES}, got {rank_mode!r}")
    if student.config.vocab_size != teacher.config.vocab_size:
        raise ValueError("student/teacher vocab mismatch")
    out: list = [None] * len(srcs)
    by_len: dict = {}
    for i, s in enumerate(srcs):
        by_len.setdefault(len(s), []).append(i)
    for T_src, idxs in sorted(by_len.items()):
        group = [srcs[i] for i in idxs]
        center = T_src + policy.C
        cands: dict = {}
        for L in _usable_lengths(student, teacher, T_src, policy):
            emitted = student.nar_greedy_emit_batch(group, L)
            totals, means = teacher.sequence_logprob_batch(group, emitted)
            scores = totals if rank_mode == "sum_logprob" else means
            cands[L] = (emitted, scores)
        for j, i in enumerate(idxs):
            scored = [
                ScoredCandidate(L, emitted[j], float(scores[j]))
                for L, (emitted, scores) in sorted(cands.items())
            ]
            out[i] = max(scored, key=lambda c: _rank_key(c, center)).tokens
    return out
