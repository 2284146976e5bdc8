"""Self-supervised denoising objectives over token id sequences.

Span corruption replaces contiguous spans with one sentinel each; i.i.d.
denoising corrupts tokens independently, one sentinel per corrupted token.
Both serialize the target as sentinel, span, sentinel, span, ..., closing
sentinel, EOS, so the original sequence is exactly recoverable from the
(input, target) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NoisingError(ValueError):
    pass


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class NoisePlan:
    """Where to corrupt a sequence: sorted, disjoint, non-adjacent spans."""

    length: int
    noise_density: float
    mean_span: float
    spans: list[tuple[int, int]]

    def __post_init__(self):
        prev_end = None
        for start, span_len in self.spans:
            if span_len < 1 or start < 0 or start + span_len > self.length:
                raise NoisingError(f"span ({start}, {span_len}) out of bounds for length {self.length}")
            if prev_end is not None and start <= prev_end:  # overlapping or adjacent
                raise NoisingError("spans must be sorted with at least one clean token between them")
            prev_end = start + span_len

    @property
    def num_noise(self):
        return sum(length for _, length in self.spans)


@dataclass
class NoisedPair:
    """One pretraining example: corrupted input ids and denoising target ids."""

    input_ids: list[int]
    target_ids: list[int]
    objective: str = "span"


def noise_counts(n, noise_density=0.15, mean_span=3.0):
    """(tokens to corrupt, number of spans) for a sequence of length n."""
    if n < 2:
        raise NoisingError(f"sequence too short to corrupt: {n} < 2")
    num_noise = min(max(_round_half_up(noise_density * n), 1), n - 1)
    num_spans = min(max(_round_half_up(num_noise / mean_span), 1), num_noise)
    return num_noise, num_spans


def _composition(total, parts, rng):
    """Uniformly random composition of `total` into `parts` positive parts."""
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(total - 1, size=parts - 1, replace=False)) + 1
    bounds = [0, *cuts.tolist(), total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def plan_spans(n, num_noise, num_spans, rng):
    """Sample a NoisePlan: uniformly random span lengths (a composition of
    num_noise) interleaved with positive clean gaps plus a leading gap >= 0."""
    if num_spans > num_noise:
        raise NoisingError(f"cannot split {num_noise} noise tokens into {num_spans} spans")
    if num_spans < 1:
        raise NoisingError("need at least one span")
    clean = n - num_noise
    if clean < num_spans:
        raise NoisingError(
            f"no room for separating gaps: {clean} clean tokens < {num_spans} spans"
        )
    span_lengths = _composition(num_noise, num_spans, rng)
    gaps = _composition(clean + 1, num_spans + 1, rng)
    gaps[0] -= 1  # leading gap may be empty
    spans = []
    pos = gaps[0]
    for span_len, gap_after in zip(span_lengths, gaps[1:]):
        spans.append((pos, span_len))
        pos += span_len + gap_after
    assert pos == n
    return NoisePlan(n, num_noise / n, num_noise / num_spans, spans)


def span_corrupt(ids, plan, vocab):
    """Apply a NoisePlan: sentinels numbered left to right, target spans
    delimited by the same sentinels plus a closing sentinel and EOS."""
    if plan.length != len(ids):
        raise NoisingError(f"plan length {plan.length} does not match sequence length {len(ids)}")
    if len(plan.spans) + 1 > vocab.sentinel_count:
        raise NoisingError(
            f"{len(plan.spans)} spans need {len(plan.spans) + 1} sentinels, "
            f"vocabulary reserves {vocab.sentinel_count}"
        )
    input_ids = []
    target_ids = []
    pos = 0
    for k, (start, span_len) in enumerate(plan.spans):
        input_ids.extend(ids[pos:start])
        input_ids.append(vocab.sentinel_id(k))
        target_ids.append(vocab.sentinel_id(k))
        target_ids.extend(ids[start : start + span_len])
        pos = start + span_len
    input_ids.extend(ids[pos:])
    target_ids.append(vocab.sentinel_id(len(plan.spans)))
    target_ids.append(vocab.eos_id)
    return NoisedPair(input_ids, target_ids, objective="span")


def iid_denoise(ids, rng, vocab, corrupt_prob=0.15):
    """Corrupt each token independently; every corrupted token gets its own
    sentinel, even inside runs of adjacent corruptions."""
    if len(ids) < 1:
        raise NoisingError("cannot noise an empty sequence")
    mask = rng.random(len(ids)) < corrupt_prob
    n_corrupt = int(mask.sum())
    if n_corrupt + 1 > vocab.sentinel_count:
        raise NoisingError(
            f"{n_corrupt} corruptions need {n_corrupt + 1} sentinels, "
            f"vocabulary reserves {vocab.sentinel_count}"
        )
    input_ids = []
    target_ids = []
    k = 0
    for tok, corrupt in zip(ids, mask):
        if corrupt:
            sid = vocab.sentinel_id(k)
            input_ids.append(sid)
            target_ids.append(sid)
            target_ids.append(tok)
            k += 1
        else:
            input_ids.append(tok)
    target_ids.append(vocab.sentinel_id(k))
    target_ids.append(vocab.eos_id)
    return NoisedPair(input_ids, target_ids, objective="iid")


def mixture_sample(ids, vocab, rng, mix=0.5, noise_density=0.15, mean_span=3.0, iid_prob=0.15):
    """One pretraining pair: span corruption with probability mix, else i.i.d."""
    if not 0.0 <= mix <= 1.0:
        raise NoisingError(f"mix must be in [0, 1], got {mix}")
    if rng.random() < mix:
        num_noise, num_spans = noise_counts(len(ids), noise_density, mean_span)
        plan = plan_spans(len(ids), num_noise, num_spans, rng)
        return span_corrupt(ids, plan, vocab)
    return iid_denoise(ids, rng, vocab, corrupt_prob=iid_prob)


@dataclass
class StreamStats:
    produced: int = 0
    skipped_short: int = 0


def noise_stream(sequences, vocab, rng, stats=None, **kwargs):
    """Noised pairs for a stream of id sequences; sequences too short to
    corrupt (fewer than 2 tokens) are skipped and counted."""
    for ids in sequences:
        if len(ids) < 2:
            if stats is not None:
                stats.skipped_short += 1
            continue
        if stats is not None:
            stats.produced += 1
        yield mixture_sample(ids, vocab, rng, **kwargs)


def reconstruct(pair, vocab):
    """Splice the target spans back into the input; inverse of both objectives."""
    first_sentinel = len(vocab) - vocab.sentinel_count

    def is_sentinel(i):
        return i >= first_sentinel

    # target chunks keyed by the sentinel that opens them
    chunks = {}
    current = None
    for tok in pair.target_ids:
        if tok == vocab.eos_id:
            break
        if is_sentinel(tok):
            current = tok
            chunks[current] = []
        elif current is not None:
            chunks[current].append(tok)
    out = []
    for tok in pair.input_ids:
        if is_sentinel(tok):
            out.extend(chunks.get(tok, ()))
        else:
            out.append(tok)
    return out
