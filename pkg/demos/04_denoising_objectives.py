"""The two self-supervised objectives, side by side.

Span corruption hides contiguous spans (15% of tokens, mean span 3) behind
one sentinel each; i.i.d. denoising corrupts each token independently so
every span has length one. Both targets list the hidden content between
the same sentinels, so the original text is exactly recoverable.
"""

import numpy as np

from minit5.bpe import decode, encode, train_bpe
from minit5.noising import (
    iid_denoise,
    mixture_sample,
    noise_counts,
    plan_spans,
    reconstruct,
    span_corrupt,
)

corpus = "po dolini teče reka mimo starih vrb in travnikov vse do jezera " * 4
vocab = train_bpe(corpus, vocab_size=80, sentinel_count=16)
rng = np.random.default_rng(3)

sentence = "po dolini teče reka mimo starih vrb in travnikov vse do jezera"
ids = encode(sentence, vocab)
print(f"original: {sentence!r}  ({len(ids)} tokens)")

num_noise, num_spans = noise_counts(len(ids))
print(f"\nspan corruption: {num_noise} tokens in {num_spans} span(s)")
pair = span_corrupt(ids, plan_spans(len(ids), num_noise, num_spans, rng), vocab)
print(f"  input:  {decode(pair.input_ids, vocab)!r}")
print(f"  target: {decode(pair.target_ids, vocab)!r}")
assert reconstruct(pair, vocab) == ids

print("\ni.i.d. denoising (every span one token):")
pair = iid_denoise(ids, rng, vocab)
print(f"  input:  {decode(pair.input_ids, vocab)!r}")
print(f"  target: {decode(pair.target_ids, vocab)!r}")
assert reconstruct(pair, vocab) == ids

# the pretraining mixture alternates between the two, and over many tokens
# the corrupted fraction settles on the configured 15%
corrupted = total = span_draws = 0
first_sentinel = len(vocab) - vocab.sentinel_count
for _ in range(2000):
    pair = mixture_sample(ids, vocab, rng)
    span_draws += pair.objective == "span"
    corrupted += sum(1 for t in pair.input_ids if t >= first_sentinel) if pair.objective == "iid" else 0
    total += len(ids) if pair.objective == "iid" else 0
print(f"\nmixture: {span_draws}/2000 draws were span corruption")
print(f"i.i.d. corrupted fraction over {total} tokens: {corrupted / total:.4f}")
