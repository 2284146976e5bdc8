"""Train a byte-pair-encoding vocabulary on a few sentences, watch the
merges it learns, and round-trip text through encode/decode.

The top of the id space is a reserved sentinel block (<extra_id_0> has the
highest id), kept out of reach of the merge learner: denoising targets need
them and natural text must never produce them.
"""

from minit5.bpe import decode, encode, train_bpe

corpus = """
kje gori na hribu nad vasjo
voda teče po strugi mimo starega mlina
mlin ob vodi melje zrnje počasi ampak zanesljivo
kje teče voda če ne po strugi
"""

vocab = train_bpe(corpus, vocab_size=80, sentinel_count=8)

print(f"vocabulary size      {len(vocab)}")
print(f"sentinels            {vocab.sentinel_count} "
      f"(ids {vocab.sentinel_id(vocab.sentinel_count - 1)}..{vocab.sentinel_id(0)})")
print(f"first ten merges     {vocab.merges[:10]}")

text = "voda teče mimo mlina"
ids = encode(text, vocab, append_eos=True)
pieces = [vocab.id_to_token[i] for i in ids]
print(f"encode({text!r})")
print(f"  ids     {ids}")
print(f"  pieces  {pieces}")
round_trip = decode(ids, vocab, strip_specials=True)
print(f"  decode  {round_trip!r}")
assert round_trip == text

# sentinel-prefixed generations lose the sentinel under strip_specials,
# exactly like post-filtering model output
generated = [vocab.sentinel_id(0)] + encode("mlin melje", vocab)
print(f"stripped generation: {decode(generated, vocab, strip_specials=True)!r}")
