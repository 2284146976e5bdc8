"""Near-duplicate removal over a paragraph stream.

Each paragraph is fingerprinted by hashed word 10-grams (shingles); a
paragraph that shares more than half its shingles with what came before is
dropped. Exact duplicates vanish, lightly-overlapping paragraphs survive,
and a second pass changes nothing.
"""

import numpy as np

from minit5.dedup import Paragraph, deduplicate_stream

rng = np.random.default_rng(0)
vocabulary = [f"beseda{i}" for i in range(50)]


def fresh_paragraph(i):
    words = rng.choice(vocabulary, size=rng.integers(12, 25))
    return Paragraph(f"doc{i}", " ".join(words))


originals = [fresh_paragraph(i) for i in range(20)]
# re-inject exact duplicates and one 40%-overlapping cousin
cousin_words = originals[0].text.split()[:11] + ["nova", "vsebina", "sledi"]
stream = originals + [Paragraph("dup", originals[3].text),
                      Paragraph("dup2", originals[7].text),
                      Paragraph("cousin", " ".join(cousin_words))]

kept, stats = deduplicate_stream(stream, n=10, threshold=0.5)
survivors = list(kept)
names = [p.doc_id for p in survivors]

print(f"in: {stats.kept + stats.dropped} paragraphs, kept {stats.kept}, dropped {stats.dropped}")
print(f"duplicates removed:  {'dup' not in names and 'dup2' not in names}")
print(f"cousin survived:     {'cousin' in names}")
print()
print(stats.render_table())

again, stats2 = deduplicate_stream(survivors, n=10, threshold=0.5)
list(again)
print(f"\nsecond pass dropped: {stats2.dropped} (idempotent)")
