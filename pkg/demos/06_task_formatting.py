"""Every task formatter on a worked example, printed as the two-column CSV
the fine-tuning and evaluation commands consume.

Classification tasks become generation tasks: the attributes are key-prefixed
and concatenated into one input string, and the class label is verbalized as
the exact string the model must emit.
"""

import csv
import io

from minit5.tasks import (
    NerSentence,
    balance_ner,
    format_ner_all,
    format_sentiment,
    format_superglue,
    merge_simplification,
)

import numpy as np


def show(example):
    buf = io.StringIO()
    csv.writer(buf, quoting=csv.QUOTE_ALL).writerow([example.input_text, example.target_text])
    print("  " + buf.getvalue().rstrip())


print("NER as entity retrieval (one example per category):")
sentence = NerSentence(
    tokens="Bolj teoretično pa se je problema lotil Radical Science Journal v Londonu .".split(),
    labels=["O"] * 7 + ["B-ORG", "I-ORG", "I-ORG", "O", "B-LOC", "O"],
)
for ex in format_ner_all(sentence):
    show(ex)

print("\nBoolQ:")
show(format_superglue({
    "passage": "Kalcijev karbid je kemična spojina.",
    "question": "je kalcijev karbid spojina",
    "label": True,
}, "boolq"))

print("\nCB / RTE (premise-hypothesis):")
show(format_superglue({
    "premise": "Bil je kompleksen jezik.",
    "hypothesis": "jezik je bil kompleksen",
    "label": "entailment",
}, "cb"))
show(format_superglue({
    "premise": "Orožja niso našli.",
    "hypothesis": "Orožje je bilo najdeno.",
    "label": "not_entailment",
}, "rte"))

print("\nCOPA:")
show(format_superglue({
    "premise": "Moje telo je metalo senco na travo.",
    "choice1": "Sonce je vzhajalo.",
    "choice2": "Trava je bila pokošena.",
    "question": "cause",
    "label": 0,
}, "copa"))

print("\nWSC (span marking):")
show(format_superglue({
    "text": "Iz steklenice sem v skodelico nalival vodo, dokler ni bila polna.",
    "target": {"span1_text": "skodelico", "span1_index": 4,
               "span2_text": "bila", "span2_index": 9},
    "label": True,
}, "wsc"))

print("\nSentiment (single-word labels):")
show(format_sentiment("kakšen čudovit dan", "positive"))

print("\nSimplification entries with a repeated complex side merge:")
merged = merge_simplification([("c1", "s1"), ("c1", "s2"), ("c2", "t1"), ("c1", "s3")])
for pair in merged:
    print(f"  {pair}")

print("\nNER balancing: 'brez' examples mostly dropped from train, kept in test")
rng = np.random.default_rng(0)
examples = format_ner_all(sentence) * 200  # two thirds have entities here
empties = [e for e in examples if e.target_text == "brez"]
kept = balance_ner(empties, "train", rng)
print(f"  train: {len(kept)}/{len(empties)} empty-target examples kept (~5%)")
