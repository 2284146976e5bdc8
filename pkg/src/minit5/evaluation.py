"""Greedy decoding, output post-filtering, and task metrics.

Classification tasks are scored by exact string match against the task's
verbalized labels after stripping special tokens; a generation matching no
label is INVALID and counts as wrong. Generative tasks are scored with
ROUGE-L (lowercased whitespace tokens, F measure over the LCS), NER with
list-level multiset F1, lemmatization with punctuation-blind word and
sentence accuracy.
"""

from __future__ import annotations

import csv
import os
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import bpe
from .model import decode_logits, encode


class EvalError(ValueError):
    pass


# per-task greedy-decode output budgets (tokens)
DECODE_LIMITS = {
    "boolq": 4,
    "cb": 6,
    "copa": 6,
    "rte": 6,
    "wsc": 6,
    "sa": 5,
    "ner": 64,
    "simplification": 256,
    "lemmatization": 512,
    "summarization": 512,
}

# fine-tuning epochs per task
FINETUNE_EPOCHS = {
    "boolq": 10,
    "cb": 15,
    "copa": 15,
    "rte": 15,
    "wsc": 20,
    "ner": 20,
    "sa": 10,
    "lemmatization": 15,
    "summarization": 5,
    "simplification": 64,
}

TASK_METRICS = {
    "boolq": "accuracy",
    "cb": "macro_f1",
    "copa": "accuracy",
    "rte": "accuracy",
    "wsc": "accuracy",
    "sa": "macro_f1",
    "ner": "entity_f1",
    "lemmatization": "word_accuracy",
    "summarization": "rouge_l",
    "simplification": "rouge_l",
}


def greedy_decode(config, params, input_ids, max_len, *, pad_id=0, eos_id=1):
    """Argmax decoding from the pad start symbol: stops at EOS or max_len
    generated tokens; ties break to the lowest token id. The returned ids
    exclude the start symbol and the EOS."""
    if max_len < 1:
        raise EvalError(f"max_len must be >= 1, got {max_len}")
    ids = np.asarray(input_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    enc_out, enc_mask = encode(config, params, ids, pad_id=pad_id)
    generated = []
    dec = [pad_id]
    for _ in range(max_len):
        logits = decode_logits(config, params, enc_out, enc_mask, np.asarray([dec]))
        nxt = int(np.argmax(logits.data[0, -1]))
        if nxt == eos_id:
            break
        generated.append(nxt)
        dec.append(nxt)
    return generated


_SENTINEL_RE = re.compile(r"<extra_id_\d+>")


def postfilter_generated(text):
    """Remove sentinel/pad/EOS token strings and surrounding whitespace."""
    text = _SENTINEL_RE.sub("", text)
    text = text.replace(bpe.PAD_TOKEN, "").replace(bpe.EOS_TOKEN, "")
    return text.strip()


def postfilter_and_match(generated, labels):
    """Exact-match the filtered generation against the label set.
    Returns the label, or None when the generation matches no label."""
    if not labels:
        raise EvalError("label set must be non-empty")
    cleaned = postfilter_generated(generated)
    return cleaned if cleaned in labels else None


def _lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """F measure over the longest common subsequence of lowercased
    whitespace tokens; 0 when either side is empty or nothing matches."""
    cand = candidate.lower().split()
    ref = reference.lower().split()
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def parse_entity_list(text):
    """Comma-separated entity mentions as a multiset; 'brez' or an empty
    string is the explicit empty answer."""
    s = text.strip()
    if not s or s == "brez":
        return Counter()
    return Counter(part.strip() for part in s.split(",") if part.strip())


def entity_f1(predictions, golds):
    """Micro F1 over exact entity surface strings, multiset semantics."""
    if len(predictions) != len(golds):
        raise EvalError(f"{len(predictions)} predictions vs {len(golds)} golds")
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pc = parse_entity_list(pred)
        gc = parse_entity_list(gold)
        hit = sum((pc & gc).values())
        tp += hit
        fp += sum(pc.values()) - hit
        fn += sum(gc.values()) - hit
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def classification_scores(predictions, golds, metric="accuracy"):
    """accuracy or macro_f1 over label predictions; None predictions
    (INVALID generations) are wrong for every class."""
    if len(predictions) != len(golds):
        raise EvalError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise EvalError("empty evaluation set")
    if metric == "accuracy":
        return sum(p == g for p, g in zip(predictions, golds)) / len(golds)
    if metric == "macro_f1":
        scores = []
        for cls in sorted(set(golds)):
            tp = sum(1 for p, g in zip(predictions, golds) if p == cls and g == cls)
            fp = sum(1 for p, g in zip(predictions, golds) if p == cls and g != cls)
            fn = sum(1 for p, g in zip(predictions, golds) if p != cls and g == cls)
            denom = 2 * tp + fp + fn
            scores.append(2 * tp / denom if denom else 0.0)
        return sum(scores) / len(scores)
    raise EvalError(f"unknown metric {metric!r}")


def _content_tokens(sentence):
    return [tok for tok in sentence.split() if any(ch.isalnum() for ch in tok)]


def lemma_accuracy(pred_sentences, gold_sentences):
    """(word accuracy, sentence accuracy) with punctuation-only tokens
    ignored on both sides; surplus tokens after stripping count as errors."""
    if len(pred_sentences) != len(gold_sentences):
        raise EvalError(f"{len(pred_sentences)} predictions vs {len(gold_sentences)} golds")
    matched = 0
    total = 0
    perfect = 0
    for pred, gold in zip(pred_sentences, gold_sentences):
        p = _content_tokens(pred)
        g = _content_tokens(gold)
        slots = max(len(p), len(g))
        hits = sum(a == b for a, b in zip(p, g))
        matched += hits
        total += slots
        if hits == slots:
            perfect += 1
    word_acc = matched / total if total else 1.0
    return word_acc, perfect / len(pred_sentences)


def majority_baseline(train_golds, test_golds, metric="accuracy"):
    """Score of always predicting the most frequent training label
    (ties break to the lexicographically smallest label)."""
    train_golds = list(train_golds)
    if not train_golds:
        raise EvalError("empty training labels")
    counts = Counter(train_golds)
    best_count = max(counts.values())
    label = min(cls for cls, c in counts.items() if c == best_count)
    return classification_scores([label] * len(test_golds), list(test_golds), metric)


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    invalid_rate: float | None = None
    predictions: list[tuple[str, str]] = field(default_factory=list)

    def to_kv_lines(self):
        lines = [f"task={self.task}", f"examples={len(self.predictions)}"]
        for name, value in self.metrics.items():
            lines.append(f"{name}={value:.6f}")
        if self.invalid_rate is not None:
            lines.append(f"invalid_rate={self.invalid_rate:.6f}")
        return lines

    def render(self):
        width = max(len(n) for n in self.metrics) if self.metrics else 6
        width = max(width, len("invalid_rate"))
        lines = [f"task: {self.task}  ({len(self.predictions)} examples)"]
        for name, value in self.metrics.items():
            lines.append(f"  {name.ljust(width)}  {100.0 * value:6.2f}%")
        if self.invalid_rate is not None:
            lines.append(f"  {'invalid_rate'.ljust(width)}  {100.0 * self.invalid_rate:6.2f}%")
        return "\n".join(lines)


def decode_examples(config, params, vocab, examples, max_len, *, pad_id=0):
    """Greedy-decode every example's input; returns special-stripped strings."""
    outputs = []
    for ex in examples:
        input_ids = bpe.encode(ex.input_text, vocab, append_eos=True)
        out_ids = greedy_decode(config, params, input_ids, max_len, pad_id=pad_id, eos_id=vocab.eos_id)
        outputs.append(bpe.decode(out_ids, vocab, strip_specials=True))
    return outputs


def score_predictions(task, generated, golds, labels=None):
    """EvalReport from raw generated strings and gold target strings."""
    if task in ("boolq", "cb", "copa", "rte", "wsc", "sa"):
        if labels is None:
            from .tasks import TASK_LABELS

            labels = TASK_LABELS[task]
        matched = [postfilter_and_match(g, labels) for g in generated]
        invalid = sum(1 for m in matched if m is None) / len(matched)
        metric = TASK_METRICS[task]
        value = classification_scores(matched, list(golds), metric)
        return EvalReport(task, {metric: value}, invalid_rate=invalid,
                          predictions=list(zip(generated, golds)))
    if task == "ner":
        cleaned = [postfilter_generated(g) for g in generated]
        return EvalReport(task, {"entity_f1": entity_f1(cleaned, list(golds))},
                          predictions=list(zip(generated, golds)))
    if task == "lemmatization":
        cleaned = [postfilter_generated(g) for g in generated]
        word_acc, sent_acc = lemma_accuracy(cleaned, list(golds))
        return EvalReport(task, {"word_accuracy": word_acc, "sentence_accuracy": sent_acc},
                          predictions=list(zip(generated, golds)))
    if task in ("summarization", "simplification"):
        cleaned = [postfilter_generated(g) for g in generated]
        mean = sum(rouge_l(c, g) for c, g in zip(cleaned, golds)) / len(cleaned)
        return EvalReport(task, {"rouge_l": mean}, predictions=list(zip(generated, golds)))
    raise EvalError(f"unknown task {task!r}")


def evaluate_examples(config, params, vocab, examples, task, *, max_output_tokens=None, pad_id=0):
    """Decode and score a task dataset with its per-task output limit."""
    examples = list(examples)
    if not examples:
        raise EvalError("empty evaluation set")
    if task not in DECODE_LIMITS:
        raise EvalError(f"unknown task {task!r}; choose from {sorted(DECODE_LIMITS)}")
    limit = max_output_tokens if max_output_tokens is not None else DECODE_LIMITS[task]
    generated = decode_examples(config, params, vocab, examples, limit, pad_id=pad_id)
    golds = [ex.target_text for ex in examples]
    return score_predictions(task, generated, golds)


def write_report(report, directory):
    """report.txt (human table), report.kv (key=value) and predictions.csv."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.render() + "\n")
    with open(os.path.join(directory, "report.kv"), "w", encoding="utf-8") as f:
        for line in report.to_kv_lines():
            f.write(line + "\n")
    with open(os.path.join(directory, "predictions.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_ALL)
        for generated, gold in report.predictions:
            writer.writerow([generated, gold])
