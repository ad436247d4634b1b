"""BIO span decoding, term-polarity pairs and the five corpus metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .corpus import AS_TAGS, Sentence

BEGIN = {"BA": "aspect", "BP": "opinion"}
INSIDE = {"IA": "aspect", "IP": "opinion"}


@dataclass(frozen=True, order=True)
class Span:
    start: int  # inclusive
    end: int  # exclusive
    kind: str  # "aspect" | "opinion"

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span bounds ({self.start}, {self.end})")
        if self.kind not in ("aspect", "opinion"):
            raise ValueError(f"invalid span kind {self.kind!r}")


@dataclass(frozen=True, order=True)
class TermPolarityPair:
    span: Span
    polarity: str  # pos | neg | neu


@dataclass
class MetricReport:
    f1_a: float
    f1_o: float
    acc_s: float
    f1_s: float
    f1_i: float
    counts: Dict[str, int] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def format_flat(self) -> str:
        """Flat key-value text, percentages with 2 decimals plus raw counts."""
        lines = [
            f"f1_a = {100 * self.f1_a:.2f}",
            f"f1_o = {100 * self.f1_o:.2f}",
            f"acc_s = {100 * self.acc_s:.2f}",
            f"f1_s = {100 * self.f1_s:.2f}",
            f"f1_i = {100 * self.f1_i:.2f}",
        ]
        lines.extend(f"{k} = {v}" for k, v in sorted(self.counts.items()))
        lines.extend(f"note = {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def decode_spans(tags: Sequence[str], strict: bool = False) -> List[Span]:
    """Maximal BIO runs. An orphan I-tag starts a new span (lenient mode);
    with strict=True it is treated as O."""
    spans: List[Span] = []
    open_start: Optional[int] = None
    open_kind: Optional[str] = None

    def close(end: int):
        nonlocal open_start, open_kind
        if open_start is not None:
            spans.append(Span(open_start, end, open_kind))
        open_start = open_kind = None

    for i, tag in enumerate(tags):
        if tag in BEGIN:
            close(i)
            open_start, open_kind = i, BEGIN[tag]
        elif tag in INSIDE:
            kind = INSIDE[tag]
            if open_kind == kind:
                continue
            close(i)
            if not strict:
                open_start, open_kind = i, kind
        else:
            close(i)
    close(len(tags))
    return spans


def encode_spans(spans: Sequence[Span], n: int) -> List[str]:
    """Inverse of decode_spans for non-overlapping span sets."""
    tags = ["O"] * n
    for span in spans:
        begin = "BA" if span.kind == "aspect" else "BP"
        inside = "IA" if span.kind == "aspect" else "IP"
        tags[span.start] = begin
        for i in range(span.start + 1, span.end):
            tags[i] = inside
    return tags


def extract_pairs(ae_tags: Sequence[str], as_tags: Sequence[str]) -> List[TermPolarityPair]:
    """One pair per decoded aspect span; polarity taken from the span's first
    token even when interior tokens disagree."""
    pairs = []
    for span in decode_spans(ae_tags):
        if span.kind != "aspect":
            continue
        polarity = as_tags[span.start]
        pairs.append(TermPolarityPair(span, polarity))
    return pairs


def _f1_from_counts(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0  # empty-vs-empty convention
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def span_f1(
    pred: Sequence[Span], gold: Sequence[Span]
) -> Tuple[float, float, float]:
    """Exact-match (start, end, kind) precision/recall/F1 over one span pool."""
    ps, gs = set(pred), set(gold)
    tp = len(ps & gs)
    return _f1_from_counts(tp, len(ps) - tp, len(gs) - tp)


def sentiment_metrics(
    pred_pairs: Sequence[TermPolarityPair], gold_pairs: Sequence[TermPolarityPair]
) -> Tuple[float, float, int]:
    """acc-s and macro-F1 restricted to predicted aspect spans that exactly
    match a gold aspect span. Returns (acc_s, f1_s, matched_count); zero
    matches yields (0, 0, 0)."""
    pred_by_span = {p.span: p.polarity for p in _dedup(pred_pairs)}
    gold_by_span = {g.span: g.polarity for g in _dedup(gold_pairs)}
    matched = sorted(set(pred_by_span) & set(gold_by_span))
    if not matched:
        return 0.0, 0.0, 0
    correct = sum(1 for sp in matched if pred_by_span[sp] == gold_by_span[sp])
    acc = correct / len(matched)
    # macro-F1 with the denominator fixed at the 3 polarity classes
    f1_sum = 0.0
    for cls in AS_TAGS:
        tp = sum(
            1 for sp in matched if pred_by_span[sp] == cls and gold_by_span[sp] == cls
        )
        fp = sum(
            1 for sp in matched if pred_by_span[sp] == cls and gold_by_span[sp] != cls
        )
        fn = sum(
            1 for sp in matched if pred_by_span[sp] != cls and gold_by_span[sp] == cls
        )
        if tp + fp + fn == 0:
            continue  # absent class contributes 0
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1_sum += 2 * p * r / (p + r) if p + r else 0.0
    return acc, f1_sum / len(AS_TAGS), len(matched)


def _dedup(pairs: Sequence[TermPolarityPair]) -> List[TermPolarityPair]:
    seen: Set[Span] = set()
    out = []
    for p in pairs:
        if p.span in seen:
            continue
        seen.add(p.span)
        out.append(p)
    return out


def overall_f1(
    pred_pairs: Sequence[TermPolarityPair], gold_pairs: Sequence[TermPolarityPair]
) -> Tuple[float, float, float]:
    """Micro P/R/F1 where a prediction counts iff span and polarity both
    match a gold pair; each gold pair is matched at most once."""
    pred = _dedup(pred_pairs)
    gold = _dedup(gold_pairs)
    unmatched = set(gold)
    tp = 0
    for p in pred:
        if p in unmatched:
            unmatched.discard(p)
            tp += 1
    return _f1_from_counts(tp, len(pred) - tp, len(gold) - tp)


# ---------------------------------------------------------------------------
# corpus-level aggregation


def corpus_metrics(
    pred_tags: Sequence[Tuple[Sequence[str], Sequence[str]]],
    gold_sentences: Sequence[Sentence],
    strict_bio: bool = False,
) -> MetricReport:
    """Aggregate the five metrics over a corpus of (ae_tags, as_tags)
    predictions aligned with gold sentences."""
    counts = {
        "aspect_tp": 0, "aspect_fp": 0, "aspect_fn": 0,
        "opinion_tp": 0, "opinion_fp": 0, "opinion_fn": 0,
        "pair_tp": 0, "pair_fp": 0, "pair_fn": 0,
        "matched_spans": 0, "sent_correct": 0,
    }
    matched_preds: List[TermPolarityPair] = []
    matched_golds: List[TermPolarityPair] = []

    for (ae_pred, as_pred), sent in zip(pred_tags, gold_sentences):
        pred_spans = set(decode_spans(ae_pred, strict=strict_bio))
        gold_spans = set(decode_spans(sent.ae_tags))
        for kind, key in (("aspect", "aspect"), ("opinion", "opinion")):
            ps = {s for s in pred_spans if s.kind == kind}
            gs = {s for s in gold_spans if s.kind == kind}
            counts[f"{key}_tp"] += len(ps & gs)
            counts[f"{key}_fp"] += len(ps - gs)
            counts[f"{key}_fn"] += len(gs - ps)

        pred_pairs = _dedup(extract_pairs(ae_pred, as_pred))
        gold_pairs = _dedup(extract_pairs(sent.ae_tags, sent.as_tags))
        unmatched = set(gold_pairs)
        for p in pred_pairs:
            if p in unmatched:
                unmatched.discard(p)
                counts["pair_tp"] += 1
            else:
                counts["pair_fp"] += 1
        counts["pair_fn"] += len(unmatched)

        gold_by_span = {g.span: g for g in gold_pairs}
        for p in pred_pairs:
            g = gold_by_span.get(p.span)
            if g is not None:
                matched_preds.append(p)
                matched_golds.append(g)

    _, _, f1_a = _f1_from_counts(counts["aspect_tp"], counts["aspect_fp"], counts["aspect_fn"])
    _, _, f1_o = _f1_from_counts(counts["opinion_tp"], counts["opinion_fp"], counts["opinion_fn"])
    _, _, f1_i = _f1_from_counts(counts["pair_tp"], counts["pair_fp"], counts["pair_fn"])

    notes = []
    counts["matched_spans"] = len(matched_preds)
    if matched_preds:
        correct = sum(
            1 for p, g in zip(matched_preds, matched_golds) if p.polarity == g.polarity
        )
        counts["sent_correct"] = correct
        acc_s = correct / len(matched_preds)
        f1_sum = 0.0
        present = set()
        for cls in AS_TAGS:
            tp = sum(
                1
                for p, g in zip(matched_preds, matched_golds)
                if p.polarity == cls and g.polarity == cls
            )
            fp = sum(
                1
                for p, g in zip(matched_preds, matched_golds)
                if p.polarity == cls and g.polarity != cls
            )
            fn = sum(
                1
                for p, g in zip(matched_preds, matched_golds)
                if p.polarity != cls and g.polarity == cls
            )
            if tp + fp + fn == 0:
                continue
            present.add(cls)
            p_ = tp / (tp + fp) if tp + fp else 0.0
            r_ = tp / (tp + fn) if tp + fn else 0.0
            f1_sum += 2 * p_ * r_ / (p_ + r_) if p_ + r_ else 0.0
        f1_s = f1_sum / len(AS_TAGS)
        absent = [c for c in AS_TAGS if c not in present]
        if absent:
            notes.append("absent polarity classes on matched spans: " + ",".join(absent))
    else:
        acc_s = f1_s = 0.0
        notes.append("no predicted aspect span matched a gold span")

    return MetricReport(f1_a, f1_o, acc_s, f1_s, f1_i, counts, notes)
