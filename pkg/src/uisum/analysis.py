"""Dataset analyses: annotator word agreement, SFA boxes, summary lengths."""

from __future__ import annotations

import csv
import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import Bounds, Corpus, Screen, strip_stop_phrases
from .vocab import is_word, tokenize

AGREEMENT_SUMMARIES = 5


def _screens(corpus: Corpus | Iterable[Screen]) -> list[Screen]:
    if isinstance(corpus, Corpus):
        return [corpus.screens[k] for k in sorted(corpus.screens)]
    return list(corpus)


def summary_words(text: str) -> list[str]:
    return [t for t in tokenize(text) if is_word(t)]


@dataclass
class WordStats:
    word: str
    rank: int
    tp: int
    fp: int
    fn: int

    @property
    def occurrences(self) -> int:
        return self.tp + self.fp

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0


@dataclass
class WordAgreement:
    words: list[WordStats]          # reported words (>= min_occurrences), by rank
    all_words: dict[str, WordStats]
    screens_used: int
    screens_excluded: int
    coverage: float                 # share of word occurrences covered by ``words``

    def __getitem__(self, word: str) -> WordStats:
        return self.all_words[word]


def agreement_counts(summaries: Sequence[Sequence[str]], per_token: bool = False) -> dict[str, list[int]]:
    """word -> [tp, fp, fn] for one screen's tokenized summaries."""
    counts: dict[str, list[int]] = {}
    types = [set(s) for s in summaries]
    for i, words in enumerate(summaries):
        others = set().union(*(types[j] for j in range(len(summaries)) if j != i))
        checked = words if per_token else types[i]
        for w in checked:
            c = counts.setdefault(w, [0, 0, 0])
            c[0 if w in others else 1] += 1
        for w in others - types[i]:
            counts.setdefault(w, [0, 0, 0])[2] += 1
    return counts


def word_agreement(
    corpus: Corpus | Iterable[Screen],
    stop_phrases: Sequence[str] = (),
    per_token: bool = False,
    min_occurrences: int = 2,
) -> WordAgreement:
    """Per-word precision and recall of each summary against the other four.

    Only screens with exactly five summaries take part. By default each
    distinct word counts once per summary; ``per_token`` counts repeats.
    """
    totals: dict[str, list[int]] = {}
    used = excluded = 0
    for screen in _screens(corpus):
        if len(screen.summaries) != AGREEMENT_SUMMARIES:
            excluded += 1
            continue
        used += 1
        toks = [summary_words(strip_stop_phrases(s, stop_phrases)) for s in screen.summaries]
        for w, (tp, fp, fn) in agreement_counts(toks, per_token).items():
            t = totals.setdefault(w, [0, 0, 0])
            t[0] += tp
            t[1] += fp
            t[2] += fn
    order = sorted(totals, key=lambda w: (-(totals[w][0] + totals[w][1]), w))
    stats = {w: WordStats(w, r, *totals[w]) for r, w in enumerate(order, start=1)}
    reported = [stats[w] for w in order if stats[w].occurrences >= min_occurrences]
    total_occ = sum(s.occurrences for s in stats.values())
    coverage = sum(s.occurrences for s in reported) / total_occ if total_occ else 0.0
    return WordAgreement(reported, stats, used, excluded, coverage)


def iou(a: Bounds | Sequence[int], b: Bounds | Sequence[int]) -> float:
    """Intersection over union; identical zero-area boxes score 1."""
    al, at, ar, ab = a.as_list() if isinstance(a, Bounds) else a
    bl, bt, br, bb = b.as_list() if isinstance(b, Bounds) else b
    inter = max(0, min(ar, br) - max(al, bl)) * max(0, min(ab, bb) - max(at, bt))
    union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter
    if union <= 0:
        return 1.0 if (al, at, ar, ab) == (bl, bt, br, bb) else 0.0
    return inter / union


@dataclass(frozen=True)
class SfaStats:
    coverage: float
    iou: float
    boxes: int
    screens_with_boxes: int
    screens_with_pairs: int


def sfa_stats(corpus: Corpus | Iterable[Screen]) -> SfaStats:
    """Mean box area / screenshot area over all boxes, and mean pairwise IoU
    (averaged within each screen, then over screens with >= 2 boxes)."""
    coverages, ious = [], []
    with_boxes = 0
    for screen in _screens(corpus):
        if not screen.sfa_boxes:
            continue
        with_boxes += 1
        w, h = screen.screenshot_size or screen.device_size
        coverages.extend(b.area / (w * h) for b in screen.sfa_boxes)
        pairs = list(itertools.combinations(screen.sfa_boxes, 2))
        if pairs:
            ious.append(sum(iou(a, b) for a, b in pairs) / len(pairs))
    return SfaStats(
        coverage=sum(coverages) / len(coverages) if coverages else 0.0,
        iou=sum(ious) / len(ious) if ious else 0.0,
        boxes=len(coverages),
        screens_with_boxes=with_boxes,
        screens_with_pairs=len(ious),
    )


@dataclass(frozen=True)
class LengthDistribution:
    histogram: dict[int, int]
    mean: float
    count: int


def length_distribution(corpus: Corpus | Iterable[Screen], stop_phrases: Sequence[str] = ()) -> LengthDistribution:
    """Word counts (punctuation excluded) of every summary after stop-phrase removal."""
    lengths = [
        len(summary_words(strip_stop_phrases(s, stop_phrases))) for screen in _screens(corpus) for s in screen.summaries
    ]
    hist = dict(sorted(Counter(lengths).items()))
    return LengthDistribution(hist, sum(lengths) / len(lengths) if lengths else 0.0, len(lengths))


def write_word_agreement(path, table: WordAgreement) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["word", "rank", "tp", "fp", "fn", "precision", "recall"])
        for s in table.words:
            w.writerow([s.word, s.rank, s.tp, s.fp, s.fn, f"{s.precision:.6f}", f"{s.recall:.6f}"])


def write_sfa_stats(path, stats: SfaStats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coverage", "mean_pairwise_iou", "boxes", "screens_with_boxes", "screens_with_pairs"])
        w.writerow([f"{stats.coverage:.6f}", f"{stats.iou:.6f}", stats.boxes, stats.screens_with_boxes, stats.screens_with_pairs])


def write_length_hist(path, dist: LengthDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length", "count"])
        for k, v in dist.histogram.items():
            w.writerow([k, v])
        w.writerow(["mean", f"{dist.mean:.6f}"])
