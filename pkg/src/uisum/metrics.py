"""Captioning metrics: corpus BLEU-1..4, ROUGE-L, CIDEr and METEOR-lite.

Every metric takes pre-tokenized sentences (lists of strings) or raw
strings, which are passed through :func:`uisum.vocab.tokenize`. Raw metric
values are in [0, 1] (CIDEr in [0, 10]); :class:`MetricReport` stores them
multiplied by 100.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

from nltk.stem.porter import PorterStemmer

from .corpus import Corpus, strip_stop_phrases
from .errors import CoverageError
from .vocab import tokenize

logger = logging.getLogger(__name__)

Tokens = Sequence[str]
TABLE_COLUMNS = ("bleu1", "bleu2", "bleu3", "bleu4", "cider", "rouge_l", "meteor")
COLUMN_TITLES = {
    "bleu1": "BLEU-1", "bleu2": "BLEU-2", "bleu3": "BLEU-3", "bleu4": "BLEU-4",
    "cider": "CIDEr", "rouge_l": "ROUGE-L", "meteor": "METEOR-lite",
}


def _tokens(x) -> list[str]:
    if isinstance(x, str):
        return tokenize(x)
    return list(x)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------


def _closest_ref_len(cand_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu(candidates: Sequence, reference_sets: Sequence[Sequence], max_n: int = 4, smooth: bool = False) -> list[float]:
    """Corpus BLEU-1..max_n.

    Clipped n-gram counts and candidate lengths are summed over the corpus;
    the brevity penalty uses, per candidate, the closest reference length
    (shorter on ties). Without smoothing a zero precision at any order up to
    n makes BLEU-n zero. ``smooth`` adds one to numerator and denominator
    for orders >= 2.
    """
    if len(candidates) != len(reference_sets):
        raise ValueError("need one reference set per candidate")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, reference_sets):
        cand = _tokens(cand)
        refs = [_tokens(r) for r in refs]
        if not refs:
            raise ValueError("empty reference set")
        cand_len += len(cand)
        ref_len += _closest_ref_len(len(cand), [len(r) for r in refs])
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            max_ref = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)

    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores, log_sum = [], 0.0
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0 or log_sum == -math.inf:
            log_sum = -math.inf
            scores.append(0.0)
            continue
        log_sum += math.log(m / t)
        scores.append(bp * math.exp(log_sum / n))
    return scores


# --------------------------------------------------------------------------
# ROUGE-L
# --------------------------------------------------------------------------


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_single(candidate, reference, beta: float = 1.2) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def rouge_l(candidate, references: Sequence, beta: float = 1.2) -> float:
    """LCS F-measure, maximum over references."""
    return max((rouge_l_single(candidate, r, beta) for r in references), default=0.0)


# --------------------------------------------------------------------------
# CIDEr
# --------------------------------------------------------------------------


class Cider:
    """CIDEr with document frequencies taken from the evaluation corpus.

    Each screen's reference set is one document. For n = 1..4 the candidate
    and each reference become tf-idf vectors (tf = raw count,
    idf = log(N) - log(max(1, df))); the cosines are averaged over
    references and n, then multiplied by 10.
    """

    def __init__(self, reference_sets: Sequence[Sequence], max_n: int = 4):
        self.max_n = max_n
        self.num_docs = len(reference_sets)
        if self.num_docs < 2:
            warnings.warn("CIDEr document frequencies from fewer than 2 screens are degenerate", RuntimeWarning, stacklevel=2)
        self.df: Counter = Counter()
        for refs in reference_sets:
            seen = set()
            for r in refs:
                toks = _tokens(r)
                for n in range(1, max_n + 1):
                    seen.update(ngrams(toks, n))
            self.df.update(seen)
        self._log_n = math.log(float(self.num_docs)) if self.num_docs else 0.0

    def _vector(self, tokens: Tokens, n: int) -> tuple[dict, float]:
        vec = {g: c * (self._log_n - math.log(max(1.0, self.df[g]))) for g, c in ngrams(tokens, n).items()}
        return vec, math.sqrt(sum(v * v for v in vec.values()))

    def score(self, candidate, references: Sequence) -> float:
        if not references:
            raise ValueError("empty reference set")
        cand = _tokens(candidate)
        refs = [_tokens(r) for r in references]
        total = 0.0
        for n in range(1, self.max_n + 1):
            cv, cn = self._vector(cand, n)
            for r in refs:
                rv, rn = self._vector(r, n)
                if cn > 0 and rn > 0:
                    total += sum(v * rv.get(g, 0.0) for g, v in cv.items()) / (cn * rn)
        return 10.0 * total / (self.max_n * len(refs))


def cider(candidate, references: Sequence, idf_from: Sequence[Sequence]) -> float:
    return Cider(idf_from).score(candidate, references)


# --------------------------------------------------------------------------
# METEOR-lite
# --------------------------------------------------------------------------

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer.stem(token)


def meteor_alignment(candidate: Tokens, reference: Tokens) -> tuple[int, int]:
    """(matches, chunks) of the best unigram alignment.

    Tokens match when their Porter stems agree (which covers exact
    matches). The alignment maximizes matches, then minimizes chunks; a
    chunk is a maximal run of matches adjacent in both sentences, so
    chunks = matches - links, where a link joins cand i-1 -> ref j-1 with
    cand i -> ref j. Exact search over reference positions still free.
    """
    cs = [stem(t) for t in candidate]
    rs = [stem(t) for t in reference]
    options = [tuple(j for j, r in enumerate(rs) if r == c) for c in cs]

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> tuple[int, int]:
        if i == len(cs):
            return (0, 0)
        m, l = best(i + 1, used, -1)
        result = (m, l)
        for j in options[i]:
            if used >> j & 1:
                continue
            m, l = best(i + 1, used | (1 << j), j)
            cand = (m + 1, l + (1 if prev >= 0 and j == prev + 1 else 0))
            if cand > result:
                result = cand
        return result

    matches, links = best(0, 0, -1)
    return matches, matches - links


def meteor_single(candidate, reference, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    m, chunks = meteor_alignment(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)  # = 10PR / (R + 9P) at alpha 0.9
    return fmean * (1.0 - gamma * (chunks / m) ** beta)


def meteor_lite(candidate, references: Sequence) -> float:
    """Exact + stem METEOR, maximum over references."""
    return max((meteor_single(candidate, r) for r in references), default=0.0)


# --------------------------------------------------------------------------
# Suite
# --------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Corpus scores (x100) and per-screen scores (x100).

    BLEU, ROUGE-L and METEOR-lite fall in [0, 100]; CIDEr in [0, 1000].
    """

    scores: dict[str, float]
    per_screen: dict[str, dict[str, float]] = field(default_factory=dict)
    split: str | None = None

    def __getitem__(self, key: str) -> float:
        return self.scores[key]


def _screen_scores(args) -> dict[str, float]:
    cand, refs = args
    return {"rouge_l": rouge_l(cand, refs), "meteor": meteor_lite(cand, refs)}


def score_corpus(candidates: Mapping[str, str], references: Mapping[str, Sequence[str]], jobs: int = 1) -> MetricReport:
    """Score ``candidates[sid]`` against ``references[sid]`` for every sid in
    ``references``."""
    ids = sorted(references)
    missing = [sid for sid in ids if sid not in candidates]
    if missing:
        raise CoverageError(f"missing predictions for {len(missing)} screen(s): {', '.join(missing[:20])}", missing)
    cands = [_tokens(candidates[sid]) for sid in ids]
    refs = [[_tokens(r) for r in references[sid]] for sid in ids]
    if not ids:
        return MetricReport({k: 0.0 for k in TABLE_COLUMNS})

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            per = list(pool.map(_screen_scores, zip(cands, refs), chunksize=64))
    else:
        per = [_screen_scores(a) for a in zip(cands, refs)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if len(ids) >= 2 else "default")
        scorer = Cider(refs)
    for row, c, r in zip(per, cands, refs):
        row["cider"] = scorer.score(c, r)
        for n, b in enumerate(bleu([c], [r]), start=1):
            row[f"bleu{n}"] = b

    scores = dict(zip(("bleu1", "bleu2", "bleu3", "bleu4"), bleu(cands, refs)))
    for k in ("cider", "rouge_l", "meteor"):
        scores[k] = sum(row[k] for row in per) / len(per)
    return MetricReport(
        {k: 100.0 * scores[k] for k in TABLE_COLUMNS},
        {sid: {k: 100.0 * row[k] for k in TABLE_COLUMNS} for sid, row in zip(ids, per)},
    )


def evaluate_suite(predictions, corpus: Corpus, split: str = "test", stop_phrases: Sequence[str] = (), jobs: int = 1) -> MetricReport:
    """Score rank-1 predictions on ``split``.

    ``predictions`` is a prediction CSV path or a mapping screen id -> text.
    References are each screen's summaries after stop-phrase removal.
    """
    if not isinstance(predictions, Mapping):
        from .decode import read_predictions

        predictions = {sid: rows[0][2] for sid, rows in read_predictions(predictions).items() if rows}
    references = {
        s.screen_id: [strip_stop_phrases(t, stop_phrases) for t in s.summaries] for s in corpus.view(split)
    }
    report = score_corpus(predictions, references, jobs=jobs)
    report.split = split
    return report


def write_report(path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "score", "range"])
        for k in TABLE_COLUMNS:
            w.writerow([k, f"{report.scores[k]:.4f}", "0-1000" if k == "cider" else "0-100"])


def write_per_screen(path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["screenId", *TABLE_COLUMNS])
        for sid in sorted(report.per_screen):
            w.writerow([sid, *(f"{report.per_screen[sid][k]:.4f}" for k in TABLE_COLUMNS)])


def format_table(reports: Mapping[str, MetricReport] | MetricReport) -> str:
    """Plain-text table, one row per system, columns BLEU-1..4, CIDEr,
    ROUGE-L, METEOR-lite."""
    if isinstance(reports, MetricReport):
        reports = {"model": reports}
    width = max([len(n) for n in reports] + [6])
    head = "system".ljust(width) + "".join(COLUMN_TITLES[k].rjust(12) for k in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in reports.items():
        lines.append(name.ljust(width) + "".join(f"{rep.scores[k]:12.1f}" for k in TABLE_COLUMNS))
    return "\n".join(lines)

