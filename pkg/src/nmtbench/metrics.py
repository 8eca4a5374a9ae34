"""MT evaluation metrics: BLEU (corpus/sentence), ChrF, TER, Meteor-lite, F1.

All metrics own their tokenization so scores are reproducible bit-for-bit.
Meteor is exact-match only (no stems or synonyms) and therefore reported
as "meteor_lite" everywhere.
"""

from __future__ import annotations

import math
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field


class MetricError(Exception):
    pass


class LengthMismatch(MetricError):
    pass


DEFAULT_METRICS = ("bleu", "chrf1", "chrf3", "ter", "meteor_lite", "f1")

MAX_SHIFT_SIZE = 10  # longest hypothesis span TER will try to shift


@dataclass(frozen=True)
class EvalConfig:
    case_mode: str = "truecase"  # "truecase" | "lowercase"
    bleu_max_order: int = 4
    chrf_char_order: int = 6
    meteor_gamma: float = 0.5
    meteor_beta: float = 3.0
    meteor_recall_weight: float = 9.0
    tokenizer: str = "intl-punct-v1"

    def validate(self) -> None:
        if self.case_mode not in ("truecase", "lowercase"):
            raise ValueError(f"unknown case_mode {self.case_mode!r}")
        if self.bleu_max_order < 1 or self.chrf_char_order < 1:
            raise ValueError("n-gram orders must be >= 1")


@dataclass
class EvaluationReport:
    scores: dict[str, dict[str, float]]  # case_mode -> metric -> score
    sentence_scores: dict[str, list[float]] = field(default_factory=dict)
    hyp_tokens: int = 0
    ref_tokens: int = 0
    pair_count: int = 0
    ter_skipped_empty_refs: int = 0
    config: EvalConfig = field(default_factory=EvalConfig)
    notes: tuple[str, ...] = (
        "meteor_lite uses exact-match unigram alignment only",
        "f1 is corpus-level (micro-averaged counts)",
    )


def tokenize_eval(text: str, case_mode: str = "truecase") -> list[str]:
    """Lowercase (if asked), isolate Unicode punctuation, split on whitespace."""
    if case_mode == "lowercase":
        text = text.lower()
    out: list[str] = []
    for ch in text:
        if unicodedata.category(ch).startswith("P"):
            out.append(f" {ch} ")
        else:
            out.append(ch)
    return "".join(out).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(hyps, refs) -> None:
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if len(hyps) == 0:
        raise MetricError("empty corpus")


# ---------------------------------------------------------------------------
# BLEU


def _bleu_stats(hyp_toks, ref_toks, max_order):
    """Per-pair clipped matches and totals for each order, plus lengths."""
    matches = [0] * max_order
    totals = [0] * max_order
    for n in range(1, max_order + 1):
        h = _ngrams(hyp_toks, n)
        r = _ngrams(ref_toks, n)
        totals[n - 1] = sum(h.values())
        matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
    return matches, totals, len(hyp_toks), len(ref_toks)


def _bleu_from_stats(matches, totals, hyp_len, ref_len, smooth: bool) -> float:
    """BLEU = BP * exp(mean log p_n). Unsmoothed mode returns 0 when any
    p_n is 0; add-one smoothing applies to orders >= 2 only."""
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    order = len(matches)
    for n in range(1, order + 1):
        m, t = matches[n - 1], totals[n - 1]
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_sum / order)


def bleu_corpus(hyps: list[str], refs: list[str], config: EvalConfig = EvalConfig()) -> float:
    _check_aligned(hyps, refs)
    order = config.bleu_max_order
    agg_m = [0] * order
    agg_t = [0] * order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        m, t, hl, rl = _bleu_stats(
            tokenize_eval(hyp, config.case_mode),
            tokenize_eval(ref, config.case_mode),
            order,
        )
        agg_m = [a + b for a, b in zip(agg_m, m)]
        agg_t = [a + b for a, b in zip(agg_t, t)]
        hyp_len += hl
        ref_len += rl
    return _bleu_from_stats(agg_m, agg_t, hyp_len, ref_len, smooth=False)


def bleu_sentence(hyp: str, ref: str, config: EvalConfig = EvalConfig()) -> float:
    m, t, hl, rl = _bleu_stats(
        tokenize_eval(hyp, config.case_mode),
        tokenize_eval(ref, config.case_mode),
        config.bleu_max_order,
    )
    return _bleu_from_stats(m, t, hl, rl, smooth=True)


# ---------------------------------------------------------------------------
# ChrF


def _chrf_text(text: str, case_mode: str) -> str:
    if case_mode == "lowercase":
        text = text.lower()
    return "".join(text.split())


def chrf(
    hyps: list[str],
    refs: list[str],
    char_order: int = 6,
    beta: float = 1.0,
    case_mode: str = "truecase",
) -> float:
    """Character n-gram F_beta averaged over orders 1..char_order, x100."""
    _check_aligned(hyps, refs)
    agg_m = [0] * char_order
    agg_h = [0] * char_order
    agg_r = [0] * char_order
    for hyp, ref in zip(hyps, refs):
        h_text = list(_chrf_text(hyp, case_mode))
        r_text = list(_chrf_text(ref, case_mode))
        for n in range(1, char_order + 1):
            h = _ngrams(h_text, n)
            r = _ngrams(r_text, n)
            agg_h[n - 1] += sum(h.values())
            agg_r[n - 1] += sum(r.values())
            agg_m[n - 1] += sum(min(c, r[g]) for g, c in h.items())
    beta2 = beta * beta
    f_sum = 0.0
    for n in range(char_order):
        p = agg_m[n] / agg_h[n] if agg_h[n] else 0.0
        r = agg_m[n] / agg_r[n] if agg_r[n] else 0.0
        denom = beta2 * p + r
        f_sum += (1 + beta2) * p * r / denom if denom > 0 else 0.0
    return 100.0 * f_sum / char_order


# ---------------------------------------------------------------------------
# TER


def _edit_distance(a: list[str], b: list[str]) -> int:
    """Word-level Levenshtein (unit-cost insert/delete/substitute)."""
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1),
            )
        prev = cur
    return prev[len(b)]


def _shift_candidates(hyp: list[str], ref: list[str]):
    """Spans of hyp (length <= MAX_SHIFT_SIZE) that match a ref span at a
    different position; the standard mismatch-anchored pruning."""
    for i1 in range(len(hyp)):
        for i2 in range(len(ref)):
            if i1 == i2 or hyp[i1] != ref[i2]:
                continue
            length = 1
            while (
                length <= MAX_SHIFT_SIZE
                and i1 + length <= len(hyp)
                and i2 + length <= len(ref)
                and hyp[i1 + length - 1] == ref[i2 + length - 1]
            ):
                yield i1, i2, length
                length += 1


def _apply_shift(hyp: list[str], i1: int, i2: int, length: int) -> list[str]:
    span = hyp[i1 : i1 + length]
    rest = hyp[:i1] + hyp[i1 + length :]
    return rest[:i2] + span + rest[i2:]


def ter_pair(hyp_toks: list[str], ref_toks: list[str]) -> int:
    """Greedy-shift TER edits for one pair: repeatedly apply the block shift
    that most reduces edit distance (ties: smallest (i1, i2, length)), one
    edit per shift, then add the residual edit distance."""
    edits = 0
    hyp = list(hyp_toks)
    while True:
        base = _edit_distance(hyp, ref_toks)
        if base == 0:
            return edits
        # candidates arrive in (i1, i2, length) order, so keeping the first
        # strict improvement also implements the smallest-tuple tie-break
        best_delta = 0
        best = None
        for i1, i2, length in _shift_candidates(hyp, ref_toks):
            delta = base - _edit_distance(_apply_shift(hyp, i1, i2, length), ref_toks)
            if delta > best_delta:
                best_delta = delta
                best = (i1, i2, length)
        if best is None:
            return edits + base
        hyp = _apply_shift(hyp, *best)
        edits += 1


def ter(hyps: list[str], refs: list[str], config: EvalConfig = EvalConfig()) -> float:
    score, _ = ter_with_details(hyps, refs, config)
    return score


def ter_with_details(
    hyps: list[str], refs: list[str], config: EvalConfig = EvalConfig()
) -> tuple[float, int]:
    """Corpus TER x100 = total edits / total reference tokens; returns
    (score, skipped-empty-reference count)."""
    _check_aligned(hyps, refs)
    total_edits = 0
    total_ref = 0
    skipped = 0
    for hyp, ref in zip(hyps, refs):
        ref_toks = tokenize_eval(ref, config.case_mode)
        if not ref_toks:
            warnings.warn("TER: skipping pair with empty reference")
            skipped += 1
            continue
        hyp_toks = tokenize_eval(hyp, config.case_mode)
        total_edits += ter_pair(hyp_toks, ref_toks)
        total_ref += len(ref_toks)
    if total_ref == 0:
        return 0.0, skipped
    return 100.0 * total_edits / total_ref, skipped


# ---------------------------------------------------------------------------
# Meteor-lite


def meteor_align(hyp_toks: list[str], ref_toks: list[str]) -> tuple[int, int]:
    """Exact-match unigram alignment: maximum matches, then minimum chunks.

    Branch-and-bound over hyp positions with memoization on
    (position, used-reference bitmask, last matched reference index).
    Returns (matches, chunks).
    """
    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref_toks):
        ref_positions.setdefault(tok, []).append(j)
    max_matches = sum(
        min(c, len(ref_positions.get(tok, ())))
        for tok, c in Counter(hyp_toks).items()
    )
    if max_matches == 0:
        return 0, 0

    # hyp-suffix count per token, for the remaining-matches bound
    n = len(hyp_toks)
    best: list[tuple[int, int]] = [(0, 0)]  # (matches, -chunks) maximized
    seen: dict[tuple[int, int, int], tuple[int, int]] = {}

    def remaining_bound(i: int, used: int) -> int:
        counts = Counter(hyp_toks[i:])
        total = 0
        for tok, c in counts.items():
            avail = sum(1 for j in ref_positions.get(tok, ()) if not (used >> j) & 1)
            total += min(c, avail)
        return total

    def dfs(i: int, used: int, matches: int, chunks: int, last_j: int) -> None:
        if matches + remaining_bound(i, used) < best[0][0]:
            return
        key = (i, used, last_j)
        prev = seen.get(key)
        if prev is not None and prev >= (matches, -chunks):
            return
        seen[key] = (matches, -chunks)
        if i == n:
            if (matches, -chunks) > best[0]:
                best[0] = (matches, -chunks)
            return
        tok = hyp_toks[i]
        candidates = [
            j for j in ref_positions.get(tok, ()) if not (used >> j) & 1
        ]
        # try run continuation first so good incumbents appear early
        candidates.sort(key=lambda j: (j != last_j + 1, j))
        for j in candidates:
            new_chunks = chunks + (0 if j == last_j + 1 else 1)
            dfs(i + 1, used | (1 << j), matches + 1, new_chunks, j)
        dfs(i + 1, used, matches, chunks, -2)  # leave hyp_toks[i] unmatched

    dfs(0, 0, 0, 0, -2)
    matches, neg_chunks = best[0]
    return matches, -neg_chunks


def _meteor_from_counts(m, hyp_len, ref_len, chunks, config: EvalConfig) -> float:
    if m == 0 or hyp_len == 0 or ref_len == 0:
        return 0.0
    p = m / hyp_len
    r = m / ref_len
    w = config.meteor_recall_weight
    f_mean = (1 + w) * p * r / (r + w * p)
    penalty = config.meteor_gamma * (chunks / m) ** config.meteor_beta
    return f_mean * (1.0 - penalty)


def meteor_lite(hyps: list[str], refs: list[str], config: EvalConfig = EvalConfig()) -> float:
    """Corpus Meteor-lite: counts aggregated over pairs before the formula."""
    _check_aligned(hyps, refs)
    tm = th = tr = tc = 0
    for hyp, ref in zip(hyps, refs):
        hyp_toks = tokenize_eval(hyp, config.case_mode)
        ref_toks = tokenize_eval(ref, config.case_mode)
        m, chunks = meteor_align(hyp_toks, ref_toks)
        tm += m
        tc += chunks
        th += len(hyp_toks)
        tr += len(ref_toks)
    return _meteor_from_counts(tm, th, tr, tc, config)


def meteor_lite_sentence(hyp: str, ref: str, config: EvalConfig = EvalConfig()) -> float:
    hyp_toks = tokenize_eval(hyp, config.case_mode)
    ref_toks = tokenize_eval(ref, config.case_mode)
    m, chunks = meteor_align(hyp_toks, ref_toks)
    return _meteor_from_counts(m, len(hyp_toks), len(ref_toks), chunks, config)


# ---------------------------------------------------------------------------
# Token F1


def f1_tokens(hyps: list[str], refs: list[str], config: EvalConfig = EvalConfig()) -> float:
    """Micro-averaged token F1 over the corpus."""
    _check_aligned(hyps, refs)
    matched = hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h = Counter(tokenize_eval(hyp, config.case_mode))
        r = Counter(tokenize_eval(ref, config.case_mode))
        matched += sum(min(c, r[tok]) for tok, c in h.items())
        hyp_len += sum(h.values())
        ref_len += sum(r.values())
    if hyp_len == 0 or ref_len == 0:
        return 0.0
    p = matched / hyp_len
    r = matched / ref_len
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


# ---------------------------------------------------------------------------
# Top-level evaluation


def _corpus_score(metric: str, hyps, refs, config: EvalConfig) -> float:
    if metric == "bleu":
        return bleu_corpus(hyps, refs, config)
    if metric == "chrf1":
        return chrf(hyps, refs, config.chrf_char_order, 1.0, config.case_mode)
    if metric == "chrf3":
        return chrf(hyps, refs, config.chrf_char_order, 3.0, config.case_mode)
    if metric == "ter":
        return ter(hyps, refs, config)
    if metric == "meteor_lite":
        return meteor_lite(hyps, refs, config)
    if metric == "f1":
        return f1_tokens(hyps, refs, config)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(
    hyps: list[str],
    refs: list[str],
    config: EvalConfig = EvalConfig(),
    metrics: tuple[str, ...] = DEFAULT_METRICS,
    both_cases: bool = False,
    sentence_bleu: bool = False,
) -> EvaluationReport:
    """Run the selected metrics; optionally under both case modes and with
    per-sentence smoothed BLEU."""
    _check_aligned(hyps, refs)
    config.validate()
    case_modes = ["truecase", "lowercase"] if both_cases else [config.case_mode]
    scores: dict[str, dict[str, float]] = {}
    skipped = 0
    for mode in case_modes:
        cfg = EvalConfig(
            case_mode=mode,
            bleu_max_order=config.bleu_max_order,
            chrf_char_order=config.chrf_char_order,
            meteor_gamma=config.meteor_gamma,
            meteor_beta=config.meteor_beta,
            meteor_recall_weight=config.meteor_recall_weight,
            tokenizer=config.tokenizer,
        )
        scores[mode] = {}
        for metric in metrics:
            if metric == "ter":
                value, skipped = ter_with_details(hyps, refs, cfg)
                scores[mode][metric] = value
            else:
                scores[mode][metric] = _corpus_score(metric, hyps, refs, cfg)
    sentence_scores: dict[str, list[float]] = {}
    if sentence_bleu:
        sentence_scores["bleu_sentence"] = [
            bleu_sentence(h, r, config) for h, r in zip(hyps, refs)
        ]
    return EvaluationReport(
        scores=scores,
        sentence_scores=sentence_scores,
        hyp_tokens=sum(len(tokenize_eval(h, config.case_mode)) for h in hyps),
        ref_tokens=sum(len(tokenize_eval(r, config.case_mode)) for r in refs),
        pair_count=len(hyps),
        ter_skipped_empty_refs=skipped,
        config=config,
    )


def format_report(report: EvaluationReport) -> str:
    """Fixed-width score table for console output."""
    lines = []
    lines.append(f"{'metric':<14}" + "".join(f"{m:>12}" for m in report.scores))
    metric_names = list(next(iter(report.scores.values())).keys())
    for metric in metric_names:
        row = f"{metric:<14}"
        for mode in report.scores:
            row += f"{report.scores[mode][metric]:>12.4f}"
        lines.append(row)
    lines.append(
        f"pairs={report.pair_count} hyp_tokens={report.hyp_tokens} "
        f"ref_tokens={report.ref_tokens}"
    )
    if report.ter_skipped_empty_refs:
        lines.append(f"ter skipped {report.ter_skipped_empty_refs} empty-reference pairs")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)
