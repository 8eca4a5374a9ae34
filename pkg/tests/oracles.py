"""Independent brute-force oracles for the metric tests.

Everything here is written from the metric definitions with no code shared
with nmtbench.metrics: explicit n-gram dictionaries, exhaustive shift-sequence
search for TER, and exhaustive alignment enumeration for Meteor.
"""

import itertools
import math
import unicodedata


def oracle_tokenize(text, lowercase):
    if lowercase:
        text = text.lower()
    spaced = []
    for ch in text:
        if unicodedata.category(ch)[0] == "P":
            spaced.extend([" ", ch, " "])
        else:
            spaced.append(ch)
    return "".join(spaced).split()


def _count_ngrams(seq, n):
    counts = {}
    for i in range(len(seq) - n + 1):
        g = tuple(seq[i : i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def oracle_bleu(hyps, refs, lowercase=False, max_order=4):
    matches = {n: 0 for n in range(1, max_order + 1)}
    totals = {n: 0 for n in range(1, max_order + 1)}
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h = oracle_tokenize(hyp, lowercase)
        r = oracle_tokenize(ref, lowercase)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc = _count_ngrams(h, n)
            rc = _count_ngrams(r, n)
            for g, c in hc.items():
                totals[n] += c
                matches[n] += min(c, rc.get(g, 0))
    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, max_order + 1):
        if matches[n] == 0 or totals[n] == 0:
            return 0.0
        log_prec += math.log(matches[n] / totals[n]) / max_order
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_prec)


def oracle_sentence_bleu(hyp, ref, lowercase=False, max_order=4):
    h = oracle_tokenize(hyp, lowercase)
    r = oracle_tokenize(ref, lowercase)
    if not h:
        return 0.0
    log_prec = 0.0
    for n in range(1, max_order + 1):
        hc = _count_ngrams(h, n)
        rc = _count_ngrams(r, n)
        total = sum(hc.values())
        match = sum(min(c, rc.get(g, 0)) for g, c in hc.items())
        if n >= 2:
            match += 1
            total += 1
        if match == 0 or total == 0:
            return 0.0
        log_prec += math.log(match / total) / max_order
    bp = min(1.0, math.exp(1.0 - len(r) / len(h)))
    return 100.0 * bp * math.exp(log_prec)


def oracle_chrf(hyps, refs, beta, lowercase=False, max_order=6):
    fsum = 0.0
    per_order = {n: [0, 0, 0] for n in range(1, max_order + 1)}  # match, hyp, ref
    for hyp, ref in zip(hyps, refs):
        h = "".join((hyp.lower() if lowercase else hyp).split())
        r = "".join((ref.lower() if lowercase else ref).split())
        for n in range(1, max_order + 1):
            hc = _count_ngrams(list(h), n)
            rc = _count_ngrams(list(r), n)
            per_order[n][1] += sum(hc.values())
            per_order[n][2] += sum(rc.values())
            per_order[n][0] += sum(min(c, rc.get(g, 0)) for g, c in hc.items())
    for n in range(1, max_order + 1):
        m, ht, rt = per_order[n]
        p = m / ht if ht else 0.0
        r = m / rt if rt else 0.0
        if beta * beta * p + r > 0:
            fsum += (1 + beta * beta) * p * r / (beta * beta * p + r)
    return 100.0 * fsum / max_order


def _levenshtein(a, b):
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d[len(a)][len(b)]


def oracle_ter_pair(hyp_toks, ref_toks):
    """Exhaustive shift-sequence search: minimum of (#shifts + edit distance)
    over ALL sequences of block moves (any span to any position). Exponential;
    intended for sentences of <= 8 tokens."""
    start = tuple(hyp_toks)
    best = _levenshtein(start, ref_toks)
    frontier = {start}
    visited = {start: 0}
    shifts = 0
    while frontier and shifts + 1 < best:
        shifts += 1
        nxt = set()
        for state in frontier:
            lst = list(state)
            for i in range(len(lst)):
                for length in range(1, len(lst) - i + 1):
                    span = lst[i : i + length]
                    rest = lst[:i] + lst[i + length :]
                    for j in range(len(rest) + 1):
                        if j == i:
                            continue
                        cand = tuple(rest[:j] + span + rest[j:])
                        if visited.get(cand, 99) <= shifts:
                            continue
                        visited[cand] = shifts
                        best = min(best, shifts + _levenshtein(cand, ref_toks))
                        nxt.add(cand)
        frontier = nxt
    return best


def oracle_ter(hyps, refs, lowercase=False):
    edits = 0
    ref_total = 0
    for hyp, ref in zip(hyps, refs):
        h = oracle_tokenize(hyp, lowercase)
        r = oracle_tokenize(ref, lowercase)
        if not r:
            continue
        edits += oracle_ter_pair(h, r)
        ref_total += len(r)
    return 100.0 * edits / ref_total if ref_total else 0.0


def oracle_meteor_counts(hyp_toks, ref_toks):
    """Enumerate every maximum exact-match alignment; return (matches,
    min chunk count). Pure enumeration via per-type occurrence tuples."""
    types = sorted(set(hyp_toks) & set(ref_toks))
    hyp_occ = {t: [i for i, x in enumerate(hyp_toks) if x == t] for t in types}
    ref_occ = {t: [j for j, x in enumerate(ref_toks) if x == t] for t in types}
    m = sum(min(len(hyp_occ[t]), len(ref_occ[t])) for t in types)
    if m == 0:
        return 0, 0

    per_type_choices = []
    for t in types:
        k = min(len(hyp_occ[t]), len(ref_occ[t]))
        choices = []
        for hsub in itertools.combinations(hyp_occ[t], k):
            for rperm in itertools.permutations(ref_occ[t], k):
                choices.append(tuple(zip(hsub, rperm)))
        per_type_choices.append(choices)

    best_chunks = None
    for combo in itertools.product(*per_type_choices):
        pairs = sorted(p for group in combo for p in group)
        chunks = 1
        for (h1, r1), (h2, r2) in zip(pairs, pairs[1:]):
            if not (h2 == h1 + 1 and r2 == r1 + 1):
                chunks += 1
        if best_chunks is None or chunks < best_chunks:
            best_chunks = chunks
    return m, best_chunks


def oracle_meteor(hyps, refs, lowercase=False):
    tm = th = tr = tc = 0
    for hyp, ref in zip(hyps, refs):
        h = oracle_tokenize(hyp, lowercase)
        r = oracle_tokenize(ref, lowercase)
        m, chunks = oracle_meteor_counts(h, r)
        tm += m
        tc += chunks
        th += len(h)
        tr += len(r)
    if tm == 0 or th == 0 or tr == 0:
        return 0.0
    p = tm / th
    r = tm / tr
    f_mean = 10 * p * r / (r + 9 * p)
    return f_mean * (1.0 - 0.5 * (tc / tm) ** 3)


def oracle_f1(hyps, refs, lowercase=False):
    matched = hl = rl = 0
    for hyp, ref in zip(hyps, refs):
        h = oracle_tokenize(hyp, lowercase)
        r = oracle_tokenize(ref, lowercase)
        hl += len(h)
        rl += len(r)
        remaining = list(r)
        for tok in h:
            if tok in remaining:
                remaining.remove(tok)
                matched += 1
    if hl == 0 or rl == 0:
        return 0.0
    p = matched / hl
    r = matched / rl
    return 2 * p * r / (p + r) if p + r else 0.0
