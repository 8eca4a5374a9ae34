"""Subword segmentation: BPE and unigram-LM models over marked words.

Words are whitespace-split and prefixed with the boundary marker U+2581 so
whitespace is recoverable; decode(encode(s)) == s for any sentence over the
training character set.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

MARKER = "▁"
UNK_SURFACE = "⁇"  # rendered for UNK pieces on decode

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_PIECES = ("<pad>", "<unk>", "<s>", "</s>")

SEED_SUBSTRING_MAX_LEN = 8
SEED_VOCAB_FACTOR = 10
PRUNE_FRACTION = 0.2
EM_ITERS_PER_ROUND = 2

FORMAT_HEADER = "nmtbench-subword v1"


class SubwordError(Exception):
    pass


class VocabTooSmall(SubwordError):
    pass


class UnknownId(SubwordError):
    pass


class ModelFormatError(SubwordError):
    pass


@dataclass(frozen=True)
class Segmentation:
    ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]  # character spans in the marked input


@dataclass
class SubwordModel:
    kind: str  # "bpe" | "unigram"
    pieces: tuple[str, ...]  # dense ids; SPECIAL_PIECES occupy 0..3
    log_probs: tuple[float, ...] | None = None  # unigram, aligned; specials 0.0
    merges: tuple[tuple[str, str], ...] = ()
    marker: str = MARKER
    _piece_to_id: dict[str, int] = field(init=False, repr=False)
    _max_piece_len: int = field(init=False, repr=False)
    _log_p_map: dict[str, float] = field(init=False, repr=False)

    def __post_init__(self):
        self._piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        self._max_piece_len = max(
            (len(p) for p in self.pieces[4:]), default=1
        )
        if self.log_probs is not None:
            self._log_p_map = {
                p: self.log_probs[i] for i, p in enumerate(self.pieces) if i >= 4
            }
        else:
            self._log_p_map = {}

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int | None:
        return self._piece_to_id.get(piece)

    def log_prob(self, piece_id: int) -> float:
        assert self.log_probs is not None
        return self.log_probs[piece_id]

    @property
    def unk_log_prob(self) -> float:
        if self.log_probs is None:
            return -100.0
        real = [lp for lp in self.log_probs[4:]]
        return (min(real) if real else 0.0) - 10.0


def mark_sentence(sentence: str, marker: str = MARKER) -> str:
    return "".join(marker + w for w in sentence.split())


def _marked_word_freqs(text: list[str], marker: str) -> Counter:
    freqs: Counter = Counter()
    for sentence in text:
        for word in sentence.split():
            freqs[marker + word] += 1
    return freqs


def _observed_chars(word_freqs: Counter) -> list[str]:
    chars = {ch for word in word_freqs for ch in word}
    return sorted(chars)


# ---------------------------------------------------------------------------
# BPE


def train_bpe(text: list[str], vocab_size: int) -> SubwordModel:
    """Learn merges by repeatedly joining the most frequent adjacent symbol
    pair (ties: lexicographically smallest pair) until the vocabulary holds
    vocab_size pieces or no pair occurs at least twice."""
    word_freqs = _marked_word_freqs(text, MARKER)
    if not word_freqs:
        raise SubwordError("empty training text")
    chars = _observed_chars(word_freqs)
    base = len(SPECIAL_PIECES) + len(chars)
    if vocab_size < base:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} below minimum {base} "
            f"({len(chars)} characters + {len(SPECIAL_PIECES)} specials)"
        )
    symbolized: dict[tuple[str, ...], int] = {
        tuple(word): f for word, f in word_freqs.items()
    }
    merges: list[tuple[str, str]] = []
    while base + len(merges) < vocab_size:
        pair_counts: Counter = Counter()
        for syms, f in symbolized.items():
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += f
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        pair = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(pair)
        merged = pair[0] + pair[1]
        new_symbolized: dict[tuple[str, ...], int] = {}
        for syms, f in symbolized.items():
            new_symbolized[_merge_once(syms, pair, merged)] = f
        symbolized = new_symbolized
    pieces = SPECIAL_PIECES + tuple(chars) + tuple(a + b for a, b in merges)
    return SubwordModel(kind="bpe", pieces=pieces, merges=tuple(merges))


def _merge_once(syms: tuple[str, ...], pair: tuple[str, str], merged: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def _bpe_segment_word(model: SubwordModel, word: str) -> list[str]:
    # unknown characters are opaque single-symbol pieces and never merge
    known = model._piece_to_id
    syms: list[str] = list(word)
    for a, b in model.merges:
        merged = a + b
        out: list[str] = []
        i = 0
        while i < len(syms):
            if (
                i + 1 < len(syms)
                and syms[i] == a
                and syms[i + 1] == b
                and syms[i] in known
                and syms[i + 1] in known
            ):
                out.append(merged)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    return syms


# ---------------------------------------------------------------------------
# Unigram LM

_NEG_INF = float("-inf")


def _log_sum_exp(values: list[float]) -> float:
    m = max(values)
    if m == _NEG_INF:
        return _NEG_INF
    return m + math.log(sum(math.exp(v - m) for v in values))


def _seed_vocabulary(word_freqs: Counter, vocab_size: int) -> dict[str, float]:
    """Counts of all substrings (length 2..8) of marked words, truncated to
    SEED_VOCAB_FACTOR * vocab_size candidates, plus every single character."""
    sub_counts: Counter = Counter()
    for word, f in word_freqs.items():
        n = len(word)
        for i in range(n):
            for j in range(i + 2, min(i + SEED_SUBSTRING_MAX_LEN, n) + 1):
                sub_counts[word[i:j]] += f
    ranked = sorted(sub_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = dict(ranked[: SEED_VOCAB_FACTOR * vocab_size])
    char_counts: Counter = Counter()
    for word, f in word_freqs.items():
        for ch in word:
            char_counts[ch] += f
    for ch, c in char_counts.items():
        keep.setdefault(ch, c)
    total = sum(keep.values())
    return {p: math.log(c / total) for p, c in keep.items()}


def _word_lattice_forward(
    word: str, log_p: dict[str, float], max_len: int, skip: str | None = None
) -> list[float]:
    n = len(word)
    alpha = [_NEG_INF] * (n + 1)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        terms = []
        for i in range(max(0, j - max_len), j):
            piece = word[i:j]
            if piece == skip:
                continue
            lp = log_p.get(piece)
            if lp is not None and alpha[i] > _NEG_INF:
                terms.append(alpha[i] + lp)
        if terms:
            alpha[j] = _log_sum_exp(terms)
    return alpha


def _word_lattice_backward(word: str, log_p: dict[str, float], max_len: int) -> list[float]:
    n = len(word)
    beta = [_NEG_INF] * (n + 1)
    beta[n] = 0.0
    for i in range(n - 1, -1, -1):
        terms = []
        for j in range(i + 1, min(i + max_len, n) + 1):
            lp = log_p.get(word[i:j])
            if lp is not None and beta[j] > _NEG_INF:
                terms.append(lp + beta[j])
        if terms:
            beta[i] = _log_sum_exp(terms)
    return beta


def em_step(
    word_freqs: Counter, log_p: dict[str, float]
) -> tuple[dict[str, float], float]:
    """One EM iteration over the piece distribution.

    Returns (new log-probabilities, corpus log-likelihood under the INPUT
    probabilities). The likelihood is non-decreasing across iterations.
    """
    max_len = max(len(p) for p in log_p)
    expected: dict[str, float] = {}
    corpus_ll = 0.0
    for word, f in word_freqs.items():
        alpha = _word_lattice_forward(word, log_p, max_len)
        beta = _word_lattice_backward(word, log_p, max_len)
        log_z = alpha[len(word)]
        if log_z == _NEG_INF:
            raise SubwordError(f"word {word!r} not segmentable with current vocab")
        corpus_ll += f * log_z
        n = len(word)
        for i in range(n):
            if alpha[i] == _NEG_INF:
                continue
            for j in range(i + 1, min(i + max_len, n) + 1):
                piece = word[i:j]
                lp = log_p.get(piece)
                if lp is None or beta[j] == _NEG_INF:
                    continue
                gamma = math.exp(alpha[i] + lp + beta[j] - log_z) * f
                if gamma > 0:
                    expected[piece] = expected.get(piece, 0.0) + gamma
    log_total = math.log(sum(expected.values()))
    # subtract logs rather than dividing: tiny counts must not underflow to 0
    new_log_p = {
        p: (math.log(expected[p]) - log_total if p in expected else _NEG_INF)
        for p in log_p
    }
    # pieces with zero expected count would become unreachable; keep them
    # representable with a floor so pruning decides their fate explicitly
    floor = math.log(1e-12)
    for p, lp in new_log_p.items():
        if lp == _NEG_INF:
            new_log_p[p] = floor
    return new_log_p, corpus_ll


def corpus_log_likelihood(word_freqs: Counter, log_p: dict[str, float]) -> float:
    max_len = max(len(p) for p in log_p)
    total = 0.0
    for word, f in word_freqs.items():
        alpha = _word_lattice_forward(word, log_p, max_len)
        lz = alpha[len(word)]
        if lz == _NEG_INF:
            return _NEG_INF
        total += f * lz
    return total


def _prune_round(
    word_freqs: Counter, log_p: dict[str, float], target: int
) -> dict[str, float]:
    """Drop the PRUNE_FRACTION of multi-character pieces whose removal least
    increases corpus negative log-likelihood (single characters are kept)."""
    prunable = [p for p in log_p if len(p) > 1]
    if not prunable:
        return log_p
    excess = len(log_p) - target
    k = min(max(1, math.ceil(PRUNE_FRACTION * len(prunable))), excess)
    max_len = max(len(p) for p in log_p)

    words_with: dict[str, list[str]] = {p: [] for p in prunable}
    base_ll: dict[str, float] = {}
    for word in word_freqs:
        alpha = _word_lattice_forward(word, log_p, max_len)
        base_ll[word] = alpha[len(word)]
        seen = set()
        n = len(word)
        for i in range(n):
            for j in range(i + 2, min(i + max_len, n) + 1):
                piece = word[i:j]
                if piece in words_with and piece not in seen:
                    words_with[piece].append(word)
                    seen.add(piece)

    costs: list[tuple[float, str]] = []
    for piece in prunable:
        delta = 0.0
        for word in words_with[piece]:
            alpha = _word_lattice_forward(word, log_p, max_len, skip=piece)
            lz = alpha[len(word)]
            if lz == _NEG_INF:
                delta = math.inf  # removal would make a word unsegmentable
                break
            delta += word_freqs[word] * (base_ll[word] - lz)
        costs.append((delta, piece))
    costs.sort(key=lambda c: (c[0], c[1]))
    to_drop = {piece for _, piece in costs[:k]}
    kept = {p: lp for p, lp in log_p.items() if p not in to_drop}
    # renormalize the survivors
    log_total = _log_sum_exp(list(kept.values()))
    return {p: lp - log_total for p, lp in kept.items()}


def train_unigram(text: list[str], vocab_size: int) -> SubwordModel:
    """EM-trained unigram piece model pruned down to vocab_size pieces
    (including the four specials). A corpus with fewer distinct substrings
    than requested yields a correspondingly smaller model."""
    word_freqs = _marked_word_freqs(text, MARKER)
    if not word_freqs:
        raise SubwordError("empty training text")
    chars = _observed_chars(word_freqs)
    base = len(SPECIAL_PIECES) + len(chars)
    if vocab_size < base:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} below minimum {base} "
            f"({len(chars)} characters + {len(SPECIAL_PIECES)} specials)"
        )
    target_pieces = vocab_size - len(SPECIAL_PIECES)
    log_p = _seed_vocabulary(word_freqs, vocab_size)
    for _ in range(EM_ITERS_PER_ROUND):
        log_p, _ = em_step(word_freqs, log_p)
    while len(log_p) > target_pieces:
        log_p = _prune_round(word_freqs, log_p, target_pieces)
        for _ in range(EM_ITERS_PER_ROUND):
            log_p, _ = em_step(word_freqs, log_p)

    ordered = sorted(log_p.items(), key=lambda kv: (-kv[1], kv[0]))
    pieces = SPECIAL_PIECES + tuple(p for p, _ in ordered)
    log_probs = (0.0,) * 4 + tuple(lp for _, lp in ordered)
    return SubwordModel(kind="unigram", pieces=pieces, log_probs=log_probs)


def viterbi_segment(
    word: str, log_p: dict[str, float], max_len: int, unk_log_p: float
) -> tuple[list[str], float]:
    """Max log-prob segmentation; unknown characters become single-char
    pieces scored at unk_log_p. Ties prefer fewer pieces, then the smaller
    final piece, which makes the choice deterministic."""
    n = len(word)
    # best[j] = (logprob, -pieces, reversed-piece-key, backpointer, piece)
    best: list[tuple[float, int, tuple, int, str] | None] = [None] * (n + 1)
    best[0] = (0.0, 0, (), -1, "")
    for j in range(1, n + 1):
        for i in range(max(0, j - max_len), j):
            if best[i] is None:
                continue
            piece = word[i:j]
            lp = log_p.get(piece)
            if lp is None:
                if j - i != 1:
                    continue
                lp = unk_log_p
            prev = best[i]
            cand = (prev[0] + lp, prev[1] - 1, None, i, piece)
            if best[j] is None or (cand[0], cand[1]) > (best[j][0], best[j][1]):
                best[j] = cand
            elif (cand[0], cand[1]) == (best[j][0], best[j][1]) and piece < best[j][4]:
                best[j] = cand
    assert best[n] is not None
    pieces_rev = []
    j = n
    while j > 0:
        entry = best[j]
        pieces_rev.append(entry[4])
        j = entry[3]
    return list(reversed(pieces_rev)), best[n][0]


def encode(model: SubwordModel, sentence: str) -> Segmentation:
    """Segment a sentence into piece ids; characters outside the vocabulary
    map to UNK."""
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    pos = 0
    for word in sentence.split():
        marked = model.marker + word
        if model.kind == "bpe":
            pieces = _bpe_segment_word(model, marked)
        else:
            pieces, _ = viterbi_segment(
                marked, model._log_p_map, model._max_piece_len, model.unk_log_prob
            )
        for piece in pieces:
            pid = model.piece_id(piece)
            ids.append(pid if pid is not None else UNK)
            offsets.append((pos, pos + len(piece)))
            pos += len(piece)
    return Segmentation(ids=tuple(ids), offsets=tuple(offsets))


def encode_log_prob(model: SubwordModel, sentence: str) -> float:
    """Total Viterbi log-prob of the chosen segmentation (unigram only)."""
    assert model.kind == "unigram"
    total = 0.0
    for word in sentence.split():
        _, lp = viterbi_segment(
            model.marker + word, model._log_p_map, model._max_piece_len,
            model.unk_log_prob,
        )
        total += lp
    return total


def decode(model: SubwordModel, ids: list[int]) -> str:
    """Concatenate piece texts; markers become spaces; leading space trimmed."""
    parts: list[str] = []
    for pid in ids:
        if not (0 <= pid < model.vocab_size):
            raise UnknownId(f"piece id {pid} out of range 0..{model.vocab_size - 1}")
        if pid in (PAD, BOS, EOS):
            continue
        parts.append(UNK_SURFACE if pid == UNK else model.pieces[pid])
    text = "".join(parts).replace(model.marker, " ")
    return text[1:] if text.startswith(" ") else text


def encode_corpus(model: SubwordModel, sentences: list[str]) -> list[list[int]]:
    return [list(encode(model, s).ids) for s in sentences]


# ---------------------------------------------------------------------------
# Serialization


def _escape(piece: str) -> str:
    return (
        piece.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def save_model(model: SubwordModel, path: str | Path) -> None:
    lines = [f"{FORMAT_HEADER} {model.kind} {model.vocab_size} {model.marker}"]
    for i, piece in enumerate(model.pieces):
        lp = ""
        if model.log_probs is not None and i >= 4:
            lp = repr(model.log_probs[i])
        lines.append(f"{i}\t{_escape(piece)}\t{lp}")
    if model.kind == "bpe":
        lines.append("merges:")
        for a, b in model.merges:
            lines.append(f"{_escape(a)}\t{_escape(b)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> SubwordModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ModelFormatError("empty model file")
    header = lines[0].split(" ")
    if " ".join(header[:2]) != FORMAT_HEADER:
        raise ModelFormatError(f"bad header {lines[0]!r}")
    kind, vocab_size, marker = header[2], int(header[3]), header[4]
    pieces: list[str] = []
    log_probs: list[float] = []
    merges: list[tuple[str, str]] = []
    in_merges = False
    for line in lines[1:]:
        if line == "merges:":
            in_merges = True
            continue
        if in_merges:
            a, b = line.split("\t")
            merges.append((_unescape(a), _unescape(b)))
            continue
        idx, piece, lp = line.split("\t")
        if int(idx) != len(pieces):
            raise ModelFormatError(f"non-dense piece id {idx}")
        pieces.append(_unescape(piece))
        log_probs.append(float(lp) if lp else 0.0)
    if len(pieces) != vocab_size:
        raise ModelFormatError(
            f"header says {vocab_size} pieces, file has {len(pieces)}"
        )
    return SubwordModel(
        kind=kind,
        pieces=tuple(pieces),
        log_probs=tuple(log_probs) if kind == "unigram" else None,
        merges=tuple(merges),
        marker=marker,
    )


def model_digest(model: SubwordModel) -> str:
    h = hashlib.sha256()
    h.update(model.kind.encode())
    for piece in model.pieces:
        h.update(piece.encode())
        h.update(b"\x00")
    if model.log_probs:
        for lp in model.log_probs:
            h.update(repr(lp).encode())
    for a, b in model.merges:
        h.update(a.encode() + b"\x01" + b.encode())
    return h.hexdigest()
