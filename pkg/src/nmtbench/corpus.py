"""Parallel corpus loading, cleaning, deterministic splitting and stats."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class CorpusError(Exception):
    pass


class LineCountMismatch(CorpusError):
    def __init__(self, source_lines: int, target_lines: int):
        super().__init__(
            f"source has {source_lines} lines but target has {target_lines}"
        )
        self.source_lines = source_lines
        self.target_lines = target_lines


class DecodeError(CorpusError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: invalid UTF-8 ({reason})")
        self.path = path
        self.line_no = line_no


class CorpusTooSmall(CorpusError):
    pass


@dataclass(frozen=True)
class ParallelCorpus:
    """Aligned sentence pairs. Immutable; safe to share across threads."""

    pairs: tuple[tuple[str, str], ...]
    source_lang: str = "src"
    target_lang: str = "tgt"
    origin: tuple[str, str] = ("", "")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def source_sentences(self) -> list[str]:
        return [s for s, _ in self.pairs]

    @property
    def target_sentences(self) -> list[str]:
        return [t for _, t in self.pairs]


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    valid_ratio: float = 0.1
    test_ratio: float = 0.1
    seed: int = 1

    def validate(self) -> None:
        for name, r in (
            ("train_ratio", self.train_ratio),
            ("valid_ratio", self.valid_ratio),
            ("test_ratio", self.test_ratio),
        ):
            if not (0.0 < r < 1.0):
                raise ValueError(f"{name}={r} must lie in (0, 1)")
        total = self.train_ratio + self.valid_ratio + self.test_ratio
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios sum to {total}, expected 1.0")


@dataclass(frozen=True)
class CorpusStats:
    pair_count: int
    source_tokens: int
    target_tokens: int
    source_mean_len: float
    target_mean_len: float
    source_max_len: int
    target_max_len: int
    source_vocab: int
    target_vocab: int


def _read_lines(path: str | Path) -> list[str]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line_no = raw.count(b"\n", 0, e.start) + 1
        raise DecodeError(str(path), line_no, e.reason) from None
    # A single trailing newline is a terminator, not an empty final line.
    if text.endswith("\n"):
        text = text[:-1]
    if text == "":
        return []
    return [line.rstrip("\r") for line in text.split("\n")]


def load_parallel(
    source_path: str | Path,
    target_path: str | Path,
    source_lang: str = "src",
    target_lang: str = "tgt",
) -> ParallelCorpus:
    """Load line-aligned UTF-8 files into a corpus.

    Raises LineCountMismatch when the files disagree on line count and
    DecodeError (with a line number) on invalid UTF-8.
    """
    src = _read_lines(source_path)
    tgt = _read_lines(target_path)
    if len(src) != len(tgt):
        raise LineCountMismatch(len(src), len(tgt))
    return ParallelCorpus(
        pairs=tuple(zip(src, tgt)),
        source_lang=source_lang,
        target_lang=target_lang,
        origin=(str(source_path), str(target_path)),
    )


def clean(
    corpus: ParallelCorpus,
    min_len: int = 1,
    max_len: int = 10**9,
    drop_duplicates: bool = False,
) -> ParallelCorpus:
    """Keep pairs whose sides both have min_len..max_len whitespace tokens.

    With drop_duplicates, the first occurrence of each exact pair survives.
    Survivor order is preserved.
    """
    if not (0 <= min_len <= max_len):
        raise ValueError(f"need 0 <= min_len <= max_len, got {min_len}, {max_len}")
    seen: set[tuple[str, str]] = set()
    kept = []
    for pair in corpus.pairs:
        s_len = len(pair[0].split())
        t_len = len(pair[1].split())
        if not (min_len <= s_len <= max_len and min_len <= t_len <= max_len):
            continue
        if drop_duplicates:
            if pair in seen:
                continue
            seen.add(pair)
        kept.append(pair)
    return ParallelCorpus(
        pairs=tuple(kept),
        source_lang=corpus.source_lang,
        target_lang=corpus.target_lang,
        origin=corpus.origin,
    )


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output). Fixed algorithm so
    shuffles are identical on every platform."""
    mask = (1 << 64) - 1
    state = (state + 0x9E3779B97F4A7C15) & mask
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z = z ^ (z >> 31)
    return state, z


def _shuffled_indices(n: int, seed: int) -> list[int]:
    """Seeded Fisher-Yates over range(n) driven by splitmix64."""
    idx = list(range(n))
    state = seed & ((1 << 64) - 1)
    for i in range(n - 1, 0, -1):
        state, z = _splitmix64(state)
        j = z % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def split(
    corpus: ParallelCorpus, spec: SplitSpec
) -> tuple[ParallelCorpus, ParallelCorpus, ParallelCorpus]:
    """Deterministic shuffled split into (train, valid, test).

    Valid/test sizes are round(N * ratio) but never below 1; train absorbs
    the rounding remainder. Same (corpus, spec) always yields the same
    membership.
    """
    spec.validate()
    n = len(corpus)
    if n < 3:
        raise CorpusTooSmall(f"need at least 3 pairs to split, got {n}")
    n_valid = max(1, round(n * spec.valid_ratio))
    n_test = max(1, round(n * spec.test_ratio))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise CorpusTooSmall(
            f"ratios leave no training pairs for corpus of size {n}"
        )
    order = _shuffled_indices(n, spec.seed)
    buckets = (
        order[:n_train],
        order[n_train : n_train + n_valid],
        order[n_train + n_valid :],
    )

    def take(ids: list[int]) -> ParallelCorpus:
        return ParallelCorpus(
            pairs=tuple(corpus.pairs[i] for i in ids),
            source_lang=corpus.source_lang,
            target_lang=corpus.target_lang,
            origin=corpus.origin,
        )

    return take(buckets[0]), take(buckets[1]), take(buckets[2])


def stats(corpus: ParallelCorpus) -> CorpusStats:
    src_lens = [len(s.split()) for s, _ in corpus.pairs]
    tgt_lens = [len(t.split()) for _, t in corpus.pairs]
    src_vocab = {tok for s, _ in corpus.pairs for tok in s.split()}
    tgt_vocab = {tok for _, t in corpus.pairs for tok in t.split()}
    n = len(corpus)
    return CorpusStats(
        pair_count=n,
        source_tokens=sum(src_lens),
        target_tokens=sum(tgt_lens),
        source_mean_len=(sum(src_lens) / n) if n else 0.0,
        target_mean_len=(sum(tgt_lens) / n) if n else 0.0,
        source_max_len=max(src_lens, default=0),
        target_max_len=max(tgt_lens, default=0),
        source_vocab=len(src_vocab),
        target_vocab=len(tgt_vocab),
    )


def write_corpus(corpus: ParallelCorpus, src_path: str | Path, tgt_path: str | Path) -> None:
    """One sentence per line, UTF-8, \\n terminators."""
    Path(src_path).write_text(
        "".join(s + "\n" for s, _ in corpus.pairs), encoding="utf-8"
    )
    Path(tgt_path).write_text(
        "".join(t + "\n" for _, t in corpus.pairs), encoding="utf-8"
    )


def write_splits(
    train: ParallelCorpus,
    valid: ParallelCorpus,
    test: ParallelCorpus,
    prefix: str | Path,
) -> dict[str, str]:
    """Write {prefix}.train/valid/test.{lang} files; returns name -> path."""
    prefix = str(prefix)
    out: dict[str, str] = {}
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        sp = f"{prefix}.{name}.{part.source_lang}"
        tp = f"{prefix}.{name}.{part.target_lang}"
        write_corpus(part, sp, tp)
        out[f"{name}.{part.source_lang}"] = sp
        out[f"{name}.{part.target_lang}"] = tp
    return out
