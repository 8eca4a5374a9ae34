"""Beam search with decode-time ensembling and corpus translation.

Next-token distributions from multiple models are combined by arithmetic
mean of their softmax probabilities; hypotheses are ranked by
log-prob / length^alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Seq2SeqModel, decoder_logits, encode_source
from .subword import BOS, EOS, decode as subword_decode, encode as subword_encode, model_digest
from .tensor import no_grad, softmax_rows, Tensor


class DecodeError(Exception):
    pass


class VocabMismatch(DecodeError):
    pass


@dataclass(frozen=True)
class DecodeSettings:
    beam_size: int = 5
    alpha: float = 0.6  # length penalty exponent
    max_len: int = 64


@dataclass(frozen=True)
class Translation:
    piece_ids: tuple[int, ...]  # generated ids; ends with EOS when finished
    text: str
    total_log_prob: float
    normalized_score: float
    step_log_probs: tuple[float, ...]
    finished: bool


class TableModel:
    """Toy decoding model with hand-set next-token distributions keyed by the
    generated prefix. Useful for exercising search behavior exactly."""

    def __init__(self, vocab_size: int, table: dict[tuple[int, ...], np.ndarray]):
        self.vocab_size = vocab_size
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.target_subword = None
        self.source_subword = None

    def distribution(self, prefix: tuple[int, ...]) -> np.ndarray:
        probs = self.table.get(prefix)
        if probs is None:  # default: force EOS
            probs = np.zeros(self.vocab_size)
            probs[EOS] = 1.0
        return probs


def _target_vocab(model) -> int:
    if isinstance(model, TableModel):
        return model.vocab_size
    return model.config.target_vocab


def _check_compatible(models: list) -> None:
    if not models:
        raise DecodeError("no models given")
    vocab = _target_vocab(models[0])
    for m in models[1:]:
        if _target_vocab(m) != vocab:
            raise VocabMismatch(
                f"target vocab sizes differ: {vocab} vs {_target_vocab(m)}"
            )
    digests = {
        model_digest(m.target_subword)
        for m in models
        if getattr(m, "target_subword", None) is not None
    }
    if len(digests) > 1:
        raise VocabMismatch("models carry different target subword models")


def _init_cache(model, source: np.ndarray):
    if isinstance(model, TableModel):
        return None
    return encode_source(model, source.reshape(1, -1))


def _step_probs(model, cache, prefixes: list[tuple[int, ...]]) -> np.ndarray:
    """Next-token probability rows, one per prefix."""
    if isinstance(model, TableModel):
        return np.stack([model.distribution(p) for p in prefixes])
    width = max(len(p) for p in prefixes) + 1
    tgt_in = np.full((len(prefixes), width), 0, dtype=np.int64)
    tgt_in[:, 0] = BOS
    for i, p in enumerate(prefixes):
        if p:
            tgt_in[i, 1 : 1 + len(p)] = p
    logits = decoder_logits(model, cache, tgt_in)
    rows = np.arange(len(prefixes))
    last = logits.data[rows, [len(p) for p in prefixes], :]
    return softmax_rows(Tensor(last)).data


def beam_search(
    models: list,
    source: np.ndarray | list[int],
    beam_size: int = 5,
    alpha: float = 0.6,
    max_len: int = 64,
) -> list[Translation]:
    """Best-first list of beam_size hypotheses (finished ones preferred,
    best partials fill in at max_len)."""
    if beam_size < 1:
        raise DecodeError("beam_size must be >= 1")
    _check_compatible(models)
    source = np.asarray(source, dtype=np.int64)
    with no_grad():
        caches = [_init_cache(m, source) for m in models]
        # each beam: (ids, total log-prob, per-step log-probs)
        beams: list[tuple[tuple[int, ...], float, tuple[float, ...]]] = [
            ((), 0.0, ())
        ]
        finished: list[tuple[tuple[int, ...], float, tuple[float, ...]]] = []
        for _ in range(max_len):
            prefixes = [b[0] for b in beams]
            prob_sum = None
            for model, cache in zip(models, caches):
                probs = _step_probs(model, cache, prefixes)
                prob_sum = probs if prob_sum is None else prob_sum + probs
            mean_probs = prob_sum / len(models)
            with np.errstate(divide="ignore"):
                log_probs = np.log(mean_probs)
            totals = np.array([b[1] for b in beams])[:, None] + log_probs
            flat = totals.reshape(-1)
            # 2x beam: enough non-EOS continuations to refill every slot
            order = np.argsort(-flat, kind="stable")[: 2 * beam_size]
            next_beams = []
            vocab = log_probs.shape[1]
            for idx in order:
                bi, tok = divmod(int(idx), vocab)
                ids, _, steps = beams[bi]
                entry = (
                    ids + (tok,),
                    float(flat[idx]),
                    steps + (float(log_probs[bi, tok]),),
                )
                if tok == EOS:
                    finished.append(entry)
                else:
                    next_beams.append(entry)
                if len(next_beams) >= beam_size:
                    break
            beams = next_beams
            if len(finished) >= beam_size or not beams:
                break
    # partials only pad out the list when too few hypotheses finished
    candidates = finished if len(finished) >= beam_size else finished + beams
    ranked = sorted(
        candidates,
        key=lambda c: (-(c[1] / (max(len(c[0]), 1) ** alpha)), c[0]),
    )
    out = []
    for ids, total, steps in ranked[:beam_size]:
        is_finished = bool(ids) and ids[-1] == EOS
        text = ""
        sub = getattr(models[0], "target_subword", None)
        if sub is not None:
            text = subword_decode(sub, list(ids))
        out.append(
            Translation(
                piece_ids=ids,
                text=text,
                total_log_prob=total,
                normalized_score=total / (max(len(ids), 1) ** alpha),
                step_log_probs=steps,
                finished=is_finished,
            )
        )
    return out


def translate_corpus(
    models: list[Seq2SeqModel],
    sentences: list[str],
    settings: DecodeSettings = DecodeSettings(),
) -> list[Translation]:
    """Encode -> beam search -> detokenize for each sentence, in order."""
    _check_compatible(models)
    src_digests = {
        model_digest(m.source_subword)
        for m in models
        if m.source_subword is not None
    }
    if len(src_digests) > 1:
        raise VocabMismatch("models carry different source subword models")
    first = models[0]
    if first.source_subword is None or first.target_subword is None:
        raise DecodeError("models need attached subword models to translate text")
    out: list[Translation] = []
    for sentence in sentences:
        ids = list(subword_encode(first.source_subword, sentence).ids) + [EOS]
        best = beam_search(
            models,
            np.asarray(ids, dtype=np.int64),
            beam_size=settings.beam_size,
            alpha=settings.alpha,
            max_len=settings.max_len,
        )[0]
        out.append(best)
    return out
