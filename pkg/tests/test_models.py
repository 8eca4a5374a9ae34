import math

import numpy as np
import pytest

from nmtbench.decoding import (
    DecodeError,
    DecodeSettings,
    TableModel,
    Translation,
    VocabMismatch,
    beam_search,
    translate_corpus,
)
from nmtbench.models import (
    ArchitectureConfig,
    InvalidConfig,
    Seq2SeqModel,
    build,
    forward_teacher_forced,
    shift_right,
)
from nmtbench.subword import BOS, EOS, PAD, train_bpe
from nmtbench.tensor import cross_entropy, no_grad

V_SRC, V_TGT = 12, 11


def tiny_config(kind, **kw):
    base = dict(
        kind=kind,
        source_vocab=V_SRC,
        target_vocab=V_TGT,
        layer_count=1,
        model_width=8,
        head_count=2,
        feedforward_width=16,
        dropout_rate=0.0,
        max_sequence_length=32,
    )
    base.update(kw)
    return ArchitectureConfig(**base)


def random_batch(rng, b=2, ls=4, lt=5):
    src = rng.integers(4, V_SRC, size=(b, ls))
    tgt = rng.integers(4, V_TGT, size=(b, lt))
    src[:, -1] = EOS
    tgt[:, -1] = EOS
    return src, tgt


# -- config / build ----------------------------------------------------------


def test_build_deterministic():
    for kind in ("transformer", "rnn"):
        a = build(tiny_config(kind), seed=3)
        b = build(tiny_config(kind), seed=3)
        assert list(a.params) == list(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)


def test_build_different_seeds_differ():
    a = build(tiny_config("transformer"), seed=1)
    b = build(tiny_config("transformer"), seed=2)
    assert not np.array_equal(a.params["src_embed"].data, b.params["src_embed"].data)


def test_per_head_width():
    cfg = tiny_config("transformer", model_width=64, head_count=4)
    assert cfg.model_width // cfg.head_count == 16
    cfg.validate()


def test_invalid_width_head_combo():
    with pytest.raises(InvalidConfig):
        build(tiny_config("transformer", model_width=65, head_count=4), seed=0)


def test_invalid_dropout():
    with pytest.raises(InvalidConfig):
        tiny_config("rnn", dropout_rate=1.0).validate()


def test_all_parameters_finite():
    for kind in ("transformer", "rnn"):
        model = build(tiny_config(kind), seed=9)
        for p in model.parameters():
            assert np.isfinite(p.data).all()


def test_tied_embeddings_share_table():
    cfg = tiny_config("transformer", source_vocab=V_TGT, tied_embeddings=True)
    model = build(cfg, seed=0)
    assert "out_proj" not in model.params


# -- teacher-forced forward ----------------------------------------------------


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
def test_logits_shape(kind):
    rng = np.random.default_rng(0)
    model = build(tiny_config(kind), seed=5)
    src, tgt = random_batch(rng)
    with no_grad():
        logits = forward_teacher_forced(model, src, tgt)
    assert logits.shape == (2, 5, V_TGT)


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
def test_decoder_causality(kind):
    rng = np.random.default_rng(1)
    model = build(tiny_config(kind), seed=5)
    src, tgt = random_batch(rng, b=2, ls=4, lt=6)
    with no_grad():
        base = forward_teacher_forced(model, src, tgt).data
    for t in range(tgt.shape[1] - 1):
        perturbed = tgt.copy()
        perturbed[0, t] = (perturbed[0, t] - 4 + 1) % (V_TGT - 4) + 4
        with no_grad():
            changed = forward_teacher_forced(model, src, perturbed).data
        assert np.array_equal(base[:, : t + 1], changed[:, : t + 1])
        assert not np.array_equal(base[0, t + 1], changed[0, t + 1])


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
def test_all_pad_target_row_contributes_zero_loss(kind):
    rng = np.random.default_rng(2)
    model = build(tiny_config(kind), seed=7)
    src, tgt = random_batch(rng, b=2)
    src_plus = np.vstack([src, src[:1]])
    tgt_plus = np.vstack([tgt, np.full((1, tgt.shape[1]), PAD)])
    with no_grad():
        base = cross_entropy(
            forward_teacher_forced(model, src, tgt).reshape(-1, V_TGT),
            tgt.reshape(-1),
            ignore_id=PAD,
        ).item()
        padded = cross_entropy(
            forward_teacher_forced(model, src_plus, tgt_plus).reshape(-1, V_TGT),
            tgt_plus.reshape(-1),
            ignore_id=PAD,
        ).item()
    assert padded == pytest.approx(base, abs=1e-12)


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
def test_source_padding_invariance(kind):
    rng = np.random.default_rng(3)
    model = build(tiny_config(kind), seed=11)
    src, tgt = random_batch(rng, b=1, ls=4)
    src_padded = np.hstack([src, np.full((1, 3), PAD)])
    with no_grad():
        a = forward_teacher_forced(model, src, tgt).data
        b = forward_teacher_forced(model, src_padded, tgt).data
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
def test_fd_full_forward_backward(kind):
    """Finite differences on a 2-sentence micro-batch, sampled coordinates of
    every parameter."""
    rng = np.random.default_rng(4)
    model = build(tiny_config(kind), seed=13)
    src, tgt = random_batch(rng, b=2, ls=3, lt=3)

    def forward():
        logits = forward_teacher_forced(model, src, tgt)
        return cross_entropy(
            logits.reshape(-1, V_TGT), tgt.reshape(-1),
            label_smoothing=0.1, ignore_id=PAD,
        )

    params = model.parameters()
    for p in params:
        p.zero_grad()
    forward().backward()
    step, rel = 1e-3, 1e-4
    coord_rng = np.random.default_rng(5)
    for p in params:
        flat = p.data.reshape(-1)
        n_check = min(4, flat.size)
        for i in coord_rng.choice(flat.size, size=n_check, replace=False):
            orig = flat[i]
            flat[i] = orig + step
            plus = forward().item()
            flat[i] = orig - step
            minus = forward().item()
            flat[i] = orig
            numeric = (plus - minus) / (2 * step)
            analytic = p.grad.reshape(-1)[i]
            assert abs(analytic - numeric) <= rel * max(1.0, abs(analytic), abs(numeric)), (
                f"{kind} {p.name} coord {i}: {analytic} vs {numeric}"
            )


def test_two_layer_rnn_causality_and_grads():
    rng = np.random.default_rng(14)
    model = build(tiny_config("rnn", layer_count=2), seed=6)
    src, tgt = random_batch(rng, b=2, ls=3, lt=4)
    with no_grad():
        base = forward_teacher_forced(model, src, tgt).data
    perturbed = tgt.copy()
    perturbed[0, 1] = (perturbed[0, 1] - 4 + 1) % (V_TGT - 4) + 4
    with no_grad():
        changed = forward_teacher_forced(model, src, perturbed).data
    assert np.array_equal(base[:, :2], changed[:, :2])

    def forward():
        logits = forward_teacher_forced(model, src, tgt)
        return cross_entropy(logits.reshape(-1, V_TGT), tgt.reshape(-1), ignore_id=PAD)

    for p in model.parameters():
        p.zero_grad()
    forward().backward()
    step, rel = 1e-3, 1e-4
    w = model.params["enc1.fwd.wx"]
    flat = w.data.reshape(-1)
    for i in (0, 7, 19):
        orig = flat[i]
        flat[i] = orig + step
        plus = forward().item()
        flat[i] = orig - step
        minus = forward().item()
        flat[i] = orig
        numeric = (plus - minus) / (2 * step)
        analytic = w.grad.reshape(-1)[i]
        assert abs(analytic - numeric) <= rel * max(1.0, abs(analytic), abs(numeric))


def test_dropout_only_in_training_mode():
    rng = np.random.default_rng(6)
    model = build(tiny_config("transformer", dropout_rate=0.5), seed=1)
    src, tgt = random_batch(rng)
    with no_grad():
        a = forward_teacher_forced(model, src, tgt).data
        b = forward_teacher_forced(model, src, tgt).data
    assert np.array_equal(a, b)  # no dropout without an rng
    c = forward_teacher_forced(model, src, tgt, drop_rng=np.random.default_rng(0)).data
    d = forward_teacher_forced(model, src, tgt, drop_rng=np.random.default_rng(1)).data
    assert not np.array_equal(c, d)


def test_shift_right():
    tgt = np.array([[5, 6, EOS]])
    assert shift_right(tgt).tolist() == [[BOS, 5, 6]]


# -- decoding ------------------------------------------------------------------


def make_table_model(rng, vocab=8, depth=3):
    table = {}
    prefixes = [()]
    for _ in range(depth):
        nxt = []
        for p in prefixes:
            probs = rng.dirichlet(np.ones(vocab) * 0.5)
            table[p] = probs
            for tok in range(4, vocab):
                nxt.append(p + (tok,))
        prefixes = nxt
    return TableModel(vocab, table)


def greedy_reference(model: TableModel, max_len: int):
    """Independent greedy loop: argmax each step, stop at EOS."""
    ids: tuple[int, ...] = ()
    total = 0.0
    for _ in range(max_len):
        probs = model.distribution(ids)
        tok = int(np.argmax(probs))
        total += math.log(probs[tok])
        ids = ids + (tok,)
        if tok == EOS:
            break
    return ids, total


def test_beam_one_equals_greedy_on_100_random_toy_models():
    rng = np.random.default_rng(42)
    for _ in range(100):
        model = make_table_model(rng)
        best = beam_search([model], [EOS], beam_size=1, alpha=0.6, max_len=6)[0]
        ids, total = greedy_reference(model, max_len=6)
        assert best.piece_ids == ids
        assert best.total_log_prob == pytest.approx(total, abs=1e-12)


def counterexample_model():
    """Greedy takes token 4 (p=.5) but token 5 (p=.45) leads to certain EOS."""
    v = 6
    start = np.zeros(v)
    start[4] = 0.50
    start[5] = 0.45
    start[EOS] = 0.05
    after4 = np.zeros(v)
    after4[EOS] = 0.4
    after4[4] = 0.3
    after4[5] = 0.3
    after5 = np.zeros(v)
    after5[EOS] = 1.0
    return TableModel(v, {(): start, (4,): after4, (5,): after5})


def exhaustive_best(model: TableModel, alpha: float, max_len: int):
    """Enumerate every EOS-terminated sequence up to max_len."""
    best = None
    stack = [((), 0.0)]
    while stack:
        ids, total = stack.pop()
        if len(ids) >= max_len:
            continue
        probs = model.distribution(ids)
        for tok in range(model.vocab_size):
            if probs[tok] <= 0:
                continue
            seq = ids + (tok,)
            lp = total + math.log(probs[tok])
            if tok == EOS:
                score = lp / len(seq) ** alpha
                if best is None or score > best[0]:
                    best = (score, seq)
            else:
                stack.append((seq, lp))
    return best


def test_beam_two_beats_greedy_on_counterexample():
    model = counterexample_model()
    greedy = beam_search([model], [EOS], beam_size=1, alpha=0.6, max_len=4)[0]
    beam2 = beam_search([model], [EOS], beam_size=2, alpha=0.6, max_len=4)[0]
    assert beam2.normalized_score > greedy.normalized_score
    assert beam2.piece_ids == (5, EOS)
    # beam 2 finds the global optimum; enumeration over <= V^2 paths agrees
    score, seq = exhaustive_best(model, alpha=0.6, max_len=4)
    assert beam2.piece_ids == seq
    assert beam2.normalized_score == pytest.approx(score, abs=1e-12)


def test_beam_monotone_on_counterexample():
    model = counterexample_model()
    scores = [
        beam_search([model], [EOS], beam_size=k, alpha=0.6, max_len=4)[0].normalized_score
        for k in (1, 2, 3, 4)
    ]
    for a, b in zip(scores, scores[1:]):
        assert b >= a - 1e-12


def test_decode_step_distributions_sum_to_one():
    model = counterexample_model()
    from nmtbench.decoding import _step_probs

    probs = _step_probs(model, None, [(), (4,)])
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    rng = np.random.default_rng(8)
    nn = build(tiny_config("transformer"), seed=2)
    from nmtbench.decoding import _init_cache

    cache = _init_cache(nn, np.array([5, EOS]))
    probs = _step_probs(nn, cache, [(), (6,)])
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("kind", ["transformer", "rnn"])
@pytest.mark.parametrize("k", [2, 4])
def test_ensemble_of_identical_models_bit_identical(kind, k):
    model = build(tiny_config(kind), seed=21)
    src = np.array([7, 5, EOS])
    single = beam_search([model], src, beam_size=3, alpha=0.6, max_len=8)
    ensemble = beam_search([model] * k, src, beam_size=3, alpha=0.6, max_len=8)
    for a, b in zip(single, ensemble):
        assert a.piece_ids == b.piece_ids
        assert a.total_log_prob == b.total_log_prob  # exact: mean of k copies


def test_ensemble_mean_distribution_identity():
    from nmtbench.decoding import _init_cache, _step_probs

    model = build(tiny_config("rnn"), seed=23)
    src = np.array([6, EOS])
    cache = _init_cache(model, src)
    one = _step_probs(model, cache, [()])
    mean3 = (one + one + one) / 3
    assert np.allclose(mean3, one, atol=1e-12)


def test_vocab_mismatch_rejected():
    a = build(tiny_config("transformer"), seed=1)
    b = build(tiny_config("transformer", target_vocab=V_TGT + 1), seed=1)
    with pytest.raises(VocabMismatch):
        beam_search([a, b], [EOS], beam_size=1)


def test_beam_size_validation():
    model = counterexample_model()
    with pytest.raises(DecodeError):
        beam_search([model], [EOS], beam_size=0)


def test_translation_normalized_score_invariant():
    model = counterexample_model()
    for t in beam_search([model], [EOS], beam_size=3, alpha=0.6, max_len=4):
        expect = t.total_log_prob / (max(len(t.piece_ids), 1) ** 0.6)
        assert t.normalized_score == pytest.approx(expect, abs=1e-12)
        assert t.finished == (t.piece_ids[-1] == EOS)
        assert len(t.step_log_probs) == len(t.piece_ids)


def test_unfinished_partials_at_tiny_max_len():
    model = TableModel(6, {(): np.array([0, 0, 0, 0.0, 0.5, 0.5])})
    # never emits EOS within budget; partials returned
    out = beam_search([model], [EOS], beam_size=2, alpha=0.6, max_len=1)
    assert len(out) == 2
    assert not out[0].finished


def attach_subwords(model):
    corpus = ["ab ba abc", "ba ab c"]
    sub = train_bpe(corpus, vocab_size=12)
    model.source_subword = sub
    model.target_subword = sub
    return model


def test_translate_corpus_empty():
    cfg = tiny_config("transformer", source_vocab=12, target_vocab=12)
    model = attach_subwords(build(cfg, seed=3))
    assert translate_corpus([model], []) == []


def test_translate_corpus_deterministic_and_ordered():
    cfg = tiny_config("transformer", source_vocab=12, target_vocab=12)
    model = attach_subwords(build(cfg, seed=3))
    sentences = ["ab ba", "c ab"]
    settings = DecodeSettings(beam_size=2, alpha=0.6, max_len=6)
    a = translate_corpus([model], sentences, settings)
    b = translate_corpus([model], sentences, settings)
    assert [t.text for t in a] == [t.text for t in b]
    assert [t.piece_ids for t in a] == [t.piece_ids for t in b]
    assert len(a) == 2


def test_translate_corpus_requires_subwords():
    model = build(tiny_config("transformer"), seed=3)
    with pytest.raises(DecodeError):
        translate_corpus([model], ["hi"])


def test_concurrent_translation_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    cfg = tiny_config("transformer", source_vocab=12, target_vocab=12)
    model = attach_subwords(build(cfg, seed=3))
    sentences = ["ab ba", "c ab", "ba c ab"]
    settings = DecodeSettings(beam_size=2, alpha=0.6, max_len=8)
    serial = [translate_corpus([model], [s], settings)[0] for s in sentences]
    with ThreadPoolExecutor(max_workers=3) as pool:
        futures = [
            pool.submit(translate_corpus, [model], [s], settings) for s in sentences
        ]
        concurrent = [f.result()[0] for f in futures]
    for a, b in zip(serial, concurrent):
        assert a.piece_ids == b.piece_ids
        assert a.total_log_prob == b.total_log_prob
