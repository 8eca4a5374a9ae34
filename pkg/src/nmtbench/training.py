"""Training loop with validation (accuracy/PPL), inverse-sqrt or plateau LR
scheduling, versioned binary checkpoints, resume/fine-tune, and a structured
event stream for live monitoring.

Everything is a pure function of (seed, data, hyperparameters): the batch
schedule and dropout masks are derived from (seed, step), so a run resumed
from a checkpoint reproduces the original run exactly.
"""

from __future__ import annotations

import json
import math
import queue
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import _shuffled_indices
from .models import ArchitectureConfig, Seq2SeqModel, build, forward_teacher_forced
from .optim import clip_global_norm, make_optimizer
from .subword import EOS, PAD
from .tensor import cross_entropy, no_grad

CHECKPOINT_MAGIC = b"NMTBCKPT"
CHECKPOINT_VERSION = 1

EVENT_BUFFER_SIZE = 1024


class TrainingError(Exception):
    pass


class DataEmpty(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    pass


class SubwordDigestMismatch(TrainingError):
    pass


class CorruptCheckpoint(TrainingError):
    pass


class VersionMismatch(TrainingError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    optimizer: str = "adaptive-moment"  # "sgd" | "adaptive-moment"
    learning_rate: float = 2.0  # base rate; scaled by the schedule
    warmup_steps: int = 400
    batch_tokens: int = 512  # padded target-token budget per batch
    max_steps: int = 1000
    validation_interval: int = 100
    checkpoint_interval: int = 500
    label_smoothing: float = 0.1
    seed: int = 1
    patience: int = 5  # validations without PPL improvement before stopping

    def validate(self) -> None:
        for name in (
            "warmup_steps",
            "batch_tokens",
            "max_steps",
            "validation_interval",
            "checkpoint_interval",
            "patience",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 <= self.label_smoothing <= 0.3):
            raise ValueError("label_smoothing must lie in [0, 0.3]")
        if self.optimizer not in ("sgd", "adaptive-moment"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "batch_tokens": self.batch_tokens,
            "max_steps": self.max_steps,
            "validation_interval": self.validation_interval,
            "checkpoint_interval": self.checkpoint_interval,
            "label_smoothing": self.label_smoothing,
            "seed": self.seed,
            "patience": self.patience,
        }

    @staticmethod
    def from_dict(d: dict) -> "Hyperparameters":
        return Hyperparameters(**d)


@dataclass(frozen=True)
class TrainingEvent:
    timestamp: float  # wall clock, seconds
    step: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float
    valid_ppl: float
    learning_rate: float
    energy_kwh: float

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "step": self.step,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "valid_accuracy": self.valid_accuracy,
            "valid_ppl": self.valid_ppl,
            "learning_rate": self.learning_rate,
            "energy_kwh": self.energy_kwh,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainingEvent":
        return TrainingEvent(**d)

    def deterministic_fields(self) -> tuple:
        """Everything except wall-clock time and energy."""
        return (
            self.step,
            self.train_loss,
            self.train_accuracy,
            self.valid_accuracy,
            self.valid_ppl,
            self.learning_rate,
        )


@dataclass
class Checkpoint:
    config: ArchitectureConfig
    hp: Hyperparameters
    params: dict[str, np.ndarray]
    optimizer_state: dict
    step: int
    best_valid_ppl: float
    source_subword_digest: str
    target_subword_digest: str
    plateau_halvings: int = 0
    no_improve_count: int = 0
    rng: dict = field(default_factory=dict)  # {"seed": .., "step": ..}


class EventBus:
    """Fan-out of training events to bounded subscriber queues. A full queue
    blocks the publisher (events are never dropped)."""

    def __init__(self, buffer_size: int = EVENT_BUFFER_SIZE):
        self.buffer_size = buffer_size
        self._queues: list[queue.Queue] = []

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=self.buffer_size)
        self._queues.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        if q in self._queues:
            self._queues.remove(q)

    def publish(self, event: TrainingEvent) -> None:
        for q in self._queues:
            q.put(event)  # blocks on overflow rather than dropping

    def __call__(self, event: TrainingEvent) -> None:
        self.publish(event)


class JsonlEventLog:
    """Sink appending one JSON record per event (graphing log level)."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def __call__(self, event: TrainingEvent) -> None:
        self._fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_event_log(path) -> list[TrainingEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(TrainingEvent.from_dict(json.loads(line)))
    return events


# ---------------------------------------------------------------------------
# batching


EncodedPair = tuple[list[int], list[int]]


def _build_buckets(pairs: list[EncodedPair], batch_tokens: int) -> list[list[int]]:
    """Length-sorted buckets holding at most batch_tokens padded target
    tokens (gold target length includes the EOS)."""
    order = sorted(
        range(len(pairs)), key=lambda i: (len(pairs[i][1]), len(pairs[i][0]), i)
    )
    buckets: list[list[int]] = []
    current: list[int] = []
    max_len = 0
    for i in order:
        tgt_len = len(pairs[i][1]) + 1
        new_max = max(max_len, tgt_len)
        if current and (len(current) + 1) * new_max > batch_tokens:
            buckets.append(current)
            current = [i]
            max_len = tgt_len
        else:
            current.append(i)
            max_len = new_max
    if current:
        buckets.append(current)
    return buckets


def _batch_arrays(
    pairs: list[EncodedPair], indices: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    src_len = max(len(pairs[i][0]) for i in indices) + 1
    tgt_len = max(len(pairs[i][1]) for i in indices) + 1
    src = np.full((len(indices), src_len), PAD, dtype=np.int64)
    tgt = np.full((len(indices), tgt_len), PAD, dtype=np.int64)
    for row, i in enumerate(indices):
        s, t = pairs[i]
        src[row, : len(s)] = s
        src[row, len(s)] = EOS
        tgt[row, : len(t)] = t
        tgt[row, len(t)] = EOS
    return src, tgt


def _bucket_for_step(buckets: list[list[int]], seed: int, step: int) -> list[int]:
    """Deterministic bucket schedule: seeded shuffle of bucket order, fresh
    shuffle each epoch, indexed by global step."""
    n = len(buckets)
    epoch = (step - 1) // n
    offset = (step - 1) % n
    order = _shuffled_indices(n, seed * 1_000_003 + epoch)
    return buckets[order[offset]]


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((seed, step))


# ---------------------------------------------------------------------------
# validation


def validate(model: Seq2SeqModel, valid_data: list[EncodedPair], batch_tokens: int = 512):
    """Teacher-forced accuracy and perplexity over non-PAD positions.
    PPL = exp(mean NLL), label smoothing excluded."""
    if not valid_data:
        raise DataEmpty("validation corpus is empty")
    total_nll = 0.0
    correct = 0
    count = 0
    with no_grad():
        for bucket in _build_buckets(valid_data, batch_tokens):
            src, tgt = _batch_arrays(valid_data, bucket)
            logits = forward_teacher_forced(model, src, tgt).data
            shifted = logits - logits.max(axis=-1, keepdims=True)
            log_z = np.log(np.exp(shifted).sum(axis=-1))
            mask = tgt != PAD
            gold = np.take_along_axis(shifted, tgt[..., None], axis=-1)[..., 0]
            total_nll += float(((log_z - gold) * mask).sum())
            correct += int((np.argmax(logits, axis=-1)[mask] == tgt[mask]).sum())
            count += int(mask.sum())
    accuracy = correct / count
    ppl = math.exp(total_nll / count)
    return accuracy, ppl


def schedule_lr(
    hp: Hyperparameters,
    step: int,
    arch_kind: str = "transformer",
    plateau_halvings: int = 0,
) -> float:
    """Transformer: inverse-square-root with warmup. Recurrent: constant,
    halved once per validation-PPL plateau."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if arch_kind == "transformer":
        return hp.learning_rate * min(
            step ** -0.5, step * hp.warmup_steps ** -1.5
        )
    return hp.learning_rate * (0.5 ** plateau_halvings)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    events: list[TrainingEvent]
    stop_reason: str  # "max_steps" | "early_stop"
    best_checkpoint: Checkpoint | None = None


def _make_checkpoint(model, hp, optimizer, step, best_ppl, digests, halvings, no_improve):
    return Checkpoint(
        config=model.config,
        hp=hp,
        params={k: v.copy() for k, v in model.named_arrays().items()},
        optimizer_state=optimizer.state_dict(),
        step=step,
        best_valid_ppl=best_ppl,
        source_subword_digest=digests[0],
        target_subword_digest=digests[1],
        plateau_halvings=halvings,
        no_improve_count=no_improve,
        rng={"seed": hp.seed, "step": step},
    )


def train(
    model: Seq2SeqModel,
    train_data: list[EncodedPair],
    valid_data: list[EncodedPair],
    hp: Hyperparameters,
    sinks: tuple = (),
    meter=None,
    checkpoint_dir=None,
    resume_from: Checkpoint | None = None,
    subword_digests: tuple[str, str] = ("", ""),
) -> TrainResult:
    """Run the training loop to hp.max_steps or early stop.

    Per step: scheduled LR, teacher-forced forward, smoothed cross-entropy,
    backward, global-norm clip, optimizer step. Every validation_interval
    steps a TrainingEvent goes to every sink; checkpoints are written every
    checkpoint_interval steps plus whenever validation PPL improves.
    """
    hp.validate()
    if not train_data:
        raise DataEmpty("training corpus is empty")
    if not valid_data:
        raise DataEmpty("validation corpus is empty")

    optimizer = make_optimizer(hp.optimizer, hp.learning_rate)
    start_step = 0
    best_ppl = math.inf
    halvings = 0
    no_improve = 0
    if resume_from is not None:
        model.load_arrays(resume_from.params)
        optimizer.load_state_dict(resume_from.optimizer_state)
        start_step = resume_from.step
        best_ppl = resume_from.best_valid_ppl
        halvings = resume_from.plateau_halvings
        no_improve = resume_from.no_improve_count

    buckets = _build_buckets(train_data, hp.batch_tokens)
    params = model.parameters()
    events: list[TrainingEvent] = []
    loss_sum = 0.0
    acc_sum = 0.0
    acc_count = 0
    window_steps = 0
    stop_reason = "max_steps"
    best_checkpoint: Checkpoint | None = None
    digests = subword_digests

    def emit(event: TrainingEvent) -> None:
        events.append(event)
        for sink in sinks:
            sink(event)

    step = start_step
    for step in range(start_step + 1, hp.max_steps + 1):
        bucket = _bucket_for_step(buckets, hp.seed, step)
        src, tgt = _batch_arrays(train_data, bucket)
        drop_rng = (
            _step_rng(hp.seed, step) if model.config.dropout_rate > 0 else None
        )
        logits = forward_teacher_forced(model, src, tgt, drop_rng)
        loss = cross_entropy(
            logits.reshape(-1, model.config.target_vocab),
            tgt.reshape(-1),
            label_smoothing=hp.label_smoothing,
            ignore_id=PAD,
        )
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NonFiniteLoss(f"loss became {loss_value} at step {step}")
        mask = tgt != PAD
        pred = np.argmax(logits.data, axis=-1)
        loss_sum += loss_value
        acc_sum += float((pred[mask] == tgt[mask]).sum())
        acc_count += int(mask.sum())
        window_steps += 1

        loss.backward()
        clip_global_norm(params)
        optimizer.learning_rate = schedule_lr(hp, step, model.config.kind, halvings)
        optimizer.step(params)

        if step % hp.validation_interval == 0:
            val_acc, val_ppl = validate(model, valid_data, hp.batch_tokens)
            emit(
                TrainingEvent(
                    timestamp=time.time(),
                    step=step,
                    train_loss=loss_sum / max(1, window_steps),
                    train_accuracy=acc_sum / max(1, acc_count),
                    valid_accuracy=val_acc,
                    valid_ppl=val_ppl,
                    learning_rate=optimizer.learning_rate,
                    energy_kwh=meter.snapshot_kwh() if meter else 0.0,
                )
            )
            loss_sum = 0.0
            acc_sum = 0.0
            acc_count = 0
            window_steps = 0
            if val_ppl < best_ppl:
                best_ppl = val_ppl
                no_improve = 0
                best_checkpoint = _make_checkpoint(
                    model, hp, optimizer, step, best_ppl, digests, halvings, no_improve
                )
                if checkpoint_dir is not None:
                    save_checkpoint(best_checkpoint, f"{checkpoint_dir}/best.ckpt")
            else:
                no_improve += 1
                if model.config.kind == "rnn":
                    halvings += 1
                if no_improve >= hp.patience:
                    stop_reason = "early_stop"
        if checkpoint_dir is not None and step % hp.checkpoint_interval == 0:
            periodic = _make_checkpoint(
                model, hp, optimizer, step, best_ppl, digests, halvings, no_improve
            )
            save_checkpoint(periodic, f"{checkpoint_dir}/step{step}.ckpt")
        if stop_reason == "early_stop":
            break

    final = _make_checkpoint(
        model, hp, optimizer, step, best_ppl, digests, halvings, no_improve
    )
    if checkpoint_dir is not None:
        save_checkpoint(final, f"{checkpoint_dir}/final.ckpt")
        if best_checkpoint is None:
            save_checkpoint(final, f"{checkpoint_dir}/best.ckpt")
    return TrainResult(
        checkpoint=final,
        events=events,
        stop_reason=stop_reason,
        best_checkpoint=best_checkpoint or final,
    )


def fine_tune(
    base: Checkpoint,
    train_data: list[EncodedPair],
    valid_data: list[EncodedPair],
    source_subword_digest: str,
    target_subword_digest: str,
    hp_overrides: dict | None = None,
    sinks: tuple = (),
    meter=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Continue training from a checkpoint on new data. The new corpora must
    be encoded with the checkpoint's subword models (digest match)."""
    if (
        source_subword_digest != base.source_subword_digest
        or target_subword_digest != base.target_subword_digest
    ):
        raise SubwordDigestMismatch(
            "new corpora were encoded with different subword models"
        )
    hp = base.hp if not hp_overrides else replace(base.hp, **hp_overrides)
    model = build(base.config, seed=hp.seed)
    return train(
        model,
        train_data,
        valid_data,
        hp,
        sinks=sinks,
        meter=meter,
        checkpoint_dir=checkpoint_dir,
        resume_from=base,
        subword_digests=(source_subword_digest, target_subword_digest),
    )


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON manifest, raw float64 arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays: list[tuple[str, str, np.ndarray]] = []
    for name in sorted(ckpt.params):
        arrays.append(("params", name, ckpt.params[name]))
    opt = dict(ckpt.optimizer_state)
    for section in ("m", "v"):
        table = opt.pop(section, None)
        if table is not None:
            for name in sorted(table):
                arrays.append((section, name, table[name]))
            opt[section] = sorted(table)
    manifest = {
        "config": ckpt.config.to_dict(),
        "hp": ckpt.hp.to_dict(),
        "step": ckpt.step,
        "best_valid_ppl": ckpt.best_valid_ppl,
        "source_subword_digest": ckpt.source_subword_digest,
        "target_subword_digest": ckpt.target_subword_digest,
        "plateau_halvings": ckpt.plateau_halvings,
        "no_improve_count": ckpt.no_improve_count,
        "rng": ckpt.rng,
        "optimizer": opt,
        "arrays": [
            {"section": sec, "name": name, "shape": list(a.shape)}
            for sec, name, a in arrays
        ],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CorruptCheckpoint("bad magic")
        offset = len(CHECKPOINT_MAGIC)
        (version,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(
                f"checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (manifest_len,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        manifest = json.loads(raw[offset : offset + manifest_len].decode("utf-8"))
        if len(raw) < offset + manifest_len:
            raise CorruptCheckpoint("truncated manifest")
        offset += manifest_len
        sections: dict[str, dict[str, np.ndarray]] = {"params": {}, "m": {}, "v": {}}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape)) * 8 if shape else 8
            chunk = raw[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise CorruptCheckpoint(f"truncated array {entry['name']}")
            sections[entry["section"]][entry["name"]] = np.frombuffer(
                chunk, dtype="<f8"
            ).reshape(shape).copy()
            offset += nbytes
    except (struct.error, json.JSONDecodeError, KeyError, IndexError) as e:
        raise CorruptCheckpoint(str(e)) from None
    opt = dict(manifest["optimizer"])
    if opt.get("kind") == "adaptive-moment":
        opt["m"] = sections["m"]
        opt["v"] = sections["v"]
    return Checkpoint(
        config=ArchitectureConfig.from_dict(manifest["config"]),
        hp=Hyperparameters.from_dict(manifest["hp"]),
        params=sections["params"],
        optimizer_state=opt,
        step=manifest["step"],
        best_valid_ppl=manifest["best_valid_ppl"],
        source_subword_digest=manifest["source_subword_digest"],
        target_subword_digest=manifest["target_subword_digest"],
        plateau_halvings=manifest["plateau_halvings"],
        no_improve_count=manifest["no_improve_count"],
        rng=dict(manifest["rng"]),
    )
