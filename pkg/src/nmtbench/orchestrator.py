"""Run management: the AutoBuild pipeline (split -> subword -> train ->
translate -> evaluate -> green report), resumable run directories with an
atomic manifest, plot export, notifications, and deployment bundles.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import shlex
import shutil
import subprocess
import time
import urllib.request
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from . import corpus as corpus_mod
from . import green as green_mod
from . import metrics as metrics_mod
from . import subword as subword_mod
from . import training as training_mod
from .decoding import DecodeSettings, translate_corpus
from .green import EmissionFactors, EnergyMeter, PowerProvider, PowerSample
from .metrics import EvalConfig
from .models import ArchitectureConfig, build
from .training import Hyperparameters, JsonlEventLog, load_checkpoint

STAGES = ("split", "subword", "train", "translate", "evaluate", "report")
MANIFEST_VERSION = 1
RUN_LAYOUT = ("splits", "subword", "checkpoints", "translations", "reports", "logs")


class OrchestratorError(Exception):
    pass


class ConfigError(OrchestratorError):
    pass


class StageError(OrchestratorError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class NoEvents(OrchestratorError):
    pass


class NoCheckpoint(OrchestratorError):
    pass


class LockHeld(OrchestratorError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    source_path: str | None = None
    target_path: str | None = None
    train_source: str | None = None
    train_target: str | None = None
    valid_source: str | None = None
    valid_target: str | None = None
    test_source: str | None = None
    test_target: str | None = None
    source_lang: str = "src"
    target_lang: str = "tgt"

    @property
    def is_raw(self) -> bool:
        return self.source_path is not None

    def validate(self) -> None:
        raw = self.source_path is not None or self.target_path is not None
        presplit_fields = (
            self.train_source, self.train_target,
            self.valid_source, self.valid_target,
            self.test_source, self.test_target,
        )
        presplit = any(f is not None for f in presplit_fields)
        if raw and presplit:
            raise ConfigError("give either raw corpus paths or pre-split paths, not both")
        if raw and (self.source_path is None or self.target_path is None):
            raise ConfigError("raw mode needs both source_path and target_path")
        if presplit and any(f is None for f in presplit_fields):
            raise ConfigError("pre-split mode needs all six split paths")
        if not raw and not presplit:
            raise ConfigError("no corpus given")


@dataclass(frozen=True)
class SubwordConfig:
    kind: str = "unigram"
    source_vocab_size: int = 8000
    target_vocab_size: int = 8000

    def validate(self) -> None:
        if self.kind not in ("bpe", "unigram"):
            raise ConfigError(f"unknown subword kind {self.kind!r}")
        if min(self.source_vocab_size, self.target_vocab_size) < 5:
            raise ConfigError("vocab sizes must be at least 5")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture choices before vocabulary sizes are known; these are the
    declared AutoBuild defaults, not values from any reference system."""

    kind: str = "transformer"
    layer_count: int = 2
    model_width: int = 256
    head_count: int = 8
    feedforward_width: int = 1024
    dropout_rate: float = 0.1
    max_sequence_length: int = 128
    tied_embeddings: bool = False

    def to_architecture(self, source_vocab: int, target_vocab: int) -> ArchitectureConfig:
        cfg = ArchitectureConfig(
            kind=self.kind,
            source_vocab=source_vocab,
            target_vocab=target_vocab,
            layer_count=self.layer_count,
            model_width=self.model_width,
            head_count=self.head_count,
            feedforward_width=self.feedforward_width,
            dropout_rate=self.dropout_rate,
            max_sequence_length=self.max_sequence_length,
            tied_embeddings=self.tied_embeddings,
        )
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class EvaluationConfig:
    case_mode: str = "truecase"
    both_cases: bool = True
    sentence_bleu: bool = False
    metrics: tuple[str, ...] = metrics_mod.DEFAULT_METRICS


@dataclass(frozen=True)
class NotifierConfig:
    webhook_url: str | None = None
    command: str | None = None


@dataclass(frozen=True)
class PowerConfig:
    command: str | None = None
    tdp_watts: float = 65.0
    utilization: float = 1.0


@dataclass(frozen=True)
class CleaningConfig:
    min_len: int = 1
    max_len: int = 256
    drop_duplicates: bool = True


@dataclass(frozen=True)
class RunConfig:
    run_name: str
    output_root: str
    data: DataConfig
    split: corpus_mod.SplitSpec = corpus_mod.SplitSpec()
    cleaning: CleaningConfig = CleaningConfig()
    subword: SubwordConfig = SubwordConfig()
    architecture: ArchSpec = ArchSpec()
    hyperparameters: Hyperparameters = Hyperparameters()
    evaluation: EvaluationConfig = EvaluationConfig()
    emissions: EmissionFactors = EmissionFactors()
    notifier: NotifierConfig = NotifierConfig()
    decode: DecodeSettings = DecodeSettings()
    power: PowerConfig = PowerConfig()

    def validate(self) -> None:
        if not self.run_name or "/" in self.run_name:
            raise ConfigError("run_name must be a non-empty path-safe name")
        self.data.validate()
        if self.data.is_raw:
            try:
                self.split.validate()
            except ValueError as e:
                raise ConfigError(str(e)) from None
        self.subword.validate()
        try:
            self.hyperparameters.validate()
            self.emissions.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.evaluation.case_mode not in ("truecase", "lowercase"):
            raise ConfigError(f"unknown case_mode {self.evaluation.case_mode!r}")
        for metric in self.evaluation.metrics:
            if metric not in metrics_mod.DEFAULT_METRICS:
                raise ConfigError(f"unknown metric {metric!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evaluation"]["metrics"] = list(self.evaluation.metrics)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = copy.deepcopy(d)

        def sub(key, cls):
            if key in d and d[key] is not None:
                if key == "evaluation" and "metrics" in d[key]:
                    d[key]["metrics"] = tuple(d[key]["metrics"])
                d[key] = cls(**d[key])

        sub("data", DataConfig)
        sub("split", corpus_mod.SplitSpec)
        sub("cleaning", CleaningConfig)
        sub("subword", SubwordConfig)
        sub("architecture", ArchSpec)
        sub("hyperparameters", Hyperparameters)
        sub("evaluation", EvaluationConfig)
        sub("emissions", EmissionFactors)
        sub("notifier", NotifierConfig)
        sub("decode", DecodeSettings)
        sub("power", PowerConfig)
        return RunConfig(**d)


def load_config(path: str | Path) -> tuple[RunConfig, bytes]:
    """Read a YAML run config; returns (config, original file bytes)."""
    raw = Path(path).read_bytes()
    try:
        data = yaml.safe_load(raw.decode("utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    try:
        config = RunConfig.from_dict(data)
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from None
    config.validate()
    return config, raw


def dump_config(config: RunConfig) -> bytes:
    return yaml.safe_dump(config.to_dict(), sort_keys=True).encode("utf-8")


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    run_id: str
    config_digest: str
    version: int = MANIFEST_VERSION
    created: float = field(default_factory=time.time)
    stages: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    notifications: list = field(default_factory=list)

    def __post_init__(self):
        for stage in STAGES:
            self.stages.setdefault(
                stage, {"status": "pending", "started": None, "finished": None, "error": None}
            )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "version": self.version,
            "created": self.created,
            "stages": self.stages,
            "artifacts": self.artifacts,
            "notifications": self.notifications,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunManifest":
        m = RunManifest(run_id=d["run_id"], config_digest=d["config_digest"])
        m.version = d.get("version", MANIFEST_VERSION)
        m.created = d.get("created", 0.0)
        m.stages.update(d.get("stages", {}))
        m.artifacts = dict(d.get("artifacts", {}))
        m.notifications = list(d.get("notifications", []))
        return m


def save_manifest(manifest: RunManifest, run_dir: Path) -> None:
    """Atomic write: new file then rename."""
    target = run_dir / "manifest.json"
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    os.replace(tmp, target)


def load_manifest(run_dir: Path) -> RunManifest:
    return RunManifest.from_dict(
        json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    )


# ---------------------------------------------------------------------------
# console transcript (second logging level)


class Console:
    def __init__(self, path: Path, echo: bool = True):
        self.path = path
        self.echo = echo

    def say(self, message: str) -> None:
        stamp = time.strftime("%Y-%m-%d %H:%M:%S")
        line = f"[{stamp}] {message}"
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if self.echo:
            print(line)


# ---------------------------------------------------------------------------
# energy persistence (so resumed runs keep earlier stages' samples)


def _save_meter(meter: EnergyMeter, path: Path) -> None:
    payload = {
        "stages": {
            stage: [[s.timestamp, s.device, s.watts, s.source] for s in samples]
            for stage, samples in meter.stage_samples.items()
        },
        "bounds": meter.stage_bounds,
    }
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def _load_meter(meter: EnergyMeter, path: Path) -> None:
    if not path.exists():
        return
    payload = json.loads(path.read_text(encoding="utf-8"))
    for stage, rows in payload["stages"].items():
        meter.stage_samples[stage] = [
            PowerSample(ts, device, watts, source) for ts, device, watts, source in rows
        ]
    meter.stage_bounds.update({k: list(v) for k, v in payload["bounds"].items()})


# ---------------------------------------------------------------------------
# pipeline


class Pipeline:
    """Executes AutoBuild stages sequentially inside one run directory."""

    def __init__(self, config: RunConfig, run_dir: Path, console: Console):
        self.config = config
        self.run_dir = run_dir
        self.console = console
        self.executed_any = False
        self.manifest = load_manifest(run_dir)
        self.meter = EnergyMeter(
            PowerProvider(
                command=config.power.command,
                tdp_watts=config.power.tdp_watts,
                utilization=config.power.utilization,
            ),
            background=True,  # 10 s sampling during stages
        )
        _load_meter(self.meter, run_dir / "logs" / "energy.json")

    # -- helpers --

    def _artifact(self, key: str, path: Path) -> str:
        rel = os.path.relpath(path, self.run_dir)
        self.manifest.artifacts[key] = rel
        return rel

    def artifact_path(self, key: str) -> Path:
        return self.run_dir / self.manifest.artifacts[key]

    def _run_stage(self, name: str, fn) -> None:
        state = self.manifest.stages[name]
        if state["status"] == "done":
            self.console.say(f"stage {name}: already done, skipping")
            return
        self.executed_any = True
        state["status"] = "running"
        state["started"] = time.time()
        save_manifest(self.manifest, self.run_dir)
        self.console.say(f"stage {name}: started")
        try:
            meter_stage = name if name in green_mod.PIPELINE_STAGES else None
            if meter_stage:
                self.meter.start_stage(meter_stage)
            fn()
            if meter_stage:
                self.meter.end_stage(meter_stage)
                _save_meter(self.meter, self.run_dir / "logs" / "energy.json")
        except Exception as e:
            state["status"] = "failed"
            state["finished"] = time.time()
            state["error"] = str(e)
            save_manifest(self.manifest, self.run_dir)
            self.console.say(f"stage {name}: FAILED ({e})")
            raise StageError(name, e) from e
        state["status"] = "done"
        state["finished"] = time.time()
        state["error"] = None
        save_manifest(self.manifest, self.run_dir)
        self.console.say(f"stage {name}: done")

    # -- stages --

    def stage_split(self) -> None:
        data = self.config.data
        splits_dir = self.run_dir / "splits"
        prefix = splits_dir / "data"
        if data.is_raw:
            loaded = corpus_mod.load_parallel(
                data.source_path, data.target_path, data.source_lang, data.target_lang
            )
            cleaned = corpus_mod.clean(
                loaded,
                self.config.cleaning.min_len,
                self.config.cleaning.max_len,
                self.config.cleaning.drop_duplicates,
            )
            self.console.say(
                f"loaded {len(loaded)} pairs, {len(cleaned)} after cleaning"
            )
            train, valid, test = corpus_mod.split(cleaned, self.config.split)
            paths = corpus_mod.write_splits(train, valid, test, prefix)
            self.console.say(
                f"split sizes: train={len(train)} valid={len(valid)} test={len(test)}"
            )
        else:
            paths = {}
            for part, (src, tgt) in {
                "train": (data.train_source, data.train_target),
                "valid": (data.valid_source, data.valid_target),
                "test": (data.test_source, data.test_target),
            }.items():
                part_corpus = corpus_mod.load_parallel(
                    src, tgt, data.source_lang, data.target_lang
                )
                sp = f"{prefix}.{part}.{data.source_lang}"
                tp = f"{prefix}.{part}.{data.target_lang}"
                corpus_mod.write_corpus(part_corpus, sp, tp)
                paths[f"{part}.{data.source_lang}"] = sp
                paths[f"{part}.{data.target_lang}"] = tp
            self.console.say("copied pre-split corpus into run directory")
        for key, path in paths.items():
            self._artifact(f"split.{key}", Path(path))

    def _split_file(self, part: str, side_lang: str) -> Path:
        return self.artifact_path(f"split.{part}.{side_lang}")

    def _read_side(self, part: str, lang: str) -> list[str]:
        return self._split_file(part, lang).read_text(encoding="utf-8").splitlines()

    def stage_subword(self) -> None:
        data = self.config.data
        sw = self.config.subword
        train_fn = (
            subword_mod.train_bpe if sw.kind == "bpe" else subword_mod.train_unigram
        )
        for side, lang, vocab in (
            ("source", data.source_lang, sw.source_vocab_size),
            ("target", data.target_lang, sw.target_vocab_size),
        ):
            text = self._read_side("train", lang)
            model = train_fn(text, vocab)
            path = self.run_dir / "subword" / f"{side}.model"
            subword_mod.save_model(model, path)
            self._artifact(f"subword.{side}", path)
            self.console.say(
                f"{side} subword model: kind={sw.kind} vocab={model.vocab_size}"
            )

    def _load_subword(self, side: str) -> subword_mod.SubwordModel:
        return subword_mod.load_model(self.artifact_path(f"subword.{side}"))

    def _encoded_pairs(self, part: str, src_model, tgt_model) -> list:
        data = self.config.data
        src_text = self._read_side(part, data.source_lang)
        tgt_text = self._read_side(part, data.target_lang)
        return [
            (list(subword_mod.encode(src_model, s).ids), list(subword_mod.encode(tgt_model, t).ids))
            for s, t in zip(src_text, tgt_text)
        ]

    def stage_train(self) -> None:
        src_model = self._load_subword("source")
        tgt_model = self._load_subword("target")
        train_pairs = self._encoded_pairs("train", src_model, tgt_model)
        valid_pairs = self._encoded_pairs("valid", src_model, tgt_model)
        arch = self.config.architecture.to_architecture(
            src_model.vocab_size, tgt_model.vocab_size
        )
        model = build(arch, seed=self.config.hyperparameters.seed)
        ckpt_dir = self.run_dir / "checkpoints"
        event_log = JsonlEventLog(self.run_dir / "logs" / "events.jsonl")
        hp = self.config.hyperparameters

        def console_sink(event):
            self.console.say(
                f"step {event.step}: loss={event.train_loss:.4f} "
                f"acc={event.train_accuracy:.4f} val_acc={event.valid_accuracy:.4f} "
                f"val_ppl={event.valid_ppl:.4f} lr={event.learning_rate:.6f} "
                f"kwh={event.energy_kwh:.6f}"
            )

        try:
            result = training_mod.train(
                model,
                train_pairs,
                valid_pairs,
                hp,
                sinks=(event_log, console_sink),
                meter=self.meter,
                checkpoint_dir=str(ckpt_dir),
                subword_digests=(
                    subword_mod.model_digest(src_model),
                    subword_mod.model_digest(tgt_model),
                ),
            )
        finally:
            event_log.close()
        self._artifact("checkpoint.best", ckpt_dir / "best.ckpt")
        self._artifact("checkpoint.final", ckpt_dir / "final.ckpt")
        self._artifact("events", self.run_dir / "logs" / "events.jsonl")
        self.console.say(
            f"training stopped ({result.stop_reason}) at step "
            f"{result.checkpoint.step}, best val PPL {result.checkpoint.best_valid_ppl:.4f}"
        )

    def _load_model_for_decoding(self):
        ckpt = load_checkpoint(self.artifact_path("checkpoint.best"))
        model = build(ckpt.config, seed=ckpt.hp.seed)
        model.load_arrays(ckpt.params)
        model.source_subword = self._load_subword("source")
        model.target_subword = self._load_subword("target")
        return model

    def stage_translate(self) -> None:
        data = self.config.data
        model = self._load_model_for_decoding()
        sources = self._read_side("test", data.source_lang)
        refs = self._read_side("test", data.target_lang)
        translations = translate_corpus([model], sources, self.config.decode)
        tr_dir = self.run_dir / "translations"
        hyp_path = tr_dir / f"test.hyp.{data.target_lang}"
        hyp_path.write_text(
            "".join(t.text + "\n" for t in translations), encoding="utf-8"
        )
        (tr_dir / f"test.src.{data.source_lang}").write_text(
            "".join(s + "\n" for s in sources), encoding="utf-8"
        )
        (tr_dir / f"test.ref.{data.target_lang}").write_text(
            "".join(r + "\n" for r in refs), encoding="utf-8"
        )
        scores_path = tr_dir / "test.scores.jsonl"
        with open(scores_path, "w", encoding="utf-8") as fh:
            for t in translations:
                fh.write(
                    json.dumps(
                        {
                            "text": t.text,
                            "total_log_prob": t.total_log_prob,
                            "normalized_score": t.normalized_score,
                            "finished": t.finished,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        self._artifact("translations.hyp", hyp_path)
        self._artifact("translations.src", tr_dir / f"test.src.{data.source_lang}")
        self._artifact("translations.ref", tr_dir / f"test.ref.{data.target_lang}")
        self._artifact("translations.scores", scores_path)
        self.console.say(f"translated {len(translations)} test sentences")

    def stage_evaluate(self) -> None:
        hyps = self.artifact_path("translations.hyp").read_text(encoding="utf-8").splitlines()
        refs = self.artifact_path("translations.ref").read_text(encoding="utf-8").splitlines()
        ev = self.config.evaluation
        report = metrics_mod.evaluate(
            hyps,
            refs,
            EvalConfig(case_mode=ev.case_mode),
            metrics=tuple(ev.metrics),
            both_cases=ev.both_cases,
            sentence_bleu=ev.sentence_bleu,
        )
        reports_dir = self.run_dir / "reports"
        eval_json = reports_dir / "evaluation.json"
        eval_json.write_text(
            json.dumps(
                {
                    "scores": report.scores,
                    "sentence_scores": report.sentence_scores,
                    "pair_count": report.pair_count,
                    "hyp_tokens": report.hyp_tokens,
                    "ref_tokens": report.ref_tokens,
                    "ter_skipped_empty_refs": report.ter_skipped_empty_refs,
                    "notes": list(report.notes),
                },
                indent=2,
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        table = metrics_mod.format_report(report)
        results = reports_dir / "results.txt"
        results.write_text(table + "\n", encoding="utf-8")
        self._artifact("evaluation", eval_json)
        self._artifact("results", results)
        for line in table.splitlines():
            self.console.say(line)

    def stage_report(self) -> None:
        report = self.meter.report(self.config.emissions)
        reports_dir = self.run_dir / "reports"
        green_json = reports_dir / "green.json"
        green_json.write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        text = green_mod.format_green_report(report)
        (reports_dir / "green.txt").write_text(text + "\n", encoding="utf-8")
        self._artifact("green", green_json)
        self._artifact("green_text", reports_dir / "green.txt")
        for line in text.splitlines():
            self.console.say(line)
        written = export_plots(self.run_dir)
        for name, path in written.items():
            self._artifact(f"plot.{name}", Path(path))
        self.console.say(f"exported {len(written)} chart files")

    def _stage_fn(self, name: str):
        return getattr(self, f"stage_{name}")

    def run(self, only: str | None = None) -> RunManifest:
        if only is not None:
            index = STAGES.index(only)
            for dep in STAGES[:index]:
                if self.manifest.stages[dep]["status"] != "done":
                    raise OrchestratorError(
                        f"stage {only!r} needs {dep!r} to be done first"
                    )
            self._run_stage(only, self._stage_fn(only))
            return self.manifest
        for stage in STAGES:
            self._run_stage(stage, self._stage_fn(stage))
        return self.manifest


def init_run_dir(config: RunConfig, config_bytes: bytes | None = None) -> Path:
    """Create (or reopen) the run directory with its fixed layout and write
    config.copy + an initial manifest."""
    config.validate()
    run_dir = Path(config.output_root) / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    for sub in RUN_LAYOUT:
        (run_dir / sub).mkdir(exist_ok=True)
    payload = config_bytes if config_bytes is not None else dump_config(config)
    digest = hashlib.sha256(payload).hexdigest()
    config_copy = run_dir / "config.copy"
    if config_copy.exists():
        existing = hashlib.sha256(config_copy.read_bytes()).hexdigest()
        if existing != digest:
            raise ConfigError(
                "run directory already holds a different config; "
                "use a new run_name instead of mutating a run"
            )
    else:
        config_copy.write_bytes(payload)
    if not (run_dir / "manifest.json").exists():
        save_manifest(RunManifest(run_id=config.run_name, config_digest=digest), run_dir)
    return run_dir


class _RunLock:
    def __init__(self, run_dir: Path):
        self.path = run_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(
                f"another pipeline is active in {self.path.parent} "
                f"(remove {self.path} if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def autobuild(
    config: RunConfig,
    config_bytes: bytes | None = None,
    only: str | None = None,
    echo: bool = True,
) -> RunManifest:
    """One-command pipeline. Re-invocation resumes from the first stage that
    is not done; a completed run is a no-op."""
    run_dir = init_run_dir(config, config_bytes)
    console = Console(run_dir / "logs" / "console.log", echo=echo)
    with _RunLock(run_dir):
        pipeline = Pipeline(config, run_dir, console)
        try:
            manifest = pipeline.run(only=only)
        except StageError as e:
            records = notify(config.notifier, config.run_name, f"failed: {e.stage}")
            pipeline.manifest.notifications.extend(records)
            save_manifest(pipeline.manifest, run_dir)
            raise
        finally:
            pipeline.meter.close()
        # a rerun of a completed pipeline is a no-op: no bytes change
        if only is None and pipeline.executed_any:
            records = notify(config.notifier, config.run_name, "completed")
            manifest.notifications.extend(records)
            save_manifest(manifest, run_dir)
    return manifest


# ---------------------------------------------------------------------------
# notifications


def notify(settings: NotifierConfig, run_id: str, outcome: str) -> list[dict]:
    """Deliver a completion/failure message to the configured webhook and/or
    command hook. Failures are recorded, never raised."""
    records: list[dict] = []
    if settings.webhook_url is None and settings.command is None:
        return [{"channel": "none", "ok": True, "detail": "no notifier configured"}]
    if settings.webhook_url is not None:
        payload = json.dumps({"run_id": run_id, "outcome": outcome}).encode("utf-8")
        try:
            request = urllib.request.Request(
                settings.webhook_url,
                data=payload,
                headers={"Content-Type": "application/json"},
            )
            with urllib.request.urlopen(request, timeout=5.0) as response:
                records.append(
                    {"channel": "webhook", "ok": True, "detail": f"status {response.status}"}
                )
        except Exception as e:
            records.append(
                {"channel": "webhook", "ok": False, "detail": f"DeliveryFailed: {e}"}
            )
    if settings.command is not None:
        try:
            proc = subprocess.run(
                shlex.split(settings.command) + [run_id, outcome],
                capture_output=True,
                timeout=10.0,
            )
            ok = proc.returncode == 0
            records.append(
                {
                    "channel": "command",
                    "ok": ok,
                    "detail": "exit 0" if ok else f"DeliveryFailed: exit {proc.returncode}",
                }
            )
        except Exception as e:
            records.append(
                {"channel": "command", "ok": False, "detail": f"DeliveryFailed: {e}"}
            )
    return records


# ---------------------------------------------------------------------------
# plot export


PLOT_SERIES = (
    ("train_loss", "training loss"),
    ("valid_accuracy", "validation accuracy"),
    ("valid_ppl", "validation perplexity"),
    ("learning_rate", "learning rate"),
    ("energy_kwh", "cumulative energy (kWh)"),
)


def export_plots(run_dir: str | Path) -> dict[str, str]:
    """Per-series TSV tables plus simple SVG line charts rendered from the
    event log. Returns artifact name -> path."""
    run_dir = Path(run_dir)
    events_path = run_dir / "logs" / "events.jsonl"
    if not events_path.exists():
        raise NoEvents(f"no event log at {events_path}")
    events = training_mod.read_event_log(events_path)
    if not events:
        raise NoEvents("event log is empty")
    plots_dir = run_dir / "reports" / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    out: dict[str, str] = {}
    steps = [e.step for e in events]
    for key, label in PLOT_SERIES:
        values = [getattr(e, key) for e in events]
        tsv = plots_dir / f"{key}.tsv"
        with open(tsv, "w", encoding="utf-8") as fh:
            fh.write(f"step\t{key}\n")
            for s, v in zip(steps, values):
                fh.write(f"{s}\t{v!r}\n")
        svg = plots_dir / f"{key}.svg"
        svg.write_text(_line_chart_svg(steps, values, label), encoding="utf-8")
        out[f"{key}.tsv"] = str(tsv)
        out[f"{key}.svg"] = str(svg)
    return out


def _line_chart_svg(
    xs: list[float], ys: list[float], title: str, width: int = 640, height: int = 360
) -> str:
    pad = 50
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    x_span = (x_max - x_min) or 1.0
    y_span = (y_max - y_min) or 1.0

    def sx(x):
        return pad + (x - x_min) / x_span * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_min) / y_span * (height - 2 * pad)

    points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'  <rect width="{width}" height="{height}" fill="white"/>\n'
        f'  <text x="{width / 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>\n'
        f'  <line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>\n'
        f'  <line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'  <text x="{pad}" y="{height - pad + 20}" font-family="sans-serif" '
        f'font-size="11">{x_min:g}</text>\n'
        f'  <text x="{width - pad}" y="{height - pad + 20}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{x_max:g}</text>\n'
        f'  <text x="{pad - 5}" y="{height - pad}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{y_min:.4g}</text>\n'
        f'  <text x="{pad - 5}" y="{pad + 5}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{y_max:.4g}</text>\n'
        f'  <polyline fill="none" stroke="steelblue" stroke-width="1.5" '
        f'points="{points}"/>\n'
        f"</svg>\n"
    )


# ---------------------------------------------------------------------------
# deployment


def deploy(run_dir: str | Path, destination: str | Path) -> Path:
    """Copy everything the gateway needs to serve this run's best model into
    a self-sufficient bundle directory."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    best_rel = manifest.artifacts.get("checkpoint.best")
    if best_rel is None or not (run_dir / best_rel).exists():
        raise NoCheckpoint(f"run {manifest.run_id} has no best checkpoint")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    shutil.copy2(run_dir / best_rel, dest / "model.ckpt")
    for side in ("source", "target"):
        rel = manifest.artifacts.get(f"subword.{side}")
        if rel is None:
            raise NoCheckpoint(f"run {manifest.run_id} has no {side} subword model")
        shutil.copy2(run_dir / rel, dest / f"{side}.model")
    config, _ = load_config_from_run(run_dir)
    bundle = {
        "name": manifest.run_id,
        "run_digest": manifest.config_digest,
        "decode": asdict(config.decode),
        "created": time.time(),
    }
    (dest / "bundle.json").write_text(
        json.dumps(bundle, indent=2, sort_keys=True), encoding="utf-8"
    )
    return dest


def load_config_from_run(run_dir: Path) -> tuple[RunConfig, bytes]:
    raw = (Path(run_dir) / "config.copy").read_bytes()
    config = RunConfig.from_dict(yaml.safe_load(raw.decode("utf-8")))
    config.validate()
    return config, raw
