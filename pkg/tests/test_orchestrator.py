import hashlib
import http.server
import json
import threading
from pathlib import Path

import pytest
import yaml

from nmtbench import orchestrator as orch
from nmtbench.cli import EXIT_CODES, main as cli_main
from nmtbench.orchestrator import (
    ConfigError,
    LockHeld,
    NoCheckpoint,
    NoEvents,
    NotifierConfig,
    RunConfig,
    StageError,
    autobuild,
    deploy,
    export_plots,
    load_config,
    load_manifest,
    notify,
)

WORDS = ["ka", "ro", "mi", "ta", "su", "ne", "lo", "vi", "pa", "du"]


def copy_sentences(n):
    out = []
    for i in range(n):
        length = 3 + (i * 7) % 4
        out.append(" ".join(WORDS[(i * 13 + j * 5) % len(WORDS)] for j in range(length)))
    return out


def write_corpus(tmp_path, n=200):
    sentences = copy_sentences(n)
    src = tmp_path / "copy.src"
    tgt = tmp_path / "copy.tgt"
    src.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")
    tgt.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")
    return src, tgt


def tiny_run_config(tmp_path, name="demo", **overrides):
    src, tgt = write_corpus(tmp_path)
    d = {
        "run_name": name,
        "output_root": str(tmp_path / "runs"),
        "data": {"source_path": str(src), "target_path": str(tgt)},
        "split": {"train_ratio": 0.8, "valid_ratio": 0.1, "test_ratio": 0.1, "seed": 5},
        "cleaning": {"min_len": 1, "max_len": 64, "drop_duplicates": False},
        "subword": {"kind": "bpe", "source_vocab_size": 40, "target_vocab_size": 40},
        "architecture": {
            "kind": "transformer",
            "layer_count": 1,
            "model_width": 16,
            "head_count": 2,
            "feedforward_width": 32,
            "dropout_rate": 0.1,
            "max_sequence_length": 32,
        },
        "hyperparameters": {
            "optimizer": "adaptive-moment",
            "learning_rate": 0.05,
            "warmup_steps": 20,
            "batch_tokens": 256,
            "max_steps": 30,
            "validation_interval": 10,
            "checkpoint_interval": 20,
            "label_smoothing": 0.1,
            "seed": 11,
            "patience": 10,
        },
        "evaluation": {
            "case_mode": "truecase",
            "both_cases": False,
            "sentence_bleu": True,
            "metrics": ["bleu", "chrf1", "ter", "meteor_lite", "f1"],
        },
        "emissions": {"pue": 1.0, "carbon_intensity": 0.475, "region": "test"},
        "notifier": {"webhook_url": None, "command": None},
        "decode": {"beam_size": 2, "alpha": 0.6, "max_len": 16},
        "power": {"command": None, "tdp_watts": 50.0, "utilization": 1.0},
    }
    d.update(overrides)
    return d


def write_config(tmp_path, d):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(d), encoding="utf-8")
    return path


def artifact_hashes(run_dir: Path) -> dict[str, str]:
    manifest = load_manifest(run_dir)
    return {
        key: hashlib.sha256((run_dir / rel).read_bytes()).hexdigest()
        for key, rel in manifest.artifacts.items()
    }


# -- config ------------------------------------------------------------------


def test_load_config_roundtrip(tmp_path):
    path = write_config(tmp_path, tiny_run_config(tmp_path))
    config, raw = load_config(path)
    assert config.run_name == "demo"
    assert config.subword.kind == "bpe"
    assert config.decode.beam_size == 2
    back = orch.RunConfig.from_dict(yaml.safe_load(orch.dump_config(config)))
    assert back == config


def test_invalid_ratio_fails_before_any_stage(tmp_path):
    d = tiny_run_config(tmp_path)
    d["split"]["test_ratio"] = 0.3  # sums to 1.2
    with pytest.raises(ConfigError):
        autobuild(RunConfig.from_dict(d), echo=False)
    assert not (tmp_path / "runs" / "demo" / "manifest.json").exists()


def test_exactly_one_corpus_source(tmp_path):
    d = tiny_run_config(tmp_path)
    d["data"]["train_source"] = "x"
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d).validate()


# -- autobuild ------------------------------------------------------------------


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("autobuild")
    d = tiny_run_config(tmp_path)
    config = RunConfig.from_dict(d)
    manifest = autobuild(config, echo=False)
    return tmp_path, config, manifest


def test_autobuild_completes_all_stages(completed_run):
    _, _, manifest = completed_run
    assert all(s["status"] == "done" for s in manifest.stages.values())
    assert set(manifest.stages) == set(orch.STAGES)


def test_autobuild_artifacts_exist(completed_run):
    tmp_path, config, manifest = completed_run
    run_dir = Path(config.output_root) / config.run_name
    for key, rel in manifest.artifacts.items():
        assert (run_dir / rel).exists(), f"missing artifact {key}: {rel}"
    assert (run_dir / "config.copy").exists()
    assert (run_dir / "reports" / "evaluation.json").exists()
    assert (run_dir / "reports" / "green.json").exists()
    assert (run_dir / "logs" / "events.jsonl").exists()
    assert (run_dir / "logs" / "console.log").exists()
    assert (run_dir / "reports" / "results.txt").exists()


def test_autobuild_evaluation_has_selected_metrics(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    scores = json.loads((run_dir / "reports" / "evaluation.json").read_text())["scores"]
    assert set(scores["truecase"]) == {"bleu", "chrf1", "ter", "meteor_lite", "f1"}


def test_autobuild_green_report_identity(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    green = json.loads((run_dir / "reports" / "green.json").read_text())
    factors = green["factors"]
    assert green["total_kg_co2"] == pytest.approx(
        green["total_energy_kwh"] * factors["pue"] * factors["carbon_intensity"],
        abs=1e-9,
    )
    assert sum(green["stage_energy_kwh"].values()) == pytest.approx(
        green["total_energy_kwh"], abs=1e-9
    )
    assert green["stage_energy_kwh"]["train"] > 0


def test_idempotent_rerun_changes_no_artifact_bytes(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    before = artifact_hashes(run_dir)
    manifest_bytes = (run_dir / "manifest.json").read_bytes()
    autobuild(config, echo=False)
    assert artifact_hashes(run_dir) == before
    assert (run_dir / "manifest.json").read_bytes() == manifest_bytes


def test_no_notifier_recorded_as_noop(completed_run):
    _, _, manifest = completed_run
    assert manifest.notifications == [
        {"channel": "none", "ok": True, "detail": "no notifier configured"}
    ]


def test_three_logging_levels_present(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    events = (run_dir / "logs" / "events.jsonl").read_text().strip().splitlines()
    assert len(events) == 3  # steps 10, 20, 30
    assert "stage train: done" in (run_dir / "logs" / "console.log").read_text()
    assert "bleu" in (run_dir / "reports" / "results.txt").read_text()


def test_resume_after_failure_skips_done_stages(tmp_path, monkeypatch):
    d = tiny_run_config(tmp_path, name="resume-run")
    config = RunConfig.from_dict(d)

    original = orch.Pipeline.stage_translate

    def boom(self):
        raise RuntimeError("injected translate failure")

    monkeypatch.setattr(orch.Pipeline, "stage_translate", boom)
    with pytest.raises(StageError) as exc:
        autobuild(config, echo=False)
    assert exc.value.stage == "translate"
    run_dir = Path(config.output_root) / config.run_name
    manifest = load_manifest(run_dir)
    assert manifest.stages["train"]["status"] == "done"
    assert manifest.stages["translate"]["status"] == "failed"
    assert manifest.stages["evaluate"]["status"] == "pending"
    # failure notification recorded even with no notifier configured
    assert any("none" == r["channel"] for r in manifest.notifications)

    train_hash = hashlib.sha256(
        (run_dir / manifest.artifacts["checkpoint.final"]).read_bytes()
    ).hexdigest()
    monkeypatch.setattr(orch.Pipeline, "stage_translate", original)
    manifest = autobuild(config, echo=False)
    assert all(s["status"] == "done" for s in manifest.stages.values())
    after = hashlib.sha256(
        (run_dir / manifest.artifacts["checkpoint.final"]).read_bytes()
    ).hexdigest()
    assert after == train_hash  # train stage was not re-run
    log = (run_dir / "logs" / "console.log").read_text()
    assert "stage train: already done, skipping" in log


def test_autobuild_with_presplit_corpus(tmp_path):
    sentences = copy_sentences(120)
    paths = {}
    for part, bounds in (("train", (0, 90)), ("valid", (90, 105)), ("test", (105, 120))):
        for side in ("src", "tgt"):
            p = tmp_path / f"{part}.{side}"
            p.write_text(
                "".join(s + "\n" for s in sentences[bounds[0] : bounds[1]]),
                encoding="utf-8",
            )
            paths[f"{part}_{'source' if side == 'src' else 'target'}"] = str(p)
    d = tiny_run_config(tmp_path, name="presplit-run")
    d["data"] = {**paths, "source_lang": "src", "target_lang": "tgt"}
    d.pop("split")
    manifest = autobuild(RunConfig.from_dict(d), echo=False)
    assert all(s["status"] == "done" for s in manifest.stages.values())
    run_dir = Path(d["output_root"]) / "presplit-run"
    copied = (run_dir / "splits" / "data.train.src").read_text(encoding="utf-8")
    assert copied.splitlines() == sentences[0:90]


def test_autobuild_determinism_across_roots(tmp_path):
    results = []
    for tag in ("a", "b"):
        (tmp_path / tag).mkdir(exist_ok=True)
        d = tiny_run_config(tmp_path / tag, name="same-run")
        config = RunConfig.from_dict(d)
        autobuild(config, echo=False)
        run_dir = Path(config.output_root) / config.run_name
        events = [
            {k: v for k, v in json.loads(line).items() if k not in ("timestamp", "energy_kwh")}
            for line in (run_dir / "logs" / "events.jsonl").read_text().splitlines()
        ]
        ckpt = (run_dir / "checkpoints" / "final.ckpt").read_bytes()
        hyp = (run_dir / "translations" / "test.hyp.tgt").read_bytes()
        results.append((events, ckpt, hyp))
    assert results[0][0] == results[1][0]  # deterministic event fields
    assert results[0][1] == results[1][1]  # bit-identical final checkpoint
    assert results[0][2] == results[1][2]  # identical translations


def test_resume_keeps_earlier_stage_energy(tmp_path, monkeypatch):
    d = tiny_run_config(tmp_path, name="energy-resume")
    config = RunConfig.from_dict(d)

    def boom(self):
        raise RuntimeError("injected evaluate failure")

    original = orch.Pipeline.stage_evaluate
    monkeypatch.setattr(orch.Pipeline, "stage_evaluate", boom)
    with pytest.raises(StageError):
        autobuild(config, echo=False)
    monkeypatch.setattr(orch.Pipeline, "stage_evaluate", original)
    autobuild(config, echo=False)
    run_dir = Path(config.output_root) / config.run_name
    green = json.loads((run_dir / "reports" / "green.json").read_text())
    # train ran in the first invocation; its energy must survive the resume
    assert green["stage_energy_kwh"]["train"] > 0
    assert green["stage_energy_kwh"]["evaluate"] >= 0
    assert sum(green["stage_energy_kwh"].values()) == pytest.approx(
        green["total_energy_kwh"], abs=1e-9
    )


def test_lock_prevents_concurrent_pipelines(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    (run_dir / ".lock").write_text("12345")
    try:
        with pytest.raises(LockHeld):
            autobuild(config, echo=False)
    finally:
        (run_dir / ".lock").unlink()


def test_changed_config_rejected_for_existing_run(completed_run):
    tmp_path, config, _ = completed_run
    from dataclasses import replace

    altered = replace(config, decode=orch.DecodeSettings(beam_size=3))
    with pytest.raises(ConfigError):
        autobuild(altered, echo=False)


# -- plots -------------------------------------------------------------------------


def test_export_plots_series(completed_run):
    tmp_path, config, _ = completed_run
    run_dir = Path(config.output_root) / config.run_name
    written = export_plots(run_dir)
    tsv = Path(written["valid_ppl.tsv"]).read_text().strip().splitlines()
    assert tsv[0] == "step\tvalid_ppl"
    assert len(tsv) == 1 + 3  # header + one row per validation event
    steps = [int(line.split("\t")[0]) for line in tsv[1:]]
    assert steps == sorted(steps)
    svg = Path(written["train_loss.svg"]).read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_export_plots_no_events(tmp_path):
    run_dir = tmp_path / "empty-run"
    (run_dir / "logs").mkdir(parents=True)
    with pytest.raises(NoEvents):
        export_plots(run_dir)
    (run_dir / "logs" / "events.jsonl").write_text("")
    with pytest.raises(NoEvents):
        export_plots(run_dir)


# -- notify ------------------------------------------------------------------------


class _Hook(http.server.BaseHTTPRequestHandler):
    received = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _Hook.received.append(json.loads(self.rfile.read(length)))
        self.send_response(200)
        self.end_headers()
        self.wfile.write(b"{}")

    def log_message(self, *args):
        pass


def test_notify_webhook_delivery():
    server = http.server.HTTPServer(("127.0.0.1", 0), _Hook)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        records = notify(
            NotifierConfig(webhook_url=f"http://127.0.0.1:{port}/hook"),
            "run-1",
            "completed",
        )
    finally:
        server.shutdown()
    assert records == [{"channel": "webhook", "ok": True, "detail": "status 200"}]
    assert _Hook.received == [{"run_id": "run-1", "outcome": "completed"}]


def test_notify_unreachable_webhook_not_fatal():
    records = notify(
        NotifierConfig(webhook_url="http://127.0.0.1:1/nope"), "run-1", "failed: train"
    )
    assert records[0]["ok"] is False
    assert "DeliveryFailed" in records[0]["detail"]


def test_notify_command_hook(tmp_path):
    out = tmp_path / "notified.txt"
    script = tmp_path / "hook.sh"
    script.write_text(f"#!/bin/sh\necho \"$1 $2\" > {out}\n")
    script.chmod(0o755)
    records = notify(NotifierConfig(command=str(script)), "run-9", "completed")
    assert records == [{"channel": "command", "ok": True, "detail": "exit 0"}]
    assert out.read_text().strip() == "run-9 completed"


def test_notify_none_configured():
    records = notify(NotifierConfig(), "run-1", "completed")
    assert records[0]["channel"] == "none"


# -- deploy ------------------------------------------------------------------------


def test_deploy_bundle(completed_run, tmp_path):
    tmp, config, manifest = completed_run
    run_dir = Path(config.output_root) / config.run_name
    dest = tmp_path / "bundle"
    out = deploy(run_dir, dest)
    assert (out / "model.ckpt").exists()
    assert (out / "source.model").exists()
    assert (out / "target.model").exists()
    bundle = json.loads((out / "bundle.json").read_text())
    assert bundle["name"] == config.run_name
    assert bundle["run_digest"] == manifest.config_digest
    assert bundle["decode"]["beam_size"] == 2


def test_deploy_without_checkpoint(tmp_path):
    run_dir = tmp_path / "no-ckpt"
    run_dir.mkdir()
    orch.save_manifest(orch.RunManifest(run_id="x", config_digest="d"), run_dir)
    with pytest.raises(NoCheckpoint):
        deploy(run_dir, tmp_path / "dest")


# -- CLI ---------------------------------------------------------------------------


def test_cli_autobuild_and_green(tmp_path, capsys):
    d = tiny_run_config(tmp_path, name="cli-run")
    path = write_config(tmp_path, d)
    assert cli_main(["autobuild", "--config", str(path)]) == 0
    run_dir = Path(d["output_root"]) / "cli-run"
    assert cli_main(["green", "--run-dir", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "kgCO2" in out


def test_cli_stagewise_split_then_failure_code(tmp_path):
    d = tiny_run_config(tmp_path, name="cli-stage")
    path = write_config(tmp_path, d)
    assert cli_main(["split", "--config", str(path)]) == 0
    run_dir = Path(d["output_root"]) / "cli-stage"
    manifest = load_manifest(run_dir)
    assert manifest.stages["split"]["status"] == "done"
    assert manifest.stages["subword"]["status"] == "pending"
    # translate requires train to be done first
    assert cli_main(["translate", "--config", str(path)]) == EXIT_CODES["translate"]


def test_cli_bad_config_exit_code(tmp_path):
    d = tiny_run_config(tmp_path)
    d["split"]["test_ratio"] = 0.9
    path = write_config(tmp_path, d)
    assert cli_main(["autobuild", "--config", str(path)]) == EXIT_CODES["config"]


def test_cli_seed_override(tmp_path):
    d = tiny_run_config(tmp_path, name="seeded")
    path = write_config(tmp_path, d)
    assert cli_main(["--seed", "99", "split", "--config", str(path)]) == 0
    run_dir = Path(d["output_root"]) / "seeded"
    copy = yaml.safe_load((run_dir / "config.copy").read_text())
    assert copy["split"]["seed"] == 99
    assert copy["hyperparameters"]["seed"] == 99
