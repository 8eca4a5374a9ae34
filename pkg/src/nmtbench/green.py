"""Power sampling, energy integration and the per-run green report
(kWh and kgCO2, with the measurement method disclosed per stage)."""

from __future__ import annotations

import re
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field

PIPELINE_STAGES = ("split", "subword", "train", "translate", "evaluate")

DEFAULT_SAMPLE_PERIOD_S = 10.0
WATTS_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")


class GreenError(Exception):
    pass


class ProviderUnavailable(GreenError):
    pass


class UnorderedSamples(GreenError):
    pass


class NoSamples(GreenError):
    pass


@dataclass(frozen=True)
class PowerSample:
    timestamp: float  # seconds on the meter's clock
    device: str
    watts: float
    source: str  # "measured" | "estimated"


@dataclass(frozen=True)
class EmissionFactors:
    pue: float = 1.0  # local machine default
    carbon_intensity: float = 0.475  # kgCO2/kWh, configurable placeholder
    region: str = "world-average-placeholder"

    def validate(self) -> None:
        if self.pue < 1.0:
            raise ValueError(f"pue {self.pue} must be >= 1.0")
        if self.carbon_intensity <= 0.0:
            raise ValueError("carbon_intensity must be > 0")

    def to_dict(self) -> dict:
        return {
            "pue": self.pue,
            "carbon_intensity": self.carbon_intensity,
            "region": self.region,
        }

    @staticmethod
    def from_dict(d: dict) -> "EmissionFactors":
        return EmissionFactors(**d)


@dataclass
class GreenReport:
    stage_energy_kwh: dict[str, float]
    total_energy_kwh: float
    factors: EmissionFactors
    total_kg_co2: float
    sample_count: int
    method: str  # "measured" | "estimated" | "mixed" | "unmeasured"
    stage_methods: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage_energy_kwh": self.stage_energy_kwh,
            "total_energy_kwh": self.total_energy_kwh,
            "factors": self.factors.to_dict(),
            "total_kg_co2": self.total_kg_co2,
            "sample_count": self.sample_count,
            "method": self.method,
            "stage_methods": self.stage_methods,
        }

    @staticmethod
    def from_dict(d: dict) -> "GreenReport":
        return GreenReport(
            stage_energy_kwh=dict(d["stage_energy_kwh"]),
            total_energy_kwh=d["total_energy_kwh"],
            factors=EmissionFactors.from_dict(d["factors"]),
            total_kg_co2=d["total_kg_co2"],
            sample_count=d["sample_count"],
            method=d["method"],
            stage_methods=dict(d.get("stage_methods", {})),
        )


class PowerProvider:
    """Watt readings, either from an external command or a TDP estimate.

    command: shell words whose stdout starts with a real number of watts
    (e.g. a script wrapping a vendor SMI tool). When the command fails the
    provider falls back to the estimate and remembers that it did.
    """

    def __init__(
        self,
        command: str | None = None,
        tdp_watts: float = 65.0,
        utilization: float = 1.0,
        device: str = "cpu0",
    ):
        self.command = command
        self.tdp_watts = tdp_watts
        self.utilization = utilization
        self.device = device
        self.fell_back = False

    def estimated_watts(self) -> float:
        return self.tdp_watts * self.utilization

    def read_measured_watts(self) -> float:
        if not self.command:
            raise ProviderUnavailable("no power command configured")
        try:
            proc = subprocess.run(
                shlex.split(self.command),
                capture_output=True,
                text=True,
                timeout=5.0,
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise ProviderUnavailable(str(e)) from None
        if proc.returncode != 0:
            raise ProviderUnavailable(f"power command exited {proc.returncode}")
        return parse_watts(proc.stdout)


def parse_watts(text: str) -> float:
    match = WATTS_RE.search(text.strip())
    if match is None or not text.strip().startswith(match.group(0)):
        raise ProviderUnavailable(f"cannot parse watts from {text!r}")
    return float(match.group(0))


def sample_power(provider: PowerProvider, timestamp: float | None = None) -> PowerSample:
    """One reading; measured mode falls back to the estimate on failure and
    records the fallback on the provider."""
    ts = time.monotonic() if timestamp is None else timestamp
    if provider.command:
        try:
            watts = provider.read_measured_watts()
            return PowerSample(ts, provider.device, watts, "measured")
        except ProviderUnavailable:
            provider.fell_back = True
    return PowerSample(ts, provider.device, provider.estimated_watts(), "estimated")


def integrate_energy(samples: list[PowerSample], duration_s: float | None = None) -> float:
    """Trapezoidal kWh over time-ordered samples; a single sample uses its
    power times duration_s (the stage duration)."""
    if not samples:
        raise NoSamples("no power samples to integrate")
    for a, b in zip(samples, samples[1:]):
        if b.timestamp < a.timestamp:
            raise UnorderedSamples(
                f"timestamps decrease: {a.timestamp} -> {b.timestamp}"
            )
    if len(samples) == 1:
        if duration_s is None:
            duration_s = 0.0
        return samples[0].watts * duration_s / 3.6e6
    joules = 0.0
    for a, b in zip(samples, samples[1:]):
        joules += 0.5 * (a.watts + b.watts) * (b.timestamp - a.timestamp)
    return joules / 3.6e6


def emissions(energy_kwh: float, factors: EmissionFactors) -> float:
    """kgCO2 = kWh x PUE x carbon intensity."""
    if energy_kwh < 0:
        raise ValueError("energy must be >= 0")
    return energy_kwh * factors.pue * factors.carbon_intensity


def render_green_report(
    stage_samples: dict[str, list[PowerSample]],
    factors: EmissionFactors,
    stage_durations: dict[str, float] | None = None,
) -> GreenReport:
    """Per-stage breakdown plus totals and method disclosure. Empty input
    yields a zero-energy report flagged "unmeasured"."""
    factors.validate()
    durations = stage_durations or {}
    stage_energy: dict[str, float] = {}
    stage_methods: dict[str, str] = {}
    count = 0
    for stage, samples in stage_samples.items():
        if not samples:
            stage_energy[stage] = 0.0
            stage_methods[stage] = "unmeasured"
            continue
        stage_energy[stage] = integrate_energy(samples, durations.get(stage))
        sources = {s.source for s in samples}
        stage_methods[stage] = sources.pop() if len(sources) == 1 else "mixed"
        count += len(samples)
    total = sum(stage_energy.values())
    methods = {m for m in stage_methods.values() if m != "unmeasured"}
    if count == 0:
        method = "unmeasured"
    elif len(methods) == 1:
        method = methods.pop()
    else:
        method = "mixed"
    return GreenReport(
        stage_energy_kwh=stage_energy,
        total_energy_kwh=total,
        factors=factors,
        total_kg_co2=emissions(total, factors),
        sample_count=count,
        method=method,
        stage_methods=stage_methods,
    )


class EnergyMeter:
    """Accumulates power samples per pipeline stage.

    A background thread samples every sample_period seconds during a stage;
    poll() forces a reading (the trainer calls it at each validation), and
    stage boundaries always sample so each stage's trapezoid spans its whole
    duration. Samples go to an append-only per-stage log guarded by a lock.
    """

    def __init__(
        self,
        provider: PowerProvider | None = None,
        clock=time.monotonic,
        sample_period: float = DEFAULT_SAMPLE_PERIOD_S,
        background: bool = False,
    ):
        self.provider = provider or PowerProvider()
        self.clock = clock
        self.sample_period = sample_period
        self.stage_samples: dict[str, list[PowerSample]] = {}
        self.stage_bounds: dict[str, list[float]] = {}
        self._current: str | None = None
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        if background:
            self._thread = threading.Thread(target=self._run, daemon=True)
            self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.sample_period):
            self.poll()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def start_stage(self, name: str) -> None:
        with self._lock:
            self._current = name
            self.stage_samples.setdefault(name, [])
            self.stage_bounds.setdefault(name, [self.clock(), self.clock()])
            self.stage_bounds[name][0] = min(self.stage_bounds[name][0], self.clock())
        self.poll()

    def end_stage(self, name: str) -> None:
        self.poll()
        with self._lock:
            self.stage_bounds[name][1] = self.clock()
            self._current = None

    def stage(self, name: str):
        meter = self

        class _StageContext:
            def __enter__(self):
                meter.start_stage(name)
                return meter

            def __exit__(self, exc_type, exc, tb):
                meter.end_stage(name)
                return False

        return _StageContext()

    def poll(self) -> PowerSample | None:
        with self._lock:
            stage = self._current
            if stage is None:
                return None
            sample = sample_power(self.provider, self.clock())
            self.stage_samples[stage].append(sample)
            return sample

    def cumulative_kwh(self) -> float:
        with self._lock:
            total = 0.0
            for stage, samples in self.stage_samples.items():
                if not samples:
                    continue
                bounds = self.stage_bounds.get(stage)
                duration = bounds[1] - bounds[0] if bounds else 0.0
                total += integrate_energy(samples, duration)
            return total

    def snapshot_kwh(self) -> float:
        """Force a sample, then report cumulative energy so far."""
        self.poll()
        return self.cumulative_kwh()

    def report(self, factors: EmissionFactors) -> GreenReport:
        with self._lock:
            durations = {
                stage: bounds[1] - bounds[0]
                for stage, bounds in self.stage_bounds.items()
            }
            samples = {k: list(v) for k, v in self.stage_samples.items()}
        return render_green_report(samples, factors, durations)


def format_green_report(report: GreenReport) -> str:
    lines = ["green report"]
    lines.append(
        f"  factors: PUE {report.factors.pue}  "
        f"carbon intensity {report.factors.carbon_intensity} kgCO2/kWh  "
        f"region {report.factors.region}"
    )
    lines.append(f"  method: {report.method} ({report.sample_count} samples)")
    for stage, kwh in report.stage_energy_kwh.items():
        lines.append(
            f"  {stage:<10} {kwh:.9f} kWh  [{report.stage_methods.get(stage, '?')}]"
        )
    lines.append(f"  total      {report.total_energy_kwh:.9f} kWh")
    lines.append(f"  emissions  {report.total_kg_co2:.9f} kgCO2")
    return "\n".join(lines)
