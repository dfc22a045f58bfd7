"""Trainer stand-ins for end-to-end verification.

No neural network lives here.  The oracle extractor rebuilds an estimate
from stored stems with a known residual-interference factor, so its SDR has
a closed form; the simulated learner emits per-epoch metric logs from an
exponential-approach curve whose ceiling depends on the mixture factors.
Together they exercise the full mix -> dynamics -> schedule pipeline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import AudioBuffer
from .dynamics import LOG_HEADER, METRIC_DELTA_SNR
from .mixtures import MixtureRecord, MixtureSpec
from .seeds import example_rng


def oracle_extract(
    mixture: AudioBuffer,
    target: AudioBuffer,
    positioned_interference_sum: AudioBuffer,
    beta: float,
) -> AudioBuffer:
    """Estimate = target + beta * interference, so the error is exactly
    beta * interference and SDR = snr_db(target, interference) - 20*log10(beta).

    beta = 1 returns the mixture bit-for-bit; beta = 0 returns the target.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if not (len(mixture) == len(target) == len(positioned_interference_sum)):
        raise ValueError("mixture and stems must have equal lengths")
    residual = mixture.samples - target.samples - positioned_interference_sum.samples
    if float(np.max(np.abs(residual), initial=0.0)) > 1e-9:
        raise ValueError("stems do not reconstruct the mixture; pass the stored stems")
    return AudioBuffer(target.samples + beta * positioned_interference_sum.samples, target.sample_rate)


@dataclass(frozen=True)
class OracleExtractor:
    """Residual-interference extractor with factor beta in [0, 1]."""

    beta: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")

    def extract(self, mixture: AudioBuffer, target: AudioBuffer, interference_sum: AudioBuffer) -> AudioBuffer:
        return oracle_extract(mixture, target, interference_sum, self.beta)


@dataclass(frozen=True)
class LearnerParams:
    """Shape of the simulated learning curve M(e) = L * (1 - exp(-e/tau)) + noise.

    The ceiling L rises with SNR and falls with extra interferers and (for
    multi-speaker mixtures) with the overlapped fraction:
    L = base_offset + base_snr_slope*snr - speaker_penalty*(K-1)
        - overlap_penalty*(1-overlap_ratio)*[K>1].
    """

    base_offset: float = 6.0
    base_snr_slope: float = 0.4
    speaker_penalty: float = 1.5
    overlap_penalty: float = 2.0
    time_constant: float = 6.0
    noise_std: float = 1.0
    seed: int = 0
    asymptote_fn: Callable[[MixtureSpec], float] | None = None

    def __post_init__(self) -> None:
        if self.time_constant <= 0:
            raise ValueError(f"time constant must be > 0, got {self.time_constant}")
        if self.noise_std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.noise_std}")

    def asymptote(self, spec: MixtureSpec) -> float:
        if self.asymptote_fn is not None:
            return self.asymptote_fn(spec)
        k = spec.num_interferers
        ceiling = self.base_offset + self.base_snr_slope * spec.snr_db
        ceiling -= self.speaker_penalty * (k - 1)
        if k > 1:
            ceiling -= self.overlap_penalty * (1.0 - spec.overlap_ratio)
        return ceiling

    @classmethod
    def from_file(cls, path: str | Path) -> "LearnerParams":
        import json

        obj = json.loads(Path(path).read_text())
        known = {
            "base_offset",
            "base_snr_slope",
            "speaker_penalty",
            "overlap_penalty",
            "time_constant",
            "noise_std",
            "seed",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown learner config keys: {sorted(unknown)}")
        return cls(**obj)


def simulated_trajectory(spec: MixtureSpec, params: LearnerParams, epochs: int, seed: int) -> list[float]:
    """Per-epoch metric values for one example, deterministic in (seed, example_id)."""
    ceiling = params.asymptote(spec)
    rng = example_rng(seed, spec.example_id, "learner")
    noise = rng.normal(0.0, params.noise_std, size=epochs) if params.noise_std > 0 else np.zeros(epochs)
    return [
        ceiling * (1.0 - math.exp(-e / params.time_constant)) + float(noise[e - 1])
        for e in range(1, epochs + 1)
    ]


def simulate_trajectories(
    records: list[MixtureRecord],
    params: LearnerParams,
    epochs: int,
    log_path: str | Path,
    seed: int | None = None,
    jobs: int = 1,
) -> Path:
    """Write a metric log CSV covering every record for epochs 1..E.

    Per-example streams are keyed by (seed, example_id) and rows are written
    in manifest order, so the file is byte-identical for any `jobs`.
    """
    if not records:
        raise ValueError("empty manifest")
    if epochs < 3:
        raise ValueError(f"need at least 3 epochs, got {epochs}")
    if seed is None:
        seed = params.seed

    def trajectory(record: MixtureRecord) -> list[float]:
        return simulated_trajectory(record.spec, params, epochs, seed)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            all_values = list(pool.map(trajectory, records))
    else:
        all_values = [trajectory(record) for record in records]

    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for record, values in zip(records, all_values):
            for epoch, value in enumerate(values, start=1):
                writer.writerow([record.example_id, epoch, METRIC_DELTA_SNR, repr(value)])
    return log_path
