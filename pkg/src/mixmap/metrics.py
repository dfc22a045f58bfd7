"""Signal-quality metrics: SNR-style loss, SDR, and SDR improvement.

SDR here is the plain energy-ratio definition,
10*log10(||ref||^2 / ||ref - est||^2), i.e. exactly the negated training
loss.  It is NOT the projection-based BSS-eval SDR; keeping a single
distortion definition avoids silent metric skew between training and
evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .audio import AudioBuffer, energy, read_wav
from .mixtures import MixtureRecord


def snr_loss(target: AudioBuffer, estimate: AudioBuffer) -> float:
    """-10*log10(target energy / error energy); lower is better."""
    if len(target) != len(estimate):
        raise ValueError(f"length mismatch: {len(target)} vs {len(estimate)} samples")
    e_t = energy(target)
    if e_t == 0.0:
        raise ValueError("zero-energy target")
    e_err = float(energy(AudioBuffer(target.samples - estimate.samples, target.sample_rate)))
    if e_err == 0.0:
        raise ValueError("perfect reconstruction (loss -inf)")
    return -10.0 * math.log10(e_t / e_err)


def sdr_db(reference: AudioBuffer, estimate: AudioBuffer) -> float:
    """Energy-ratio signal-to-distortion ratio; the negation of snr_loss."""
    return -snr_loss(reference, estimate)


def isdr_db(reference: AudioBuffer, mixture: AudioBuffer, estimate: AudioBuffer) -> float:
    """SDR improvement of the estimate over the unprocessed mixture."""
    return sdr_db(reference, estimate) - sdr_db(reference, mixture)


@dataclass(frozen=True)
class EvalResult:
    example_id: str
    sdr_db: float
    input_sdr_db: float
    isdr_db: float


def evaluate_record(record: MixtureRecord, estimate: AudioBuffer, manifest_dir: Path) -> EvalResult:
    reference = read_wav(manifest_dir / record.target_path)
    mixture = read_wav(manifest_dir / record.mixture_path)
    out_sdr = sdr_db(reference, estimate)
    in_sdr = sdr_db(reference, mixture)
    return EvalResult(record.example_id, out_sdr, in_sdr, out_sdr - in_sdr)


def evaluate_manifest(
    records: list[MixtureRecord], estimates_dir: str | Path, manifest_dir: str | Path
) -> list[EvalResult]:
    """Score every record against <estimates_dir>/<example_id>.wav."""
    estimates = Path(estimates_dir)
    base = Path(manifest_dir)
    return [
        evaluate_record(record, read_wav(estimates / f"{record.example_id}.wav"), base)
        for record in records
    ]


def write_eval_csv(results: list[EvalResult], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "sdr_db", "input_sdr_db", "isdr_db"])
        for r in results:
            writer.writerow([r.example_id, repr(r.sdr_db), repr(r.input_sdr_db), repr(r.isdr_db)])
