"""Training-dynamics datamaps: per-example trajectories, confidence,
variability, and region classification.

Each training example carries a per-epoch improvement value (output SNR
minus input SNR, in dB).  Its confidence is the mean across retained epochs
and its variability the population standard deviation (divisor N, not N-1).
Regions are assigned by rank: the top slice by variability is ambiguous,
then the remainder is ranked by confidence and sliced into easy (top),
hard (bottom), and unlabeled (middle).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

METRIC_DELTA_SNR = "delta_snr"
METRIC_SNR_LOSS = "snr_loss"
LOG_HEADER = ("example_id", "epoch", "metric", "value")

REGIONS = ("easy", "ambiguous", "hard", "unlabeled")


@dataclass(frozen=True)
class Trajectory:
    """Per-epoch metric values for one example, higher is better."""

    example_id: str
    epochs: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.epochs) != len(self.values):
            raise ValueError("epochs and values must have equal length")
        if not self.epochs:
            raise ValueError("empty trajectory")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError(f"epochs must be strictly increasing: {self.epochs}")


@dataclass(frozen=True)
class DatamapPoint:
    example_id: str
    confidence: float
    variability: float
    region: str | None = None


@dataclass(frozen=True)
class RegionRule:
    """Rank-based split: ambiguous share of all points, then easy/hard shares of the rest."""

    ambiguous_fraction: float = 0.30
    easy_fraction_of_rest: float = 0.50
    hard_fraction_of_rest: float = 0.20

    def __post_init__(self) -> None:
        for name in ("ambiguous_fraction", "easy_fraction_of_rest", "hard_fraction_of_rest"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.easy_fraction_of_rest + self.hard_fraction_of_rest > 1.0:
            raise ValueError("easy and hard fractions of the rest must sum to <= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "RegionRule":
        import json

        obj = json.loads(Path(path).read_text())
        unknown = set(obj) - {"ambiguous_fraction", "easy_fraction_of_rest", "hard_fraction_of_rest"}
        if unknown:
            raise ValueError(f"unknown region rule keys: {sorted(unknown)}")
        return cls(**obj)


def confidence(traj: Trajectory) -> float:
    """Mean metric across retained epochs."""
    return float(np.mean(traj.values))


def variability(traj: Trajectory) -> float:
    """Population standard deviation of the metric across retained epochs."""
    return float(np.std(traj.values))


def ingest_metric_log(log_file: str | Path, discard_first_epoch: bool = True) -> list[Trajectory]:
    """Read a metric log CSV into one trajectory per example.

    Columns are example_id,epoch,metric,value with metric either delta_snr
    or snr_loss; loss values are negated so that higher always means better.
    Every example must cover the same epoch set.  With the discard flag the
    earliest epoch is dropped to skip initial training instability.
    """
    path = Path(log_file)
    rows: dict[str, dict[int, float]] = {}
    metrics_seen: set[str] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LOG_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            example_id, epoch_s, metric, value_s = row
            try:
                epoch = int(epoch_s)
                value = float(value_s)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if epoch < 1:
                raise ValueError(f"{path}:{lineno}: epoch must be >= 1, got {epoch}")
            if metric not in (METRIC_DELTA_SNR, METRIC_SNR_LOSS):
                raise ValueError(f"{path}:{lineno}: unknown metric {metric!r}")
            if not math.isfinite(value):
                raise ValueError(f"{path}:{lineno}: value must be finite")
            metrics_seen.add(metric)
            per_example = rows.setdefault(example_id, {})
            if epoch in per_example:
                raise ValueError(f"{path}: duplicate row for example {example_id!r} epoch {epoch}")
            per_example[epoch] = value if metric == METRIC_DELTA_SNR else -value

    if not rows:
        raise ValueError(f"{path}: no metric rows")
    if len(metrics_seen) > 1:
        raise ValueError(f"{path}: mixed metrics {sorted(metrics_seen)} in one log")

    epoch_sets = {example_id: frozenset(per.keys()) for example_id, per in rows.items()}
    reference = max(epoch_sets.values(), key=len)
    offenders = sorted(e for e, s in epoch_sets.items() if s != reference)
    if offenders:
        shown = ", ".join(offenders[:5])
        more = f" (+{len(offenders) - 5} more)" if len(offenders) > 5 else ""
        raise ValueError(f"{path}: examples with missing epochs: {shown}{more}")

    epochs = sorted(reference)
    if discard_first_epoch:
        if len(epochs) < 3:
            raise ValueError(f"{path}: need at least 3 epochs before the first-epoch discard, got {len(epochs)}")
        epochs = epochs[1:]
    elif len(epochs) < 2:
        raise ValueError(f"{path}: need at least 2 epochs, got {len(epochs)}")

    return [
        Trajectory(example_id, tuple(epochs), tuple(rows[example_id][e] for e in epochs))
        for example_id in sorted(rows)
    ]


def datamap_points(trajectories: list[Trajectory]) -> list[DatamapPoint]:
    """Confidence/variability statistics, regions unassigned."""
    return [
        DatamapPoint(t.example_id, confidence(t), variability(t)) for t in trajectories
    ]


def _exact_floor(fraction: float, n: int) -> int:
    # floor of the decimal the caller wrote, immune to binary rounding
    # (e.g. 0.29 * 100 == 28.999999999999996 must still floor to 29).
    return int(math.floor(Fraction(str(fraction)) * n))


def classify_regions(points: list[DatamapPoint], rule: RegionRule = RegionRule()) -> list[DatamapPoint]:
    """Assign a region to every point; returns new points sorted by example_id.

    Counts use floors of the rule fractions; rank ties are broken by
    ascending example_id, so the split is a pure function of the point set.
    """
    n = len(points)
    if n < 5:
        raise ValueError(f"insufficient examples for region split: {n} < 5")
    ids = [p.example_id for p in points]
    if len(set(ids)) != n:
        raise ValueError("duplicate example_id among datamap points")

    n_ambiguous = _exact_floor(rule.ambiguous_fraction, n)
    by_variability = sorted(points, key=lambda p: (-p.variability, p.example_id))
    ambiguous = by_variability[:n_ambiguous]
    rest = by_variability[n_ambiguous:]

    r = len(rest)
    n_easy = _exact_floor(rule.easy_fraction_of_rest, r)
    n_hard = _exact_floor(rule.hard_fraction_of_rest, r)
    by_confidence = sorted(rest, key=lambda p: (-p.confidence, p.example_id))
    easy = by_confidence[:n_easy]
    hard = by_confidence[r - n_hard :] if n_hard else []
    unlabeled = by_confidence[n_easy : r - n_hard]

    labeled: list[DatamapPoint] = []
    for group, region in ((ambiguous, "ambiguous"), (easy, "easy"), (hard, "hard"), (unlabeled, "unlabeled")):
        labeled.extend(replace(p, region=region) for p in group)
    return sorted(labeled, key=lambda p: p.example_id)


def build_datamap(trajectories: list[Trajectory], rule: RegionRule = RegionRule()) -> list[DatamapPoint]:
    """Statistics plus region assignment in one step."""
    return classify_regions(datamap_points(trajectories), rule)


def region_map(points: list[DatamapPoint]) -> dict[str, str]:
    """example_id -> region for classified points."""
    missing = [p.example_id for p in points if p.region is None]
    if missing:
        raise ValueError(f"points without regions: {missing[:5]}")
    return {p.example_id: p.region for p in points}  # type: ignore[misc]
