"""Datamap rendering: a standalone SVG scatter plus delimited companions.

The figure puts variability on the x axis and confidence on the y axis, one
marker per example colored by region.  Markers for each region live in an
SVG group with id ``datamap-points-<region>`` and the legend in a group with
id ``datamap-legend``; the exact axis ranges are embedded as JSON in the
SVG's Description metadata.  Those hooks keep the output machine-checkable.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dynamics import DatamapPoint

REGION_STYLE = {
    "easy": ("#3b7dd8", "o"),
    "ambiguous": ("#e08b3c", "^"),
    "hard": ("#c8443c", "v"),
    "unlabeled": ("#9a9a9a", "s"),
}

AXIS_PADDING = 0.05


def _padded_range(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    span = hi - lo
    pad = AXIS_PADDING * span if span > 0 else max(0.5, AXIS_PADDING * abs(lo))
    return lo - pad, hi + pad


def write_datamap_csv(points: list[DatamapPoint], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "confidence", "variability", "region"])
        for p in points:
            writer.writerow([p.example_id, repr(p.confidence), repr(p.variability), p.region or "unlabeled"])


def write_regions_csv(points: list[DatamapPoint], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "region"])
        for p in points:
            writer.writerow([p.example_id, p.region or "unlabeled"])


def read_regions_csv(path: str | Path) -> dict[str, str]:
    """example_id -> region, as written by write_regions_csv."""
    mapping: dict[str, str] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["example_id", "region"]:
            raise ValueError(f"{path}: expected header example_id,region")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected example_id,region")
            if row[0] in mapping:
                raise ValueError(f"{path}:{lineno}: duplicate example_id {row[0]!r}")
            mapping[row[0]] = row[1]
    if not mapping:
        raise ValueError(f"{path}: no region rows")
    return mapping


def render_datamap_svg(points: list[DatamapPoint], output_path: str | Path, title: str | None = None) -> None:
    """Write the scatter SVG and its companion CSV next to it.

    Text is kept as real <text> elements and the creation date is omitted,
    so repeated renders of the same points are byte-identical.
    """
    if not points:
        raise ValueError("no datamap points to render")
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    x_range = _padded_range([p.variability for p in points])
    y_range = _padded_range([p.confidence for p in points])

    with plt.rc_context({"svg.fonttype": "none", "svg.hashsalt": "datamap"}):
        fig, ax = plt.subplots(figsize=(7.0, 5.4))
        ax.patch.set_gid("datamap-plot-area")
        counts: dict[str, int] = {}
        for region, (color, marker) in REGION_STYLE.items():
            xs = [p.variability for p in points if (p.region or "unlabeled") == region]
            ys = [p.confidence for p in points if (p.region or "unlabeled") == region]
            counts[region] = len(xs)
            if not xs:
                continue
            # edgecolors='none' would defeat the SVG backend's def/use marker
            # reuse and break the one-<use>-per-point structure tests rely on
            coll = ax.scatter(xs, ys, s=22, c=color, marker=marker, alpha=0.85, linewidths=0.0, label=region)
            coll.set_gid(f"datamap-points-{region}")
        ax.set_xlim(*x_range)
        ax.set_ylim(*y_range)
        ax.set_xlabel("variability (dB)")
        ax.set_ylabel("confidence (dB)")
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3, linewidth=0.5)
        legend = ax.legend(loc="best", framealpha=0.9)
        legend.set_gid("datamap-legend")
        fig.tight_layout()
        description = json.dumps(
            {"x_range": list(x_range), "y_range": list(y_range), "region_counts": counts},
            sort_keys=True,
        )
        fig.savefig(output_path, format="svg", metadata={"Description": description, "Date": None})
        plt.close(fig)

    write_datamap_csv(points, output_path.with_suffix(".csv"))
