"""Curriculum schedules: factor-stage curricula, region orderings with
retention, fixed-quantity region sampling, and stage manifest emission.

Two curriculum families share one manifest format.  Factor curricula list
stages of mixture-factor settings ([num_speakers, snr_low, snr_high,
overlap_ratio, inter_source]); region curricula order the datamap regions
(easy / ambiguous / hard) and either accumulate stages or forget them.
Stage manifests are plain example-id lines with an optional #filter header
carrying the stage's factor settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .mixtures import SOURCE_TYPES, MixtureRecord
from .seeds import derive_seed

CORE_REGIONS = ("easy", "ambiguous", "hard")
RETENTIONS = ("cumulative", "forgetting")
UNLABELED_POLICIES = ("never", "final_stage", "always")

TARGET_SHARE = Fraction(70, 100)  # fixed-quantity split: 70% target,
OTHER_SHARE = Fraction(15, 100)  # 15% to each of the other two regions

_ORDER_LETTERS = {"E": "easy", "A": "ambiguous", "H": "hard"}


# ---------------------------------------------------------------------------
# factor curricula


@dataclass(frozen=True)
class StageSpec:
    """One curriculum stage's factor settings and epoch budget."""

    num_speakers: int
    snr_low: float
    snr_high: float
    overlap_ratio: float
    inter_source: str
    epoch_budget: int = 0


@dataclass(frozen=True)
class Curriculum:
    name: str
    stages: tuple[StageSpec, ...]

    @classmethod
    def from_json(cls, obj: dict) -> "Curriculum":
        if "stages" not in obj:
            raise ValueError("curriculum config needs a 'stages' list")
        stages = []
        for i, stage in enumerate(obj["stages"]):
            known = {"num_speakers", "snr_low", "snr_high", "overlap_ratio", "inter_source", "epoch_budget"}
            unknown = set(stage) - known
            if unknown:
                raise ValueError(f"stage {i}: unknown keys {sorted(unknown)}")
            missing = known - {"epoch_budget"} - set(stage)
            if missing:
                raise ValueError(f"stage {i}: missing keys {sorted(missing)}")
            stages.append(
                StageSpec(
                    num_speakers=int(stage["num_speakers"]),
                    snr_low=float(stage["snr_low"]),
                    snr_high=float(stage["snr_high"]),
                    overlap_ratio=float(stage["overlap_ratio"]),
                    inter_source=stage["inter_source"],
                    epoch_budget=int(stage.get("epoch_budget", 0)),
                )
            )
        return cls(name=obj.get("name", "curriculum"), stages=tuple(stages))

    @classmethod
    def from_file(cls, path: str | Path) -> "Curriculum":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "stages": [
                {
                    "num_speakers": s.num_speakers,
                    "snr_low": s.snr_low,
                    "snr_high": s.snr_high,
                    "overlap_ratio": s.overlap_ratio,
                    "inter_source": s.inter_source,
                    "epoch_budget": s.epoch_budget,
                }
                for s in self.stages
            ],
        }


@dataclass(frozen=True)
class Violation:
    stage: int | None
    field: str
    message: str


def validate_curriculum(curriculum: Curriculum) -> list[Violation]:
    """Check every stage invariant; an empty list means the curriculum is valid."""
    violations: list[Violation] = []
    if not curriculum.stages:
        return [Violation(None, "stages", "no stages")]
    for i, s in enumerate(curriculum.stages):
        if s.num_speakers < 1:
            violations.append(Violation(i, "num_speakers", f"must be >= 1, got {s.num_speakers}"))
        if s.snr_low > s.snr_high:
            violations.append(Violation(i, "snr_low", f"snr_low {s.snr_low} > snr_high {s.snr_high}"))
        if not 0.0 <= s.overlap_ratio <= 1.0:
            violations.append(Violation(i, "overlap_ratio", f"{s.overlap_ratio} outside [0, 1]"))
        if s.inter_source not in SOURCE_TYPES:
            violations.append(Violation(i, "inter_source", f"unknown source type {s.inter_source!r}"))
        if s.epoch_budget < 0:
            violations.append(Violation(i, "epoch_budget", f"must be >= 0, got {s.epoch_budget}"))
    return violations


def builtin_curriculum(name: str) -> Curriculum:
    """Load one of the packaged curriculum configs by name."""
    from importlib.resources import files

    resource = files("mixmap").joinpath(f"data/curricula/{name}.json")
    if not resource.is_file():
        raise ValueError(f"unknown builtin curriculum {name!r} (available: {', '.join(builtin_curriculum_names())})")
    return Curriculum.from_json(json.loads(resource.read_text()))


def builtin_curriculum_names() -> list[str]:
    from importlib.resources import files

    folder = files("mixmap").joinpath("data/curricula")
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# region schedules


@dataclass(frozen=True)
class RegionSchedule:
    """A permutation of the three datamap regions plus a retention policy."""

    ordering: tuple[str, str, str]
    retention: str = "cumulative"
    include_unlabeled: str = "never"

    def __post_init__(self) -> None:
        if sorted(self.ordering) != sorted(CORE_REGIONS):
            raise ValueError(f"ordering must be a permutation of {CORE_REGIONS}, got {self.ordering}")
        if self.retention not in RETENTIONS:
            raise ValueError(f"retention must be one of {RETENTIONS}, got {self.retention!r}")
        if self.include_unlabeled not in UNLABELED_POLICIES:
            raise ValueError(f"include_unlabeled must be one of {UNLABELED_POLICIES}, got {self.include_unlabeled!r}")

    @property
    def label(self) -> str:
        return "/".join(r[0].upper() for r in self.ordering)


def parse_ordering(text: str) -> tuple[str, str, str]:
    """Accept 'E/A/H' letters or full region names, slash separated."""
    parts = [p.strip() for p in text.split("/")]
    if len(parts) != 3:
        raise ValueError(f"ordering must have 3 stages, got {text!r}")
    resolved = []
    for p in parts:
        if p.upper() in _ORDER_LETTERS:
            resolved.append(_ORDER_LETTERS[p.upper()])
        elif p.lower() in CORE_REGIONS:
            resolved.append(p.lower())
        else:
            raise ValueError(f"unknown region {p!r} in ordering {text!r}")
    return tuple(resolved)  # type: ignore[return-value]


def stage_pool(schedule: RegionSchedule, stage_index: int, region_map: dict[str, str]) -> set[str]:
    """Example ids available to one stage.

    Forgetting keeps only the stage's own region; cumulative keeps the union
    of all regions up to and including it.  Unlabeled examples join per the
    include_unlabeled policy.
    """
    if not 0 <= stage_index < len(schedule.ordering):
        raise ValueError(f"stage index {stage_index} outside 0..{len(schedule.ordering) - 1}")
    known = set(CORE_REGIONS) | {"unlabeled"}
    bad = {r for r in region_map.values() if r not in known}
    if bad:
        raise ValueError(f"unknown region labels in map: {sorted(bad)}")

    if schedule.retention == "forgetting":
        wanted = {schedule.ordering[stage_index]}
    else:
        wanted = set(schedule.ordering[: stage_index + 1])
    if schedule.include_unlabeled == "always" or (
        schedule.include_unlabeled == "final_stage" and stage_index == len(schedule.ordering) - 1
    ):
        wanted.add("unlabeled")
    return {example_id for example_id, region in region_map.items() if region in wanted}


# ---------------------------------------------------------------------------
# fixed-quantity sampling plans


@dataclass(frozen=True)
class SamplingPlan:
    """Per-region draw counts for one training run; counts sum to the budget."""

    target: str
    budget: int
    counts: tuple[tuple[str, int], ...]

    def count(self, region: str) -> int:
        return dict(self.counts).get(region, 0)


def fixed_quantity_plan(region_counts: dict[str, int], target_region: str, total_budget: int) -> SamplingPlan:
    """Split a budget 70% to the target region and 15% to each other region.

    Floor remainders (at most 2 examples) go to the target.  target 'all'
    means a uniform draw over everything, with no per-region constraint.
    A region with fewer examples than its share is an error, never a silent
    rebalance.
    """
    if total_budget < 0:
        raise ValueError(f"budget must be >= 0, got {total_budget}")
    available_total = sum(region_counts.values())
    if total_budget > available_total:
        raise ValueError(f"budget {total_budget} exceeds the {available_total} available examples")

    if target_region == "all":
        counts = {"all": total_budget}
    elif target_region in CORE_REGIONS:
        others = [r for r in CORE_REGIONS if r != target_region]
        n_target = int(math.floor(TARGET_SHARE * total_budget))
        n_other = int(math.floor(OTHER_SHARE * total_budget))
        n_target += total_budget - n_target - 2 * n_other  # remainder to the target
        counts = {target_region: n_target, others[0]: n_other, others[1]: n_other}
        for region, needed in counts.items():
            have = region_counts.get(region, 0)
            if needed > have:
                raise ValueError(f"region {region!r} short by {needed - have} examples (need {needed}, have {have})")
    else:
        raise ValueError(f"target region must be one of {CORE_REGIONS + ('all',)}, got {target_region!r}")

    ordered = tuple((r, counts[r]) for r in sorted(counts))
    return SamplingPlan(target=target_region, budget=total_budget, counts=ordered)


def draw_plan(plan: SamplingPlan, region_map: dict[str, str], seed: int) -> list[str]:
    """Materialize a plan as a sorted list of example ids, deterministic in the seed."""
    selected: list[str] = []
    for region, count in plan.counts:
        if region == "all":
            pool = sorted(region_map)
        else:
            pool = sorted(e for e, r in region_map.items() if r == region)
        if count > len(pool):
            raise ValueError(f"region {region!r} short by {count - len(pool)} examples (need {count}, have {len(pool)})")
        rng = np.random.default_rng(derive_seed(seed, region, "plan"))
        picks = rng.choice(len(pool), size=count, replace=False)
        selected.extend(pool[i] for i in picks)
    return sorted(selected)


# ---------------------------------------------------------------------------
# epoch budgets and manifest emission


def epoch_schedule(total_epochs: int, num_stages: int) -> tuple[int, ...]:
    """Split epochs as evenly as possible, earlier stages taking the extras."""
    if num_stages < 1:
        raise ValueError(f"num_stages must be >= 1, got {num_stages}")
    if total_epochs < num_stages:
        raise ValueError(f"total epochs {total_epochs} < stages {num_stages}")
    base, extra = divmod(total_epochs, num_stages)
    return tuple(base + 1 if i < extra else base for i in range(num_stages))


def assign_epoch_budgets(curriculum: Curriculum, total_epochs: int) -> Curriculum:
    """Return a copy with equal-split epoch budgets."""
    import dataclasses

    budgets = epoch_schedule(total_epochs, len(curriculum.stages))
    stages = tuple(
        dataclasses.replace(s, epoch_budget=b) for s, b in zip(curriculum.stages, budgets)
    )
    return Curriculum(curriculum.name, stages)


def stage_filter(stage: StageSpec) -> dict:
    return {
        "num_speakers": stage.num_speakers,
        "snr_low": stage.snr_low,
        "snr_high": stage.snr_high,
        "overlap_ratio": stage.overlap_ratio,
        "inter_source": stage.inter_source,
    }


def record_matches_stage(record: MixtureRecord, stage: StageSpec) -> bool:
    spec = record.spec
    return (
        spec.num_interferers == stage.num_speakers
        and stage.snr_low <= spec.snr_db <= stage.snr_high
        and spec.overlap_ratio == stage.overlap_ratio
        and spec.inter_source == stage.inter_source
    )


def _write_stage_manifest(path: Path, example_ids: list[str], filter_obj: dict | None) -> None:
    lines = []
    if filter_obj is not None:
        lines.append("#filter " + json.dumps(filter_obj, sort_keys=True))
    lines.extend(example_ids)
    path.write_text("".join(line + "\n" for line in lines))


def read_stage_manifest(path: str | Path) -> tuple[list[str], dict | None]:
    """Example ids plus the optional #filter header."""
    filter_obj = None
    ids = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#filter "):
            filter_obj = json.loads(line[len("#filter ") :])
        elif not line.startswith("#"):
            ids.append(line)
    return ids, filter_obj


def emit_region_stage_manifests(
    schedule: RegionSchedule,
    region_map: dict[str, str],
    total_epochs: int,
    out_dir: str | Path,
    name: str = "region-schedule",
) -> dict:
    """One manifest per region stage plus a run descriptor; fails on empty stages."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    budgets = epoch_schedule(total_epochs, len(schedule.ordering))
    stage_files = []
    for i, region in enumerate(schedule.ordering):
        pool = stage_pool(schedule, i, region_map)
        if not pool:
            raise ValueError(f"stage {i} ({region}) has no examples")
        fname = f"stage{i}.txt"
        _write_stage_manifest(out / fname, sorted(pool), None)
        stage_files.append({"file": fname, "region": region, "examples": len(pool), "epoch_budget": budgets[i]})
    descriptor = {
        "name": name,
        "mode": "regions",
        "ordering": list(schedule.ordering),
        "retention": schedule.retention,
        "include_unlabeled": schedule.include_unlabeled,
        "total_epochs": total_epochs,
        "epoch_budgets": list(budgets),
        "stages": stage_files,
        "seed": None,
    }
    (out / "run.json").write_text(json.dumps(descriptor, indent=2, sort_keys=True) + "\n")
    return descriptor


def emit_curriculum_manifests(
    curriculum: Curriculum,
    out_dir: str | Path,
    pool_records: list[MixtureRecord] | None = None,
    total_epochs: int | None = None,
) -> dict:
    """Per-stage factor filters (and matching pool ids, when a pool is given)."""
    violations = validate_curriculum(curriculum)
    if violations:
        first = violations[0]
        raise ValueError(f"invalid curriculum: stage {first.stage} {first.field}: {first.message}")
    if total_epochs is not None:
        curriculum = assign_epoch_budgets(curriculum, total_epochs)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_files = []
    for i, stage in enumerate(curriculum.stages):
        if pool_records is not None:
            ids = sorted(r.example_id for r in pool_records if record_matches_stage(r, stage))
            if not ids:
                raise ValueError(f"stage {i} has no matching examples in the pool")
        else:
            ids = []
        fname = f"stage{i}.txt"
        _write_stage_manifest(out / fname, ids, stage_filter(stage))
        stage_files.append(
            {"file": fname, "filter": stage_filter(stage), "examples": len(ids), "epoch_budget": stage.epoch_budget}
        )
    descriptor = {
        "name": curriculum.name,
        "mode": "curriculum",
        "total_epochs": total_epochs,
        "epoch_budgets": [s.epoch_budget for s in curriculum.stages],
        "stages": stage_files,
        "seed": None,
    }
    (out / "run.json").write_text(json.dumps(descriptor, indent=2, sort_keys=True) + "\n")
    return descriptor
