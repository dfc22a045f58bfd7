"""Factor-grid mixture synthesis: specs, placement, scaling, manifests.

A mixture combines one target utterance with K interfering utterances (and
optional noise).  Four factors control difficulty: SNR, interferer count,
overlap ratio, and interferer source (real or synthetic pools).  The overlap
ratio counts NON-overlap: 0 means the interferer is active for the whole
target, 1 means it never overlaps.  The silent span is contiguous and abuts
either the head or the tail of the target, so the realized ratio is exact to
the sample.

Interferers are positioned first, equalized to a common energy, summed with
any noise, and the sum is scaled to hit the requested SNR exactly.  If the
raw mixture would clip, all stems share one normalization gain, which leaves
every relative level (and therefore the SNR) untouched.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, energy, gain_for_snr, peak_normalize, read_wav, snr_db, write_wav
from .seeds import derive_seed, example_rng

SOURCE_TYPES = ("real", "syn", "real/syn")
PEAK_CEILING = 0.99
LOOP_CROSSFADE_SECONDS = 0.010

MANIFEST_NAME = "manifest.jsonl"


# ---------------------------------------------------------------------------
# factor grids and specs


@dataclass(frozen=True)
class FactorGrid:
    """Choice sets for the four mixture factors.

    SNR is either a discrete choice list or a continuous [low, high] range;
    exactly one of the two must be given.
    """

    snr_choices: tuple[float, ...] | None = None
    snr_range: tuple[float, float] | None = None
    overlap_choices: tuple[float, ...] = (0.0,)
    speaker_counts: tuple[int, ...] = (1,)
    source_types: tuple[str, ...] = ("real",)

    def __post_init__(self) -> None:
        if (self.snr_choices is None) == (self.snr_range is None):
            raise ValueError("give exactly one of snr_choices or snr_range")
        if self.snr_choices is not None:
            object.__setattr__(self, "snr_choices", tuple(float(v) for v in self.snr_choices))
            if not self.snr_choices:
                raise ValueError("snr_choices is empty")
        else:
            low, high = self.snr_range  # type: ignore[misc]
            if low > high:
                raise ValueError(f"snr_range low {low} > high {high}")
            object.__setattr__(self, "snr_range", (float(low), float(high)))
        object.__setattr__(self, "overlap_choices", tuple(float(v) for v in self.overlap_choices))
        object.__setattr__(self, "speaker_counts", tuple(int(k) for k in self.speaker_counts))
        object.__setattr__(self, "source_types", tuple(self.source_types))
        if not self.overlap_choices:
            raise ValueError("overlap_choices is empty")
        for r in self.overlap_choices:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"overlap ratio {r} outside [0, 1]")
        if not self.speaker_counts:
            raise ValueError("speaker_counts is empty")
        for k in self.speaker_counts:
            if k < 1:
                raise ValueError(f"speaker count {k} < 1")
        if not self.source_types:
            raise ValueError("source_types is empty")
        for s in self.source_types:
            if s not in SOURCE_TYPES:
                raise ValueError(f"unknown source type {s!r} (expected one of {SOURCE_TYPES})")

    @property
    def needs_syn_pool(self) -> bool:
        return any(s in ("syn", "real/syn") for s in self.source_types)

    @property
    def needs_real_pool(self) -> bool:
        return any(s in ("real", "real/syn") for s in self.source_types)

    @classmethod
    def from_json(cls, obj: dict) -> "FactorGrid":
        known = {"snr_choices", "snr_range", "overlap_choices", "speaker_counts", "source_types"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        kwargs = dict(obj)
        for key in ("snr_choices", "snr_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "FactorGrid":
        return cls.from_json(json.loads(Path(path).read_text()))


def builtin_grid(name: str) -> FactorGrid:
    """Load one of the packaged factor grids by name."""
    from importlib.resources import files

    resource = files("mixmap").joinpath(f"data/grids/{name}.json")
    if not resource.is_file():
        raise ValueError(f"unknown builtin grid {name!r} (available: {', '.join(builtin_grid_names())})")
    return FactorGrid.from_json(json.loads(resource.read_text()))


def builtin_grid_names() -> list[str]:
    from importlib.resources import files

    folder = files("mixmap").joinpath("data/grids")
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))


@dataclass(frozen=True)
class MixtureSpec:
    """Requested factor values for one mixture."""

    snr_db: float
    num_interferers: int
    overlap_ratio: float
    inter_source: str
    seed: int
    example_id: str

    def __post_init__(self) -> None:
        if self.num_interferers < 1:
            raise ValueError(f"num_interferers must be >= 1, got {self.num_interferers}")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError(f"overlap ratio {self.overlap_ratio} outside [0, 1]")
        if self.inter_source not in SOURCE_TYPES:
            raise ValueError(f"unknown source type {self.inter_source!r}")


def sample_spec(grid: FactorGrid, example_id: str, master_seed: int) -> MixtureSpec:
    """Draw one spec from the grid, each factor independently and uniformly.

    Deterministic in (master_seed, example_id): the factor stream and the
    per-example synthesis seed are both derived from that pair.
    """
    rng = example_rng(master_seed, example_id, "factors")
    if grid.snr_choices is not None:
        snr = grid.snr_choices[rng.integers(len(grid.snr_choices))]
    else:
        snr = float(rng.uniform(grid.snr_range[0], grid.snr_range[1]))
    overlap = grid.overlap_choices[rng.integers(len(grid.overlap_choices))]
    count = grid.speaker_counts[rng.integers(len(grid.speaker_counts))]
    source = grid.source_types[rng.integers(len(grid.source_types))]
    return MixtureSpec(
        snr_db=snr,
        num_interferers=count,
        overlap_ratio=overlap,
        inter_source=source,
        seed=derive_seed(master_seed, example_id, "synth"),
        example_id=example_id,
    )


def draw_interferer_sources(inter_source: str, count: int, rng: np.random.Generator) -> tuple[str, ...]:
    """Per-interferer pool tags: 'real/syn' flips a fair coin for each slot."""
    if inter_source == "real":
        return ("real",) * count
    if inter_source == "syn":
        return ("syn",) * count
    if inter_source == "real/syn":
        return tuple("real" if rng.integers(2) == 0 else "syn" for _ in range(count))
    raise ValueError(f"unknown source type {inter_source!r}")


# ---------------------------------------------------------------------------
# placement


@dataclass(frozen=True)
class PlacedTrack:
    """An interferer repositioned onto the target timeline.

    active_length == 0 flags the no-interference-energy case (overlap
    ratio 1), which callers must handle before computing any SNR.
    """

    track: AudioBuffer
    active_start: int
    active_length: int
    placement: str
    adaptation: str  # exact | trimmed | looped | empty

    @property
    def realized_overlap_ratio(self) -> float:
        return 1.0 - self.active_length / len(self.track)


def _loop_with_crossfade(samples: np.ndarray, span: int, fade: int) -> np.ndarray:
    """Tile a segment out to `span` samples, blending joins with a linear crossfade."""
    out = samples
    while out.size < span:
        f = min(fade, out.size, samples.size - 1)
        if f > 0:
            ramp = np.arange(1, f + 1, dtype=np.float64) / (f + 1)
            blended = out[-f:] * (1.0 - ramp) + samples[:f] * ramp
            out = np.concatenate([out[:-f], blended, samples[f:]])
        else:
            out = np.concatenate([out, samples])
    return out[:span]


def place_with_overlap(
    target_len: int,
    interferer: AudioBuffer,
    overlap_ratio: float,
    rng: np.random.Generator,
    placement: str | None = None,
) -> PlacedTrack:
    """Position an interferer so it is active over round((1-overlap_ratio)*target_len)
    contiguous samples and silent elsewhere.

    The active span abuts the head or the tail of the target; unspecified
    placement is drawn uniformly.  Interferers longer than the span are
    trimmed from a random offset, shorter ones are looped with a 10 ms
    linear crossfade.
    """
    if not 0.0 <= overlap_ratio <= 1.0:
        raise ValueError(f"overlap ratio {overlap_ratio} outside [0, 1]")
    if target_len <= 0:
        raise ValueError(f"target length must be positive, got {target_len}")
    if len(interferer) == 0:
        raise ValueError("empty signal")

    span = int(round((1.0 - overlap_ratio) * target_len))
    if span == 0:
        silent = AudioBuffer(np.zeros(target_len), interferer.sample_rate)
        return PlacedTrack(silent, active_start=0, active_length=0, placement="head", adaptation="empty")

    if placement is None:
        placement = "head" if rng.integers(2) == 0 else "tail"
    if placement not in ("head", "tail"):
        raise ValueError(f"placement must be 'head' or 'tail', got {placement!r}")

    src = interferer.samples
    if src.size > span:
        offset = int(rng.integers(0, src.size - span + 1))
        segment = src[offset : offset + span]
        adaptation = "trimmed"
    elif src.size == span:
        segment = src
        adaptation = "exact"
    else:
        fade = int(round(LOOP_CROSSFADE_SECONDS * interferer.sample_rate))
        segment = _loop_with_crossfade(src, span, fade)
        adaptation = "looped"

    track = np.zeros(target_len)
    start = 0 if placement == "head" else target_len - span
    track[start : start + span] = segment
    return PlacedTrack(
        AudioBuffer(track, interferer.sample_rate),
        active_start=start,
        active_length=span,
        placement=placement,
        adaptation=adaptation,
    )


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class InterfererEntry:
    """One interferer's manifest entry; placement details are in-memory only."""

    source: str
    path: str | None = None
    adaptation: str = "exact"
    active_start: int = 0
    active_length: int = 0


@dataclass(frozen=True)
class MixtureRecord:
    """A realized mixture: measured statistics plus the spec that requested it."""

    example_id: str
    spec: MixtureSpec
    realized_snr_db: float
    realized_overlap_ratio: float
    normalization_gain: float
    interferers: tuple[InterfererEntry, ...]
    mixture_path: str | None = None
    target_path: str | None = None
    enrollment_path: str | None = None
    union_active_fraction: float | None = None  # in-memory only; not serialized


@dataclass(frozen=True)
class SynthesisResult:
    """Everything synthesize produces, all stems post-normalization."""

    mixture: AudioBuffer
    interference_sum: AudioBuffer
    record: MixtureRecord
    target: AudioBuffer
    interferer_stems: tuple[AudioBuffer, ...]
    noise: AudioBuffer | None


def synthesize(
    spec: MixtureSpec,
    target: AudioBuffer,
    interferers: list[tuple[AudioBuffer, str]],
    noise: AudioBuffer | None = None,
) -> SynthesisResult:
    """Realize a spec: place, equalize, scale to SNR, sum, and normalize.

    Steps: each interferer is positioned per the overlap ratio; positioned
    tracks are equalized to their mean energy; noise (if any) is added; the
    whole interference sum is scaled to hit spec.snr_db exactly; the mixture
    is the sample-wise sum; if its peak exceeds 0.99 every stem is scaled by
    the same normalization gain.
    """
    if len(interferers) != spec.num_interferers:
        raise ValueError(f"expected {spec.num_interferers} interferers, got {len(interferers)}")
    if len(target) == 0:
        raise ValueError("empty signal")
    rng = np.random.default_rng(spec.seed)

    placed: list[PlacedTrack] = []
    for buf, source in interferers:
        if source not in ("real", "syn"):
            raise ValueError(f"interferer source tag must be 'real' or 'syn', got {source!r}")
        if buf.sample_rate != target.sample_rate:
            raise ValueError(f"sample rate mismatch: {buf.sample_rate} vs {target.sample_rate} Hz")
        placed.append(place_with_overlap(len(target), buf, spec.overlap_ratio, rng))

    energies = [float(np.dot(p.track.samples, p.track.samples)) for p in placed]
    if any(e == 0.0 for e in energies):
        raise ValueError("degenerate interferer: zero energy after placement")

    # Equal energy among interferers; the mean preserves the overall level so
    # optional noise keeps a meaningful relative weight before the SNR scaling.
    e_common = float(np.mean(energies))
    eq_gains = [np.sqrt(e_common / e) for e in energies]
    equalized = [p.track.samples * g for p, g in zip(placed, eq_gains)]

    interference = np.sum(equalized, axis=0)
    if noise is not None:
        if len(noise) != len(target) or noise.sample_rate != target.sample_rate:
            raise ValueError("noise must match the target's length and sample rate")
        interference = interference + noise.samples

    snr_gain = gain_for_snr(target, AudioBuffer(interference, target.sample_rate), spec.snr_db)
    scaled_sum = interference * snr_gain
    mixture = target.samples + scaled_sum

    peak = float(np.max(np.abs(mixture)))
    norm_gain = 1.0
    if peak > PEAK_CEILING:
        norm_gain = PEAK_CEILING / peak

    final_mixture = AudioBuffer(mixture * norm_gain, target.sample_rate)
    final_target = target.scaled(norm_gain) if norm_gain != 1.0 else target
    final_sum = AudioBuffer(scaled_sum * norm_gain, target.sample_rate)
    final_stems = tuple(
        AudioBuffer(eq * snr_gain * norm_gain, target.sample_rate) for eq in equalized
    )
    final_noise = (
        AudioBuffer(noise.samples * snr_gain * norm_gain, target.sample_rate) if noise is not None else None
    )

    realized_snr = snr_db(final_target, final_sum)
    per_ratio = [p.realized_overlap_ratio for p in placed]
    active = np.zeros(len(target), dtype=bool)
    for p in placed:
        active[p.active_start : p.active_start + p.active_length] = True

    record = MixtureRecord(
        example_id=spec.example_id,
        spec=spec,
        realized_snr_db=realized_snr,
        realized_overlap_ratio=float(np.mean(per_ratio)),
        normalization_gain=norm_gain,
        interferers=tuple(
            InterfererEntry(
                source=source,
                adaptation=p.adaptation,
                active_start=p.active_start,
                active_length=p.active_length,
            )
            for (_, source), p in zip(interferers, placed)
        ),
        union_active_fraction=float(np.mean(active)),
    )
    return SynthesisResult(
        mixture=final_mixture,
        interference_sum=final_sum,
        record=record,
        target=final_target,
        interferer_stems=final_stems,
        noise=final_noise,
    )


# ---------------------------------------------------------------------------
# pools and manifest building


@dataclass(frozen=True)
class UtterancePool:
    """Clean utterances grouped by speaker, in a canonical (sorted) order."""

    speakers: tuple[tuple[str, tuple[str, ...]], ...]

    def __len__(self) -> int:
        return len(self.speakers)

    @classmethod
    def from_file(cls, path: str | Path) -> "UtterancePool":
        """Parse `speaker_id<TAB>wav_path` lines; blank lines and # comments skipped."""
        groups: dict[str, list[str]] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'speaker_id<TAB>wav_path'")
            groups.setdefault(parts[0], []).append(parts[1])
        if not groups:
            raise ValueError(f"empty pool file: {path}")
        return cls(tuple((sid, tuple(paths)) for sid, paths in sorted(groups.items())))


def _pick_speaker(
    pool: UtterancePool, rng: np.random.Generator, exclude: set[str], pool_name: str
) -> tuple[str, tuple[str, ...]]:
    candidates = [entry for entry in pool.speakers if entry[0] not in exclude]
    if not candidates:
        raise ValueError(f"not enough distinct speakers in the {pool_name} pool")
    return candidates[int(rng.integers(len(candidates)))]


@dataclass(frozen=True)
class CastResult:
    """Speaker and utterance choices for one example, before any audio work."""

    target_speaker: str
    target_path: str
    enrollment_path: str
    interferers: tuple[tuple[str, str, str], ...]  # (speaker_id, wav_path, source)


def cast_example(
    spec: MixtureSpec,
    master_seed: int,
    target_pool: UtterancePool,
    real_pool: UtterancePool | None,
    syn_pool: UtterancePool | None,
) -> CastResult:
    """Draw speakers and utterances for a spec.

    The target speaker must have a second utterance for enrollment;
    interferer speakers are distinct from the target and from each other,
    across both pools.  Deterministic in (master_seed, spec.example_id).
    """
    rng = example_rng(master_seed, spec.example_id, "casting")
    pools = {"real": real_pool, "syn": syn_pool}

    sid, utterances = target_pool.speakers[int(rng.integers(len(target_pool)))]
    if len(utterances) < 2:
        raise ValueError(f"speaker {sid!r} lacks a second utterance for enrollment")
    t_idx = int(rng.integers(len(utterances)))
    e_idx = int(rng.integers(len(utterances) - 1))
    if e_idx >= t_idx:
        e_idx += 1

    used = {sid}
    chosen: list[tuple[str, str, str]] = []
    for source in draw_interferer_sources(spec.inter_source, spec.num_interferers, rng):
        pool = pools[source]
        if pool is None:
            raise ValueError(f"spec draws {source!r} interferers but no {source} pool was given")
        isid, iutts = _pick_speaker(pool, rng, used, source)
        used.add(isid)
        chosen.append((isid, iutts[int(rng.integers(len(iutts)))], source))

    return CastResult(
        target_speaker=sid,
        target_path=utterances[t_idx],
        enrollment_path=utterances[e_idx],
        interferers=tuple(chosen),
    )


_MANIFEST_KEYS = (
    "example_id",
    "mixture_path",
    "target_path",
    "enrollment_path",
    "interferers",
    "snr_db",
    "realized_snr_db",
    "overlap_ratio",
    "realized_overlap_ratio",
    "num_interferers",
    "inter_source",
    "normalization_gain",
    "seed",
)


def record_to_manifest_obj(record: MixtureRecord) -> dict:
    """Manifest line with the fixed key set, in fixed order."""
    return {
        "example_id": record.example_id,
        "mixture_path": record.mixture_path,
        "target_path": record.target_path,
        "enrollment_path": record.enrollment_path,
        "interferers": [{"path": e.path, "source": e.source} for e in record.interferers],
        "snr_db": record.spec.snr_db,
        "realized_snr_db": record.realized_snr_db,
        "overlap_ratio": record.spec.overlap_ratio,
        "realized_overlap_ratio": record.realized_overlap_ratio,
        "num_interferers": record.spec.num_interferers,
        "inter_source": record.spec.inter_source,
        "normalization_gain": record.normalization_gain,
        "seed": record.spec.seed,
    }


def record_from_manifest_obj(obj: dict) -> MixtureRecord:
    missing = [k for k in _MANIFEST_KEYS if k not in obj]
    if missing:
        raise ValueError(f"manifest record missing keys: {missing}")
    spec = MixtureSpec(
        snr_db=float(obj["snr_db"]),
        num_interferers=int(obj["num_interferers"]),
        overlap_ratio=float(obj["overlap_ratio"]),
        inter_source=obj["inter_source"],
        seed=int(obj["seed"]),
        example_id=obj["example_id"],
    )
    return MixtureRecord(
        example_id=obj["example_id"],
        spec=spec,
        realized_snr_db=float(obj["realized_snr_db"]),
        realized_overlap_ratio=float(obj["realized_overlap_ratio"]),
        normalization_gain=float(obj["normalization_gain"]),
        interferers=tuple(InterfererEntry(source=e["source"], path=e["path"]) for e in obj["interferers"]),
        mixture_path=obj["mixture_path"],
        target_path=obj["target_path"],
        enrollment_path=obj["enrollment_path"],
    )


def write_manifest(records: list[MixtureRecord], path: str | Path) -> None:
    lines = [json.dumps(record_to_manifest_obj(r), separators=(",", ":")) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path: str | Path) -> list[MixtureRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_manifest_obj(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed manifest line: {exc}") from exc
    return records


def build_manifest(
    target_pool: UtterancePool,
    real_pool: UtterancePool | None,
    syn_pool: UtterancePool | None,
    grid: FactorGrid,
    count: int,
    master_seed: int,
    out_dir: str | Path,
    encoding: str = "float32",
    jobs: int = 1,
) -> list[MixtureRecord]:
    """Generate `count` mixtures under out_dir and write a JSONL manifest.

    Per example: a target speaker is drawn (erroring if it lacks a second
    utterance for enrollment), interferer speakers are drawn distinct from
    the target and from each other across both pools, then the spec from
    sample_spec is synthesized and the stems written as WAV files.  The
    enrollment utterance is copied verbatim.  Output is deterministic in
    (master_seed, pools, grid, count), independent of `jobs`.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if 1.0 in grid.overlap_choices:
        raise ValueError("grid admits overlap ratio 1, which has no interference energy (SNR undefined)")
    if grid.needs_real_pool and (real_pool is None or len(real_pool) == 0):
        raise ValueError("grid draws real interferers but no real pool was given")
    if grid.needs_syn_pool and (syn_pool is None or len(syn_pool) == 0):
        raise ValueError("grid draws synthetic interferers but no syn pool was given")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache: dict[str, AudioBuffer] = {}

    def load(path: str) -> AudioBuffer:
        buf = cache.get(path)
        if buf is None:
            buf = read_wav(path)
            cache[path] = buf
        return buf

    def build_one(index: int) -> MixtureRecord:
        example_id = f"ex{index:06d}"
        spec = sample_spec(grid, example_id, master_seed)
        cast = cast_example(spec, master_seed, target_pool, real_pool, syn_pool)

        interferers = [(load(path), source) for _, path, source in cast.interferers]
        target = load(cast.target_path)
        result = synthesize(spec, target, interferers)

        ex_dir = out / example_id
        ex_dir.mkdir(exist_ok=True)
        write_wav(ex_dir / "mixture.wav", result.mixture, encoding)
        write_wav(ex_dir / "target.wav", result.target, encoding)
        (ex_dir / "enrollment.wav").write_bytes(Path(cast.enrollment_path).read_bytes())
        entries = []
        for k, (stem, entry) in enumerate(zip(result.interferer_stems, result.record.interferers), start=1):
            stem_rel = f"{example_id}/interferer{k:02d}.wav"
            write_wav(out / stem_rel, stem, encoding)
            entries.append(dataclasses.replace(entry, path=stem_rel))
        return dataclasses.replace(
            result.record,
            mixture_path=f"{example_id}/mixture.wav",
            target_path=f"{example_id}/target.wav",
            enrollment_path=f"{example_id}/enrollment.wav",
            interferers=tuple(entries),
        )

    if count == 0:
        records: list[MixtureRecord] = []
    elif jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            records = list(pool_exec.map(build_one, range(count)))
    else:
        records = [build_one(i) for i in range(count)]

    write_manifest(records, out / MANIFEST_NAME)
    return records
