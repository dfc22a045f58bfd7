"""mixmap: factor-controlled speech mixture synthesis, training-dynamics
datamaps, and curriculum sampling schedules."""

from .audio import AudioBuffer, energy, gain_for_snr, peak_normalize, read_wav, snr_db, write_wav
from .curriculum import (
    Curriculum,
    RegionSchedule,
    SamplingPlan,
    StageSpec,
    builtin_curriculum,
    draw_plan,
    epoch_schedule,
    fixed_quantity_plan,
    stage_pool,
    validate_curriculum,
)
from .dynamics import (
    DatamapPoint,
    RegionRule,
    Trajectory,
    build_datamap,
    classify_regions,
    confidence,
    ingest_metric_log,
    variability,
)
from .harness import LearnerParams, OracleExtractor, oracle_extract, simulate_trajectories
from .metrics import EvalResult, evaluate_manifest, isdr_db, sdr_db, snr_loss
from .mixtures import (
    FactorGrid,
    MixtureRecord,
    MixtureSpec,
    UtterancePool,
    build_manifest,
    builtin_grid,
    place_with_overlap,
    read_manifest,
    sample_spec,
    synthesize,
    write_manifest,
)
from .report import render_datamap_svg, write_regions_csv

__version__ = "0.1.0"
