from __future__ import annotations

import numpy as np
import pytest

from mixmap.audio import AudioBuffer, write_wav
from mixmap.mixtures import UtterancePool


def make_utterance(rng: np.random.Generator, n: int, rate: int = 8000, peak: float = 0.5) -> AudioBuffer:
    """Speech-like test signal: a few harmonics under a slow envelope plus a noise floor."""
    t = np.arange(n) / rate
    f0 = rng.uniform(90.0, 280.0)
    x = np.zeros(n)
    for h in range(1, 4):
        x += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
    x += 0.01 * rng.standard_normal(n)
    return AudioBuffer(x * (peak / np.max(np.abs(x))), rate)


def scaled_to_energy(buf: AudioBuffer, target_energy: float) -> AudioBuffer:
    e = float(np.dot(buf.samples, buf.samples))
    return AudioBuffer(buf.samples * np.sqrt(target_energy / e), buf.sample_rate)


def write_pool(base_dir, name, speakers, rng, rate=8000, length_range=(3200, 7200)):
    """Write `speakers` as {speaker_id: n_utterances}; returns the pool TSV path."""
    pool_dir = base_dir / name
    pool_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for sid, n_utts in speakers.items():
        for u in range(n_utts):
            n = int(rng.integers(*length_range))
            path = pool_dir / f"{sid}_{u}.wav"
            write_wav(path, make_utterance(rng, n, rate=rate), "float32")
            lines.append(f"{sid}\t{path}")
    tsv = base_dir / f"{name}.tsv"
    tsv.write_text("".join(line + "\n" for line in lines))
    return tsv


@pytest.fixture(scope="session")
def pool_files(tmp_path_factory):
    """Small target/real/syn pools shared across tests."""
    base = tmp_path_factory.mktemp("pools")
    rng = np.random.default_rng(20240811)
    targets = write_pool(base, "targets", {f"tgt{i:02d}": 3 for i in range(4)}, rng)
    real = write_pool(base, "real", {f"real{i:02d}": 2 for i in range(6)}, rng)
    syn = write_pool(base, "syn", {f"syn{i:02d}": 2 for i in range(5)}, rng)
    return {"target": targets, "real": real, "syn": syn}


@pytest.fixture(scope="session")
def pools(pool_files):
    return {role: UtterancePool.from_file(path) for role, path in pool_files.items()}
