"""Paired clean/noisy utterances: synthetic generation, WAV I/O, manifests.

Manifest CSV (UTF-8)::

    id,clean,noisy,snr_db,split

Paths are relative to the manifest's directory. ``split`` is optional when
reading (records without it are tagged ``test``); ``snr_db`` may be empty
for real recordings whose mixing SNR is unknown.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.io import wavfile

from coldse.errors import (
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    InvalidParameterError,
    ShapeError,
)

PathLike = Union[str, os.PathLike]
SeedLike = Union[int, Sequence[int]]

SPLITS = ("train", "valid", "test")
NOISE_KINDS = ("white", "pink", "tonal-babble")
TRAIN_SNRS = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS = (2.5, 7.5, 12.5, 17.5)


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"signals are mono 1-D arrays, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidParameterError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DegenerateInputError("signal contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class UtterancePair:
    clean: Signal
    noisy: Signal
    id: str = ""
    snr_db: Optional[float] = None

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise ShapeError(f"{self.id}: clean/noisy lengths differ ({len(self.clean)} vs {len(self.noisy)})")
        if self.clean.sample_rate != self.noisy.sample_rate:
            raise ShapeError(f"{self.id}: clean/noisy sample rates differ")

    @property
    def sample_rate(self) -> int:
        return self.clean.sample_rate


def _n_samples(duration: float, sample_rate: int) -> int:
    if not duration > 0:
        raise InvalidParameterError(f"duration must be positive, got {duration}")
    if sample_rate <= 0:
        raise InvalidParameterError(f"sample_rate must be positive, got {sample_rate}")
    return max(1, int(round(duration * sample_rate)))


def _smooth_random(rng: np.random.Generator, n: int, n_knots: int) -> np.ndarray:
    """Random curve in [0, 1] through ``n_knots`` control points, cosine-interpolated."""
    knots = rng.random(n_knots)
    pos = np.linspace(0, n_knots - 1, n)
    i = np.minimum(pos.astype(int), n_knots - 2)
    frac = pos - i
    w = 0.5 - 0.5 * np.cos(np.pi * frac)
    return knots[i] * (1 - w) + knots[i + 1] * w


def synth_clean(seed: SeedLike, duration: float = 1.0, sample_rate: int = 8000) -> Signal:
    """Speech-like test signal.

    A sum of 3-8 harmonics of a slowly drifting fundamental (80-300 Hz), under
    a smooth random envelope with silent gaps, peak-normalised to 0.5.
    """
    n = _n_samples(duration, sample_rate)
    rng = np.random.default_rng(seed)
    n_harm = int(rng.integers(3, 9))
    f_lo = rng.uniform(80.0, 200.0)
    f_hi = min(300.0, f_lo * rng.uniform(1.1, 1.5))
    knots = max(2, int(math.ceil(duration * 4)) + 1)
    f0 = f_lo + (f_hi - f_lo) * _smooth_random(rng, n, knots)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    amps = rng.uniform(0.3, 1.0, n_harm) / np.arange(1, n_harm + 1)
    offsets = rng.uniform(0, 2 * np.pi, n_harm)
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        if k * f_hi >= sample_rate / 2:
            break
        x += amps[k - 1] * np.sin(k * phase + offsets[k - 1])

    env_knots = max(2, int(math.ceil(duration * 8)) + 1)
    env = 0.2 + 0.8 * _smooth_random(rng, n, env_knots)
    # silent gaps with 10 ms raised-cosine edges
    gate = np.ones(n)
    ramp = max(1, int(0.01 * sample_rate))
    n_gaps = int(rng.integers(1, 3))
    for _ in range(n_gaps):
        glen = int(n * rng.uniform(0.05, 0.15))
        if glen < 2 * ramp + 1 or glen >= n:
            continue
        start = int(rng.integers(0, n - glen))
        g = np.zeros(glen)
        edge = 0.5 + 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        g[:ramp] = edge
        g[-ramp:] = edge[::-1]
        gate[start : start + glen] = np.minimum(gate[start : start + glen], g)
    x = x * env * gate
    peak = np.max(np.abs(x))
    if peak == 0:
        raise DegenerateInputError("synthesised a silent signal")
    return Signal(0.5 * x / peak, sample_rate)


def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    if rms == 0:
        raise DegenerateInputError("noise generator produced silence")
    return x / rms


def synth_noise(kind: str, seed: SeedLike, duration: float = 1.0, sample_rate: int = 8000) -> Signal:
    """Unit-RMS noise: ``white``, ``pink`` (-3 dB/octave) or ``tonal-babble``."""
    if kind not in NOISE_KINDS:
        raise ConfigurationError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    n = _n_samples(duration, sample_rate)
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.uniform(-1.0, 1.0, n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.uniform(-1.0, 1.0, n))
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        scale = np.zeros_like(freqs)
        scale[1:] = 1.0 / np.sqrt(freqs[1:])
        x = np.fft.irfft(spec * scale, n)
    else:
        t = np.arange(n) / sample_rate
        n_tones = 40
        freqs = rng.uniform(100.0, min(3500.0, 0.45 * sample_rate), n_tones)
        phases = rng.uniform(0, 2 * np.pi, n_tones)
        am_rate = rng.uniform(0.5, 4.0, n_tones)
        am_phase = rng.uniform(0, 2 * np.pi, n_tones)
        amps = rng.uniform(0.2, 1.0, n_tones)
        x = np.zeros(n)
        for a, f, p, r, q in zip(amps, freqs, phases, am_rate, am_phase):
            x += a * (0.6 + 0.4 * np.sin(2 * np.pi * r * t + q)) * np.sin(2 * np.pi * f * t + p)
    return Signal(_unit_rms(x), sample_rate)


def noise_gain(clean, noise, snr_db: float) -> float:
    """Gain ``g`` so that ``clean`` over ``g * noise`` has the requested SNR."""
    c = np.asarray(clean, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    pc = float(np.mean(c * c))
    pn = float(np.mean(n * n))
    if math.sqrt(pc) <= 1e-9:
        raise DegenerateInputError("clean signal is silent")
    if math.sqrt(pn) <= 1e-9:
        raise DegenerateInputError("noise signal is silent")
    return math.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(clean: Signal, noise: Signal, snr_db: float, id: str = "") -> UtterancePair:
    if len(clean) != len(noise):
        raise ShapeError(f"clean and noise lengths differ ({len(clean)} vs {len(noise)})")
    if clean.sample_rate != noise.sample_rate:
        raise ShapeError("clean and noise sample rates differ")
    g = noise_gain(clean.samples, noise.samples, snr_db)
    noisy = Signal(clean.samples + g * noise.samples, clean.sample_rate)
    return UtterancePair(clean, noisy, id=id, snr_db=float(snr_db))


# -- WAV ------------------------------------------------------------------


def read_wav(path: PathLike) -> Signal:
    """Read a mono PCM16 or float32 WAV file."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise FormatError(f"{path}: malformed WAV header: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: channels={data.shape[1]} unsupported (mono only)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: encoding={data.dtype} unsupported (PCM16 or float32 only)")
    return Signal(samples, int(rate))


def write_wav(path: PathLike, signal: Signal, encoding: str = "float32") -> None:
    x = np.asarray(signal.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError(f"{path}: refusing to write non-finite samples")
    if encoding == "float32":
        data = x.astype(np.float32)
    elif encoding == "pcm16":
        data = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype(np.int16)
    else:
        raise InvalidParameterError(f"unknown WAV encoding {encoding!r}")
    wavfile.write(path, int(signal.sample_rate), data)


# -- manifests ------------------------------------------------------------

MANIFEST_FIELDS = ("id", "clean", "noisy", "snr_db", "split")


@dataclass
class ManifestRecord:
    id: str
    clean: str
    noisy: str
    snr_db: Optional[float]
    split: str = "test"


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise FormatError(f"duplicate utterance id {r.id!r} in manifest")
            seen.add(r.id)
            if r.split not in SPLITS:
                raise FormatError(f"record {r.id!r}: unknown split {r.split!r}")

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if r.split == name], self.root)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def check_files(self) -> None:
        for r in self.records:
            for rel in (r.clean, r.noisy):
                if not self.resolve(rel).is_file():
                    raise ConfigurationError(f"record {r.id!r}: missing file {self.resolve(rel)}")

    def load_pairs(self) -> List[UtterancePair]:
        self.check_files()
        return [
            UtterancePair(read_wav(self.resolve(r.clean)), read_wav(self.resolve(r.noisy)), r.id, r.snr_db)
            for r in self.records
        ]


def write_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in manifest.records:
            snr = "" if r.snr_db is None else repr(float(r.snr_db))
            writer.writerow([r.id, r.clean, r.noisy, snr, r.split])


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"manifest {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "clean", "noisy", "snr_db"} - set(reader.fieldnames or ())
        if missing:
            raise FormatError(f"{path}: manifest header lacks {sorted(missing)}")
        records = []
        for row in reader:
            snr = row["snr_db"].strip()
            records.append(
                ManifestRecord(
                    id=row["id"],
                    clean=row["clean"],
                    noisy=row["noisy"],
                    snr_db=float(snr) if snr else None,
                    split=(row.get("split") or "test").strip(),
                )
            )
    return DatasetManifest(records, path.parent)


# -- synthetic corpus ------------------------------------------------------

_SPLIT_OFFSET = {"train": 0, "valid": 1_000_000, "test": 2_000_000}


@dataclass
class SynthConfig:
    counts: Dict[str, int] = field(default_factory=lambda: {"train": 200, "valid": 20, "test": 40})
    duration_s: float = 1.0
    sample_rate: int = 8000
    snr_grid: Dict[str, List[float]] = field(
        default_factory=lambda: {"train": list(TRAIN_SNRS), "test": list(TEST_SNRS)}
    )
    noise_kinds: List[str] = field(default_factory=lambda: list(NOISE_KINDS))
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - {"counts", "duration_s", "sample_rate", "snr_grid", "noise_kinds", "seed"}
        if unknown:
            raise ConfigurationError(f"unknown generator config keys {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: PathLike) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        for k, v in self.counts.items():
            if k not in SPLITS or int(v) < 0:
                raise ConfigurationError(f"bad count {k}={v}")
        for k in self.noise_kinds:
            if k not in NOISE_KINDS:
                raise ConfigurationError(f"unknown noise kind {k!r}")
        if not self.noise_kinds:
            raise ConfigurationError("noise_kinds is empty")
        _n_samples(self.duration_s, self.sample_rate)

    def grid_for(self, split: str) -> List[float]:
        key = "test" if split == "test" else "train"
        grid = self.snr_grid.get(key) or (TEST_SNRS if key == "test" else TRAIN_SNRS)
        return list(grid)

    def to_dict(self) -> dict:
        return asdict(self)


def utterance_seeds(seed: int, split: str, index: int):
    """Seeds for the clean and noise generators of one utterance.

    Each split owns a disjoint index range, so no (clean, noise) seed pair is
    shared between splits.
    """
    u = _SPLIT_OFFSET[split] + index
    return (seed, u, 0), (seed, u, 1)


def synth_pair(cfg: SynthConfig, split: str, index: int) -> UtterancePair:
    clean_seed, noise_seed = utterance_seeds(cfg.seed, split, index)
    kinds = cfg.noise_kinds
    grid = cfg.grid_for(split)
    kind = kinds[index % len(kinds)]
    snr = grid[(index // len(kinds)) % len(grid)]
    clean = synth_clean(clean_seed, cfg.duration_s, cfg.sample_rate)
    noise = synth_noise(kind, noise_seed, cfg.duration_s, cfg.sample_rate)
    return mix_at_snr(clean, noise, snr, id=f"{split}_{index:04d}")


def synth_pairs(cfg: SynthConfig, split: str) -> List[UtterancePair]:
    """In-memory corpus; identical to what :func:`build_synthetic_dataset` writes."""
    return [synth_pair(cfg, split, i) for i in range(int(cfg.counts.get(split, 0)))]


def build_synthetic_dataset(cfg: SynthConfig, out_dir: PathLike) -> DatasetManifest:
    """Write ``clean/*.wav``, ``noisy/*.wav`` and ``manifest.csv`` under ``out_dir``."""
    cfg.validate()
    out = Path(out_dir)
    try:
        (out / "clean").mkdir(parents=True, exist_ok=True)
        (out / "noisy").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create dataset directory {out}: {exc}") from exc
    records = []
    for split in SPLITS:
        for i in range(int(cfg.counts.get(split, 0))):
            pair = synth_pair(cfg, split, i)
            clean_rel = f"clean/{pair.id}.wav"
            noisy_rel = f"noisy/{pair.id}.wav"
            write_wav(out / clean_rel, pair.clean)
            write_wav(out / noisy_rel, pair.noisy)
            records.append(ManifestRecord(pair.id, clean_rel, noisy_rel, pair.snr_db, split))
    manifest = DatasetManifest(records, out)
    write_manifest(out / "manifest.csv", manifest)
    return manifest


def pairs_as_arrays(pairs: Iterable[UtterancePair]):
    """``(clean_list, noisy_list)`` of float64 arrays."""
    pairs = list(pairs)
    return [p.clean.samples for p in pairs], [p.noisy.samples for p in pairs]
