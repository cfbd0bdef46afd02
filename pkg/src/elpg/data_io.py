"""File formats (recordings, manifests, layouts, feature caches) and the
synthetic EEG cohort generator used in place of a clinical dataset."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, LengthError, SchemaError, ValidationError
from .graph import Parcellation, pearson_seed
from .infofeat import Features, decode_features, encode_features, extract_features
from .signal import ALPHA, DEFAULT_BANDS, PreprocessParams, Recording, preprocess
from .tensor import dump_tensor, load_tensor
from .training import SubjectData

log = logging.getLogger(__name__)

MAGIC = b"EEGR"
VERSION = 1
_HEADER = struct.Struct("<4sBQQd")


# ---------------------------------------------------------------------------
# recordings


def encode_recording(samples: np.ndarray, fs: float) -> bytes:
    samples = np.asarray(samples, dtype=np.float64)
    n_ch, n_s = samples.shape
    return _HEADER.pack(MAGIC, VERSION, n_ch, n_s, float(fs)) + np.ascontiguousarray(samples, "<f8").tobytes()


def decode_recording(buf: bytes) -> tuple[np.ndarray, float]:
    if len(buf) < _HEADER.size:
        raise LengthError(f"recording header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, version, n_ch, n_s, fs = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported recording version {version}")
    expected = _HEADER.size + 8 * n_ch * n_s
    if len(buf) != expected:
        raise LengthError(f"recording payload is {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, "<f8", n_ch * n_s, _HEADER.size).astype(np.float64)
    return data.reshape(n_ch, n_s), fs


def write_recording(path, samples: np.ndarray, fs: float) -> None:
    _atomic_write(Path(path), encode_recording(samples, fs))


def load_recording(path, layout: "ElectrodeLayout", subject_id: str = "", label: int = 0) -> Recording:
    samples, fs = decode_recording(Path(path).read_bytes())
    if samples.shape[0] != len(layout.coords):
        raise ValidationError(f"{path}: {samples.shape[0]} channels but layout has {len(layout.coords)}")
    return Recording(samples, fs, layout.coords, subject_id, label)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# electrode layouts


@dataclass
class ElectrodeLayout:
    names: list[str]
    coords: np.ndarray  # (N, 3) mm
    unit: str = "mm"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.shape != (len(self.names), 3):
            raise SchemaError("layout needs one x,y,z row per channel name")
        if self.unit != "mm":
            raise SchemaError(f"layout unit must be 'mm', got {self.unit!r}")
        if len(np.unique(self.coords, axis=0)) != len(self.coords):
            raise SchemaError("layout positions must be pairwise distinct")

    def to_text(self) -> str:
        lines = [f"# unit: {self.unit}"]
        lines += [f"{n} {x!r} {y!r} {z!r}" for n, (x, y, z) in zip(self.names, self.coords.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ElectrodeLayout":
        unit, names, coords = None, [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "unit":
                    unit = val.strip()
                continue
            parts = line.split()
            if len(parts) != 4:
                raise SchemaError(f"layout line {lineno}: expected 'name x y z'")
            try:
                coords.append([float(v) for v in parts[1:]])
            except ValueError:
                raise SchemaError(f"layout line {lineno}: non-numeric coordinate") from None
            names.append(parts[0])
        if unit is None:
            raise SchemaError("layout is missing its '# unit: mm' tag")
        return cls(names, np.array(coords).reshape(-1, 3), unit)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ElectrodeLayout":
        return cls.from_text(Path(path).read_text())


def spherical_cap_layout(n_channels: int, radius: float = 90.0, max_polar_deg: float = 100.0) -> ElectrodeLayout:
    """Fibonacci points on a head-sized cap, ordered front (+y) to back."""
    i = np.arange(n_channels) + 0.5
    cos_max = np.cos(np.radians(max_polar_deg))
    cos_t = 1.0 - (1.0 - cos_max) * i / n_channels
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    pts = radius * np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    pts = pts[np.argsort(-pts[:, 1], kind="stable")]
    return ElectrodeLayout([f"E{k + 1}" for k in range(n_channels)], np.round(pts, 6))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRow:
    subject_id: str
    label: int
    path: str


@dataclass
class SubjectManifest:
    rows: list[ManifestRow]
    fs: float
    n_channels: int
    duration: float
    root: Path = field(default_factory=Path)
    layout: str = "layout.txt"
    parcellation: str = "parcellation.txt"

    def to_text(self) -> str:
        head = [f"# fs={self.fs!r}", f"# n_channels={self.n_channels}", f"# duration={self.duration!r}",
                f"# layout={self.layout}", f"# parcellation={self.parcellation}", "subject_id,label,path"]
        return "\n".join(head + [f"{r.subject_id},{r.label},{r.path}" for r in self.rows]) + "\n"

    @classmethod
    def from_text(cls, text: str, root: Path = Path(".")) -> "SubjectManifest":
        meta, rows, header_seen = {}, [], False
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
                continue
            parts = [p.strip() for p in line.split(",")]
            if not header_seen:
                if parts != ["subject_id", "label", "path"]:
                    raise SchemaError("manifest header must be 'subject_id,label,path'")
                header_seen = True
                continue
            if len(parts) != 3:
                raise SchemaError(f"manifest line {lineno}: expected 3 fields")
            if parts[1] not in ("0", "1"):
                raise SchemaError(f"manifest line {lineno}: label {parts[1]!r} is not 0 or 1")
            rows.append(ManifestRow(parts[0], int(parts[1]), parts[2]))
        if not header_seen:
            raise SchemaError("manifest has no header row")
        ids = [r.subject_id for r in rows]
        if len(set(ids)) != len(ids):
            raise SchemaError("manifest subject ids must be unique")
        try:
            return cls(rows, float(meta["fs"]), int(meta["n_channels"]), float(meta["duration"]), root,
                       meta.get("layout", "layout.txt"), meta.get("parcellation", "parcellation.txt"))
        except KeyError as exc:
            raise SchemaError(f"manifest is missing metadata {exc}") from None

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def load_manifest(path, check_files: bool = True) -> SubjectManifest:
    path = Path(path)
    manifest = SubjectManifest.from_text(path.read_text(), root=path.parent)
    if check_files:
        for lineno, row in enumerate(manifest.rows, 1):
            if not manifest.resolve(row.path).is_file():
                raise ValidationError(f"manifest row {lineno} ({row.subject_id}): missing file {row.path}")
    return manifest


# ---------------------------------------------------------------------------
# synthetic cohort


@dataclass(frozen=True)
class CohortConfig:
    n_per_class: int = 20
    n_channels: int = 16
    fs: float = 250.0
    duration_sec: float = 60.0
    alpha_power_ratio: float = 3.0
    coupling_delta: float = 0.3
    base_coupling: float = 0.2
    noise_std: float = 0.1
    subject_jitter: float = 0.15
    frontal_fraction: float = 0.25
    amplitude_uv: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.alpha_power_ratio < 0 or self.coupling_delta < 0 or self.noise_std < 0:
            raise ConfigError("effect sizes and noise must be >= 0")
        top = max(b.hi for b in DEFAULT_BANDS)
        if self.fs < 2 * top:
            raise ConfigError(f"fs={self.fs} Hz is below twice the highest band edge ({top} Hz)")
        if self.n_channels < 9:
            raise ConfigError("need at least 9 channels to fill 9 parcellation groups")
        if self.n_per_class < 1 or self.duration_sec <= 0:
            raise ConfigError("n_per_class and duration_sec must be positive")
        if not 0 <= self.base_coupling + self.coupling_delta < 1:
            raise ConfigError("base_coupling + coupling_delta must lie in [0, 1)")


_BAND_AMPLITUDE = {"delta": 1.0, "theta": 0.8, "alpha": 1.0, "beta": 0.5}


def band_limited_noise(rng: np.random.Generator, shape: tuple, lo: float, hi: float, fs: float) -> np.ndarray:
    """Unit-variance Gaussian noise confined to [lo, hi] Hz by spectral masking."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[..., (freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    return x / x.std(axis=-1, keepdims=True)


def synthesize_subject(rng: np.random.Generator, cfg: CohortConfig, label: int) -> np.ndarray:
    """(N, S) microvolt samples: per-band mixtures of private and shared sources."""
    N = cfg.n_channels
    S = int(round(cfg.duration_sec * cfg.fs))
    n_frontal = max(1, int(np.ceil(cfg.frontal_fraction * N)))
    kappa = cfg.base_coupling + cfg.coupling_delta * label
    x = np.zeros((N, S))
    for band in DEFAULT_BANDS:
        private = band_limited_noise(rng, (N, S), band.lo, band.hi, cfg.fs)
        shared = band_limited_noise(rng, (1, S), band.lo, band.hi, cfg.fs)
        mixed = np.sqrt(1.0 - kappa) * private + np.sqrt(kappa) * shared
        gain = _BAND_AMPLITUDE[band.name] * np.exp(cfg.subject_jitter * rng.standard_normal(N))
        if band is ALPHA and label == 1:
            gain[:n_frontal] *= np.sqrt(cfg.alpha_power_ratio)
        x += gain[:, None] * mixed
    x += cfg.noise_std * rng.standard_normal((N, S))
    return cfg.amplitude_uv * x


def generate_synthetic_cohort(cfg: CohortConfig, out_dir) -> Path:
    """Write recordings, layout, parcellation and manifest under ``out_dir``; returns the manifest path."""
    cfg.validate()
    out = Path(out_dir)
    (out / "recordings").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    layout = spherical_cap_layout(cfg.n_channels)
    layout.save(out / "layout.txt")
    Parcellation.contiguous(cfg.n_channels).save(out / "parcellation.txt")
    rows = []
    labels = [0] * cfg.n_per_class + [1] * cfg.n_per_class
    for k, label in enumerate(labels):
        sid = f"S{k:03d}"
        rel = f"recordings/{sid}.eegr"
        write_recording(out / rel, synthesize_subject(rng, cfg, label), cfg.fs)
        rows.append(ManifestRow(sid, label, rel))
    manifest = SubjectManifest(rows, cfg.fs, cfg.n_channels, cfg.duration_sec, out)
    path = out / "manifest.csv"
    manifest.save(path)
    return path


# ---------------------------------------------------------------------------
# feature cache


def cache_key(recording_bytes: bytes, params: PreprocessParams, subject_id: str) -> str:
    h = hashlib.sha256()
    h.update(recording_bytes)
    h.update(params.fingerprint().encode())
    h.update(subject_id.encode())
    return h.hexdigest()


def prepare_subject(rec: Recording, params: PreprocessParams = PreprocessParams()) -> SubjectData:
    """Preprocess one recording into model inputs (DE, MI, Pearson seed)."""
    clean, bandsig = preprocess(rec, params)
    feats = extract_features(bandsig)
    return SubjectData(rec.subject_id, rec.label, feats.de, feats.mi, pearson_seed(clean.samples))


class FeatureCache:
    """Directory of ``<subject>-<key>.feat`` files (plus ``.seed`` tensor dumps).

    The key hashes the recording bytes, preprocessing parameters and subject id,
    so any change to one of them is a miss.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _paths(self, subject_id: str, key: str) -> tuple[Path, Path]:
        stem = f"{subject_id}-{key[:24]}"
        return self.root / f"{stem}.feat", self.root / f"{stem}.seed"

    def store(self, subject_id: str, key: str, feats: Features, seed: np.ndarray) -> None:
        for stale in self.root.glob(f"{subject_id}-*"):
            stale.unlink()
        feat_path, seed_path = self._paths(subject_id, key)
        _atomic_write(feat_path, encode_features(feats))
        _atomic_write(seed_path, dump_tensor(seed))

    def lookup(self, subject_id: str, key: str) -> tuple[Features, np.ndarray] | None:
        feat_path, seed_path = self._paths(subject_id, key)
        if not (feat_path.is_file() and seed_path.is_file()):
            return None
        try:
            feats = decode_features(feat_path.read_bytes())
            seed, _ = load_tensor(seed_path.read_bytes())
        except FormatError as exc:
            log.warning("corrupt cache entry for %s (%s); recomputing", subject_id, exc)
            return None
        return feats, seed.data

    def get_or_compute(self, rec_bytes: bytes, rec: Recording, params: PreprocessParams) -> tuple[SubjectData, bool]:
        key = cache_key(rec_bytes, params, rec.subject_id)
        hit = self.lookup(rec.subject_id, key)
        if hit is not None:
            feats, seed = hit
            return SubjectData(rec.subject_id, rec.label, feats.de, feats.mi, seed), True
        data = prepare_subject(rec, params)
        self.store(rec.subject_id, key, Features(data.de, data.mi), data.seed)
        return data, False


@dataclass
class Cohort:
    subjects: list[SubjectData]
    layout: ElectrodeLayout
    parcellation: Parcellation
    failures: dict[str, str] = field(default_factory=dict)
    cache_hits: int = 0


def load_cohort(manifest_path, cache_dir=None, params: PreprocessParams = PreprocessParams(),
                layout_path=None, parcellation_path=None) -> Cohort:
    """Load, preprocess and featurize every manifest subject; per-subject failures are collected."""
    manifest = load_manifest(manifest_path, check_files=False)
    layout = ElectrodeLayout.load(layout_path or manifest.resolve(manifest.layout))
    parc = Parcellation.load(parcellation_path or manifest.resolve(manifest.parcellation))
    cache = FeatureCache(cache_dir) if cache_dir is not None else None
    cohort = Cohort([], layout, parc)
    for row in manifest.rows:
        try:
            raw = manifest.resolve(row.path).read_bytes()
            samples, fs = decode_recording(raw)
            if samples.shape[0] != len(layout.coords):
                raise ValidationError(f"{samples.shape[0]} channels but layout has {len(layout.coords)}")
            rec = Recording(samples, fs, layout.coords, row.subject_id, row.label)
            if cache is None:
                data, hit = prepare_subject(rec, params), False
            else:
                data, hit = cache.get_or_compute(raw, rec, params)
            cohort.cache_hits += hit
            log.info("%s: T=%d windows%s", row.subject_id, data.de.shape[0], " (cached)" if hit else "")
            cohort.subjects.append(data)
        except (OSError, ValueError) as exc:
            log.error("%s failed: %s", row.subject_id, exc)
            cohort.failures[row.subject_id] = str(exc)
    return cohort
