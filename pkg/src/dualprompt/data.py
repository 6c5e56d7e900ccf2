"""Textual-numerical series, JSONL/manifest I/O, chronological splits and windows."""

import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .exceptions import InsufficientDataError, ValidationError

SPLIT_RATIO = (0.7, 0.2, 0.1)
SEGMENTS = ("train", "validation", "test")


@dataclass(frozen=True)
class Observation:
    t: str
    x: float
    s: str = ""


@dataclass
class TextedSeries:
    series_id: str
    observations: list
    frequency: str = "daily"

    def __post_init__(self):
        self.observations = list(self.observations)
        problems = []
        prev = None
        for i, obs in enumerate(self.observations):
            try:
                stamp = datetime.fromisoformat(obs.t)
            except (TypeError, ValueError):
                problems.append(f"observation {i}: bad timestamp {obs.t!r}")
                continue
            if prev is not None and stamp <= prev:
                problems.append(f"observation {i}: timestamp {obs.t} not after previous")
            prev = stamp
            if not isinstance(obs.s, str):
                problems.append(f"observation {i}: text field must be a string")
            if not math.isfinite(obs.x):
                problems.append(f"observation {i}: non-finite value {obs.x!r}")
        if problems:
            raise ValidationError(problems)

    def __len__(self):
        return len(self.observations)

    @property
    def values(self):
        return np.array([o.x for o in self.observations], dtype=float)

    @property
    def texts(self):
        return [o.s for o in self.observations]

    @property
    def timestamps(self):
        return [o.t for o in self.observations]

    def segment(self, start, stop):
        return TextedSeries(self.series_id, self.observations[start:stop], self.frequency)


@dataclass(frozen=True)
class WindowSample:
    values: np.ndarray
    texts: tuple
    targets: np.ndarray
    start: str = ""
    series_id: str = ""

    @property
    def inputs(self):
        return list(zip(self.values.tolist(), self.texts))


# ---------------------------------------------------------------------------
# windows and splits


def make_windows(segment, L, T):
    """Stride-1 windows entirely inside ``segment``."""
    n = len(segment)
    if n < L + T:
        raise InsufficientDataError(
            f"segment of {n} observations is shorter than lookback + horizon = {L + T}"
        )
    values = segment.values
    texts = segment.texts
    stamps = segment.timestamps
    return [
        WindowSample(
            values[i:i + L].copy(),
            tuple(texts[i:i + L]),
            values[i + L:i + L + T].copy(),
            stamps[i],
            segment.series_id,
        )
        for i in range(n - L - T + 1)
    ]


def split_bounds(n, ratio=SPLIT_RATIO):
    if len(ratio) != 3 or any(r <= 0 for r in ratio) or abs(sum(ratio) - 1.0) > 1e-9:
        raise ValidationError(f"split ratio must be three positive fractions summing to 1: {ratio}")
    a = math.floor(n * ratio[0] + 1e-9)
    b = math.floor(n * (ratio[0] + ratio[1]) + 1e-9)
    return a, b


def chronological_split(series, L, T, ratio=SPLIT_RATIO):
    """First 70% train, next 20% validation, last 10% test (floor boundaries)."""
    a, b = split_bounds(len(series), ratio)
    parts = (series.segment(0, a), series.segment(a, b), series.segment(b, len(series)))
    for name, part in zip(SEGMENTS, parts):
        if len(part) < L + T:
            raise InsufficientDataError(
                f"{name} segment of {series.series_id!r} has {len(part)} observations, "
                f"needs at least {L + T}"
            )
    return parts


def split_windows(series_list, L, T, ratio=SPLIT_RATIO):
    """Pool per-segment windows across series: ``{"train": [...], ...}``."""
    out = {name: [] for name in SEGMENTS}
    for series in series_list:
        for name, part in zip(SEGMENTS, chronological_split(series, L, T, ratio)):
            out[name].extend(make_windows(part, L, T))
    return out


def windows_to_arrays(windows):
    values = np.stack([w.values for w in windows])
    texts = [list(w.texts) for w in windows]
    targets = np.stack([w.targets for w in windows])
    return values, texts, targets


# ---------------------------------------------------------------------------
# JSON-lines I/O


def write_jsonl(series, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for obs in series.observations:
            fh.write(json.dumps({"t": obs.t, "x": obs.x, "s": obs.s}) + "\n")


def read_jsonl(path, series_id=None, frequency="daily"):
    path = Path(path)
    observations = []
    problems = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                observations.append(Observation(str(row["t"]), float(row["x"]), str(row["s"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                problems.append(f"{path}:{lineno}: {exc!r}")
    if problems:
        raise ValidationError(problems)
    return TextedSeries(series_id or path.stem, observations, frequency)


def write_dataset(series_list, directory, description=None):
    """Write one JSONL file per series plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for series in series_list:
        fname = f"{series.series_id}.jsonl"
        write_jsonl(series, directory / fname)
        entries.append({"id": series.series_id, "path": fname, "frequency": series.frequency})
    manifest = {"series": entries}
    if description:
        manifest["description"] = description
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path):
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(manifest, dict) or not isinstance(manifest.get("series"), list):
        raise ValidationError(f"{path}: manifest must be an object with a 'series' list")
    return manifest


def load_dataset(manifest_path, series_ids=None):
    """Load the series listed in a manifest, optionally restricted to ``series_ids``."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    out = []
    for entry in manifest["series"]:
        if series_ids is not None and entry["id"] not in series_ids:
            continue
        out.append(read_jsonl(
            manifest_path.parent / entry["path"], entry["id"], entry.get("frequency", "daily")
        ))
    if series_ids is not None:
        missing = set(series_ids) - {s.series_id for s in out}
        if missing:
            raise ValidationError(f"series not in manifest: {sorted(missing)}")
    return out
