"""Observed Poisson paths: containers, exact simulation and event-file I/O.

Every path is simulated from its own counter-based Philox stream keyed by
``(base_seed, stream_index)``.  Replication ``r`` of a study with ``n`` paths
uses stream indices ``r * n + j``, so results do not depend on the order in
which paths or replications are generated.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EmptySample, EnvelopeError, ParseError, UnsortedEvents
from .model import IntensityModel, TimeDomain

ENVELOPE_GRID = 4096
ENVELOPE_SAFETY = 1.001
_UINT64 = 2**64


@dataclass(frozen=True)
class PoissonPath:
    events: np.ndarray
    domain: TimeDomain = TimeDomain("real_line")

    def __post_init__(self):
        ev = np.array(self.events, dtype=float).reshape(-1)
        if ev.size > 1 and not np.all(np.diff(ev) > 0):
            raise UnsortedEvents("event times must be strictly increasing")
        if not np.all(self.domain.contains(ev)):
            raise DomainError("event time outside the observation domain")
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)

    @property
    def count(self) -> int:
        return int(self.events.size)

    def __eq__(self, other):
        if not isinstance(other, PoissonPath):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.events, other.events)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Sample:
    """``n`` independent paths on one domain, plus optional provenance."""

    paths: tuple[PoissonPath, ...]
    model_tag: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise EmptySample("a sample needs at least one path")
        domain = self.paths[0].domain
        if any(p.domain != domain for p in self.paths):
            raise ValueError("all paths of a sample must share one domain")

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def domain(self) -> TimeDomain:
        return self.paths[0].domain

    @cached_property
    def counts(self) -> np.ndarray:
        return np.array([p.count for p in self.paths], dtype=np.int64)

    @cached_property
    def times(self) -> np.ndarray:
        """All event times concatenated in path order."""
        if not self.counts.sum():
            return np.zeros(0)
        return np.concatenate([p.events for p in self.paths])

    @cached_property
    def path_index(self) -> np.ndarray:
        """Path number of every entry of :attr:`times`."""
        return np.repeat(np.arange(self.n), self.counts)

    def subset(self, start: int, stop: int | None = None) -> Sample:
        return Sample(self.paths[start:stop], self.model_tag)

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SeedSpec:
    base_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.base_seed) < _UINT64):
            raise ValueError("base_seed must be an unsigned 64-bit integer")
        if not (0 <= int(self.stream_index) < _UINT64):
            raise ValueError("stream_index must be a non-negative 64-bit integer")

    def generator(self) -> np.random.Generator:
        # distinct counters start streams 2**192 draws apart under one key
        return np.random.Generator(np.random.Philox(key=int(self.base_seed), counter=[0, 0, 0, int(self.stream_index)]))


def replication_seeds(base_seed: int, replication: int, n: int) -> list[SeedSpec]:
    return [SeedSpec(base_seed, replication * n + j) for j in range(n)]


def envelope(model: IntensityModel, theta) -> float:
    """Upper bound for the intensity on the (truncated) domain: grid max times 1.001."""
    if not model.bounded(theta):
        raise EnvelopeError(f"{model.family} intensity is unbounded at theta={np.asarray(theta).tolist()}")
    lo, hi = model.bounds(theta)
    grid = np.linspace(lo, hi, ENVELOPE_GRID)
    try:
        values = model.intensity(theta, grid)
    except DomainError:
        values = model.intensity(theta, grid[1:])
    lam_max = float(np.max(values)) * ENVELOPE_SAFETY
    if not (np.isfinite(lam_max) and lam_max > 0):
        raise EnvelopeError(f"could not establish a finite positive envelope (got {lam_max})")
    return lam_max


def _thin(model, theta, seeds: Sequence[SeedSpec]) -> list[np.ndarray]:
    lam_max = envelope(model, theta)
    lo, hi = model.bounds(theta)
    width = hi - lo
    cands, marks = [], []
    for seed in seeds:
        rng = seed.generator()
        k = rng.poisson(lam_max * width)
        cands.append(np.sort(lo + width * rng.random(k)))
        marks.append(rng.random(k))
    sizes = np.array([c.size for c in cands])
    if not sizes.sum():
        return [np.zeros(0) for _ in seeds]
    flat = np.concatenate(cands)
    keep = np.concatenate(marks) * lam_max < model.intensity(theta, flat)
    return [flat[s][k] for s, k in zip(_slices(sizes), np.split(keep, np.cumsum(sizes)[:-1]))]


def _slices(sizes):
    ends = np.cumsum(sizes)
    return [slice(e - s, e) for s, e in zip(sizes, ends)]


def _inverse_cdf(model, theta, u: np.ndarray) -> np.ndarray:
    """Solve Lambda(t) - Lambda(lo) = u * (Lambda(hi) - Lambda(lo)) by bisection."""
    lo, hi = model.bounds(theta)
    c_lo = model.cumulative_intensity(theta, lo)
    target = c_lo + u * (model.cumulative_intensity(theta, hi) - c_lo)
    a = np.full_like(u, lo)
    b = np.full_like(u, hi)
    for _ in range(64):
        mid = 0.5 * (a + b)
        below = model.cumulative_intensity(theta, mid) < target
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return 0.5 * (a + b)


def _by_density(model, theta, seeds: Sequence[SeedSpec]) -> list[np.ndarray]:
    lo, hi = model.bounds(theta)
    mass = model.total_mass(theta) if model.normalized else float(
        model.cumulative_intensity(theta, hi) - model.cumulative_intensity(theta, lo))
    out, pending = [], []
    for i, seed in enumerate(seeds):
        rng = seed.generator()
        k = rng.poisson(mass)
        t = model.sample_times(theta, rng, k)
        if t is None:
            pending.append((i, rng.random(k)))
            out.append(None)
        else:
            out.append(np.sort(t))
    if pending:
        sizes = np.array([u.size for _, u in pending])
        flat = _inverse_cdf(model, theta, np.concatenate([u for _, u in pending])) if sizes.sum() else np.zeros(0)
        for (i, _), sl in zip(pending, _slices(sizes)):
            out[i] = np.sort(flat[sl])
    return out


SAMPLERS = {"thinning": _thin, "density": _by_density}


def simulate_paths(model: IntensityModel, theta, seeds: Sequence[SeedSpec], method: str | None = None) -> list[PoissonPath]:
    """Simulate one path per seed; each path depends only on its own seed."""
    method = method or model.preferred_sampler
    if method not in SAMPLERS:
        raise ValueError(f"unknown sampler {method!r}")
    theta = model.theta(theta)
    events = SAMPLERS[method](model, theta, seeds)
    return [PoissonPath(ev, model.domain) for ev in events]


def simulate_thinning(model: IntensityModel, theta, seed: SeedSpec) -> PoissonPath:
    """Lewis-Shedler thinning of a homogeneous process at the envelope rate."""
    return simulate_paths(model, theta, [seed], "thinning")[0]


def simulate_by_density(model: IntensityModel, theta, seed: SeedSpec) -> PoissonPath:
    """Poisson(total mass) count, then i.i.d. times from the normalised intensity."""
    return simulate_paths(model, theta, [seed], "density")[0]


def simulate_sample(
    model: IntensityModel,
    theta,
    n: int,
    base_seed: int,
    replication: int = 0,
    method: str | None = None,
) -> Sample:
    if n < 1:
        raise ValueError("n must be >= 1")
    paths = simulate_paths(model, theta, replication_seeds(base_seed, replication, n), method)
    tag = {
        "model": model.to_config(np.asarray(theta, dtype=float)),
        "base_seed": int(base_seed),
        "replication": int(replication),
        "sampler": method or model.preferred_sampler,
    }
    return Sample(tuple(paths), tag)


# ---------------------------------------------------------------- file I/O


def _open_text(file, mode):
    if isinstance(file, (str, os.PathLike)):
        return open(file, mode, encoding="utf-8", newline="" if "r" in mode else None), True
    return file, False


def write_sample(sample: Sample, file) -> None:
    """Write one ``{"path": j, "events": [...]}`` object per line."""
    fh, close = _open_text(file, "w")
    try:
        for j, path in enumerate(sample.paths):
            fh.write(json.dumps({"path": j, "events": [float(t) for t in path.events]}) + "\n")
    finally:
        if close:
            fh.close()


def _path_from_record(events, domain, line) -> PoissonPath:
    try:
        return PoissonPath(np.asarray(events, dtype=float), domain)
    except UnsortedEvents as exc:
        raise UnsortedEvents(f"line {line}: {exc}") from None
    except DomainError as exc:
        raise ParseError(str(exc), line) from None


def _read_ndjson(lines: Iterable[str], domain) -> list[PoissonPath]:
    by_id: dict[int, PoissonPath] = {}
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict) or set(rec) != {"path", "events"}:
            raise ParseError('expected an object with exactly the keys "path" and "events"', lineno)
        pid, events = rec["path"], rec["events"]
        if not isinstance(pid, int) or isinstance(pid, bool) or pid < 0:
            raise ParseError(f"path id must be a non-negative integer, got {pid!r}", lineno)
        if not isinstance(events, list) or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in events
        ):
            raise ParseError("events must be a list of numbers", lineno)
        if pid in by_id:
            raise ParseError(f"duplicate path id {pid}", lineno)
        by_id[pid] = _path_from_record(events, domain, lineno)
    if by_id and sorted(by_id) != list(range(len(by_id))):
        raise ParseError("path ids must be 0..n-1 without gaps")
    return [by_id[j] for j in range(len(by_id))]


def _read_csv(text: str, domain) -> list[PoissonPath]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip() for h in header] != ["path_id", "t"]:
        raise ParseError("CSV header must be 'path_id,t'", 1)
    events: dict[int, list[float]] = {}
    first_line: dict[int, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError("expected two columns", lineno)
        try:
            pid = int(row[0])
            value = row[1].strip()
            t = float(value) if value else None
        except ValueError:
            raise ParseError(f"cannot parse row {row}", lineno) from None
        if pid < 0:
            raise ParseError("path_id must be non-negative", lineno)
        events.setdefault(pid, [])
        first_line.setdefault(pid, lineno)
        if t is not None:
            events[pid].append(t)
    n = max(events) + 1 if events else 0
    # ids without rows (or with an empty t) are paths without events
    return [_path_from_record(events.get(j, []), domain, first_line.get(j)) for j in range(n)]


def read_sample(file, domain: TimeDomain | None = None) -> Sample:
    """Read NDJSON (or ``path_id,t`` CSV) events into a :class:`Sample`."""
    domain = domain or TimeDomain("real_line")
    fh, close = _open_text(file, "r")
    try:
        text = fh.read()
    finally:
        if close:
            fh.close()
    name = str(file) if isinstance(file, (str, os.PathLike)) else ""
    is_csv = name.lower().endswith(".csv") or text.lstrip().startswith("path_id")
    paths = _read_csv(text, domain) if is_csv else _read_ndjson(text.splitlines(), domain)
    return Sample(tuple(paths))
