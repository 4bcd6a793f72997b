"""Field files, metadata sidecars and the strict key=value run configuration."""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import grid_spectral as gs
from .errors import ConfigError, FieldIOError
from .profile_solver import ContinuationConfig

MAGIC = b"SSNS"
_HEADER = struct.Struct("<4sIId")


# ---------------------------------------------------------------------------
# binary field files


@dataclass(frozen=True)
class FieldFileHeader:
    n: int
    ncomp: int
    L: float

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise FieldIOError(f"n must be a power of two, got {self.n}")
        if self.ncomp not in (1, 3):
            raise FieldIOError(f"ncomp must be 1 or 3, got {self.ncomp}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise FieldIOError(f"L must be positive, got {self.L}")


def write_field(path, f: gs.RealField) -> None:
    """'SSNS', uint32 n, uint32 ncomp, float64 L (little endian), then float64 data, x fastest."""
    hdr = _HEADER.pack(MAGIC, f.spec.n, f.ncomp, float(f.spec.L))
    # data is stored (c, ix, iy, iz); the file wants ix fastest
    body = np.ascontiguousarray(f.data.transpose(0, 3, 2, 1)).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(body.tobytes())


def read_header(path) -> FieldFileHeader:
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_HEADER.size)
    except OSError as e:
        raise FieldIOError(f"cannot read {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise FieldIOError(f"{path}: truncated header")
    magic, n, ncomp, L = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FieldIOError(f"{path}: bad magic {magic!r}")
    return FieldFileHeader(n, ncomp, L)


def read_field(path) -> gs.RealField:
    hdr = read_header(path)
    n, nc = hdr.n, hdr.ncomp
    expected = nc * n ** 3
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != expected:
        raise FieldIOError(f"{path}: expected {expected} samples, found {data.size}")
    arr = data.reshape(nc, n, n, n).transpose(0, 3, 2, 1).astype(float)
    try:
        spec = gs.GridSpec(n, hdr.L)
        return gs.RealField(spec, np.ascontiguousarray(arr))
    except ConfigError as e:
        raise FieldIOError(f"{path}: {e}") from e


def write_metadata(path, meta: dict) -> None:
    """Plain-text sidecar with one key=value per line."""
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def read_metadata(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    k, _, v = line.partition("=")
                    out[k.strip()] = v.strip()
    except OSError as e:
        raise FieldIOError(f"cannot read {path}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# run configuration


KEYS = ("grid.n", "grid.L", "data.trace_file", "data.mollify_eps", "solver.mu_schedule",
        "solver.theta", "solver.anderson_depth", "solver.tol", "solver.max_iter", "output.dir",
        "run.seed")

BUILTIN_TRACES = ("rotational", "swirl_corner", "zero")


@dataclass(frozen=True)
class RunConfig:
    grid: gs.GridSpec
    trace_file: str
    mollify_eps: float = 0.0
    solver: ContinuationConfig = field(default_factory=ContinuationConfig)
    output_dir: str = "out"
    seed: int = 0
    text: str = ""

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def builtin(self) -> Optional[str]:
        """Name of a built-in trace ('builtin:rotational' etc.), or None for a file."""
        if self.trace_file.startswith("builtin:"):
            return self.trace_file.split(":", 1)[1]
        return None


def _num(key, val, kind):
    try:
        return kind(val)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {kind.__name__}") from None


def parse_config(text: str, base: Optional[Path] = None) -> RunConfig:
    """Parse key=value lines ('#' comments); unknown or repeated keys are errors."""
    vals = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in KEYS:
            raise ConfigError(f"line {ln}: unknown key {k!r}")
        if k in vals:
            raise ConfigError(f"line {ln}: repeated key {k!r}")
        vals[k] = v
    for k in ("grid.n", "grid.L", "data.trace_file"):
        if k not in vals:
            raise ConfigError(f"missing key {k}")
    spec = gs.GridSpec(_num("grid.n", vals["grid.n"], int), _num("grid.L", vals["grid.L"], float))
    kw = {}
    if "solver.mu_schedule" in vals:
        kw["mu_schedule"] = tuple(_num("solver.mu_schedule", s, float)
                                  for s in vals["solver.mu_schedule"].split(",") if s.strip())
    for key, name, kind in (("solver.theta", "theta", float), ("solver.anderson_depth", "anderson_depth", int),
                            ("solver.tol", "tol", float), ("solver.max_iter", "max_iter", int)):
        if key in vals:
            kw[name] = _num(key, vals[key], kind)
    solver = ContinuationConfig(**kw)
    eps = _num("data.mollify_eps", vals.get("data.mollify_eps", "0"), float)
    if eps < 0:
        raise ConfigError("data.mollify_eps must be non-negative")
    trace = vals["data.trace_file"]
    if trace.startswith("builtin:"):
        if trace.split(":", 1)[1] not in BUILTIN_TRACES:
            raise ConfigError(f"unknown built-in trace {trace!r}")
    elif base is not None and not os.path.isabs(trace):
        trace = str(base / trace)
    out = vals.get("output.dir", "out")
    if base is not None and not os.path.isabs(out):
        out = str(base / out)
    seed = _num("run.seed", vals.get("run.seed", "0"), int)
    return RunConfig(spec, trace, eps, solver, out, seed, text)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise FieldIOError(f"cannot read config {path}: {e}") from e
    return parse_config(text, p.parent)


def solution_paths(directory) -> Tuple[Path, Path, Path]:
    d = Path(directory)
    return d / "V.ssns", d / "U.ssns", d / "P.ssns"
