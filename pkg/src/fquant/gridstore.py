"""Text grid files and the on-disk grid store.

File layout::

    FQGRID 1
    kind <scalar|codebook|functional|ensemble>
    meta <one-line JSON>
    array <name> <dim1> [<dim2>]
    <values, one row per line, 17 significant digits>
    ...
    end
    checksum <CRC-32 of everything between the first line and this one, hex>

17 significant digits round-trip every float64 exactly, so
``load_grid(save_grid(x)) == x``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import zlib
from pathlib import Path

import numpy as np

from .kl_basis import FunctionalQuantizer, KLSystem, QuantizedPathEnsemble, build_optimal_fq
from .rng import RngStream
from .scalar_quant import ScalarQuantizer, StdNormal, Uniform
from .vq_core import Codebook, CovNorm, OptSchedule

MAGIC = "FQGRID"
VERSION = 1
KINDS = ("scalar", "codebook", "functional", "ensemble")
ENV_DIR = "FQUANT_GRID_DIR"
WEIGHT_TOL = 1e-9


class GridError(Exception):
    pass


class GridFormatError(GridError):
    pass


class ChecksumError(GridError):
    pass


class VersionError(GridError):
    pass


class InvariantError(GridError):
    def __init__(self, field: str, message: str):
        super().__init__(f"invalid field '{field}': {message}")
        self.field = field


def plain(obj):
    """Recursively convert to JSON-native types (tuples become lists)."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- encoding


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _encode_array(name: str, arr) -> list[str]:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim not in (1, 2):
        raise ValueError(f"array '{name}' must be 1-D or 2-D")
    lines = [f"array {name} " + " ".join(str(s) for s in arr.shape)]
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    if arr.ndim == 1 and arr.size == 0:
        return lines
    lines.extend(" ".join(_fmt(x) for x in row) for row in rows)
    return lines


def _to_sections(obj):
    if isinstance(obj, ScalarQuantizer):
        law = {"name": "uniform", "a": obj.law.a, "b": obj.law.b} if isinstance(obj.law, Uniform) else {"name": "normal"}
        return "scalar", {"law": law, "distortion": obj.distortion}, {"points": obj.points, "weights": obj.weights}
    if isinstance(obj, Codebook):
        meta = {"distortion": obj.distortion, "info": obj.meta}
        return "codebook", meta, {"lambdas": obj.norm.lambdas, "points": obj.points, "weights": obj.weights}
    if isinstance(obj, FunctionalQuantizer):
        meta = {
            "process": obj.system.process.value,
            "T": obj.system.T,
            "N": obj.size,
            "d": obj.dim,
            "quant_error": obj.quant_error,
            "info": obj.meta,
        }
        return "functional", meta, {"coeffs": obj.coeffs, "weights": obj.weights}
    if isinstance(obj, QuantizedPathEnsemble):
        arrays = {"tgrid": obj.tgrid, "paths": obj.paths, "weights": obj.weights}
        arrays.update({f"extra.{k}": v for k, v in sorted(obj.extras.items())})
        return "ensemble", {"provenance": obj.provenance}, arrays
    raise TypeError(f"cannot store objects of type {type(obj).__name__}")


def dumps_grid(obj, config: dict | None = None) -> str:
    kind, meta, arrays = _to_sections(obj)
    if config is not None:
        meta = dict(meta, config=config, config_digest=config_digest(config))
    body = [f"kind {kind}", "meta " + canonical_json(meta)]
    for name, arr in arrays.items():
        body.extend(_encode_array(name, arr))
    body.append("end")
    payload = "\n".join(body) + "\n"
    crc = zlib.crc32(payload.encode()) & 0xFFFFFFFF
    return f"{MAGIC} {VERSION}\n{payload}checksum {crc:08x}\n"


def save_grid(path, obj, config: dict | None = None) -> Path:
    """Write ``obj`` to ``path`` atomically (write to a temporary, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_grid(obj, config), encoding="ascii")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------- decoding


def _parse(text: str):
    first, sep, rest = text.partition("\n")
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise GridFormatError("not a grid file (bad magic line)")
    if parts[1] != str(VERSION):
        raise VersionError(f"unsupported grid version {parts[1]!r} (expected {VERSION})")
    cut = rest.rfind("checksum ")
    if cut < 0 or (cut > 0 and rest[cut - 1] != "\n"):
        raise GridFormatError("missing checksum line")
    payload, tail = rest[:cut], rest[cut:].strip()
    try:
        stored = int(tail.split()[1], 16)
    except (IndexError, ValueError):
        raise GridFormatError("malformed checksum line") from None
    if zlib.crc32(payload.encode()) & 0xFFFFFFFF != stored:
        raise ChecksumError("payload checksum mismatch")
    lines = payload.split("\n")
    if not lines[0].startswith("kind ") or not lines[1].startswith("meta "):
        raise GridFormatError("missing kind or meta line")
    kind = lines[0][5:].strip()
    if kind not in KINDS:
        raise GridFormatError(f"unknown kind {kind!r}")
    try:
        meta = json.loads(lines[1][5:])
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"bad metadata: {exc}") from None
    arrays = {}
    pos = 2
    while pos < len(lines) and lines[pos] != "end":
        head = lines[pos].split()
        if len(head) not in (3, 4) or head[0] != "array":
            raise GridFormatError(f"bad section header at line {pos + 2}")
        name = head[1]
        try:
            shape = tuple(int(s) for s in head[2:])
        except ValueError:
            raise GridFormatError(f"bad shape for array '{name}'") from None
        nrows = (1 if shape[0] else 0) if len(shape) == 1 else shape[0]
        rows = lines[pos + 1 : pos + 1 + nrows]
        try:
            flat = [float(x) for row in rows for x in row.split()]
        except ValueError:
            raise GridFormatError(f"non-numeric value in array '{name}'") from None
        if len(rows) != nrows or len(flat) != math.prod(shape):
            raise GridFormatError(f"array '{name}' does not match its declared shape {shape}")
        arrays[name] = np.array(flat, dtype=float).reshape(shape)
        pos += 1 + nrows
    if pos >= len(lines):
        raise GridFormatError("missing end marker")
    return kind, meta, arrays


def _need(arrays, name):
    if name not in arrays:
        raise GridFormatError(f"missing array '{name}'")
    return arrays[name]


def _check_weights(w, n):
    if w.ndim != 1 or w.size != n:
        raise InvariantError("weights", f"expected {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvariantError("weights", "weights must be finite and non-negative")
    s = float(w.sum())
    if abs(s - 1.0) > WEIGHT_TOL:
        raise InvariantError("weights", f"weights sum to {s!r}, not 1")


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise InvariantError(name, "contains non-finite values")


def _build(kind, meta, arrays):
    if kind == "scalar":
        pts = _need(arrays, "points")
        _check_finite("points", pts)
        if pts.ndim != 1 or np.any(np.diff(pts) <= 0):
            raise InvariantError("points", "scalar codewords must be strictly increasing")
        _check_weights(_need(arrays, "weights"), pts.size)
        law_d = meta.get("law", {"name": "normal"})
        law = Uniform(law_d["a"], law_d["b"]) if law_d.get("name") == "uniform" else StdNormal()
        if not meta.get("distortion", -1) >= 0:
            raise InvariantError("distortion", "must be non-negative")
        return ScalarQuantizer(pts, arrays["weights"], meta["distortion"], law)
    if kind == "codebook":
        pts = np.atleast_2d(_need(arrays, "points"))
        _check_finite("points", pts)
        try:
            norm = CovNorm(_need(arrays, "lambdas"))
        except ValueError as exc:
            raise InvariantError("lambdas", str(exc)) from None
        if pts.shape[1] != norm.dim:
            raise InvariantError("points", f"dimension {pts.shape[1]} differs from the norm dimension {norm.dim}")
        _check_weights(_need(arrays, "weights"), pts.shape[0])
        if not meta.get("distortion", -1) >= 0:
            raise InvariantError("distortion", "must be non-negative")
        return Codebook(pts, arrays["weights"], meta["distortion"], norm, meta.get("info", {}))
    if kind == "functional":
        coeffs = np.atleast_2d(_need(arrays, "coeffs"))
        _check_finite("coeffs", coeffs)
        _check_weights(_need(arrays, "weights"), coeffs.shape[0])
        if not meta.get("quant_error", -1) >= 0:
            raise InvariantError("quant_error", "must be non-negative")
        try:
            system = KLSystem(meta["process"], meta["T"])
        except (KeyError, ValueError) as exc:
            raise InvariantError("process", str(exc)) from None
        return FunctionalQuantizer(system, coeffs, arrays["weights"], meta["quant_error"], meta.get("info", {}))
    tgrid = _need(arrays, "tgrid")
    paths = np.atleast_2d(_need(arrays, "paths"))
    if tgrid.ndim != 1 or np.any(np.diff(tgrid) <= 0):
        raise InvariantError("tgrid", "time grid must be strictly increasing")
    if paths.shape[1] != tgrid.size:
        raise InvariantError("paths", "path length differs from the time grid")
    _check_weights(_need(arrays, "weights"), paths.shape[0])
    extras = {k[6:]: v for k, v in arrays.items() if k.startswith("extra.")}
    return QuantizedPathEnsemble(tgrid, paths, arrays["weights"], meta.get("provenance", {}), extras)


def loads_grid(text: str, kind: str | None = None, with_meta: bool = False):
    k, meta, arrays = _parse(text)
    if kind is not None and k != kind:
        raise GridFormatError(f"expected a {kind} grid, found {k}")
    obj = _build(k, meta, arrays)
    return (obj, meta) if with_meta else obj


def load_grid(path, kind: str | None = None, with_meta: bool = False):
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError:
        raise GridFormatError(f"{path}: not an ASCII grid file") from None
    return loads_grid(text, kind, with_meta)


# ---------------------------------------------------------------- store


def default_store_dir() -> Path:
    env = os.environ.get(ENV_DIR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fquant" / "grids"


class GridStore:
    """Directory of grid files keyed by their build parameters, built on demand."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_store_dir()

    def path_for(self, name: str, params: dict) -> Path:
        return self.root / f"{name}-{config_digest(params)}.fqgrid"

    def functional(
        self,
        N: int,
        system: KLSystem = KLSystem(),
        seed: int = 2024,
        schedule: OptSchedule | None = None,
    ) -> FunctionalQuantizer:
        """Optimized functional quantizer, loaded from the store or built and saved."""
        schedule = schedule or OptSchedule()
        params = {
            "kind": "optimal-fq",
            "N": int(N),
            "process": system.process.value,
            "T": system.T,
            "seed": int(seed),
            "schedule": schedule.as_dict(),
        }
        path = self.path_for(f"fq-{system.process.value}-N{N}", params)
        if path.exists():
            return load_grid(path, "functional")
        fq = build_optimal_fq(N, system, schedule, RngStream(seed))
        save_grid(path, fq, params)
        return load_grid(path, "functional")
