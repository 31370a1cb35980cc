"""Precomputed tables shipped with the package.

The files are produced by ``python -m fquant.presets`` and are checked
against a fresh computation by the test suite.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .kl_basis import KLSystem, ProductAllocation, allocation_table
from .scalar_quant import ScalarQuantizer, normal_distortion_table, normal_quantizer_table

SCALAR_FILE = "normal_quantizers.json"
ALLOCATION_FILE = "allocations_bm.json"
MAX_SCALAR = 64
MAX_BUDGET = 10_000


def _read(name: str) -> dict:
    return json.loads(resources.files("fquant").joinpath("presets", name).read_text(encoding="ascii"))


@lru_cache(maxsize=None)
def normal_quantizers() -> dict[int, ScalarQuantizer]:
    data = _read(SCALAR_FILE)
    return {
        int(M): ScalarQuantizer(np.array(q["points"]), np.array(q["weights"]), q["distortion"])
        for M, q in data["quantizers"].items()
    }


@lru_cache(maxsize=None)
def allocation_breakpoints() -> list[tuple[int, ProductAllocation]]:
    data = _read(ALLOCATION_FILE)
    return [(int(N), ProductAllocation(tuple(a["sizes"]), a["N_rec"], a["quant_error"])) for N, a in data["breakpoints"]]


def preset_allocation(N: int) -> ProductAllocation:
    """Optimal product allocation for budget N <= 10^4 (Brownian motion, T = 1)."""
    if not 1 <= N <= MAX_BUDGET:
        raise ValueError(f"presets cover budgets 1..{MAX_BUDGET}")
    best = None
    for start, alloc in allocation_breakpoints():
        if start > N:
            break
        best = alloc
    return best


def scalar_payload(max_size: int = MAX_SCALAR) -> dict:
    table = normal_quantizer_table(max_size)
    return {
        "law": "normal",
        "quantizers": {
            str(M): {"points": q.points.tolist(), "weights": q.weights.tolist(), "distortion": q.distortion}
            for M, q in sorted(table.items())
        },
    }


def allocation_payload(max_budget: int = MAX_BUDGET) -> dict:
    rows = allocation_table(max_budget, KLSystem(), normal_distortion_table(64))
    return {
        "process": "bm",
        "T": 1.0,
        "breakpoints": [[N, {"sizes": list(a.sizes), "N_rec": a.N_rec, "quant_error": a.quant_error}] for N, a in rows],
    }


def write_presets(directory: Path | None = None) -> None:
    directory = Path(directory) if directory is not None else Path(__file__).with_name("presets")
    directory.mkdir(parents=True, exist_ok=True)
    (directory / SCALAR_FILE).write_text(json.dumps(scalar_payload(), indent=1) + "\n", encoding="ascii")
    (directory / ALLOCATION_FILE).write_text(json.dumps(allocation_payload(), indent=1) + "\n", encoding="ascii")


if __name__ == "__main__":
    write_presets()
