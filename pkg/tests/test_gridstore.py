import json
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fquant import presets
from fquant.diffusion import heston_vol_quantizer
from fquant.gridstore import (
    ChecksumError,
    GridFormatError,
    GridStore,
    InvariantError,
    VersionError,
    config_digest,
    default_store_dir,
    dumps_grid,
    load_grid,
    loads_grid,
    save_grid,
)
from fquant.kl_basis import build_product_fq, optimal_allocation
from fquant.rng import RngStream
from fquant.scalar_quant import optimal_normal_quantizer, optimal_uniform_quantizer
from fquant.vq_core import Codebook, CovNorm, OptSchedule, estimate_distortion_weights, origin_codebook, splitting_extend


def test_scalar_round_trip_m35(tmp_path):
    q = optimal_normal_quantizer(35)
    p = save_grid(tmp_path / "q.fqgrid", q)
    back = load_grid(p, "scalar")
    assert back == q
    assert np.array_equal(back.points, q.points) and np.array_equal(back.weights, q.weights)
    assert back.distortion == q.distortion


def test_uniform_scalar_round_trip():
    q = optimal_uniform_quantizer(-1.0, 3.0, 5)
    assert loads_grid(dumps_grid(q)) == q


def test_codebook_functional_ensemble_round_trip():
    rng = RngStream(4)
    cb = splitting_extend(origin_codebook(CovNorm([0.4, 0.05])), 6, rng)
    cb = estimate_distortion_weights(cb, 5000, rng.child("w"))
    assert loads_grid(dumps_grid(cb)) == cb
    fq = build_product_fq(optimal_allocation(100))
    assert loads_grid(dumps_grid(fq)) == fq
    ens = heston_vol_quantizer(2.0, 0.01, 0.1, 0.1, fq, 16)
    assert loads_grid(dumps_grid(ens)) == ens


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e300, 1e300, allow_nan=False)))
@settings(max_examples=100, deadline=None)
def test_values_round_trip_bit_exactly(values):
    cb = Codebook(values[:, None], np.full(values.size, 1.0 / values.size), 0.5, CovNorm([1.0]))
    back = loads_grid(dumps_grid(cb))
    assert np.array_equal(back.points, cb.points)
    assert np.array_equal(back.weights, cb.weights)


def test_corrupted_byte_raises_checksum_error():
    text = dumps_grid(optimal_normal_quantizer(7))
    lines = text.split("\n")
    row = next(i for i, l in enumerate(lines) if l.startswith("array points")) + 1
    lines[row] = lines[row].replace("1", "2", 1)
    with pytest.raises(ChecksumError):
        loads_grid("\n".join(lines))


def _rechecksum(text):
    head, _, rest = text.partition("\n")
    payload = rest[: rest.rfind("checksum ")]
    return f"{head}\n{payload}checksum {zlib.crc32(payload.encode()) & 0xFFFFFFFF:08x}\n"


def test_weights_summing_to_09_name_the_field():
    cb = Codebook(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]), 0.3, CovNorm([1.0]))
    text = dumps_grid(cb).replace("array weights 2\n0.5 0.5", "array weights 2\n0.45 0.45")
    assert "0.45 0.45" in text
    with pytest.raises(InvariantError) as exc:
        loads_grid(_rechecksum(text))
    assert exc.value.field == "weights"
    assert "weights" in str(exc.value)


def test_non_increasing_scalar_points_rejected():
    text = dumps_grid(optimal_normal_quantizer(2))
    bad = text.replace("-0.79788456080286541 0.79788456080286541", "0.79788456080286541 -0.79788456080286541")
    assert bad != text
    with pytest.raises(InvariantError) as exc:
        loads_grid(_rechecksum(bad))
    assert exc.value.field == "points"


def test_version_and_format_errors():
    text = dumps_grid(optimal_normal_quantizer(3))
    with pytest.raises(VersionError):
        loads_grid(text.replace("FQGRID 1", "FQGRID 2", 1))
    with pytest.raises(GridFormatError):
        loads_grid("hello\n")
    with pytest.raises(GridFormatError):
        loads_grid(text[: text.rfind("checksum")])
    with pytest.raises(GridFormatError):
        loads_grid(text, kind="functional")


def test_error_classes_are_distinct():
    assert len({ChecksumError, VersionError, InvariantError, GridFormatError}) == 4
    for cls in (ChecksumError, VersionError, InvariantError):
        assert not issubclass(cls, GridFormatError)


def test_config_is_embedded_with_digest():
    cfg = {"seed": 2024, "command": "scalar", "size": 3}
    text = dumps_grid(optimal_normal_quantizer(3), cfg)
    _, meta = loads_grid(text, with_meta=True)
    assert meta["config"] == cfg
    assert meta["config_digest"] == config_digest(cfg)
    assert config_digest(cfg) == config_digest(dict(reversed(list(cfg.items()))))
    assert dumps_grid(optimal_normal_quantizer(3), cfg) == text


def test_store_reuses_files(tmp_path):
    store = GridStore(tmp_path)
    sched = OptSchedule(clvq_steps_per_point=5, lloyd_iters=1, lloyd_samples_per_point=50, final_iters=2, final_samples_per_point=100, eval_samples_per_point=200)
    a = store.functional(5, seed=3, schedule=sched)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    mtime = files[0].stat().st_mtime_ns
    b = store.functional(5, seed=3, schedule=sched)
    assert a == b and files[0].stat().st_mtime_ns == mtime
    c = store.functional(5, seed=4, schedule=sched)
    assert len(list(tmp_path.iterdir())) == 2 and c != a


def test_store_dir_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("FQUANT_GRID_DIR", str(tmp_path))
    assert default_store_dir() == tmp_path
    assert GridStore().root == tmp_path


def test_scalar_presets_match_fresh_computation():
    data = json.loads(json.dumps(presets.scalar_payload()))
    shipped = presets._read(presets.SCALAR_FILE)
    assert data == shipped
    table = presets.normal_quantizers()
    assert sorted(table) == list(range(1, 65))
    assert table[2].points[1] == pytest.approx(np.sqrt(2 / np.pi), rel=1e-15)


@pytest.mark.parametrize("N", [1, 2, 10, 57, 100, 999, 1000, 4321, 10000])
def test_allocation_presets_match_search(N):
    got = presets.preset_allocation(N)
    ref = optimal_allocation(N)
    assert got.sizes == ref.sizes and got.N_rec == ref.N_rec
    assert got.quant_error == pytest.approx(ref.quant_error, rel=1e-14)
