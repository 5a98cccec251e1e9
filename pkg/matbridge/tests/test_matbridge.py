import numpy as np
import h5py
import pytest
import scipy.io

from matbridge import (
    BridgeError,
    MatPair,
    convert,
    inspect_pair,
    load_mat_array,
    load_pair,
    parse_band_list,
    read_remap,
)
from matbridge.cli import main
from matbridge.core import class_counts

from xdhs import data as xd


def _fixture_arrays(seed=0, H=7, W=6, B=5, classes=3):
    rng = np.random.default_rng(seed)
    cube = rng.normal(size=(H, W, B)).astype(np.float64) * 1e3
    gt = rng.integers(0, classes + 1, size=(H, W)).astype(np.uint8)
    return cube, gt


def _save_v5(tmp_path, cube, gt, cube_name="cube", gt_name="gt"):
    cube_path = tmp_path / "cube_v5.mat"
    gt_path = tmp_path / "gt_v5.mat"
    scipy.io.savemat(cube_path, {cube_name: cube})
    scipy.io.savemat(gt_path, {gt_name: gt})
    return str(cube_path), str(gt_path)


def _save_v73(tmp_path, cube, gt):
    # MATLAB v7.3 files are HDF5 with arrays stored column-major, so the
    # dataset axes appear reversed; emulate that by storing the transpose.
    cube_path = tmp_path / "cube_v73.mat"
    gt_path = tmp_path / "gt_v73.mat"
    with h5py.File(cube_path, "w") as f:
        f.create_dataset("cube", data=cube.T)
    with h5py.File(gt_path, "w") as f:
        f.create_dataset("gt", data=gt.T)
    return str(cube_path), str(gt_path)


# ---------------------------------------------------------------------------
# loading

def test_load_v5_roundtrip(tmp_path):
    cube, gt = _fixture_arrays()
    cube_path, gt_path = _save_v5(tmp_path, cube, gt)
    pair = load_pair(cube_path, gt_path)
    assert np.array_equal(pair.cube, cube)
    assert np.array_equal(pair.gt, gt)


def test_load_v73_roundtrip(tmp_path):
    cube, gt = _fixture_arrays()
    cube_path, gt_path = _save_v73(tmp_path, cube, gt)
    pair = load_pair(cube_path, gt_path)
    assert np.array_equal(pair.cube, cube)
    assert np.array_equal(pair.gt, gt)


def test_load_picks_single_variable_ignoring_metadata(tmp_path):
    cube, gt = _fixture_arrays()
    cube_path, _ = _save_v5(tmp_path, cube, gt, cube_name="indian_pines_corrected")
    arr = load_mat_array(cube_path)
    assert np.array_equal(arr, cube)


def test_load_ambiguous_requires_var(tmp_path):
    path = tmp_path / "multi.mat"
    scipy.io.savemat(path, {"a": np.zeros((2, 2)), "b": np.ones((2, 2))})
    with pytest.raises(BridgeError, match="exactly one"):
        load_mat_array(str(path))
    assert np.array_equal(load_mat_array(str(path), var="b"), np.ones((2, 2)))


def test_load_missing_var_errors(tmp_path):
    path = tmp_path / "one.mat"
    scipy.io.savemat(path, {"a": np.zeros((2, 2))})
    with pytest.raises(BridgeError, match="no variable"):
        load_mat_array(str(path), var="nope")


def test_load_rejects_non_numeric(tmp_path):
    path = tmp_path / "cells.mat"
    scipy.io.savemat(path, {"c": np.array([["x", "y"]], dtype=object)})
    with pytest.raises(BridgeError):
        load_mat_array(str(path))


def test_pair_validation():
    cube, gt = _fixture_arrays()
    with pytest.raises(BridgeError, match="do not match"):
        MatPair(cube, gt[:-1, :])
    with pytest.raises(BridgeError, match="H x W x B"):
        MatPair(cube[:, :, 0], gt)
    with pytest.raises(BridgeError, match="negative"):
        MatPair(cube, gt.astype(np.int32) - 1)
    with pytest.raises(BridgeError, match="non-integer"):
        MatPair(cube, gt.astype(np.float64) + 0.5)


def test_pair_accepts_integral_float_gt():
    cube, gt = _fixture_arrays()
    pair = MatPair(cube, gt.astype(np.float64))
    assert pair.gt.dtype == np.int64
    assert np.array_equal(pair.gt, gt)


# ---------------------------------------------------------------------------
# conversion, validated with the downstream readers

@pytest.mark.parametrize("saver", [_save_v5, _save_v73])
def test_convert_roundtrip_under_32bit_cast(tmp_path, saver):
    cube, gt = _fixture_arrays(seed=3)
    cube_path, gt_path = saver(tmp_path, cube, gt)
    pair = load_pair(cube_path, gt_path)
    hsc_path, hsl_path = convert(pair, tmp_path / "out")

    loaded = xd.read_hsc(hsc_path)
    assert loaded.values.shape == cube.shape
    assert np.array_equal(loaded.values, cube.astype(np.float32))

    labels = xd.read_hsl(hsl_path)
    assert labels.C == int(gt.max())
    assert np.array_equal(labels.labels, gt.astype(np.uint16))


def test_inspect_counts_match_hsl_recount(tmp_path):
    cube, gt = _fixture_arrays(seed=4)
    cube_path, gt_path = _save_v5(tmp_path, cube, gt)
    pair = load_pair(cube_path, gt_path)
    _, hsl_path = convert(pair, tmp_path / "out")
    recount = class_counts(xd.read_hsl(hsl_path).labels)
    assert recount == class_counts(pair.gt)
    text = inspect_pair(pair)
    for cls, n in recount.items():
        assert f"class {cls}: {n}" in text
    assert f"total labeled: {sum(recount.values())}" in text


def test_inspect_all_zero_gt(tmp_path):
    cube, gt = _fixture_arrays()
    pair = MatPair(cube, np.zeros_like(gt))
    assert "total labeled: 0" in inspect_pair(pair)
    assert class_counts(pair.gt) == {}


def test_remap_collapses_and_zeroes_unmapped(tmp_path):
    cube, _ = _fixture_arrays(B=4)
    gt = np.arange(42).reshape(7, 6) % 7  # labels 0..6
    pair = MatPair(cube, gt)
    remap_path = tmp_path / "remap.txt"
    remap_path.write_text("# keep three classes\n2 1\n4 2\n6 2\n")
    _, hsl_path = convert(pair, tmp_path / "out", remap=read_remap(remap_path))
    labels = xd.read_hsl(hsl_path)
    assert labels.C == 2
    expected = np.zeros_like(gt)
    expected[gt == 2] = 1
    expected[(gt == 4) | (gt == 6)] = 2
    assert np.array_equal(labels.labels, expected.astype(np.uint16))


def test_remap_parse_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(BridgeError, match="old new"):
        read_remap(path)
    path.write_text("1 x\n")
    with pytest.raises(BridgeError, match="integers"):
        read_remap(path)
    path.write_text("1 2\n1 3\n")
    with pytest.raises(BridgeError, match="duplicate"):
        read_remap(path)


def test_drop_bands(tmp_path):
    cube, gt = _fixture_arrays(B=6)
    pair = MatPair(cube, gt)
    hsc_path, _ = convert(pair, tmp_path / "out", drop_bands=parse_band_list("1,3-4"))
    loaded = xd.read_hsc(hsc_path)
    assert loaded.B == 3
    assert np.array_equal(loaded.values, cube[:, :, [0, 2, 5]].astype(np.float32))


def test_parse_band_list():
    assert parse_band_list("103-105,219, 2") == [2, 103, 104, 105, 219]
    with pytest.raises(BridgeError):
        parse_band_list("5-3")
    with pytest.raises(BridgeError):
        parse_band_list("x")


def test_drop_bands_validation(tmp_path):
    cube, gt = _fixture_arrays(B=4)
    pair = MatPair(cube, gt)
    with pytest.raises(BridgeError, match="out of range"):
        convert(pair, tmp_path / "out", drop_bands=[9])
    with pytest.raises(BridgeError, match="every band"):
        convert(pair, tmp_path / "out", drop_bands=[0, 1, 2, 3])


# ---------------------------------------------------------------------------
# CLI

def test_cli_convert_and_inspect(tmp_path, capsys):
    cube, gt = _fixture_arrays(seed=5)
    cube_path, gt_path = _save_v5(tmp_path, cube, gt)
    out_prefix = str(tmp_path / "scene")

    assert main(["convert", cube_path, gt_path, out_prefix]) == 0
    loaded = xd.read_hsc(out_prefix + ".hsc")
    assert np.array_equal(loaded.values, cube.astype(np.float32))

    assert main(["inspect", cube_path, gt_path]) == 0
    out = capsys.readouterr().out
    assert "H x W x B: 7 x 6 x 5" in out
    assert f"total labeled: {int(np.count_nonzero(gt))}" in out


def test_cli_nonzero_exit_on_failures(tmp_path, capsys):
    cube, gt = _fixture_arrays()
    cube_path, gt_path = _save_v5(tmp_path, cube, gt)

    assert main(["inspect", str(tmp_path / "missing.mat"), gt_path]) == 1
    assert "error" in capsys.readouterr().err

    bad_gt = tmp_path / "badgt.mat"
    scipy.io.savemat(bad_gt, {"gt": gt[:-2, :]})
    assert main(["convert", cube_path, str(bad_gt), str(tmp_path / "o")]) == 1
    assert "do not match" in capsys.readouterr().err

    remap = tmp_path / "remap.txt"
    remap.write_text("not a remap\n")
    assert main(
        ["convert", cube_path, gt_path, str(tmp_path / "o"), "--class-remap", str(remap)]
    ) == 1
