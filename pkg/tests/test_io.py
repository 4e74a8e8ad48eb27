import numpy as np
import pytest

from sampfit.core import GridDensity, Kind, MixtureDistribution
from sampfit.io import (digest, file_digest, load_checkpoint, mixtures_from_json, mixtures_to_json, read_grids,
                        read_report, read_trace, save_checkpoint, write_grids, write_report, write_trace)
from sampfit.sampler import LossTrace


def _grid(rng, n=8):
    m = rng.random((n, n))
    return GridDensity(m / m.sum(), (4.0, 4.0), (-2.0, 3.0))


class TestGrids:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        gs = [_grid(rng) for _ in range(3)]
        write_grids(tmp_path / "a.grid", gs, tag="abc")
        back = read_grids(tmp_path / "a.grid")
        assert len(back) == 3
        for g, b in zip(gs, back):
            np.testing.assert_array_equal(g.mass, b.mass)
            assert b.cell == g.cell and b.origin == g.origin

    def test_byte_identical(self, tmp_path):
        gs = [_grid(np.random.default_rng(1))]
        write_grids(tmp_path / "a.grid", gs)
        write_grids(tmp_path / "b.grid", gs)
        assert (tmp_path / "a.grid").read_bytes() == (tmp_path / "b.grid").read_bytes()

    def test_mixed_geometry_rejected(self, tmp_path):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            write_grids(tmp_path / "a.grid", [_grid(rng, 8), _grid(rng, 4)])

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "x.grid").write_bytes(b"nope\n")
        with pytest.raises(ValueError, match="not a grid"):
            read_grids(tmp_path / "x.grid")
        write_grids(tmp_path / "t.grid", [_grid(np.random.default_rng(3))])
        blob = (tmp_path / "t.grid").read_bytes()
        (tmp_path / "t.grid").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="expected"):
            read_grids(tmp_path / "t.grid")


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=7), np.array(2.5)]
        save_checkpoint(tmp_path / "m.ckpt", {"name": "x", "models": [{"K": 3}]}, arrays)
        meta, back = load_checkpoint(tmp_path / "m.ckpt")
        assert meta == {"name": "x", "models": [{"K": 3}]}
        for a, b in zip(arrays, back):
            np.testing.assert_array_equal(a, b)
            assert b.flags.writeable

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "m.ckpt").write_bytes(b"hello\n")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m.ckpt")


class TestRecords:
    def test_trace_roundtrip_is_exact(self, tmp_path):
        tr = LossTrace()
        tr.add(100, "ed", 1 / 3)
        tr.add(200, "nll", 7.123456789012345)
        write_trace(tmp_path / "t.csv", tr)
        assert read_trace(tmp_path / "t.csv") == tr.rows

    def test_mixtures_json(self):
        ms = [MixtureDistribution([0.25, 0.75], [[1, 2], [3, 4]], [[1, 1], [2, 0.5]], Kind.LAPLACE),
              MixtureDistribution([1.0], [[0, 0]], [[3, 3]])]
        back = mixtures_from_json(mixtures_to_json(ms))
        for m, b in zip(ms, back):
            assert b.kind is m.kind
            np.testing.assert_array_equal(b.weights, m.weights)
            np.testing.assert_array_equal(b.mu, m.mu)
            np.testing.assert_array_equal(b.scale, m.scale)

    def test_report_roundtrip(self, tmp_path):
        rows = [{"method": "mdn", "metric": "nll", "value": 9.2, "n": 54, "seed": 0},
                {"method": "mdn", "metric": "emd", "value": 1.5e-3, "n": 54, "seed": 0}]
        write_report(tmp_path / "r.csv", rows, comment="config_digest=abc")
        text = (tmp_path / "r.csv").read_text()
        assert text.startswith("# config_digest=abc\nmethod,metric,value,n,seed\n")
        back = read_report(tmp_path / "r.csv")
        assert [r["value"] for r in back] == [9.2, 1.5e-3]
        assert back[0]["seed"] == "0" and back[0]["n"] == 54

    def test_digests(self, tmp_path):
        assert digest({"a": 1, "b": [1, 2]}) == digest({"b": [1, 2], "a": 1})
        assert digest({"a": 1}) != digest({"a": 2})
        (tmp_path / "x").write_text("1")
        (tmp_path / "y").write_text("2")
        assert file_digest([tmp_path / "y", tmp_path / "x"]) == file_digest([tmp_path / "x", tmp_path / "y"])
