import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src import __version__
from src.artifact_store import (
    CHECKPOINT_MAGIC,
    KERNEL_MAGIC,
    ArtifactStore,
    aggregate_summaries,
    csv_text,
    read_binary,
    read_csv,
    write_binary,
)
from src.errors import CheckpointMismatchError, MixedHashError


def test_binary_round_trip_is_bit_exact(tmp_path):
    arrays = {"grid": np.linspace(0, 1, 7), "values": np.random.default_rng(0).standard_normal((3, 4))}
    path = write_binary(tmp_path / "t.nirk", KERNEL_MAGIC, {"sigma": 0.5}, arrays)
    header, loaded = read_binary(path, KERNEL_MAGIC)
    assert header["sigma"] == 0.5
    assert header["version"] == __version__
    for name, a in arrays.items():
        assert_array_equal(loaded[name], a)
    assert not path.with_suffix(".nirk.tmp").exists()


def test_wrong_magic(tmp_path):
    path = write_binary(tmp_path / "c.nirc", CHECKPOINT_MAGIC, {}, {"path": np.zeros((3, 3))})
    with pytest.raises(ValueError):
        read_binary(path, KERNEL_MAGIC)


def test_truncated_file(tmp_path):
    path = write_binary(tmp_path / "c.nirc", CHECKPOINT_MAGIC, {}, {"path": np.ones((10, 3))})
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError, match="truncated"):
        read_binary(path, CHECKPOINT_MAGIC)


def test_missing_artifact(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_binary(tmp_path / "none.nirg", KERNEL_MAGIC)


def test_csv_carries_hash_and_exact_floats(tmp_path):
    store = ArtifactStore(tmp_path, "divergence", "abc123")
    value = 0.1 + 0.2
    path = store.save_csv(("T", "value"), [(4.0, value), (8.0, 1 / 3)])
    meta, rows = read_csv(path)
    assert meta == {"config_hash": "abc123", "version": __version__}
    assert float(rows[0]["value"]) == value
    assert float(rows[1]["value"]) == 1 / 3


def test_csv_without_hash():
    text = csv_text(("r",), [(1.0,)])
    assert text.splitlines()[0] == f"# config_hash=none version={__version__}"


def test_checkpoint_hash_guard(tmp_path):
    store = ArtifactStore(tmp_path, "sample", "aaaa")
    store.check_hash({"config_hash": "aaaa"}, tmp_path)
    with pytest.raises(CheckpointMismatchError):
        store.check_hash({"config_hash": "bbbb"}, tmp_path)


def test_checkpoint_lookup(tmp_path):
    store = ArtifactStore(tmp_path, "sample", "aaaa")
    assert store.find_checkpoint(0, 8.0) is None
    write_binary(store.checkpoint_path(0, 8.0), CHECKPOINT_MAGIC, {}, {"path": np.zeros((3, 3))})
    assert store.find_checkpoint(0, 8.0).name == "chain_0_T8.nirc"
    assert "checkpoints/chain_0_T8.nirc" in store.get_output_structure()["sample"]


def test_summary_and_aggregation(tmp_path):
    a = ArtifactStore(tmp_path / "a", "spectral", "h1").save_summary({"fit": np.float64(2.0)})
    b = ArtifactStore(tmp_path / "b", "spectral", "h1").save_summary({"fit": np.array([1.0])})
    c = ArtifactStore(tmp_path / "c", "spectral", "h2").save_summary({})
    assert json.loads(a.read_text())["fit"] == 2.0
    assert len(aggregate_summaries([a, b])) == 2
    with pytest.raises(MixedHashError):
        aggregate_summaries([a, c])
