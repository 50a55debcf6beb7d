"""Manage run artifacts - binary tables, checkpoints, CSV curves and JSON summaries."""
import csv
import io
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import __version__
from .errors import CheckpointMismatchError, MixedHashError

KERNEL_MAGIC = b"NIRK1"
GROUND_STATE_MAGIC = b"NIRG1"
CHECKPOINT_MAGIC = b"NIRC1"


def write_binary(path: Union[str, Path], magic: bytes, header: dict, arrays: dict) -> Path:
    """
    Write magic, uint32 header length, JSON header, then float64 arrays.

    Args:
        path: Destination file
        magic: Five magic bytes identifying the format
        header: JSON-serialisable scalars
        arrays: Named arrays, written in insertion order

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header)
    header["version"] = __version__
    header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def read_binary(path: Union[str, Path], magic: bytes) -> tuple[dict, dict]:
    """
    Read a file written by write_binary.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If the magic bytes or sizes don't match
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Artifact not found: {path}")
    data = path.read_bytes()
    if data[: len(magic)] != magic:
        raise ValueError(f"{path} is not a {magic.decode()} file")
    offset = len(magic)
    (length,) = struct.unpack("<I", data[offset : offset + 4])
    offset += 4
    header = json.loads(data[offset : offset + length].decode("utf-8"))
    offset += length

    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        end = offset + 8 * count
        if end > len(data):
            raise ValueError(f"{path} is truncated at array '{spec['name']}'")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(spec["shape"]).astype(float)
        offset = end
    return header, arrays


def csv_text(columns: Sequence[str], rows: Iterable[Sequence], config_hash: str = "") -> str:
    """CSV body under the hash line; floats written with repr for bitwise reproducibility."""
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config_hash or 'none'} version={__version__}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()


class ArtifactStore:
    """Handles artifact discovery and storage for one experiment run."""

    def __init__(self, output_root: Union[str, Path], experiment: str, config_hash: str):
        """
        Initialize artifact store.

        Args:
            output_root: Root output directory of the run
            experiment: Experiment name (subdirectory)
            config_hash: Hash of the validated configuration
        """
        self.output_root = Path(output_root)
        self.experiment = experiment
        self.config_hash = config_hash
        self.run_dir = self.output_root / experiment
        self.checkpoint_dir = self.run_dir / "checkpoints"

        # Ensure output directory exists
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint_path(self, chain_id: int, T: float) -> Path:
        return self.checkpoint_dir / f"chain_{chain_id}_T{T:g}.nirc"

    def find_checkpoint(self, chain_id: int, T: float) -> Optional[Path]:
        """Existing checkpoint for a chain, or None."""
        path = self.checkpoint_path(chain_id, T)
        return path if path.exists() else None

    def check_hash(self, header: dict, path: Path) -> None:
        """Refuse artifacts written under another configuration."""
        found = header.get("config_hash")
        if found != self.config_hash:
            raise CheckpointMismatchError(
                f"{path} was written with config hash {found}, current run has {self.config_hash}"
            )

    def save_csv(self, columns: Sequence[str], rows: Iterable[Sequence], filename: Optional[str] = None) -> Path:
        path = self.run_dir / (filename or f"{self.experiment}.csv")
        path.write_text(csv_text(columns, rows, self.config_hash), encoding="utf-8")
        return path

    def save_summary(self, summary: dict, filename: str = "summary.json") -> Path:
        payload = {"experiment": self.experiment, "config_hash": self.config_hash, "code_version": __version__}
        payload.update(summary)
        path = self.run_dir / filename
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable), encoding="utf-8")
        return path

    def get_output_structure(self) -> dict:
        """
        Get the current run directory structure.

        Returns:
            Dictionary mapping experiment name to the files it holds
        """
        structure = {}
        if not self.output_root.exists():
            return structure
        for run_dir in sorted(self.output_root.iterdir()):
            if run_dir.is_dir():
                structure[run_dir.name] = sorted(
                    str(f.relative_to(run_dir)) for f in run_dir.rglob("*") if f.is_file()
                )
        return structure


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def read_csv(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    """Parse a run CSV into (header fields, rows)."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path} has no config hash line")
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    rows = list(csv.DictReader(lines[1:]))
    return meta, rows


def aggregate_summaries(paths: Sequence[Union[str, Path]]) -> list[dict]:
    """
    Load several summary.json files that must share one config hash.

    Raises:
        MixedHashError: If the summaries come from different configurations
    """
    summaries = [json.loads(Path(p).read_text(encoding="utf-8")) for p in paths]
    hashes = {s.get("config_hash") for s in summaries}
    if len(hashes) > 1:
        raise MixedHashError(f"Refusing to aggregate summaries with mixed config hashes: {sorted(map(str, hashes))}")
    return summaries
