"""
Checkpoint persistence: a JSON manifest plus a sidecar blob of little-endian float32s.

The manifest lists parameter names and shapes in store order; the blob holds the
values concatenated in that same order.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .network import NetConfig, ParamStore, count_params
from .utils import ensure_directory_exists

logger = logging.getLogger("lowlight_haze.checkpoint")

FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Weights with the network layout and training metadata they belong to."""

    params: ParamStore
    config: NetConfig
    seed: int = 0
    metadata: dict = field(default_factory=dict)


def blob_path(path: Path) -> Path:
    """Sidecar file holding the raw parameter values."""
    path = Path(path)
    return path.with_name(path.name + ".bin")


def save_checkpoint(
    path: Path,
    params: ParamStore,
    config: NetConfig,
    seed: int = 0,
    metadata: dict | None = None,
) -> Path:
    """
    Write manifest and blob.

    Args:
        path: Manifest path (the blob is written next to it)
        params: Weights to persist
        config: Network layout
        seed: Run seed
        metadata: Extra JSON-serialisable training information

    Returns:
        The manifest path
    """
    path = Path(path)
    ensure_directory_exists(path.parent)
    sidecar = blob_path(path)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": int(seed),
        "parameters": [
            {"name": name, "shape": [int(n) for n in value.shape]} for name, value in params.items()
        ],
        "parameter_count": count_params(params),
        "metadata": metadata or {},
        "blob": sidecar.name,
    }
    with open(sidecar, "wb") as handle:
        for _, value in params.items():
            handle.write(np.ascontiguousarray(value, dtype=BLOB_DTYPE).tobytes())
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        FileNotFoundError: If the manifest does not exist
        CheckpointError: On version mismatch, malformed manifest or truncated blob
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"Checkpoint manifest {path} is not valid JSON: {e}") from e

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        config = NetConfig.from_dict(manifest["config"])
        entries = [
            (str(p["name"]), tuple(int(n) for n in p["shape"])) for p in manifest["parameters"]
        ]
        sidecar = path.with_name(manifest["blob"])
        seed = int(manifest.get("seed", 0))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise CheckpointError(f"Checkpoint {path} has an invalid network config: {e}") from e
        raise CheckpointError(f"Malformed checkpoint manifest {path}: {e}") from e

    if not sidecar.exists():
        raise CheckpointError(f"Checkpoint blob missing: {sidecar}")
    values = np.fromfile(sidecar, dtype=BLOB_DTYPE)
    expected = sum(int(np.prod(shape)) for _, shape in entries)
    if values.size != expected:
        raise CheckpointError(
            f"Checkpoint blob holds {values.size} values, manifest lists {expected}"
        )

    params = OrderedDict()
    offset = 0
    for name, shape in entries:
        size = int(np.prod(shape))
        params[name] = values[offset : offset + size].reshape(shape).astype(np.float32)
        offset += size
    store = ParamStore(params)
    if store.total_count != config.param_count:
        raise CheckpointError(
            f"Checkpoint has {store.total_count} parameters, config expects {config.param_count}"
        )
    return Checkpoint(store, config, seed, dict(manifest.get("metadata", {})))
