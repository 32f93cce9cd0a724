"""Model checkpoints: a JSON manifest beside a little-endian float64 blob.

The blob holds every trainable parameter in ``DecoderNetwork.parameters()`` order
followed by the batch-norm running statistics. Optimizer accumulators are not saved.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from ..config import NetworkArchitecture, TrainConfig
from ..errors import CheckpointError
from ..version import __version__
from .model import LAYER_ORDER, DecoderNetwork

logger = logging.getLogger(__name__)

FORMAT = 1


def blob_path(manifest_path: str | os.PathLike[str]) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def _entries(network: DecoderNetwork) -> dict[str, np.ndarray]:
    return {**network.parameters(), **network.buffers()}


def save_checkpoint(
    network: DecoderNetwork,
    path: str | os.PathLike[str],
    seed: int | None = None,
    run_id: str | None = None,
    train_cfg: TrainConfig | None = None,
) -> Path:
    """Write ``path`` (manifest) and its ``.bin`` blob; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layout, offset = [], 0
    arrays = _entries(network)
    for name, array in arrays.items():
        layout.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size
    manifest: dict[str, Any] = {
        "format": FORMAT,
        "version": __version__,
        "layers": list(LAYER_ORDER),
        "architecture": network.arch.model_dump(mode="json"),
        "input_len": network.input_len,
        "n_bins": network.n_bins,
        "seed": seed,
        "run_id": run_id,
        "train": train_cfg.model_dump(mode="json") if train_cfg is not None else None,
        "blob": blob_path(path).name,
        "count": offset,
        "parameters": layout,
    }
    flat = np.concatenate([a.ravel() for a in arrays.values()]).astype("<f8")
    blob_path(path).write_bytes(flat.tobytes())
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info("Saved checkpoint %s (%d values)", path, offset)
    return path


@dataclass
class Checkpoint:
    network: DecoderNetwork
    manifest: dict[str, Any]

    @property
    def run_id(self) -> str | None:
        return self.manifest.get("run_id")


def load_checkpoint(path: str | os.PathLike[str]) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        flat = np.frombuffer(
            (path.parent / manifest["blob"]).read_bytes(), dtype="<f8"
        ).astype(np.float64)
        arch = NetworkArchitecture.model_validate(manifest["architecture"])
    except (OSError, ValueError, KeyError, TypeError, ValidationError) as exc:
        raise CheckpointError(f"Cannot load checkpoint {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')}")
    if flat.size != manifest["count"]:
        raise CheckpointError(f"{path}: blob has {flat.size} values, manifest lists {manifest['count']}")

    network = DecoderNetwork.zeros(arch, int(manifest["input_len"]), int(manifest["n_bins"]))
    arrays = _entries(network)
    listed = [entry["name"] for entry in manifest["parameters"]]
    if listed != list(arrays):
        raise CheckpointError(f"{path}: parameter layout does not match the architecture")
    for entry in manifest["parameters"]:
        target = arrays[entry["name"]]
        if list(target.shape) != entry["shape"]:
            raise CheckpointError(f"{path}: {entry['name']} has shape {entry['shape']}, expected {list(target.shape)}")
        target[...] = flat[entry["offset"] : entry["offset"] + target.size].reshape(target.shape)
    return Checkpoint(network, manifest)
