"""
Checkpoint Codec for geoward

A checkpoint is a JSON manifest (architecture, weight count, dataset
fingerprint) plus a sidecar blob of little-endian float64 weights in flat
layout order. Loading reproduces the weights bit-for-bit.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..core.exceptions import FormatError, InvalidInputError
from ..formats.reports import CheckpointManifest
from ..model.network import FlatWeights, NetworkSpec

logger = logging.getLogger(__name__)

BLOB_DTYPE = "<f8"


class CheckpointCodec:
    """
    Reads and writes (NetworkSpec, FlatWeights) checkpoints.

    The manifest path is the one given; the blob sits next to it with a
    ``.weights`` suffix.
    """

    @staticmethod
    def blob_path(manifest_path: Path) -> Path:
        return manifest_path.with_suffix(".weights")

    @staticmethod
    def save(
        path: Union[str, Path],
        spec: NetworkSpec,
        w: FlatWeights,
        dataset_fingerprint: Optional[str] = None,
    ) -> CheckpointManifest:
        """
        Write manifest and weight blob.

        Args:
            path: Manifest file path (JSON)
            spec: Architecture of the network
            w: Weights, dimension-checked against ``spec``
            dataset_fingerprint: Optional hash of the training data

        Returns:
            The manifest that was written
        """
        path = Path(path)
        if w.n != spec.n_params:
            raise InvalidInputError(f"Weights have {w.n} entries, {spec.arch()} needs {spec.n_params}")
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = CheckpointCodec.blob_path(path)
        manifest = CheckpointManifest(
            layer_sizes=spec.layer_sizes,
            hidden_activation=spec.hidden_activation,
            output_mode=spec.output_mode,
            weight_count=spec.n_params,
            dataset_fingerprint=dataset_fingerprint,
            blob=blob.name,
        )
        blob.write_bytes(np.ascontiguousarray(w.values).astype(BLOB_DTYPE).tobytes())
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.debug(f"Saved {spec.arch()} checkpoint to {path}")
        return manifest

    @staticmethod
    def load(path: Union[str, Path]) -> Tuple[NetworkSpec, FlatWeights, CheckpointManifest]:
        """
        Read a checkpoint back.

        Raises:
            InvalidInputError: If either file is missing
            FormatError: If the manifest is malformed or the blob size is wrong
        """
        path = Path(path)
        if not path.exists():
            raise InvalidInputError(f"Checkpoint not found: {path}")
        try:
            manifest = CheckpointManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
            spec = manifest.network_spec()
        except (json.JSONDecodeError, ValidationError, ValueError) as e:
            raise FormatError(str(path), f"not a valid checkpoint manifest: {e}")
        if spec.n_params != manifest.weight_count:
            raise FormatError(
                str(path), f"weight_count {manifest.weight_count} does not match {spec.arch()} ({spec.n_params})"
            )
        blob = path.parent / manifest.blob
        if not blob.exists():
            raise InvalidInputError(f"Checkpoint weights not found: {blob}")
        raw = blob.read_bytes()
        expected = manifest.weight_count * 8
        if len(raw) != expected:
            raise FormatError(str(blob), f"expected {expected} bytes, found {len(raw)}")
        values = np.frombuffer(raw, dtype=BLOB_DTYPE).astype(np.float64)
        return spec, FlatWeights(values=values, spec=spec), manifest


def save_checkpoint(
    path: Union[str, Path], spec: NetworkSpec, w: FlatWeights, dataset_fingerprint: Optional[str] = None
) -> CheckpointManifest:
    return CheckpointCodec.save(path, spec, w, dataset_fingerprint)


def load_checkpoint(path: Union[str, Path]) -> Tuple[NetworkSpec, FlatWeights]:
    spec, w, _ = CheckpointCodec.load(path)
    return spec, w
