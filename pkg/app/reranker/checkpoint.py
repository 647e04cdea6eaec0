import json
import logging
import os
from pathlib import Path
from typing import Dict, Union

import numpy as np

from app.errors import CheckpointError
from app.reranker.features import FEATURE_SCHEMA_VERSION
from app.reranker.model import AdamState, RerankerParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ium-reranker"
CHECKPOINT_VERSION = 1


def _encode(arrays: Dict[str, np.ndarray]) -> Dict[str, list]:
    # float() -> repr round-trips every binary64 value exactly
    return {key: [float(x) for x in arrays[key]] for key in sorted(arrays)}


def _decode(raw: Dict[str, list], dim: int, what: str) -> Dict[str, np.ndarray]:
    decoded = {}
    for key, values in raw.items():
        array = np.array(values, dtype=np.float64)
        if array.shape != (dim + 1,):
            raise CheckpointError(f"{what} slot {key!r} has shape {array.shape}, expected ({dim + 1},)")
        decoded[key] = array
    return decoded


def checkpoint_dict(params: RerankerParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_schema_version": params.schema_version,
        "dim": params.dim,
        "slots": _encode(params.slots),
        "optimizer": {
            "step": params.optimizer.step,
            "m": _encode(params.optimizer.m),
            "v": _encode(params.optimizer.v),
        },
    }


def save_checkpoint(params: RerankerParams, path: Union[str, Path]) -> None:
    """Write params atomically (temp file + rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(checkpoint_dict(params), handle, sort_keys=True)
        handle.write("\n")
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path], expected_schema: int = FEATURE_SCHEMA_VERSION) -> RerankerParams:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({e.msg} at char {e.pos})") from e

    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a reranker checkpoint")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {raw.get('version')}")
    if raw.get("feature_schema_version") != expected_schema:
        raise CheckpointError(
            f"{path}: feature schema version {raw.get('feature_schema_version')} "
            f"does not match expected {expected_schema}"
        )

    try:
        dim = int(raw["dim"])
        slots = _decode(raw["slots"], dim, "parameter")
        opt = raw["optimizer"]
        optimizer = AdamState(
            m=_decode(opt["m"], dim, "first moment"),
            v=_decode(opt["v"], dim, "second moment"),
            step=int(opt["step"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: missing or invalid field ({e})") from e

    if "shared" not in slots:
        raise CheckpointError(f"{path}: missing shared slot")
    return RerankerParams(dim=dim, slots=slots, optimizer=optimizer, schema_version=raw["feature_schema_version"])
