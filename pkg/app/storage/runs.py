import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

import pandas as pd

from app.reranker.checkpoint import load_checkpoint, save_checkpoint
from app.reranker.model import RerankerParams

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CSV_FLOAT_FORMAT = "%.10g"


def write_json(payload: Any, path: Union[str, Path]) -> None:
    """Atomic, key-sorted JSON write"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.replace(tmp, path)


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")


class RunDirectory:
    """
    Layout of one run:

        manifest.json
        checkpoints/theta_<t>.json
        online/<agent_id>.json
        reports/<name>.csv
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.manifest: Dict[str, Any] = {}
        manifest_path = self.root / MANIFEST_NAME
        if manifest_path.exists():
            with open(manifest_path, "r", encoding="utf-8") as handle:
                self.manifest = json.load(handle)

    def create(self) -> "RunDirectory":
        for sub in ("checkpoints", "online", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def checkpoint_path(self, iteration: int) -> Path:
        return self.root / "checkpoints" / f"theta_{iteration}.json"

    def online_path(self, agent_id: str) -> Path:
        return self.root / "online" / f"{agent_id}.json"

    def report_path(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.csv"

    def save_checkpoint(self, iteration: int, params: RerankerParams) -> Path:
        path = self.checkpoint_path(iteration)
        save_checkpoint(params, path)
        return path

    def load_checkpoint(self, iteration: int) -> RerankerParams:
        return load_checkpoint(self.checkpoint_path(iteration))

    def save_online(self, agent_id: str, params: RerankerParams) -> Path:
        path = self.online_path(agent_id)
        save_checkpoint(params, path)
        return path

    def write_report(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.report_path(name)
        write_frame(frame, path)
        return path

    def update_manifest(self, section: str, payload: Any) -> None:
        """Replace one top-level manifest section and rewrite the file"""
        self.manifest[section] = payload
        write_json(self.manifest, self.manifest_path)
