import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.agents.oracle import AgentDescriptor, QueryInstance, load_queries, load_roster
from app.errors import ConfigError
from app.ium.offline import OfflineConfig
from app.ium.online import OnlineConfig
from app.reranker.train import OptimizerConfig

load_dotenv()


class Settings:
    """Process-level settings; they never change numeric results"""

    # Logging
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE") or None

    # Serve process
    SERVE_HOST = os.getenv("SERVE_HOST", "127.0.0.1")
    SERVE_PORT = int(os.getenv("SERVE_PORT", "7733"))
    STATUS_PORT = int(os.getenv("STATUS_PORT")) if os.getenv("STATUS_PORT") else None

    # Serve log
    DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///ium_serve.db")

settings = Settings()


DEFAULT_B_VALUES = [4, 8, 32, 64, 128]
_PATH_FIELDS = ("corpus", "roster", "queries_dir", "output_dir", "index")


class RunConfig(BaseModel):
    """One reproducible run, loaded from a JSON file"""

    model_config = ConfigDict(extra="forbid")

    corpus: Path
    roster: Path
    queries_dir: Path
    output_dir: Path
    seed: int
    index: Optional[Path] = None
    max_words: int = Field(100, ge=1)
    offline: OfflineConfig = Field(default_factory=OfflineConfig)
    online: OnlineConfig = Field(default_factory=OnlineConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train_split: str = "train"
    eval_split: str = "test"
    stream_split: str = "stream"
    b_values: List[int] = Field(default_factory=lambda: list(DEFAULT_B_VALUES))

    @model_validator(mode="before")
    @classmethod
    def _inherit_seed(cls, data):
        # Sub-configs without their own seed take the run seed
        if isinstance(data, dict) and "seed" in data:
            for section in ("offline", "online"):
                sub = data.get(section)
                if sub is None:
                    data[section] = {"seed": data["seed"]}
                elif isinstance(sub, dict) and "seed" not in sub:
                    data[section] = {**sub, "seed": data["seed"]}
        return data

    @model_validator(mode="after")
    def _b_values_positive(self) -> "RunConfig":
        if any(b < 1 for b in self.b_values):
            raise ValueError("every b value must be >= 1")
        return self

    @classmethod
    def load(cls, path: Union[str, Path], check_files: bool = True) -> "RunConfig":
        """
        Read and validate a run configuration

        Relative paths are resolved against the directory holding the file.

        Raises:
            ConfigError: naming the offending field
        """
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", field="config")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON ({e.msg} at line {e.lineno})", field="config")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object", field="config")

        base = path.parent
        for name in _PATH_FIELDS:
            value = raw.get(name)
            if isinstance(value, str) and not Path(value).is_absolute():
                raw[name] = str(base / value)
        config = cls.from_dict(raw)
        if check_files:
            config.check_files()
        return config

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(part) for part in first["loc"]) or "config"
            raise ConfigError(f"invalid config value for {where}: {first['msg']}", field=where)

    def check_files(self) -> None:
        for name in ("corpus", "roster"):
            if not getattr(self, name).is_file():
                raise ConfigError(f"{name} file {getattr(self, name)} does not exist", field=name)
        if not self.queries_dir.is_dir():
            raise ConfigError(f"queries_dir {self.queries_dir} does not exist", field="queries_dir")
        if self.index is not None and not self.index.is_file():
            raise ConfigError(f"index file {self.index} does not exist", field="index")

    def queries_path(self, tid: str, split: str) -> Path:
        return self.queries_dir / tid / f"{split}.jsonl"

    def load_agents(self) -> List[AgentDescriptor]:
        try:
            return load_roster(self.roster)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"invalid roster {self.roster}: {e}", field="roster")

    def load_query_sets(self, agents: Sequence[AgentDescriptor], split: str) -> Dict[str, List[QueryInstance]]:
        """Queries for one split keyed by agent_id; agents sharing a task share the list"""
        by_task: Dict[str, List[QueryInstance]] = {}
        sets: Dict[str, List[QueryInstance]] = {}
        for agent in agents:
            if agent.tid not in by_task:
                path = self.queries_path(agent.tid, split)
                if not path.is_file():
                    raise ConfigError(f"no {split} queries for task {agent.tid} at {path}", field="queries_dir")
                try:
                    by_task[agent.tid] = load_queries(path)
                except ValueError as e:
                    raise ConfigError(f"invalid queries in {path}: {e}", field="queries_dir")
            sets[agent.agent_id] = by_task[agent.tid]
        return sets

    def to_manifest(self) -> dict:
        return self.model_dump(mode="json")
