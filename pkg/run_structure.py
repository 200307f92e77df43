import dataclasses
import json
import time
from pathlib import Path
from typing import Any, Dict, Optional, Union

from utils.hash_utils import calculate_sha256, hash_json, json_default


@dataclasses.dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run: resolved parameters, file hashes, timing."""
    subcommand: str = None
    tool_version: str = None
    preset_name: str = None
    parameters: Dict[str, Any] = dataclasses.field(default_factory=dict)
    inputs: Dict[str, Dict[str, str]] = dataclasses.field(default_factory=dict)  # label -> {path, sha256}
    outputs: Dict[str, Dict[str, str]] = dataclasses.field(default_factory=dict)
    results: Dict[str, Any] = dataclasses.field(default_factory=dict)
    status: str = "pending"  # pending, ok, failed
    error_kind: Optional[str] = None
    error_message: Optional[str] = None
    started_at: Optional[str] = None
    duration_s: Optional[float] = None
    _t0: float = dataclasses.field(default=0.0, repr=False, compare=False)

    def start(self) -> None:
        self.started_at = time.strftime('%Y-%m-%dT%H:%M:%S')
        self._t0 = time.perf_counter()

    def finish(self, status: str = "ok") -> None:
        self.status = status
        self.duration_s = round(time.perf_counter() - self._t0, 3) if self._t0 else None

    def fail(self, kind: str, message: str) -> None:
        self.error_kind = kind
        self.error_message = message
        self.finish("failed")

    def add_input(self, label: str, path: Union[str, Path]) -> None:
        self.inputs[label] = {"path": str(path), "sha256": calculate_sha256(path)}

    def add_output(self, label: str, path: Union[str, Path]) -> None:
        self.outputs[label] = {"path": str(path), "sha256": calculate_sha256(path)}

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data.pop("_t0")
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4, default=json_default)

    @classmethod
    def from_json(cls, json_string: str) -> 'RunManifest':
        data = json.loads(json_string)
        known = {f.name for f in dataclasses.fields(cls)} - {"_t0"}
        return cls(**{k: v for k, v in data.items() if k in known})

    def reproducible_view(self) -> dict:
        """The manifest without timing fields; equal views mean equal runs."""
        data = self.to_dict()
        for key in ("started_at", "duration_s"):
            data.pop(key)
        return data

    def fingerprint(self) -> str:
        return hash_json(self.reproducible_view())

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path
