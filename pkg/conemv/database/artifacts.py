import csv
import hashlib
import json
import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Generator, IO, List, Sequence

from ..utils.exceptions import ArtifactIOError, ConfigError, SolverError

logger = logging.getLogger(__name__)


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if not math.isfinite(value):
            raise SolverError(f"refusing to write non-finite value {value!r}")
        return repr(value)
    return str(value)


def _check_finite(obj: Any, where: str) -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SolverError(f"non-finite value in {where}")
    if isinstance(obj, dict):
        for key, value in obj.items():
            _check_finite(value, f"{where}.{key}")
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            _check_finite(value, f"{where}[{i}]")


def read_json(path: str) -> Dict[str, Any]:
    """Load a JSON document, mapping decode failures to ConfigError"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}", field=str(path)) from e
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e


class ArtifactStore:
    """Writes CSV/JSON artifacts into one output directory and records their hashes"""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        self.outputs: List[Dict[str, str]] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {out_dir}: {e}")
            raise ArtifactIOError(f"cannot create {out_dir}: {e}") from e

    @contextmanager
    def _open(self, name: str) -> Generator[IO[str], None, None]:
        path = self.out_dir / name
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                yield f
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise ArtifactIOError(f"cannot write {path}: {e}") from e
        self._record(name, path)

    def _record(self, name: str, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.outputs = [o for o in self.outputs if o["path"] != name]
        self.outputs.append({"path": name, "sha256": digest})
        logger.info(f"Wrote {path}")

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        """Header plus rows; floats are written with repr so they round-trip"""
        formatted = [[_format_cell(v) for v in row] for row in rows]
        with self._open(name) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(formatted)
        return self.out_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        _check_finite(payload, name)
        with self._open(name) as f:
            json.dump(payload, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
        return self.out_dir / name

    def write_manifest(self, inputs: Dict[str, Any], options: Dict[str, Any]) -> Path:
        """manifest.json: inputs, resolved options and the sha256 of every output"""
        manifest = {
            "inputs": inputs,
            "options": options,
            "outputs": sorted(self.outputs, key=lambda o: o["path"]),
        }
        path = self.out_dir / "manifest.json"
        _check_finite(manifest, "manifest")
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                json.dump(manifest, f, indent=2, sort_keys=True, allow_nan=False)
                f.write("\n")
        except OSError as e:
            logger.error(f"Error writing manifest: {e}")
            raise ArtifactIOError(f"cannot write {path}: {e}") from e
        return path
