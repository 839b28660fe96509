import csv
import json
import re
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple

import numpy as np

key_pattern = re.compile(r"[a-z_][a-z0-9_]*")


def is_simple_key(key: str) -> bool:
    return key is not None and len(key) > 0 and key_pattern.fullmatch(key) is not None


def parse_override(text: str) -> Tuple[str, float]:
    """Parse ``key=value`` with a lowercase key and a float value."""
    if text.count("=") != 1:
        raise ValueError(f"Invalid override '{text}' - expected key=value")
    key, raw = (part.strip() for part in text.split("="))
    if not is_simple_key(key):
        raise ValueError(f"Invalid override key '{key}'")
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"Override '{key}' needs a number, got '{raw}'") from None
    if not np.isfinite(value):
        raise ValueError(f"Override '{key}' must be finite")
    return key, value


def jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return jsonable(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(path: Path, data: Any) -> None:
    # byte-identical across reruns
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[List[Any]]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
