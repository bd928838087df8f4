import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Tuple

import pandas as pd


def provenance_lines(provenance: Optional[Dict[str, object]]) -> str:
    """Render provenance as ``# key=value`` comment lines."""
    if not provenance:
        return ""
    return "".join(f"# {key}={value}\n" for key, value in provenance.items())


def write_csv(frame: pd.DataFrame, path, provenance: Optional[Dict[str, object]] = None) -> Path:
    """Write ``frame`` atomically, prefixed with a provenance comment header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(provenance_lines(provenance))
            frame.to_csv(f, index=False)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def read_csv(path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a CSV written by :func:`write_csv`, returning (frame, provenance)."""
    provenance = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            provenance[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, provenance
