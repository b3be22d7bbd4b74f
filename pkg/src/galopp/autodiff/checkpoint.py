"""Checkpoint serialization: named float64 arrays plus a JSON metadata blob.

Uses the npz container (one .npy entry per parameter, shape headers
included), which round-trips float64 bit-exactly. Metadata is stored as
a JSON string in a reserved key, no pickling anywhere.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

_META_KEY = "__meta__"


def save_checkpoint(path, arrays: Dict[str, np.ndarray],
                    meta: Optional[dict] = None) -> Path:
    path = Path(path)
    if _META_KEY in arrays:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload[_META_KEY] = np.array(json.dumps(meta if meta is not None else {}))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz[_META_KEY]))
        arrays = {k: npz[k] for k in npz.files if k != _META_KEY}
    return arrays, meta
