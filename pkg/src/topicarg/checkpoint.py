"""Parameter checkpoints: named arrays plus JSON metadata.

A self-describing container with a one-line JSON header (metadata plus array
names in order) followed by one .npy block per array. Unlike .npz there are
no zip timestamps, so identical contents give byte-identical files, and
float64 payloads round-trip bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_MAGIC = "topicarg-checkpoint-v1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write arrays (in sorted name order) and metadata (seeds, step counters)."""
    names = sorted(arrays)
    header = json.dumps(
        {"magic": _MAGIC, "meta": meta or {}, "names": names}, sort_keys=True
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for name in names:
            np.save(fh, np.asarray(arrays[name]))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != _MAGIC:
            raise ValueError(f"{path} is not a {_MAGIC} file")
        arrays = {name: np.load(fh, allow_pickle=False) for name in header["names"]}
    return arrays, header["meta"]
