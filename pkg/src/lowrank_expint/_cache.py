"""Disk cache for expensive dense reference computations.

Reference trajectories are slow to produce (adaptive dense integration of a
stiff matrix ODE) but deterministic given the problem configuration, so they
are cached as ``.npz`` files.  The directory defaults to
``~/.cache/lowrank_expint`` and can be redirected with the environment
variable ``LOWRANK_EXPINT_CACHE``.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np

_ENV_VAR = "LOWRANK_EXPINT_CACHE"


def cache_dir() -> Path:
    override = os.environ.get(_ENV_VAR)
    if override:
        return Path(override)
    return Path.home() / ".cache" / "lowrank_expint"


def _path_for(key: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]+", "_", key)
    return cache_dir() / f"{safe}.npz"


def fetch(key: str) -> dict | None:
    path = _path_for(key)
    if not path.is_file():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            return {name: data[name] for name in data.files}
    except (OSError, ValueError):
        return None


def store(key: str, **arrays: np.ndarray) -> None:
    path = _path_for(key)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
