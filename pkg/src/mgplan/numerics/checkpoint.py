"""Checkpoint container.

A checkpoint is a numpy ``.npz`` archive (a zip of ``.npy`` members). Every
parameter is stored under its dotted name as a float64 array whose ``.npy``
header records dtype and shape, so the archive is self-describing and a
save/load round trip is bit-exact. Two reserved members carry metadata:

``__config__``  0-d unicode array holding the run config as JSON
``__meta__``    0-d unicode array holding extra JSON metadata (layout, hashes)
"""
import json
import os

import numpy as np

from mgplan.errors import LoadError

CONFIG_KEY = "__config__"
META_KEY = "__meta__"


def save_checkpoint(path, tensors, config=None, meta=None):
    arrays = {name: np.asarray(a, dtype=np.float64) for name, a in tensors.items()}
    for reserved in (CONFIG_KEY, META_KEY):
        if reserved in arrays:
            raise ValueError(f"{reserved} is a reserved checkpoint key")
    arrays[CONFIG_KEY] = np.array(json.dumps(config or {}, sort_keys=True))
    arrays[META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True))
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(tensors, config, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            tensors = {k: z[k] for k in z.files if k not in (CONFIG_KEY, META_KEY)}
            config = json.loads(str(z[CONFIG_KEY])) if CONFIG_KEY in z.files else {}
            meta = json.loads(str(z[META_KEY])) if META_KEY in z.files else {}
    except (OSError, ValueError, KeyError) as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    return tensors, config, meta
