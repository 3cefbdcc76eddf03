"""Central finite differences, used as the independent oracle for autodiff."""
import numpy as np

from mgplan.numerics.tensor import Tensor


def numeric_grad(fn, tensor, indices=None, h=1e-4):
    """Central-difference gradient of scalar ``fn()`` w.r.t. entries of ``tensor.data``.

    ``fn`` is re-evaluated with ``tensor.data`` perturbed in place. ``indices``
    selects flat positions; by default every entry is checked. Returns an
    array of the selected derivatives in the order of ``indices``.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)

    def value():
        r = fn()
        # a Tensor carries its value in .data; plain arrays and floats convert directly
        return float(np.asarray(r.data if isinstance(r, Tensor) else r))

    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = value()
        flat[i] = orig - h
        fm = value()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def rel_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
