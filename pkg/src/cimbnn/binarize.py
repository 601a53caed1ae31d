"""Binarization and polarization primitives.

Polar tensors hold exactly -1.0/+1.0, bit tensors exactly 0.0/1.0; both are
float64 arrays so they feed straight into the matmul kernels.
"""
import numpy as np

from .errors import DimensionError, ParameterError


def sign(w):
    """+1 where w >= 0 (so sign(0) = +1), -1 elsewhere."""
    w = np.asarray(w, dtype=np.float64)
    return np.where(w >= 0, 1.0, -1.0)


def bin_act(x, thresh=0.5):
    x = np.asarray(x, dtype=np.float64)
    return (x >= thresh).astype(np.float64)


def clip01(x):
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def sto_quantize(x, thresh, delta_act):
    """Binary activation against a perturbed threshold ``thresh + delta_act``."""
    x = np.asarray(x, dtype=np.float64)
    delta_act = np.asarray(delta_act, dtype=np.float64)
    try:
        shifted = np.broadcast_to(thresh + delta_act, x.shape)
    except ValueError:
        raise DimensionError(f"delta_act {delta_act.shape} does not broadcast to {x.shape}") from None
    return (x >= shifted).astype(np.float64)


def polarize(w, sampler, rng):
    """Replace each +/-1 weight by its variation-perturbed analog value.

    +1 becomes ``1 + d_plus`` and -1 becomes ``-1 + d_minus`` where both come
    from one fresh pair of cell-current draws per element.
    """
    w = np.asarray(w, dtype=np.float64)
    i_bl, i_blb = sampler.sample_currents(rng, w.size)
    im = sampler.im
    d_plus = (i_bl - i_blb) / im - 1.0
    d_minus = (i_blb - i_bl) / im + 1.0
    flat = np.where(w.ravel() > 0, 1.0 + d_plus, -1.0 + d_minus)
    return flat.reshape(w.shape)


def ste_gate(grad_out, pre_act, lo=0.0, hi=1.0):
    """Straight-through gradient: pass ``grad_out`` where lo <= pre_act <= hi."""
    if lo > hi:
        raise ParameterError(f"gate bounds reversed: lo={lo} > hi={hi}")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    pre_act = np.asarray(pre_act, dtype=np.float64)
    if grad_out.shape != pre_act.shape:
        raise DimensionError(f"gradient {grad_out.shape} vs pre-activation {pre_act.shape}")
    return np.where((pre_act >= lo) & (pre_act <= hi), grad_out, 0.0)
