"""Adam optimizer, following the reference update literally: no bias
correction by default and the smoothing term inside the square root,

    m <- d1*m + (1-d1)*g;  v <- d2*v + (1-d2)*g^2;  theta <- theta - psi*m/sqrt(v+eps)

A corrected variant is available behind a flag.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .network import NetworkParams

ADAM_PSI = 0.001
ADAM_DELTA1 = 0.9
ADAM_DELTA2 = 0.99
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    psi: float = ADAM_PSI
    delta1: float = ADAM_DELTA1
    delta2: float = ADAM_DELTA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, theta: NetworkParams, psi: float = ADAM_PSI,
                   delta1: float = ADAM_DELTA1, delta2: float = ADAM_DELTA2,
                   eps: float = ADAM_EPS) -> "AdamState":
        return cls(m={n: np.zeros_like(a) for n, a in theta.tensors()},
                   v={n: np.zeros_like(a) for n, a in theta.tensors()},
                   psi=psi, delta1=delta1, delta2=delta2, eps=eps)


def adam_step(theta: NetworkParams, grads: dict, state: AdamState,
              bias_correction: bool = False) -> None:
    """One in-place update of theta and the moment estimates."""
    state.step += 1
    d1, d2 = state.delta1, state.delta2
    for name, arr in theta.tensors():
        g = grads[name]
        if g.shape != arr.shape:
            raise InputError(f"gradient for {name} has shape {g.shape}, "
                             f"expected {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= d1
        m += (1.0 - d1) * g
        v *= d2
        v += (1.0 - d2) * g * g
        if bias_correction:
            mh = m / (1.0 - d1 ** state.step)
            vh = v / (1.0 - d2 ** state.step)
        else:
            mh, vh = m, v
        arr -= state.psi * mh / np.sqrt(vh + state.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Global-norm clipping in place; returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        fac = max_norm / total
        for g in grads.values():
            g *= fac
    return total
