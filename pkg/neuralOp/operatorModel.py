"""A 3D Fourier neural operator with hand-written reverse mode.

    v0 = P(a)
    v_{l+1} = act(W_l v_l + K_l(v_l))      (no activation after the last layer)
    u = Q2(act(Q1(v_L)))

P, W_l, Q1, Q2 are pointwise affine maps; K_l is the truncated spectral convolution.
Parameters live in an ordered dict so that checkpoints, optimiser state and
finite-difference checks all walk them in the same order.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import erf

from .fourierOps import (
    Modes,
    OperatorError,
    SpectralCache,
    check_modes,
    spectral_conv,
    spectral_conv_backward,
    weight_shape,
)

Params = Dict[str, np.ndarray]

ACTIVATIONS = ("gelu", "identity")
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class FnoHyperParams:
    d_a: int = 8
    d_v: int = 32
    d_u: int = 1
    depth: int = 4
    modes: Modes = (6, 6, 6)
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if min(self.d_a, self.d_v, self.d_u, self.depth) < 1:
            raise OperatorError(f"hyperparameters must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise OperatorError(f"activation must be one of {ACTIVATIONS}")

    @property
    def d_q(self) -> int:
        """Hidden width of the projection MLP."""
        return 4 * self.d_v


def param_shapes(hp: FnoHyperParams) -> "OrderedDict[str, Tuple[int, ...]]":
    """Canonical parameter order and shapes. R blocks are complex, the rest real."""
    shapes = OrderedDict()
    shapes["P.weight"] = (hp.d_v, hp.d_a)
    shapes["P.bias"] = (hp.d_v,)
    for layer in range(hp.depth):
        shapes[f"layer{layer}.R"] = weight_shape(hp.modes, hp.d_v, hp.d_v)
        shapes[f"layer{layer}.W.weight"] = (hp.d_v, hp.d_v)
        shapes[f"layer{layer}.W.bias"] = (hp.d_v,)
    shapes["Q1.weight"] = (hp.d_q, hp.d_v)
    shapes["Q1.bias"] = (hp.d_q,)
    shapes["Q2.weight"] = (hp.d_u, hp.d_q)
    shapes["Q2.bias"] = (hp.d_u,)
    return shapes


def is_complex(name: str) -> bool:
    return name.endswith(".R")


def parameter_count(hp: FnoHyperParams) -> int:
    """Real degrees of freedom (complex entries count twice)."""
    return sum(
        int(np.prod(shape)) * (2 if is_complex(name) else 1)
        for name, shape in param_shapes(hp).items()
    )


@dataclass(frozen=True, eq=False)
class FnoModel:
    hyper: FnoHyperParams
    params: Params = field(default_factory=OrderedDict)

    def __post_init__(self):
        expected = param_shapes(self.hyper)
        if list(self.params) != list(expected):
            raise OperatorError("parameter names do not match hyperparameters")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise OperatorError(
                    f"{name} has shape {self.params[name].shape}, expected {shape}"
                )

    def with_params(self, params: Params) -> FnoModel:
        return replace(self, params=OrderedDict((k, params[k]) for k in self.params))


def init_model(hp: FnoHyperParams, seed: int = 0) -> FnoModel:
    """Uniform fan-in initialisation for affine maps; spectral weights uniform in
    [0, 1/(d_v d_v)) for both real and imaginary parts."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(hp).items():
        if is_complex(name):
            scale = 1.0 / (hp.d_v * hp.d_v)
            params[name] = scale * (rng.random(shape) + 1j * rng.random(shape))
        else:
            owner = name.rsplit(".", 1)[0]
            fan_in = param_shapes(hp)[f"{owner}.weight"][1]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return FnoModel(hyper=hp, params=params)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _act(hp: FnoHyperParams, x: np.ndarray) -> np.ndarray:
    return gelu(x) if hp.activation == "gelu" else x


def _act_grad(hp: FnoHyperParams, x: np.ndarray) -> np.ndarray:
    return gelu_grad(x) if hp.activation == "gelu" else np.ones_like(x)


def affine(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pointwise channel map on (batch, c_in, n1, n2, n3), as one batched matmul."""
    batch, c_in = x.shape[:2]
    out = np.matmul(weight, x.reshape(batch, c_in, -1))
    out += bias[None, :, None]
    return out.reshape((batch, weight.shape[0]) + x.shape[2:])


def affine_backward(
    weight: np.ndarray, x: np.ndarray, grad: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch, c_in = x.shape[:2]
    g = grad.reshape(batch, weight.shape[0], -1)
    grad_w = np.tensordot(g, x.reshape(batch, c_in, -1), axes=([0, 2], [0, 2]))
    grad_b = g.sum(axis=(0, 2))
    grad_x = np.matmul(weight.T, g).reshape(x.shape)
    return grad_x, grad_w, grad_b


@dataclass
class ForwardCache:
    """Activations kept by forward() for backward()."""

    a: np.ndarray
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    spectral: List[SpectralCache] = field(default_factory=list)
    pre_acts: List[np.ndarray] = field(default_factory=list)
    q_in: Optional[np.ndarray] = None
    q_pre: Optional[np.ndarray] = None


def _as_batch(a: np.ndarray, d_a: int) -> Tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 4
    if single:
        a = a[None]
    if a.ndim != 5 or a.shape[1] != d_a:
        raise OperatorError(f"expected input (batch, {d_a}, n1, n2, n3), got {a.shape}")
    return a, single


def forward(model: FnoModel, a: np.ndarray) -> np.ndarray:
    """Evaluate the operator on one (d_a, n1, n2, n3) field or a batch of them."""
    out, _ = forward_with_cache(model, a)
    return out


def forward_with_cache(model: FnoModel, a: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    hp, p = model.hyper, model.params
    a, single = _as_batch(a, hp.d_a)
    if not np.all(np.isfinite(a)):
        raise OperatorError("non-finite values in operator input")
    check_modes(a.shape[-3:], hp.modes)

    cache = ForwardCache(a=a)
    v = affine(p["P.weight"], p["P.bias"], a)
    for layer in range(hp.depth):
        cache.layer_inputs.append(v)
        s, spec = spectral_conv(v, p[f"layer{layer}.R"], hp.modes)
        z = affine(p[f"layer{layer}.W.weight"], p[f"layer{layer}.W.bias"], v) + s
        cache.spectral.append(spec)
        cache.pre_acts.append(z)
        v = _act(hp, z) if layer < hp.depth - 1 else z

    cache.q_in = v
    cache.q_pre = affine(p["Q1.weight"], p["Q1.bias"], v)
    out = affine(p["Q2.weight"], p["Q2.bias"], _act(hp, cache.q_pre))
    return (out[0] if single else out), cache


def backward(
    model: FnoModel, cache: Optional[ForwardCache], grad_out: np.ndarray
) -> Tuple[Params, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given dL/d(output).

    Returns (parameter gradients in canonical order, dL/d(input)).
    """
    if cache is None or cache.q_pre is None:
        raise OperatorError("backward needs the cache of a forward pass")
    hp, p = model.hyper, model.params
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.ndim == 4:
        grad_out = grad_out[None]
    grads: Params = {}

    hidden = _act(hp, cache.q_pre)
    g_hidden, grads["Q2.weight"], grads["Q2.bias"] = affine_backward(
        p["Q2.weight"], hidden, grad_out
    )
    g_pre = g_hidden * _act_grad(hp, cache.q_pre)
    g_v, grads["Q1.weight"], grads["Q1.bias"] = affine_backward(
        p["Q1.weight"], cache.q_in, g_pre
    )

    for layer in reversed(range(hp.depth)):
        z = cache.pre_acts[layer]
        g_z = g_v * _act_grad(hp, z) if layer < hp.depth - 1 else g_v
        v_in = cache.layer_inputs[layer]
        g_in_w, grads[f"layer{layer}.W.weight"], grads[f"layer{layer}.W.bias"] = (
            affine_backward(p[f"layer{layer}.W.weight"], v_in, g_z)
        )
        g_in_s, grads[f"layer{layer}.R"] = spectral_conv_backward(
            g_z, p[f"layer{layer}.R"], hp.modes, cache.spectral[layer]
        )
        g_v = g_in_w + g_in_s

    g_a, grads["P.weight"], grads["P.bias"] = affine_backward(p["P.weight"], cache.a, g_v)
    ordered = OrderedDict((name, grads[name]) for name in p)
    return ordered, g_a


def flatten_params(params: Params) -> np.ndarray:
    """All parameters as one real vector (complex entries as real, imag pairs)."""
    chunks = []
    for name, value in params.items():
        if np.iscomplexobj(value):
            chunks.append(np.ascontiguousarray(value).view(np.float64).ravel())
        else:
            chunks.append(np.asarray(value, dtype=np.float64).ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


def unflatten_params(vector: np.ndarray, hp: FnoHyperParams) -> Params:
    params = OrderedDict()
    offset = 0
    for name, shape in param_shapes(hp).items():
        size = int(np.prod(shape))
        if is_complex(name):
            chunk = vector[offset : offset + 2 * size]
            params[name] = np.ascontiguousarray(chunk).view(np.complex128).reshape(shape)
            offset += 2 * size
        else:
            params[name] = vector[offset : offset + size].reshape(shape).copy()
            offset += size
    if offset != len(vector):
        raise OperatorError(f"vector of {len(vector)} values for {offset} parameters")
    return params
