"""N-normalised MLP forecasters with a per-timestep Student-T head.

All six shapes share one code path: an affine backbone (ELU between hidden
layers, nothing after the last) maps ``x - x_C`` to ``horizon * dist_hidden``
features; three shared ``dist_hidden -> 1`` maps turn every timestep's
features into raw location, scale and degrees-of-freedom. Gradients are
written out by hand; there is no autodiff dependency.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln

from .errors import NonFiniteInput

SHAPES = {
    "Base": (),
    "Diamond": (32, 64, 32),
    "Contracting": (128, 64, 32),
    "Square": (64, 64, 64),
    "Funnel": (64, 32, 64),
    "Expanding": (32, 64, 128),
}
DIST_HIDDEN = (1, 2, 10)
SIGMA_FLOOR = 1e-6
DOF_FLOOR = 1e-6  # keeps nu > 2 after rounding when softplus underflows
ELU_ALPHA = 1.0
INITIAL_DOF = 10.0
HEAD_NAMES = ("loc", "scale", "dof")


@dataclass(frozen=True)
class ArchitectureSpec:
    shape: str
    context: int
    horizon: int
    dist_hidden: int = 1

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {sorted(SHAPES)}")
        if self.context < 1 or self.horizon < 1 or self.dist_hidden < 1:
            raise ValueError("context, horizon and dist_hidden must be positive")

    @property
    def hidden(self) -> tuple[int, ...]:
        return SHAPES[self.shape]

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """``(fan_in, fan_out)`` for each backbone layer."""
        widths = [self.context, *self.hidden, self.horizon * self.dist_hidden]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        return {"shape": self.shape, "context": self.context, "horizon": self.horizon, "dist_hidden": self.dist_hidden}


@dataclass
class MlpParameters:
    arch: ArchitectureSpec
    weights: list[np.ndarray]  # (fan_out, fan_in)
    biases: list[np.ndarray]
    head_w: np.ndarray  # (3, dist_hidden): loc, scale, dof
    head_b: np.ndarray  # (3,)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}.weight", w))
            out.append((f"layer{i}.bias", b))
        out.append(("head.weight", self.head_w))
        out.append(("head.bias", self.head_b))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.tensors()]

    def layer_groups(self) -> dict[str, list[np.ndarray]]:
        """Tensors grouped per layer, the unit used for gradient statistics."""
        groups = {f"layer{i}": [w, b] for i, (w, b) in enumerate(zip(self.weights, self.biases))}
        groups["head"] = [self.head_w, self.head_b]
        return groups

    def copy(self) -> "MlpParameters":
        return MlpParameters(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head_w.copy(),
            self.head_b.copy(),
        )

    def size(self) -> int:
        return sum(a.size for a in self.arrays())


# gradients have exactly the parameter layout
GradientTensor = MlpParameters


@dataclass
class DistributionParams:
    loc: np.ndarray
    scale: np.ndarray
    dof: np.ndarray


@dataclass
class ForwardCache:
    params: MlpParameters
    inputs: list[np.ndarray]  # input to every backbone layer
    pre: list[np.ndarray]  # pre-activations of hidden layers
    features: np.ndarray  # (B, horizon, dist_hidden)
    raw: np.ndarray  # (B, horizon, 3)
    dist: DistributionParams
    squeeze: bool = False


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


def elu(a):
    return np.where(a > 0, a, ELU_ALPHA * np.expm1(np.minimum(a, 0.0)))


def elu_grad(a):
    return np.where(a > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(a, 0.0)))


def build(arch: ArchitectureSpec, seed: int) -> MlpParameters:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    a = np.sqrt(6.0 / (arch.dist_hidden + 1))
    head_w = np.zeros((3, arch.dist_hidden))
    # scale and dof rows start at zero so they begin decoupled from the location
    head_w[0] = rng.uniform(-a, a, size=arch.dist_hidden)
    head_b = np.zeros(3)
    head_b[2] = softplus_inv(INITIAL_DOF - 2.0 - DOF_FLOOR)
    return MlpParameters(arch, weights, biases, head_w, head_b)


def param_count(arch: ArchitectureSpec) -> int:
    total = sum(i * o + o for i, o in arch.layer_dims)
    return total + 3 * arch.dist_hidden + 3


def forward(params: MlpParameters, x: np.ndarray) -> tuple[DistributionParams, ForwardCache]:
    """Predict Student-T parameters for one context vector or a batch ``(B, C)``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.shape[1] != params.arch.context:
        raise ValueError(f"expected context length {params.arch.context}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("forward received non-finite inputs")
    last = X[:, -1:]
    h = X - last
    inputs, pre = [], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w.T + b
        if i < n_layers - 1:
            pre.append(a)
            h = elu(a)
        else:
            h = a
    arch = params.arch
    feats = h.reshape(X.shape[0], arch.horizon, arch.dist_hidden)
    raw = feats @ params.head_w.T + params.head_b
    loc = raw[..., 0] + last
    scale = softplus(raw[..., 1]) + SIGMA_FLOOR
    dof = 2.0 + DOF_FLOOR + softplus(raw[..., 2])
    dist = DistributionParams(loc, scale, dof)
    cache = ForwardCache(params, inputs, pre, feats, raw, dist, squeeze)
    if squeeze:
        dist = DistributionParams(loc[0], scale[0], dof[0])
    return dist, cache


def student_t_nll_terms(dist: DistributionParams, y) -> np.ndarray:
    """Pointwise negative log density of the location-scale Student-T."""
    mu, sigma, nu = dist.loc, dist.scale, dist.dof
    z2 = ((np.asarray(y, dtype=float) - mu) / sigma) ** 2
    return (
        -gammaln((nu + 1.0) / 2.0)
        + gammaln(nu / 2.0)
        + 0.5 * np.log(nu * np.pi)
        + np.log(sigma)
        + (nu + 1.0) / 2.0 * np.log1p(z2 / nu)
    )


def student_t_nll(dist: DistributionParams, y) -> float:
    return float(np.mean(student_t_nll_terms(dist, y)))


def nll_partials(mu, sigma, nu, y):
    """d NLL / d(mu, sigma, nu) for each point."""
    r = y - mu
    s2 = sigma * sigma
    u = r * r / (nu * s2)
    d_mu = -(nu + 1.0) * r / (nu * s2 + r * r)
    d_sigma = 1.0 / sigma - (nu + 1.0) * u / (sigma * (1.0 + u))
    d_nu = 0.5 * (
        digamma(nu / 2.0) - digamma((nu + 1.0) / 2.0) + 1.0 / nu + np.log1p(u) - (nu + 1.0) * u / (nu * (1.0 + u))
    )
    return d_mu, d_sigma, d_nu


def backward(cache: ForwardCache, y) -> GradientTensor:
    """Exact gradient of the mean NLL over every (window, timestep) entry."""
    params = cache.params
    Y = np.asarray(y, dtype=float)
    if cache.squeeze:
        Y = Y[None, :]
    dist = cache.dist
    n = Y.size
    d_mu, d_sigma, d_nu = nll_partials(dist.loc, dist.scale, dist.dof, Y)
    g_raw = np.empty_like(cache.raw)
    g_raw[..., 0] = d_mu / n
    g_raw[..., 1] = d_sigma * expit(cache.raw[..., 1]) / n
    g_raw[..., 2] = d_nu * expit(cache.raw[..., 2]) / n

    head_w = np.einsum("btk,btd->kd", g_raw, cache.features)
    head_b = g_raw.sum(axis=(0, 1))
    delta = (g_raw @ params.head_w).reshape(Y.shape[0], -1)

    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = delta.T @ cache.inputs[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * elu_grad(cache.pre[i - 1])
    return MlpParameters(params.arch, gw, gb, head_w, head_b)


def loss_and_grad(params: MlpParameters, X, Y) -> tuple[float, GradientTensor]:
    dist, cache = forward(params, X)
    loss = student_t_nll(cache.dist, np.atleast_2d(Y))
    return loss, backward(cache, Y)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    updated_entries: int = field(default=0, repr=False)

    @classmethod
    def zeros_like(cls, params: MlpParameters) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: MlpParameters,
    grads: GradientTensor,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    t: int | None = None,
) -> tuple[MlpParameters, AdamState]:
    """One in-place Adam update with decoupled weight decay.

    Decay ``theta -= lr * wd * theta`` is applied before the Adam move; the
    bias correction uses step ``t`` (defaults to ``state.t + 1``).
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if weight_decay < 0:
        raise ValueError("weight decay must be non-negative")
    t = state.t + 1 if t is None else int(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    touched = 0
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        if weight_decay:
            p -= lr * weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        touched += p.size
    state.t = t
    state.updated_entries = touched
    return params, state


def sample_forecast(dist: DistributionParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` paths; shape ``(n, horizon)`` or ``(B, n, horizon)`` for batched params."""
    if n < 1:
        raise ValueError("n must be >= 1")
    mu, sigma, nu = (np.asarray(a, dtype=float) for a in (dist.loc, dist.scale, dist.dof))
    if mu.ndim == 1:
        return mu + sigma * rng.standard_t(nu, size=(n, mu.shape[0]))
    B, H = mu.shape
    t = rng.standard_t(nu[:, None, :], size=(B, n, H))
    return mu[:, None, :] + sigma[:, None, :] * t


# --------------------------------------------------------------------------
# checkpoints: JSON with base64 little-endian float64 payloads


CHECKPOINT_VERSION = 1


def checkpoint_dict(params: MlpParameters) -> dict:
    tensors = []
    for name, arr in params.tensors():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")})
    return {"format": "tsbench-checkpoint", "version": CHECKPOINT_VERSION, "arch": params.arch.to_dict(), "tensors": tensors}


def params_from_checkpoint(obj: dict) -> MlpParameters:
    if obj.get("format") != "tsbench-checkpoint" or obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a tsbench checkpoint (or unsupported version)")
    arch = ArchitectureSpec(**obj["arch"])
    arrays = {
        t["name"]: np.frombuffer(base64.b64decode(t["data"]), dtype="<f8").reshape(t["shape"]).astype(float)
        for t in obj["tensors"]
    }
    n = len(arch.layer_dims)
    return MlpParameters(
        arch,
        [arrays[f"layer{i}.weight"] for i in range(n)],
        [arrays[f"layer{i}.bias"] for i in range(n)],
        arrays["head.weight"],
        arrays["head.bias"],
    )


def save_checkpoint(params: MlpParameters, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(params), fh)


def load_checkpoint(path) -> MlpParameters:
    with open(path, encoding="utf-8") as fh:
        return params_from_checkpoint(json.load(fh))
