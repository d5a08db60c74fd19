"""Minimal dense-math engine: MLPs, mask-weighted GIN layers, Adam.

Everything is plain float64 numpy with hand-written reverse-mode
gradients.  Caches returned by the forward functions hold exactly what
the matching backward needs; parameters are never mutated by forward or
backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graphs import EdgeIncidence, Graph
from .rng import RngStream

ACTIVATIONS = ("relu", "sigmoid", "identity")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(x: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(x, 0.0)
    if tag == "sigmoid":
        return sigmoid(x)
    if tag == "identity":
        return x
    raise ConfigError(f"unknown activation {tag!r}")


def _activate_grad(pre: np.ndarray, post: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return (pre > 0).astype(np.float64)
    if tag == "sigmoid":
        return post * (1.0 - post)
    return np.ones_like(pre)


@dataclass(eq=False)
class AffineLayer:
    weight: np.ndarray        # (n_in, n_out)
    bias: np.ndarray          # (n_out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(eq=False)
class MlpParams:
    layers: list[AffineLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]


def init_mlp(dims: list[int], rng: RngStream, final_activation: str = "identity",
             hidden_activation: str = "relu") -> MlpParams:
    """He-style initialization; the last layer emits raw values."""
    layers = []
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        w = rng.normal(scale=np.sqrt(2.0 / n_in), size=(n_in, n_out))
        last = i == len(dims) - 2
        layers.append(AffineLayer(weight=w, bias=np.zeros(n_out),
                                  activation=final_activation if last
                                  else hidden_activation))
    return MlpParams(layers=layers)


def mlp_forward(params: MlpParams, x: np.ndarray,
                dropout_masks: list[np.ndarray | None] | None = None):
    """Run the MLP on a (rows, in_dim) matrix.

    Returns (output, cache).  `dropout_masks`, when given, holds one
    pre-scaled keep mask (or None) per layer, applied to that layer's
    activation; training-only machinery, off by default.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ConfigError(
            f"mlp input has shape {x.shape}, expected (*, {params.in_dim})")
    cache = []
    cur = x
    for li, layer in enumerate(params.layers):
        pre = cur @ layer.weight + layer.bias
        post = _activate(pre, layer.activation)
        mask = dropout_masks[li] if dropout_masks is not None else None
        if mask is not None:
            post = post * mask
        cache.append((cur, pre, post, mask))
        cur = post
    return cur, cache


def mlp_backward(params: MlpParams, cache, grad_output: np.ndarray):
    """Exact gradients of mlp_forward.

    Returns (param_grads, grad_input) where param_grads is a list of
    (d_weight, d_bias) aligned with params.layers.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    g = np.asarray(grad_output, dtype=np.float64)
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        inp, pre, post, mask = cache[li]
        if mask is not None:
            g = g * mask
        g_pre = g * _activate_grad(pre, post, layer.activation)
        grads[li] = (inp.T @ g_pre, g_pre.sum(axis=0))
        g = g_pre @ layer.weight.T
    return grads, g


@dataclass(eq=False)
class GinLayerParams:
    """One mask-weighted GIN layer: h_i' = mlp((1+eps)·h_i + Σ_{j→i} w·h_j)."""

    eps: np.ndarray            # scalar, stored as () array so Adam can track it
    inner_mlp: MlpParams

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.float64).reshape(())


def _incidence(edges, n_nodes: int) -> EdgeIncidence:
    if isinstance(edges, Graph):
        edges = edges.incidence
    if isinstance(edges, EdgeIncidence):
        if edges.scatter_dst.shape[0] != n_nodes:
            raise ConfigError(
                f"incidence covers {edges.scatter_dst.shape[0]} nodes, "
                f"node_feats has {n_nodes} rows")
        return edges
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and arr.max() >= n_nodes:
        raise ConfigError("edge list references nodes beyond node_feats")
    E = arr.shape[0]
    s_src = np.zeros((n_nodes, E))
    s_dst = np.zeros((n_nodes, E))
    s_src[arr[:, 0], np.arange(E)] = 1.0
    s_dst[arr[:, 1], np.arange(E)] = 1.0
    return EdgeIncidence(src=arr[:, 0], dst=arr[:, 1],
                         scatter_src=s_src, scatter_dst=s_dst)


def gin_layer_forward(params: GinLayerParams, node_feats: np.ndarray, edges,
                      edge_weights: np.ndarray,
                      dropout_masks=None):
    """Weighted-sum aggregation followed by the inner MLP.

    `edges` may be an (E, 2) array, a Graph, or a prebuilt EdgeIncidence
    covering exactly node_feats' rows.
    """
    h = np.asarray(node_feats, dtype=np.float64)
    inc = _incidence(edges, h.shape[0])
    w = np.asarray(edge_weights, dtype=np.float64)
    if w.shape != (len(inc.src),):
        raise ConfigError(
            f"edge_weights has shape {w.shape}, expected ({len(inc.src)},)")
    h_src = h[inc.src]                          # (E, d)
    agg = (1.0 + params.eps) * h
    if len(inc.src):
        agg = agg + inc.scatter_dst @ (w[:, None] * h_src)
    out, mlp_cache = mlp_forward(params.inner_mlp, agg, dropout_masks)
    return out, (inc, h, w, h_src, agg, mlp_cache)


def gin_layer_backward(params: GinLayerParams, cache, grad_out: np.ndarray):
    """Gradients for parameters (incl. eps), node features, and edge weights."""
    inc, h, w, h_src, agg, mlp_cache = cache
    mlp_grads, d_agg = mlp_backward(params.inner_mlp, mlp_cache, grad_out)
    d_eps = float(np.sum(d_agg * h))
    d_h = (1.0 + params.eps) * d_agg
    if len(inc.src):
        d_msgs = inc.scatter_dst.T @ d_agg                     # (E, d)
        d_w = np.einsum("ed,ed->e", d_msgs, h_src)
        d_h = d_h + inc.scatter_src @ (w[:, None] * d_msgs)
    else:
        d_w = np.zeros(0)
    return (np.asarray(d_eps).reshape(()), mlp_grads), d_h, d_w


def pool_mean(node_feats: np.ndarray) -> np.ndarray:
    h = np.asarray(node_feats, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ConfigError("pool_mean needs at least one node")
    return h.mean(axis=0)


def gumbel_sigmoid(logits: np.ndarray, tau: float, rng: RngStream | None = None,
                   u: np.ndarray | None = None) -> np.ndarray:
    """Concrete-relaxation sample: σ((log u − log(1−u) + logit) / τ).

    With the uniform draw pinned at 0.5 the noise vanishes and the result
    is σ(logit / τ).  Outputs are strictly inside (0, 1).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    if u is None:
        if rng is None:
            raise ConfigError("gumbel_sigmoid needs an RngStream or explicit draws")
        u = rng.uniform(size=logits.shape)
    u = np.clip(np.asarray(u, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    noise = np.log(u) - np.log1p(-u)
    return sigmoid((noise + logits) / tau)


@dataclass(eq=False)
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != param shape {p.shape} "
                              f"for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_grad(fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, per coordinate."""
    if step <= 0:
        raise ConfigError("finite difference step must be positive")
    x = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        f_plus = fn(x)
        x[idx] = orig - step
        f_minus = fn(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * step)
        it.iternext()
    return grad
