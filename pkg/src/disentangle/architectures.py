"""Model families: bilinear, gated (SwiGLU/GeGLU) and pointwise MLPs.

All models have a single hidden layer of width ``hidden`` and use the
row-vector convention ``h = x @ W``, so every projection matrix is stored as
``(in_features, hidden)``.

Input modes
-----------
pair-embed
    token pair ``(a, b)``, separate projections ``(e_a W1) * (e_b W2)``.
concat-embed
    token pair, embeddings concatenated to ``x = [e_a; e_b]``.
raw-vector
    a real vector fed whole to every projection.
raw-split
    a real vector cut at ``split[0]``; the two parts get separate projections.

Heads
-----
classifier -> logits ``h @ W_out``; regression -> increment ``h @ W_out``
(plus ``b_out`` for pointwise MLPs); scalar -> ``h @ w_out`` with one column.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad

FAMILIES = ("bilinear", "swiglu", "geglu", "relu", "tanh", "sigmoid")
GLU_GATES = {"swiglu": "silu", "geglu": "gelu"}
POINTWISE = ("relu", "tanh", "sigmoid")
MULTIPLICATIVE = ("bilinear", "swiglu", "geglu")
INPUT_MODES = ("pair-embed", "concat-embed", "raw-vector", "raw-split")
HEADS = ("classifier", "regression", "scalar")
INITS = ("default", "kaiming")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    input_mode: str
    hidden: int
    out_dim: int
    head: str = "classifier"
    vocab: int = 0
    embed_dim: int = 0
    input_dim: int = 0
    split: int = 0
    init: str = "default"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.family != "bilinear" and self.input_mode in ("pair-embed", "raw-split"):
            raise ValueError(
                f"{self.family} models see the concatenated input; "
                f"input mode {self.input_mode!r} is reserved for bilinear"
            )
        if self.input_mode in ("pair-embed", "concat-embed"):
            if self.vocab < 1 or self.embed_dim < 1:
                raise ValueError("embedding modes need vocab >= 1 and embed_dim >= 1")
        else:
            if self.input_dim < 1:
                raise ValueError("raw modes need input_dim >= 1")
        if self.input_mode == "raw-split" and not 0 < self.split < self.input_dim:
            raise ValueError(f"split {self.split} must cut input_dim {self.input_dim}")
        if self.head == "scalar" and self.out_dim != 1:
            raise ValueError("scalar head has out_dim 1")

    @property
    def uses_embedding(self) -> bool:
        return self.input_mode in ("pair-embed", "concat-embed")

    def projection_inputs(self) -> tuple[int, int]:
        """Fan-in of the two hidden projections (or of the single MLP layer twice)."""
        if self.input_mode == "pair-embed":
            return self.embed_dim, self.embed_dim
        if self.input_mode == "concat-embed":
            return 2 * self.embed_dim, 2 * self.embed_dim
        if self.input_mode == "raw-split":
            return self.split, self.input_dim - self.split
        return self.input_dim, self.input_dim


def make_spec(family, task, *, hidden, out_dim, head="classifier", vocab=0,
              embed_dim=0, input_dim=0, split=0, init="default") -> ModelSpec:
    """Pick the input mode a family uses for a task kind.

    ``task`` is ``"tokens"`` (pairs of token ids), ``"pair"`` (a real vector
    made of two parts, cut at ``split``) or ``"vector"`` (one real vector).
    """
    if task == "tokens":
        mode = "pair-embed" if family == "bilinear" else "concat-embed"
    elif task == "pair":
        mode = "raw-split" if family == "bilinear" else "raw-vector"
    elif task == "vector":
        mode = "raw-vector"
    else:
        raise ValueError(f"unknown task kind {task!r}")
    return ModelSpec(family=family, input_mode=mode, hidden=hidden, out_dim=out_dim,
                     head=head, vocab=vocab, embed_dim=embed_dim, input_dim=input_dim,
                     split=split if mode == "raw-split" else 0, init=init)


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    shapes = {}
    if spec.uses_embedding:
        shapes["E"] = (spec.vocab, spec.embed_dim)
    in1, in2 = spec.projection_inputs()
    m = spec.hidden
    if spec.family in POINTWISE:
        shapes["W"] = (in1, m)
        shapes["b"] = (1, m)
    else:
        shapes["W1"] = (in1, m)
        shapes["W2"] = (in2, m)
    shapes["W_out"] = (m, spec.out_dim)
    if spec.family in POINTWISE and spec.head == "regression":
        shapes["b_out"] = (1, spec.out_dim)
    return shapes


def param_count(spec: ModelSpec) -> int:
    """Closed-form parameter count.

    bilinear / GLU: ``N*d + (in1 + in2)*m + m*C``; pointwise MLP:
    ``N*d + in*m + m + m*C`` plus ``C`` output biases for regression heads.
    """
    emb = spec.vocab * spec.embed_dim if spec.uses_embedding else 0
    in1, in2 = spec.projection_inputs()
    m, c = spec.hidden, spec.out_dim
    if spec.family in POINTWISE:
        return emb + in1 * m + m + m * c + (c if spec.head == "regression" else 0)
    return emb + (in1 + in2) * m + m * c


def init_params(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """Draw initial parameters.

    ``default``: embeddings N(0, 1), every weight and bias
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    ``kaiming``: hidden projections N(0, 2/fan_in), output layer N(0, 0.1^2),
    embeddings N(0, 1) with unit-norm rows; biases as in ``default``.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, (rows, cols) in param_shapes(spec).items():
        if name == "E":
            w = rng.standard_normal((rows, cols))
            if spec.init == "kaiming":
                w /= np.linalg.norm(w, axis=1, keepdims=True)
        elif name in ("b", "b_out"):
            fan_in = param_shapes(spec)["W" if name == "b" else "W_out"][0]
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(rows, cols))
        elif spec.init == "kaiming":
            std = 0.1 if name == "W_out" else math.sqrt(2.0 / rows)
            w = rng.normal(0.0, std, size=(rows, cols))
        else:
            bound = 1.0 / math.sqrt(rows)
            w = rng.uniform(-bound, bound, size=(rows, cols))
        params[name] = w
    n = sum(v.size for v in params.values())
    assert n == param_count(spec), (n, param_count(spec))
    return params


def _node(p):
    return p if isinstance(p, ad.Node) else ad.constant(p)


def _inputs(spec, params, X):
    """Return the (left, right) projection inputs as nodes."""
    if spec.uses_embedding:
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ad.ShapeError(f"token input must be (n, 2), got {X.shape}")
        E = _node(params["E"])
        ea, eb = ad.embed(E, X[:, 0]), ad.embed(E, X[:, 1])
        if spec.input_mode == "pair-embed":
            return ea, eb
        x = ad.concat(ea, eb)
        return x, x
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != spec.input_dim:
        raise ad.ShapeError(f"expected {spec.input_dim} input features, got {X.shape[1]}")
    if spec.input_mode == "raw-split":
        return ad.constant(X[:, :spec.split]), ad.constant(X[:, spec.split:])
    x = ad.constant(X)
    return x, x


def hidden(spec: ModelSpec, params: Mapping, X) -> ad.Node:
    left, right = _inputs(spec, params, X)
    if spec.family == "bilinear":
        return ad.hadamard(ad.matmul(left, _node(params["W1"])),
                           ad.matmul(right, _node(params["W2"])))
    if spec.family in GLU_GATES:
        value = ad.matmul(left, _node(params["W1"]))
        gate = ad.activation(GLU_GATES[spec.family], ad.matmul(right, _node(params["W2"])))
        return ad.hadamard(value, gate)
    pre = ad.add_bias(ad.matmul(left, _node(params["W"])), _node(params["b"]))
    return ad.activation(spec.family, pre)


def forward(spec: ModelSpec, params: Mapping, X) -> ad.Node:
    """Build the graph for one batch.

    ``params`` values may be arrays (treated as constants) or parameter nodes.
    Regression heads return the increment; the caller adds it to the state.
    """
    h = hidden(spec, params, X)
    out = ad.matmul(h, _node(params["W_out"]))
    if "b_out" in params:
        out = ad.add_bias(out, _node(params["b_out"]))
    return out


def predict(spec: ModelSpec, params: Mapping, X) -> np.ndarray:
    return forward(spec, params, X).value


def extract_bilinear_interaction(spec: ModelSpec, params: Mapping, direction=None,
                                 pullback: bool = False) -> np.ndarray:
    """Interaction matrix ``M = W1 diag(w) W2^T`` of a bilinear model.

    ``w`` is the scalar read-out for scalar heads, otherwise
    ``W_out @ direction``. The output along that direction is then exactly
    ``x_left^T M x_right``. With ``pullback=True`` on an embedding model the
    token-space matrix ``E M E^T`` is returned instead.
    """
    if spec.family != "bilinear":
        raise ValueError(f"interaction extraction needs a bilinear model, got {spec.family}")
    W_out = np.asarray(params["W_out"])
    if direction is None:
        if W_out.shape[1] != 1:
            raise ValueError("a direction over the outputs is required for multi-output heads")
        w = W_out[:, 0]
    else:
        direction = np.asarray(direction, dtype=np.float64).ravel()
        if direction.shape[0] != W_out.shape[1]:
            raise ad.ShapeError(f"direction has {direction.shape[0]} entries, outputs {W_out.shape[1]}")
        w = W_out @ direction
    M = (np.asarray(params["W1"]) * w) @ np.asarray(params["W2"]).T
    if pullback:
        if not spec.uses_embedding:
            raise ValueError("pullback needs an embedding model")
        E = np.asarray(params["E"])
        M = E @ M @ E.T
    return M


def all_pairs(n: int) -> np.ndarray:
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


def class_interaction_matrices(spec: ModelSpec, params: Mapping, n: int | None = None) -> np.ndarray:
    """Logit tables over every token pair: ``out[k, a, b] = logit_k(a, b)``."""
    if not spec.uses_embedding or spec.head != "classifier":
        raise ValueError("class interaction matrices need a token classifier")
    n = spec.vocab if n is None else n
    logits = predict(spec, params, all_pairs(n))
    return logits.T.reshape(spec.out_dim, n, n)


def class_interaction_matrix(spec: ModelSpec, params: Mapping, k: int, n: int | None = None) -> np.ndarray:
    if not 0 <= k < spec.out_dim:
        raise IndexError(f"class {k} out of range [0, {spec.out_dim})")
    return class_interaction_matrices(spec, params, n)[k]


def probe_interaction_score(spec: ModelSpec, params: Mapping, u, v) -> float:
    """Model output on the probe ``[u; v]`` (scalar-head raw-input models)."""
    if spec.head != "scalar" or spec.uses_embedding:
        raise ValueError("probing needs a scalar-head model on raw vector input")
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size + v.size != spec.input_dim or (spec.split and u.size != spec.split):
        raise ad.ShapeError(f"probe halves {u.size}+{v.size} do not match input {spec.input_dim}")
    return float(predict(spec, params, np.concatenate([u, v])[None, :])[0, 0])


def save_params(params: Mapping, path, spec: ModelSpec | None = None) -> None:
    """Write a JSON checkpoint: ``{"spec": ..., "params": {name: {shape, data}}}``."""
    payload = {
        "spec": asdict(spec) if spec is not None else None,
        "params": {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
                   for k, v in params.items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_params(path) -> tuple[dict[str, np.ndarray], ModelSpec | None]:
    payload = json.loads(Path(path).read_text())
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in payload["params"].items()}
    spec = ModelSpec(**payload["spec"]) if payload.get("spec") else None
    return params, spec
