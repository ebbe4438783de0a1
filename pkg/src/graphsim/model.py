"""Siamese graph convolutional network with analytic gradients.

Two weight-shared branches of Chebyshev-filter convolution layers (ReLU
after each), a node-wise inner-product merge across feature maps, and a
fully connected sigmoid head that also receives a same-site indicator
bit. The backward pass is written by hand; its adjoint reuses the same
Chebyshev recursion because T_k of a symmetric matrix is symmetric.

Parameter layout of one convolution layer: theta[i, j, k] is the k-th
Chebyshev coefficient of the filter from input map i to output map j
(orders 0..K, hence K+1 coefficients per filter).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .spectral import chebyshev_basis


@dataclass
class GcnLayerParams:
    """Chebyshev coefficient tensor of one convolution layer."""

    theta: np.ndarray  # (F_in, F_out, K+1)

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 3:
            raise ValidationError(f"theta must be F_in x F_out x (K+1), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValidationError("theta entries must be finite")
        self.theta = t

    @property
    def f_in(self) -> int:
        return self.theta.shape[0]

    @property
    def f_out(self) -> int:
        return self.theta.shape[1]

    @property
    def k_order(self) -> int:
        return self.theta.shape[2] - 1


@dataclass
class SiameseModel:
    """All trainable parameters plus the cached rescaled Laplacian.

    Both branches read the same parameter storage, so weight sharing is
    structural: there is nothing to keep in sync.
    """

    layers: list[GcnLayerParams]
    fc_weights: np.ndarray  # (R+1,): merge vector + same-site bit
    fc_bias: float
    l_scaled: np.ndarray | None = None

    def __post_init__(self):
        self.fc_weights = np.asarray(self.fc_weights, dtype=np.float64)
        self.fc_bias = float(self.fc_bias)

    @property
    def r(self) -> int:
        return self.fc_weights.size - 1

    @property
    def k_order(self) -> int:
        return self.layers[0].k_order

    def parameter_arrays(self) -> list[np.ndarray]:
        """Flat list view used by the optimizer: thetas, fc weights, fc bias."""
        return [lay.theta for lay in self.layers] + [
            self.fc_weights,
            np.asarray(self.fc_bias, dtype=np.float64),
        ]

    def set_parameter_arrays(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.layers) + 2:
            raise ValidationError("parameter array count mismatch")
        for lay, arr in zip(self.layers, arrays):
            if arr.shape != lay.theta.shape:
                raise ValidationError("theta shape mismatch")
            lay.theta = np.asarray(arr, dtype=np.float64)
        if arrays[-2].shape != self.fc_weights.shape:
            raise ValidationError("fc weight shape mismatch")
        self.fc_weights = np.asarray(arrays[-2], dtype=np.float64)
        self.fc_bias = float(arrays[-1])


@dataclass
class BranchTape:
    """Forward intermediates of one branch, one entry per layer."""

    basis_stacks: list[np.ndarray]  # T_k(L~) applied to each layer input
    pre_activations: list[np.ndarray]
    output: np.ndarray  # post-ReLU activations of the last layer


@dataclass
class ForwardTape:
    """Everything backward needs from one siamese forward pass."""

    branch_a: BranchTape
    branch_b: BranchTape
    merge: np.ndarray  # (R,) node-wise inner products
    fc_input: np.ndarray  # (R+1,) merge + same-site bit, after dropout
    dropout_scale: np.ndarray | None  # None in eval mode
    pre_sigmoid: float
    similarity: float
    n_layers: int = field(init=False)

    def __post_init__(self):
        self.n_layers = len(self.branch_a.pre_activations)


@dataclass
class SiameseGradients:
    """Gradient structure mirroring SiameseModel parameters."""

    dtheta: list[np.ndarray]
    dfc_weights: np.ndarray
    dfc_bias: float

    def as_arrays(self) -> list[np.ndarray]:
        return self.dtheta + [self.dfc_weights, np.asarray(self.dfc_bias, dtype=np.float64)]


def _combine_basis(stack: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """y[r, j] = sum_{i, k} stack[k, r, i] * theta[i, j, k], via one GEMM."""
    k1, r, f_in = stack.shape
    f_out = theta.shape[1]
    lhs = stack.transpose(1, 2, 0).reshape(r, f_in * k1)
    rhs = theta.transpose(0, 2, 1).reshape(f_in * k1, f_out)
    return lhs @ rhs


def gcn_layer_forward(params: GcnLayerParams, l_scaled: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pre-activation output of one convolution layer.

    Column j is sum_i of the Chebyshev filter theta[i, j, :] applied to
    input map x[:, i]. The ReLU is applied by the caller.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.f_in:
        raise ValidationError(
            f"layer input must be R x {params.f_in}, got {x.shape}"
        )
    stack = chebyshev_basis(l_scaled, x, params.k_order)
    return _combine_basis(stack, params.theta)


def _branch_forward(model: SiameseModel, x: np.ndarray) -> BranchTape:
    stacks, pres = [], []
    act = np.asarray(x, dtype=np.float64)
    for lay in model.layers:
        stack = chebyshev_basis(model.l_scaled, act, lay.k_order)
        pre = _combine_basis(stack, lay.theta)
        stacks.append(stack)
        pres.append(pre)
        act = np.maximum(pre, 0.0)
    return BranchTape(basis_stacks=stacks, pre_activations=pres, output=act)


def _sigmoid(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + np.exp(-u))
    e = np.exp(u)
    return e / (1.0 + e)


def siamese_forward(
    model: SiameseModel,
    xa: np.ndarray,
    xb: np.ndarray,
    same_site: int,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_keep: float = 0.8,
) -> tuple[float, ForwardTape]:
    """Similarity in (0, 1) for a pair of graph signals, plus the tape.

    Both branches run the shared convolution stack; the merge is the
    node-wise inner product of the branch outputs across feature maps. In
    train mode, inverted dropout (keep probability dropout_keep) is
    applied to the concatenated (merge, same_site) vector feeding the FC
    head.
    """
    if model.l_scaled is None:
        raise ValidationError("model has no rescaled Laplacian attached")
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    ta = _branch_forward(model, xa)
    tb = _branch_forward(model, xb)
    merge = np.sum(ta.output * tb.output, axis=1)
    z = np.concatenate([merge, [float(same_site)]])
    if mode == "train":
        if rng is None:
            raise ValidationError("train mode requires an rng for dropout")
        if not 0.0 < dropout_keep <= 1.0:
            raise ValidationError("dropout keep probability must be in (0, 1]")
        mask = (rng.random(z.size) < dropout_keep).astype(np.float64)
        scale = mask / dropout_keep
        z = z * scale
    else:
        scale = None
    u = float(model.fc_weights @ z + model.fc_bias)
    sim = _sigmoid(u)
    tape = ForwardTape(
        branch_a=ta,
        branch_b=tb,
        merge=merge,
        fc_input=z,
        dropout_scale=scale,
        pre_sigmoid=u,
        similarity=sim,
    )
    return sim, tape


def _branch_backward(
    model: SiameseModel, branch: BranchTape, d_output: np.ndarray, grads: SiameseGradients
) -> None:
    """Accumulate d(loss)/d(theta) for one branch, sharing grads storage."""
    d_act = d_output
    for idx in range(len(model.layers) - 1, -1, -1):
        lay = model.layers[idx]
        d_pre = d_act * (branch.pre_activations[idx] > 0.0)
        stack = branch.basis_stacks[idx]
        k1, r, f_in = stack.shape
        lhs = stack.transpose(1, 2, 0).reshape(r, f_in * k1)
        d_theta_flat = lhs.T @ d_pre  # (F_in*(K+1), F_out)
        grads.dtheta[idx] += d_theta_flat.reshape(f_in, k1, lay.f_out).transpose(0, 2, 1)
        if idx > 0:
            # adjoint of the filter: same recursion applied to d_pre
            # (T_k(L~) is symmetric), contracted against theta over (j, k)
            d_stack = chebyshev_basis(model.l_scaled, d_pre, lay.k_order)
            d_lhs = d_stack.transpose(1, 2, 0).reshape(r, lay.f_out * k1)
            rhs = lay.theta.transpose(1, 2, 0).reshape(lay.f_out * k1, f_in)
            d_act = d_lhs @ rhs


def siamese_backward(model: SiameseModel, tape: ForwardTape, dj_dsim: float) -> SiameseGradients:
    """Gradients of a scalar objective given d(objective)/d(similarity).

    Both branches accumulate into the same theta gradients (shared
    weights). The tape must come from a forward pass of this model.
    """
    if tape.n_layers != len(model.layers):
        raise ValidationError("tape does not match model layer count")
    if tape.fc_input.size != model.fc_weights.size:
        raise ValidationError("tape does not match model FC width")
    grads = SiameseGradients(
        dtheta=[np.zeros_like(lay.theta) for lay in model.layers],
        dfc_weights=np.zeros_like(model.fc_weights),
        dfc_bias=0.0,
    )
    sim = tape.similarity
    d_u = dj_dsim * sim * (1.0 - sim)
    grads.dfc_weights += d_u * tape.fc_input
    grads.dfc_bias += d_u
    d_z = d_u * model.fc_weights
    if tape.dropout_scale is not None:
        d_z = d_z * tape.dropout_scale
    d_merge = d_z[:-1]
    d_out_a = d_merge[:, None] * tape.branch_b.output
    d_out_b = d_merge[:, None] * tape.branch_a.output
    _branch_backward(model, tape.branch_a, d_out_a, grads)
    _branch_backward(model, tape.branch_b, d_out_b, grads)
    return grads


def init_model(
    r: int,
    layer_widths: tuple[int, ...] = (64, 64),
    k_order: int = 3,
    seed: int = 0,
    l_scaled: np.ndarray | None = None,
) -> SiameseModel:
    """Fresh model with Glorot-style uniform coefficient initialization.

    Theta entries are uniform on (-b, b) with b = sqrt(6 / (F_in (K+1)
    + F_out)), matching the fan of the flattened coefficient tensor; FC
    weights use fan R+1 in, 1 out; the bias starts at zero.
    """
    rng = np.random.default_rng(seed)
    layers = []
    f_in = r
    for f_out in layer_widths:
        bound = np.sqrt(6.0 / (f_in * (k_order + 1) + f_out))
        theta = rng.uniform(-bound, bound, size=(f_in, f_out, k_order + 1))
        layers.append(GcnLayerParams(theta=theta))
        f_in = f_out
    fc_bound = np.sqrt(6.0 / (r + 2))
    fc_weights = rng.uniform(-fc_bound, fc_bound, size=r + 1)
    return SiameseModel(layers=layers, fc_weights=fc_weights, fc_bias=0.0, l_scaled=l_scaled)


CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(model: SiameseModel, path, graph_hash: str, seed: int) -> None:
    """Write a self-contained JSON checkpoint (float64, row-major, base64)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "r": model.r,
        "k_order": model.k_order,
        "layer_widths": [lay.f_out for lay in model.layers],
        "layers": [
            {
                "f_in": lay.f_in,
                "f_out": lay.f_out,
                "k_order": lay.k_order,
                "theta": _encode_array(lay.theta),
            }
            for lay in model.layers
        ],
        "fc_weights": _encode_array(model.fc_weights),
        "fc_bias": model.fc_bias,
        "l_scaled": None if model.l_scaled is None else _encode_array(model.l_scaled),
        "graph_hash": graph_hash,
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> tuple[SiameseModel, dict]:
    """Load a checkpoint; returns the model and its metadata dict."""
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version!r}")
    layers = [
        GcnLayerParams(
            theta=_decode_array(spec["theta"], (spec["f_in"], spec["f_out"], spec["k_order"] + 1))
        )
        for spec in doc["layers"]
    ]
    r = doc["r"]
    l_scaled = None if doc["l_scaled"] is None else _decode_array(doc["l_scaled"], (r, r))
    model = SiameseModel(
        layers=layers,
        fc_weights=_decode_array(doc["fc_weights"], (r + 1,)),
        fc_bias=doc["fc_bias"],
        l_scaled=l_scaled,
    )
    meta = {"graph_hash": doc["graph_hash"], "seed": doc["seed"]}
    return model, meta
