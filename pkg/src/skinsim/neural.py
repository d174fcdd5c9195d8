"""Dense neural-network stack: MLP forward, reverse-mode gradients, Adam,
positional encoding, and the V2SMLP1 model file format.

Kept deliberately small: plain float64 numpy, explicit layer lists, no graph
machinery. Residual-block models group width-preserving layer pairs into
two-layer blocks whose input is added to the block output; the grouping is
a pure function of the width list so the serialized format only needs one
flag (see derive_residual_spans).
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ._validation import check_array, check_index, check_seed
from .errors import InputError, TrainingDivergedError

MAGIC = b"V2SMLP1"
_ACT_CODES = {"identity": 0, "elu": 1, "gelu": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def derive_residual_spans(widths):
    """Greedily pair consecutive width-preserving non-final layers.

    Layer i maps widths[i] -> widths[i+1]. A pair (i, i+1) forms a residual
    block when both layers preserve width; the final layer is always a plain
    projection. Returns a list of (first_layer, second_layer) tuples.
    """
    L = len(widths) - 1
    spans = []
    i = 0
    while i + 1 <= L - 2:
        if widths[i] == widths[i + 1] == widths[i + 2]:
            spans.append((i, i + 1))
            i += 2
        else:
            i += 1
    return spans


@dataclass
class Mlp:
    """Fully connected network. weights[i] has shape (out, in), row-major.

    pe_levels > 0 means raw 3-vector inputs are positionally encoded to
    6*pe_levels features and zero-padded up to the first layer width.
    n_handles annotates skinning/Jacobian models and rides along in the
    model file header.
    """

    weights: list
    biases: list
    activation: str
    residual: bool = False
    pe_levels: int = 0
    n_handles: int = 0

    def __post_init__(self):
        if self.activation not in _ACT_CODES:
            raise InputError(f"activation: unknown name {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise InputError("Mlp: weights/biases must be non-empty and aligned")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InputError(f"Mlp: layer {i} has inconsistent shapes")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise InputError(f"Mlp: width mismatch entering layer {i}")
        self.pe_levels = check_index(self.pe_levels, "pe_levels", minimum=0)
        self.n_handles = check_index(self.n_handles, "n_handles", minimum=0)
        if self.pe_levels and self.widths[0] < 6 * self.pe_levels:
            raise InputError("Mlp: first layer narrower than the positional encoding")

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self):
        """Width of raw inputs as passed to forward()."""
        return 3 if self.pe_levels else self.widths[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def residual_spans(self):
        return derive_residual_spans(self.widths) if self.residual else []


def init_mlp(widths, activation, seed, residual=False, pe_levels=0, n_handles=0):
    """Glorot-uniform weights, zero biases, seeded."""
    if len(widths) < 2:
        raise InputError("widths: need an input and an output width")
    widths = [check_index(w, "width", minimum=1) for w in widths]
    if activation not in _ACT_CODES:
        raise InputError(f"activation: unknown name {activation!r}")
    rng = np.random.default_rng(check_seed(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, activation, residual, pe_levels, n_handles)


def parameters(model):
    """Flat list [W0, b0, W1, b1, ...] referencing the model's arrays."""
    out = []
    for W, b in zip(model.weights, model.biases):
        out.append(W)
        out.append(b)
    return out


def positional_encode(X, target_width):
    """Sin/cos frequency features: per level l, sin(2^l pi x) then cos(2^l pi x).

    target_width must be a positive multiple of 6 (3 dims x sin/cos per
    level); levels run l = 0 .. target_width/6 - 1.
    """
    target_width = check_index(target_width, "target_width", minimum=6)
    if target_width % 6 != 0:
        raise InputError(f"target_width: {target_width} is not divisible by 6")
    X = check_array(X, "X")
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    if Xb.ndim != 2 or Xb.shape[1] != 3:
        raise InputError(f"X: expected 3-vectors, got shape {X.shape}")
    levels = target_width // 6
    freqs = np.pi * (2.0 ** np.arange(levels))
    phase = Xb[:, None, :] * freqs[None, :, None]  # (B, levels, 3)
    feats = np.concatenate([np.sin(phase), np.cos(phase)], axis=2)  # (B, levels, 6)
    feats = feats.reshape(Xb.shape[0], target_width)
    return feats[0] if single else feats


def _encode(model, X):
    """Raw inputs -> first-layer inputs (PE + zero pad when configured)."""
    if not model.pe_levels:
        if X.shape[1] != model.widths[0]:
            raise InputError(
                f"input width {X.shape[1]} does not match model width {model.widths[0]}"
            )
        return X
    if X.shape[1] != 3:
        raise InputError("positional-encoding models take 3-vector inputs")
    enc = positional_encode(X, 6 * model.pe_levels)
    pad = model.widths[0] - enc.shape[1]
    if pad:
        enc = np.concatenate([enc, np.zeros((enc.shape[0], pad))], axis=1)
    return enc


def _activate(name, a):
    """Returns (act(a), cached phi for gelu or None)."""
    if name == "identity":
        return a, None
    if name == "elu":
        return np.where(a > 0, a, np.expm1(a)), None
    phi = 0.5 * (1.0 + erf(a / _SQRT2))
    return a * phi, phi


def _activation_grad(name, a, phi):
    if name == "identity":
        return np.ones_like(a)
    if name == "elu":
        return np.where(a > 0, 1.0, np.exp(np.minimum(a, 0.0)))
    if phi is None:
        phi = 0.5 * (1.0 + erf(a / _SQRT2))
    return phi + a * np.exp(-0.5 * a * a) * _INV_SQRT_2PI


def _forward_cached(model, X):
    """Batched forward keeping the per-layer tape for backprop."""
    h = _encode(model, X)
    encoded = h
    spans = model.residual_spans
    starts = {s for s, _ in spans}
    end_to_start = {e: s for s, e in spans}
    L = len(model.weights)
    saved = {}
    tape = []  # per layer: (h_in, a, phi)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        if i in starts:
            saved[i] = h
        a = h @ W.T + b
        phi = None
        if i == L - 1:
            out = a
        elif i in end_to_start:
            out, phi = _activate(model.activation, a)
            out = saved[end_to_start[i]] + out
        else:
            out, phi = _activate(model.activation, a)
        tape.append((h, a, phi))
        h = out
    return h, (encoded, tape)


def _as_batch(model, X):
    X = check_array(X, "input")
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError(f"input: expected 1- or 2-d array, got {X.ndim}-d")
    if X.shape[1] != model.input_dim:
        raise InputError(
            f"input width {X.shape[1]} does not match model input {model.input_dim}"
        )
    return X, single


def forward(model, X):
    """Evaluate the network on (B, d) or (d,) inputs."""
    Xb, single = _as_batch(model, X)
    out, _ = _forward_cached(model, Xb)
    return out[0] if single else out


def gradient(model, X, upstream, _cache=None):
    """Reverse-mode gradients of <upstream, forward(model, X)>.

    Returns (param_grads, input_grad): param_grads matches parameters(model)
    (summed over the batch), input_grad matches X row for row. For
    positional-encoding models the input gradient is chained through the
    encoding back to the raw 3-vectors.
    """
    Xb, single = _as_batch(model, X)
    up = check_array(upstream, "upstream")
    if single and up.ndim == 1:
        up = up[None, :]
    if up.shape != (Xb.shape[0], model.output_dim):
        raise InputError(
            f"upstream: expected shape {(Xb.shape[0], model.output_dim)}, got {up.shape}"
        )
    if _cache is None:
        _, _cache = _forward_cached(model, Xb)
    encoded, tape = _cache

    spans = model.residual_spans
    end_to_start = {e: s for s, e in spans}
    L = len(model.weights)
    grads = [None] * (2 * L)
    skip = {}
    g = up
    for i in reversed(range(L)):
        h_in, a, phi = tape[i]
        if i == L - 1:
            da = g
        else:
            da = g * _activation_grad(model.activation, a, phi)
        if i in end_to_start:
            skip[end_to_start[i]] = g
        grads[2 * i] = da.T @ h_in
        grads[2 * i + 1] = da.sum(axis=0)
        g = da @ model.weights[i]
        if i in skip:
            g = g + skip.pop(i)

    if model.pe_levels:
        levels = model.pe_levels
        freqs = np.pi * (2.0 ** np.arange(levels))
        g_enc = g[:, : 6 * levels].reshape(Xb.shape[0], levels, 2, 3)
        phase = Xb[:, None, :] * freqs[None, :, None]
        d_sin = g_enc[:, :, 0, :] * np.cos(phase)
        d_cos = -g_enc[:, :, 1, :] * np.sin(phase)
        input_grad = np.einsum("blk,l->bk", d_sin + d_cos, freqs)
    else:
        input_grad = g
    if single:
        input_grad = input_grad[0]
    return grads, input_grad


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Moment buffers for a flat list of parameter arrays."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(state, params, grads):
    """One Adam update, mutating `params` in place."""
    if len(grads) != len(params):
        raise InputError("adam_step: gradient list does not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("adam_step: non-finite gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# V2SMLP1 model files


def save_model(path, model):
    """Write the network in the V2SMLP1 binary layout (little-endian)."""
    widths = model.widths
    L = len(model.weights)
    parts = [
        MAGIC,
        struct.pack("<I", L),
        struct.pack(f"<{L + 1}I", *widths),
        struct.pack("<I", _ACT_CODES[model.activation]),
        struct.pack("<BB", 1 if model.residual else 0, 0),  # residual, vec(0=row-major)
        struct.pack("<II", model.n_handles, model.pe_levels),
    ]
    for W, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path):
    """Read a V2SMLP1 model file, validating the full layout."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}")
    if len(raw) < 7 or raw[:7] != MAGIC:
        raise InputError(f"{path}: bad magic, not a V2SMLP1 model file")
    off = 7

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise InputError(f"{path}: truncated model file")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (L,) = take("<I")
    if L == 0 or L > 4096:
        raise InputError(f"{path}: implausible layer count {L}")
    widths = list(take(f"<{L + 1}I"))
    if any(w == 0 for w in widths):
        raise InputError(f"{path}: zero width in header")
    (act_code,) = take("<I")
    if act_code not in _ACT_NAMES:
        raise InputError(f"{path}: unknown activation code {act_code}")
    residual_flag, vec_flag = take("<BB")
    if residual_flag not in (0, 1):
        raise InputError(f"{path}: bad residual flag {residual_flag}")
    if vec_flag != 0:
        raise InputError(f"{path}: unsupported vec convention {vec_flag}")
    n_handles, pe_levels = take("<II")

    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        n = fan_out * fan_in
        W = np.frombuffer(raw, dtype="<f8", count=n, offset=off) if off + 8 * n <= len(raw) else None
        if W is None:
            raise InputError(f"{path}: truncated model file")
        off += 8 * n
        if off + 8 * fan_out > len(raw):
            raise InputError(f"{path}: truncated model file")
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(W.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(raw):
        raise InputError(f"{path}: {len(raw) - off} trailing bytes after parameters")
    if not all(np.all(np.isfinite(W)) for W in weights):
        raise InputError(f"{path}: non-finite parameters")
    return Mlp(
        weights,
        biases,
        _ACT_NAMES[act_code],
        residual=bool(residual_flag),
        pe_levels=int(pe_levels),
        n_handles=int(n_handles),
    )
