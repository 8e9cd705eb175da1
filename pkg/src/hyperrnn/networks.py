"""Learnable blocks: sign-quantized feedback MLP, hypernetwork RNN,
column-modulated channel-estimation RNN, and the feedforward baseline.

All blocks operate on real-stacked data (see :mod:`hyperrnn.numerics`).
Per-sample weight modulation W * diag(w) is applied through the algebraic
identity (W diag(w)) v = W (w * v): the modulation vector gates the input
features of the base matrix, which keeps batched steps as plain GEMMs.
:func:`modulate` realizes the explicit column-scaled matrix for tests and
single-sample use.

Checkpoints are a small versioned binary container; see
:func:`save_checkpoint` for the exact layout.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CheckpointMismatchError, DimensionError
from .numerics import Rng

__all__ = [
    "NetworkDims",
    "QuantizerParams",
    "EstimatorRnnParams",
    "HypernetParams",
    "BaselineEstimatorParams",
    "PilotParams",
    "HyperRnnModel",
    "BaselineModel",
    "init_hyperrnn",
    "init_baseline",
    "quantizer_forward",
    "quantize_feedback",
    "hypernetwork_step",
    "estimate_step",
    "baseline_estimate",
    "modulate",
    "save_checkpoint",
    "load_checkpoint",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class NetworkDims:
    """Layer widths.  Defaults are the full-scale operating point; the desk
    preset in :mod:`hyperrnn.experiments` shrinks them."""

    quantizer_hidden: tuple[int, ...] = (1024, 512, 256)
    l_e: int = 256
    l_h: int = 1024
    baseline_hidden: tuple[int, ...] = (1024, 512, 256)


def _uniform_init(rng: Rng, shape: tuple[int, ...], var: float) -> np.ndarray:
    lim = np.sqrt(3.0 * var)
    return rng.uniform(-lim, lim, shape)


def _param(rng: Rng, shape: tuple[int, ...], var: float, name: str) -> T.Tensor:
    return T.Tensor(_uniform_init(rng, shape, var), requires_grad=True, name=name)


def _zeros(shape, name: str) -> T.Tensor:
    return T.Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass(eq=False)
class QuantizerParams:
    """Feedback MLP: ReLU hidden layers, then a sign layer emitting B bits.
    Weights are stored (in, out) and applied as x @ W."""

    weights: list[T.Tensor]
    biases: list[T.Tensor]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def named(self, prefix: str = "quantizer") -> dict[str, T.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


@dataclass(eq=False)
class EstimatorRnnParams:
    """Estimation RNN base matrices (out, in) and biases; the hypernetwork
    rescales their columns each slot."""

    w_a: T.Tensor  # (l_e, B)
    w_c: T.Tensor  # (l_e, l_e)
    w_b: T.Tensor  # (2M, l_e)
    b_a: T.Tensor  # (l_e,)
    b_b: T.Tensor  # (2M,)

    @property
    def l_e(self) -> int:
        return self.w_a.shape[0]

    def named(self, prefix: str = "estimator") -> dict[str, T.Tensor]:
        return {
            f"{prefix}.w_a": self.w_a,
            f"{prefix}.w_c": self.w_c,
            f"{prefix}.w_b": self.w_b,
            f"{prefix}.b_a": self.b_a,
            f"{prefix}.b_b": self.b_b,
        }


@dataclass(eq=False)
class HypernetParams:
    """Hypernetwork RNN mapping stacked uplink observations to the
    modulation vector of length B + 2*l_e."""

    w_a: T.Tensor  # (l_h, 2*M*L_ul)
    w_c: T.Tensor  # (l_h, l_h)
    w_b: T.Tensor  # (B + 2*l_e, l_h)
    b_a: T.Tensor  # (l_h,)
    b_b: T.Tensor  # (B + 2*l_e,)

    @property
    def l_h(self) -> int:
        return self.w_a.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_b.shape[0]

    def named(self, prefix: str = "hypernet") -> dict[str, T.Tensor]:
        return {
            f"{prefix}.w_a": self.w_a,
            f"{prefix}.w_c": self.w_c,
            f"{prefix}.w_b": self.w_b,
            f"{prefix}.b_a": self.b_a,
            f"{prefix}.b_b": self.b_b,
        }


@dataclass(eq=False)
class BaselineEstimatorParams:
    """Stateless feedforward estimator: ReLU hidden layers, linear 2M-wide
    output.  Weights stored (in, out)."""

    weights: list[T.Tensor]
    biases: list[T.Tensor]

    def named(self, prefix: str = "baseline") -> dict[str, T.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


@dataclass(eq=False)
class PilotParams:
    """Trainable pilot tensors (real/imaginary parts)."""

    x_dl_re: T.Tensor  # (M, L_dl)
    x_dl_im: T.Tensor
    x_ul_re: T.Tensor | None = None  # (L_ul,)
    x_ul_im: T.Tensor | None = None

    def named(self, prefix: str = "pilot") -> dict[str, T.Tensor]:
        out = {f"{prefix}.x_dl_re": self.x_dl_re, f"{prefix}.x_dl_im": self.x_dl_im}
        if self.x_ul_re is not None:
            out[f"{prefix}.x_ul_re"] = self.x_ul_re
            out[f"{prefix}.x_ul_im"] = self.x_ul_im
        return out

    def x_ul(self) -> np.ndarray:
        return self.x_ul_re.value + 1j * self.x_ul_im.value

    def x_dl(self) -> np.ndarray:
        return self.x_dl_re.value + 1j * self.x_dl_im.value


@dataclass(eq=False)
class HyperRnnModel:
    quantizer: QuantizerParams
    hypernet: HypernetParams
    estimator: EstimatorRnnParams
    pilots: PilotParams

    variant = "hyperrnn"

    def named_parameters(self) -> dict[str, T.Tensor]:
        return {
            **self.quantizer.named(),
            **self.hypernet.named(),
            **self.estimator.named(),
            **self.pilots.named(),
        }


@dataclass(eq=False)
class BaselineModel:
    quantizer: QuantizerParams
    estimator: BaselineEstimatorParams
    pilots: PilotParams

    variant = "baseline"

    def named_parameters(self) -> dict[str, T.Tensor]:
        return {
            **self.quantizer.named(),
            **self.estimator.named(),
            **self.pilots.named(),
        }


def _init_mlp(widths: list[int], rng: Rng, prefix: str, last_linear_var: bool = True):
    """ReLU stack init: uniform, variance 2/fan_in for hidden layers and
    1/fan_in for the final (linear or sign) layer; zero biases."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        var = (1.0 if (last and last_linear_var) else 2.0) / n_in
        weights.append(_param(rng, (n_in, n_out), var, f"{prefix}.w{i}"))
        biases.append(_zeros(n_out, f"{prefix}.b{i}"))
    return weights, biases


def _init_quantizer(l_dl: int, hidden: tuple[int, ...], b_bits: int, rng: Rng) -> QuantizerParams:
    weights, biases = _init_mlp([2 * l_dl, *hidden, b_bits], rng, "quantizer")
    return QuantizerParams(weights, biases)


def _init_estimator_rnn(b_bits: int, l_e: int, m: int, rng: Rng) -> EstimatorRnnParams:
    return EstimatorRnnParams(
        w_a=_param(rng, (l_e, b_bits), 2.0 / b_bits, "estimator.w_a"),
        w_c=T.Tensor(
            0.9 * _uniform_init(rng, (l_e, l_e), 1.0 / l_e),
            requires_grad=True,
            name="estimator.w_c",
        ),
        w_b=_param(rng, (2 * m, l_e), 1.0 / l_e, "estimator.w_b"),
        b_a=_zeros(l_e, "estimator.b_a"),
        b_b=_zeros(2 * m, "estimator.b_b"),
    )


def _init_hypernet(m: int, l_ul: int, b_bits: int, l_e: int, l_h: int, rng: Rng) -> HypernetParams:
    in_dim = 2 * m * l_ul
    out_dim = b_bits + 2 * l_e
    return HypernetParams(
        w_a=_param(rng, (l_h, in_dim), 2.0 / in_dim, "hypernet.w_a"),
        w_c=T.Tensor(
            0.9 * _uniform_init(rng, (l_h, l_h), 1.0 / l_h),
            requires_grad=True,
            name="hypernet.w_c",
        ),
        # head weights start small and the bias at one, so modulation opens
        # as a near-identity perturbation instead of amplifying noise
        w_b=_param(rng, (out_dim, l_h), 0.01 / l_h, "hypernet.w_b"),
        b_a=_zeros(l_h, "hypernet.b_a"),
        b_b=T.Tensor(np.ones(out_dim), requires_grad=True, name="hypernet.b_b"),
    )


def _init_baseline_estimator(b_bits: int, hidden: tuple[int, ...], m: int, rng: Rng) -> BaselineEstimatorParams:
    weights, biases = _init_mlp([b_bits, *hidden, 2 * m], rng, "baseline")
    return BaselineEstimatorParams(weights, biases)


def _init_pilots(cfg, rng: Rng, with_ul: bool) -> PilotParams:
    from .airlink import P_DL, P_UL, normalize_pilot_values

    x_dl_re = rng.standard_normal((cfg.m_antennas, cfg.l_dl))
    x_dl_im = rng.standard_normal((cfg.m_antennas, cfg.l_dl))
    normalize_pilot_values(x_dl_re, x_dl_im, P_DL, per_entry=False)
    pilots = PilotParams(
        x_dl_re=T.Tensor(x_dl_re, requires_grad=True, name="pilot.x_dl_re"),
        x_dl_im=T.Tensor(x_dl_im, requires_grad=True, name="pilot.x_dl_im"),
    )
    if with_ul:
        x_ul_re = rng.standard_normal(cfg.l_ul)
        x_ul_im = rng.standard_normal(cfg.l_ul)
        normalize_pilot_values(x_ul_re, x_ul_im, P_UL, per_entry=True)
        pilots.x_ul_re = T.Tensor(x_ul_re, requires_grad=True, name="pilot.x_ul_re")
        pilots.x_ul_im = T.Tensor(x_ul_im, requires_grad=True, name="pilot.x_ul_im")
    return pilots


def init_hyperrnn(cfg, dims: NetworkDims, rng: Rng) -> HyperRnnModel:
    """Fresh hypernetwork-modulated model with trainable ul/dl pilots."""
    return HyperRnnModel(
        quantizer=_init_quantizer(cfg.l_dl, dims.quantizer_hidden, cfg.b_bits, rng),
        hypernet=_init_hypernet(cfg.m_antennas, cfg.l_ul, cfg.b_bits, dims.l_e, dims.l_h, rng),
        estimator=_init_estimator_rnn(cfg.b_bits, dims.l_e, cfg.m_antennas, rng),
        pilots=_init_pilots(cfg, rng, with_ul=True),
    )


def init_baseline(cfg, dims: NetworkDims, rng: Rng) -> BaselineModel:
    """Fresh feedforward baseline with a trainable downlink pilot only."""
    return BaselineModel(
        quantizer=_init_quantizer(cfg.l_dl, dims.quantizer_hidden, cfg.b_bits, rng),
        estimator=_init_baseline_estimator(cfg.b_bits, dims.baseline_hidden, cfg.m_antennas, rng),
        pilots=_init_pilots(cfg, rng, with_ul=False),
    )


def quantizer_forward(x: T.Tensor, params: QuantizerParams, activation: str = "sign") -> T.Tensor:
    """Feedback MLP on stacked observations (N, 2*L_dl) -> (N, B).

    ``activation='sign'`` emits hard bits with the straight-through backward
    rule; ``'clip'`` substitutes the surrogate clip(u, -1, 1) forward used
    by gradient checks (the two share the same backward mask).
    """
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = T.relu(T.dense(h, w, b))
    u = T.dense(h, params.weights[-1], params.biases[-1])
    if activation == "sign":
        return T.sign_ste(u)
    if activation == "clip":
        return T.hardtanh(u)
    raise ValueError(f"unknown quantizer activation {activation!r}")


def quantize_feedback(y_dl: np.ndarray, params: QuantizerParams, mode: str = "eval"):
    """Feedback message for complex observations ``y_dl`` of shape (L,) or
    (N, L).  ``mode='eval'`` returns a plain +/-1 bit array; ``mode='train'``
    returns the graph tensor with straight-through backward."""
    y = np.asarray(y_dl, dtype=np.complex128)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    if 2 * y.shape[1] != params.widths[0]:
        raise DimensionError(
            f"quantizer expects {params.widths[0] // 2} observations, got {y.shape[1]}"
        )
    x = T.Tensor(np.concatenate([y.real, y.imag], axis=1))
    bits = quantizer_forward(x, params, activation="sign")
    if mode == "train":
        return bits if not single else bits[0]
    if mode == "eval":
        return bits.value[0] if single else bits.value
    raise ValueError(f"unknown mode {mode!r}")


def hypernetwork_step(
    y_ul: T.Tensor,
    s_prev: T.Tensor,
    params: HypernetParams,
) -> tuple[T.Tensor, T.Tensor]:
    """One hypernetwork slot: (N, 2*M*L_ul) stacked uplink observations and
    previous state (N, l_h) -> (modulation vector (N, B + 2*l_e), new state).
    """
    if y_ul.shape[-1] != params.w_a.shape[1]:
        raise DimensionError(
            f"hypernetwork expects input width {params.w_a.shape[1]}, got {y_ul.shape[-1]}"
        )
    pre = T.add(
        T.dense(y_ul, params.w_a, params.b_a, transpose_w=True),
        T.dense(s_prev, params.w_c, None, transpose_w=True),
    )
    s = T.relu(pre)
    omega = T.dense(s, params.w_b, params.b_b, transpose_w=True)
    return omega, s


def split_modulation(omega: T.Tensor, b_bits: int, l_e: int) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    """Partition the modulation vector into the input, output, and
    recurrence gates (lengths B, l_e, l_e)."""
    if omega.shape[-1] != b_bits + 2 * l_e:
        raise DimensionError(
            f"modulation vector has width {omega.shape[-1]}, expected {b_bits + 2 * l_e}"
        )
    return (
        omega[..., :b_bits],
        omega[..., b_bits : b_bits + l_e],
        omega[..., b_bits + l_e :],
    )


def modulate(base, omega):
    """Scale column j of ``base`` by ``omega[j]``.  Accepts tensors or
    arrays; shapes must agree on the column count."""
    base_cols = base.shape[-1]
    n = omega.shape[-1] if hasattr(omega, "shape") else len(omega)
    if n != base_cols:
        raise DimensionError(f"modulation length {n} != column count {base_cols}")
    if isinstance(base, T.Tensor) or isinstance(omega, T.Tensor):
        return T.mul(T.as_tensor(base), T.as_tensor(omega))
    return np.asarray(base) * np.asarray(omega)


def estimate_step(
    q: T.Tensor,
    s_prev: T.Tensor,
    params: EstimatorRnnParams,
    omega: T.Tensor | None = None,
) -> tuple[T.Tensor, T.Tensor]:
    """One estimation-RNN slot on feedback bits (N, B) and previous state
    (N, l_e); returns (real-stacked estimate (N, 2M), new state).

    With a modulation vector, each base matrix acts with its columns scaled
    by the corresponding gate (applied as input gating, which is exactly
    W diag(w) v = W (w * v)).  ``omega=None`` is the plain RNN.
    """
    l_e = params.l_e
    b_bits = params.w_a.shape[1]
    if omega is not None:
        om_a, om_b, om_c = split_modulation(omega, b_bits, l_e)
        q = T.mul(q, om_a)
        s_in = T.mul(s_prev, om_c)
    else:
        s_in = s_prev
    pre = T.add(
        T.dense(q, params.w_a, params.b_a, transpose_w=True),
        T.dense(s_in, params.w_c, None, transpose_w=True),
    )
    s = T.relu(pre)
    out_in = T.mul(s, om_b) if omega is not None else s
    h_hat = T.dense(out_in, params.w_b, params.b_b, transpose_w=True)
    return h_hat, s


def baseline_estimate(q: T.Tensor, params: BaselineEstimatorParams) -> T.Tensor:
    """Stateless feedforward estimate (N, B) -> (N, 2M)."""
    h = q
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = T.relu(T.dense(h, w, b))
    return T.dense(h, params.weights[-1], params.biases[-1])


# --- checkpoint container ---------------------------------------------------

_MAGIC = b"HRNNCKPT"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write a versioned checkpoint.

    Layout (all integers little-endian): 8-byte magic ``HRNNCKPT``; u32
    version; u32 length + UTF-8 JSON metadata (experiment config, dims,
    variant); u32 tensor count; then per tensor: u16 name length + UTF-8
    name, u8 rank, u64 per dimension, raw little-endian float64 data.
    """
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    meta_blob = json.dumps(meta).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_blob)))
    buf.write(meta_blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MAGIC:
        raise CheckpointMismatchError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != _VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {version}")
    off = 12
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}Q", data, off) if rank else ()
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        tensors[name] = arr.copy()
    return tensors, meta


def save_model(path, model, cfg, dims: NetworkDims) -> None:
    """Checkpoint a model together with the config that shaped it."""
    import dataclasses as _dc

    tensors = {name: t.value for name, t in model.named_parameters().items()}
    meta = {
        "variant": model.variant,
        "experiment": _dc.asdict(cfg),
        "dims": _dc.asdict(dims),
    }
    save_checkpoint(path, tensors, meta)


def load_model(path, cfg=None, dims: NetworkDims | None = None):
    """Rebuild a model from a checkpoint.

    ``cfg``/``dims`` default to the ones stored in the file; passing
    incompatible ones raises :class:`CheckpointMismatchError`.
    Returns (model, cfg, dims).
    """
    from .config import ExperimentConfig

    tensors, meta = load_checkpoint(path)
    stored_cfg = ExperimentConfig(**meta["experiment"])
    stored_dims = NetworkDims(
        **{k: tuple(v) if isinstance(v, list) else v for k, v in meta["dims"].items()}
    )
    cfg = cfg if cfg is not None else stored_cfg
    dims = dims if dims is not None else stored_dims
    rng = Rng(0)
    if meta["variant"] == "hyperrnn":
        model = init_hyperrnn(cfg, dims, rng)
    elif meta["variant"] == "baseline":
        model = init_baseline(cfg, dims, rng)
    else:
        raise CheckpointMismatchError(f"unknown variant {meta['variant']!r}")
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = set(params) ^ set(tensors)
        raise CheckpointMismatchError(f"parameter names disagree: {sorted(missing)}")
    for name, tensor in params.items():
        if tensor.value.shape != tensors[name].shape:
            raise CheckpointMismatchError(
                f"{name}: checkpoint shape {tensors[name].shape} != expected {tensor.value.shape}"
            )
        tensor.value = tensors[name].astype(np.float64)
    return model, cfg, dims
