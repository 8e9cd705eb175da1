"""End-to-end optimization of pilots and network parameters.

The unrolled forward pass simulates, per slot: uplink pilot reception,
hypernetwork update, downlink pilot reception, feedback quantization, and
the channel estimate.  The loss is the slot-summed squared error between
the real-stacked estimate and the true downlink channel, averaged over the
batch.  Adam updates all parameters; pilot tensors are re-projected onto
their power budgets after every step.

Batches run through the graph as real/imaginary pairs; estimates live in
real-stacked form (first M entries real parts, last M imaginary).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .airlink import (
    P_DL,
    P_UL,
    NoiseModel,
    downlink_receive_graph,
    normalize_pilot_values,
    uplink_receive_graph,
)
from .channel import FrameBatch, MultipathFrame, batch_from_frames, sample_frame_batch
from .errors import DomainError, TrainingDivergedError
from .networks import (
    BaselineModel,
    HyperRnnModel,
    NetworkDims,
    baseline_estimate,
    estimate_step,
    hypernetwork_step,
    init_baseline,
    init_hyperrnn,
    quantizer_forward,
)
from .numerics import Rng

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "Adam",
    "Rollout",
    "learning_rate",
    "hyperrnn_rollout",
    "baseline_rollout",
    "assert_estimator_blind",
    "frame_loss",
    "train",
    "train_model",
    "nmse",
    "nmse_db",
    "evaluate_model",
    "stacked_to_complex",
    "save_history_csv",
]


@dataclass
class TrainConfig:
    """Optimization settings.  Defaults are the full-scale operating point;
    desk runs shrink ``batch_size`` and ``iterations``."""

    iterations: int = 50_000
    batch_size: int = 1024
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    activation: str = "sign"  # "clip" swaps in the soft surrogate end to end
    fixed_pool: int = 0  # >0 trains on a fixed pool of frames instead of fresh draws
    eval_every: int = 0  # >0 records per-slot NMSE during training
    eval_frames: int = 2048

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise DomainError("iterations and batch size must be >= 1")
        if self.lr_start <= 0 or self.lr_end <= 0 or self.lr_end > self.lr_start:
            raise DomainError("learning rate must decay: 0 < lr_end <= lr_start")


@dataclass
class TrainHistory:
    """Per-iteration traces plus any mid-training evaluations."""

    loss: np.ndarray = field(default_factory=lambda: np.empty(0))
    lr: np.ndarray = field(default_factory=lambda: np.empty(0))
    eval_iterations: list[int] = field(default_factory=list)
    eval_nmse_db: list[np.ndarray] = field(default_factory=list)  # per-slot rows

    @property
    def iterations(self) -> int:
        return len(self.loss)


def learning_rate(iteration: int, cfg: TrainConfig) -> float:
    """Exponential decay hitting lr_start at iteration 0 and lr_end at the
    final iteration exactly."""
    if cfg.iterations == 1:
        return cfg.lr_start
    frac = iteration / (cfg.iterations - 1)
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


class Adam:
    """Moment-corrected SGD on a fixed list of parameter tensors."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            p.value = p.value - lr * (self.m[i] / bias1) / (np.sqrt(self.v[i] / bias2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass(eq=False)
class Rollout:
    """One unrolled forward pass: the loss node, per-slot estimates and
    targets (real-stacked values, shape (T, N, 2M)), and the graph handles
    needed for structural audits."""

    loss: T.Tensor
    estimates: np.ndarray
    targets: np.ndarray
    estimate_nodes: list[T.Tensor]
    receive_nodes: list[T.Tensor]


def _stack_parts(h: np.ndarray) -> np.ndarray:
    return np.concatenate([h.real, h.imag], axis=-1)


def stacked_to_complex(v: np.ndarray) -> np.ndarray:
    """Invert real stacking on the last axis: (..., 2M) -> (..., M)."""
    m = v.shape[-1] // 2
    return v[..., :m] + 1j * v[..., m:]


def hyperrnn_rollout(
    model: HyperRnnModel,
    batch: FrameBatch,
    noise_ul: np.ndarray | None,
    noise_dl: np.ndarray | None,
    activation: str = "sign",
) -> Rollout:
    """Unroll the full architecture over the batch's T slots.

    ``noise_ul``: (N, T, L_ul, M) complex or None; ``noise_dl``: (N, T, L_dl)
    complex or None (noiseless probes when omitted).
    """
    n = batch.n_frames
    t_slots = batch.t_slots
    s_h = T.Tensor(np.zeros((n, model.hypernet.l_h)))
    s_e = T.Tensor(np.zeros((n, model.estimator.l_e)))
    loss = None
    estimates, targets = [], []
    estimate_nodes, receive_nodes = [], []
    for t in range(t_slots):
        yu_re, yu_im = uplink_receive_graph(
            batch.h_ul[:, t],
            model.pilots.x_ul_re,
            model.pilots.x_ul_im,
            None if noise_ul is None else noise_ul[:, t],
        )
        receive_nodes += [yu_re, yu_im]
        # (N, L, M) row-major flattening equals column-major stacking of the
        # M x L observation matrix, so this is c2r(vec(Y)) per sample
        yu = T.concat([yu_re.reshape((n, -1)), yu_im.reshape((n, -1))], axis=1)
        omega, s_h = hypernetwork_step(yu, s_h, model.hypernet)

        yd_re, yd_im = downlink_receive_graph(
            batch.h_dl[:, t],
            model.pilots.x_dl_re,
            model.pilots.x_dl_im,
            None if noise_dl is None else noise_dl[:, t],
        )
        receive_nodes += [yd_re, yd_im]
        bits = quantizer_forward(T.concat([yd_re, yd_im], axis=1), model.quantizer, activation)
        h_hat, s_e = estimate_step(bits, s_e, model.estimator, omega)

        tgt = _stack_parts(batch.h_dl[:, t])
        diff = T.sub(h_hat, T.Tensor(tgt, name="channel.target"))
        term = T.tsum(T.square(diff))
        loss = term if loss is None else T.add(loss, term)
        estimate_nodes.append(h_hat)
        estimates.append(h_hat.value)
        targets.append(tgt)
    loss = T.mul(loss, T.Tensor(1.0 / n))
    return Rollout(loss, np.stack(estimates), np.stack(targets), estimate_nodes, receive_nodes)


def baseline_rollout(
    model: BaselineModel,
    batch: FrameBatch,
    noise_dl: np.ndarray | None,
    activation: str = "sign",
) -> Rollout:
    """Unroll the feedforward baseline.  The estimator is stateless, so all
    slots run as one flattened batch."""
    n, t_slots, m = batch.h_dl.shape
    h_flat = batch.h_dl.reshape(n * t_slots, m)
    noise_flat = None if noise_dl is None else noise_dl.reshape(n * t_slots, -1)
    yd_re, yd_im = downlink_receive_graph(
        h_flat, model.pilots.x_dl_re, model.pilots.x_dl_im, noise_flat
    )
    bits = quantizer_forward(T.concat([yd_re, yd_im], axis=1), model.quantizer, activation)
    h_hat = baseline_estimate(bits, model.estimator)
    tgt = _stack_parts(h_flat)
    diff = T.sub(h_hat, T.Tensor(tgt, name="channel.target"))
    loss = T.mul(T.tsum(T.square(diff)), T.Tensor(1.0 / n))
    estimates = h_hat.value.reshape(n, t_slots, 2 * m).transpose(1, 0, 2)
    targets = tgt.reshape(n, t_slots, 2 * m).transpose(1, 0, 2)
    return Rollout(loss, estimates, targets, [h_hat], [yd_re, yd_im])


def assert_estimator_blind(rollout: Rollout) -> None:
    """Prove on the graph that estimates depend on the channel only through
    the receive outputs (pilot observations), never directly."""
    stop = rollout.receive_nodes
    for node in rollout.estimate_nodes:
        leaked = [
            a.name
            for a in T.ancestors(node, stop=stop)
            if (a.name or "").startswith("channel.")
        ]
        if leaked:
            raise AssertionError(f"estimator graph reads channel tensors directly: {leaked}")


def _rollout(model, batch: FrameBatch, cfg, rng: Rng | None, activation: str = "sign") -> Rollout:
    """Dispatch on variant, drawing fresh observation noise from ``rng``
    (noiseless when rng is None)."""
    n, t_slots = batch.n_frames, batch.t_slots
    sigma2 = cfg.sigma2()
    if model.variant == "hyperrnn":
        noise_ul = noise_dl = None
        if rng is not None and sigma2 > 0:
            noise_ul = rng.complex_normal((n, t_slots, cfg.l_ul, cfg.m_antennas), sigma2)
            noise_dl = rng.complex_normal((n, t_slots, cfg.l_dl), sigma2)
        return hyperrnn_rollout(model, batch, noise_ul, noise_dl, activation)
    noise_dl = None
    if rng is not None and sigma2 > 0:
        noise_dl = rng.complex_normal((n, t_slots, cfg.l_dl), sigma2)
    return baseline_rollout(model, batch, noise_dl, activation)


def frame_loss(frame: MultipathFrame, model, cfg, rng: Rng | None) -> float:
    """Slot-summed squared estimation error for one frame, with observation
    noise drawn from ``rng`` (noiseless when None)."""
    batch = batch_from_frames([frame], cfg.m_antennas)
    return float(_rollout(model, batch, cfg, rng).loss.value)


def _project_pilots(model) -> None:
    p = model.pilots
    normalize_pilot_values(p.x_dl_re.value, p.x_dl_im.value, P_DL, per_entry=False)
    if p.x_ul_re is not None:
        normalize_pilot_values(p.x_ul_re.value, p.x_ul_im.value, P_UL, per_entry=True)


def _pool_slice(pool: FrameBatch, start: int, size: int) -> FrameBatch:
    idx = (start + np.arange(size)) % pool.n_frames
    return FrameBatch(
        pool.aods[idx], pool.gains[idx],
        pool.beta_ul[idx], pool.beta_dl[idx],
        pool.h_ul[idx], pool.h_dl[idx],
        pool.rho_ul, pool.rho_dl, pool.f_ul_hz, pool.f_dl_hz,
    )


def train(tcfg: TrainConfig, cfg, variant: str, dims: NetworkDims | None = None, progress=None):
    """Initialize and optimize one variant end to end.

    Returns (model, history).  Deterministic for fixed (tcfg, cfg, variant,
    dims): equal seeds give bit-identical histories and parameters.
    """
    dims = dims if dims is not None else NetworkDims()
    rng_init = Rng((tcfg.seed, 0))
    if variant == "hyperrnn":
        model = init_hyperrnn(cfg, dims, rng_init)
    elif variant == "baseline":
        model = init_baseline(cfg, dims, rng_init)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    history = train_model(model, tcfg, cfg, progress=progress)
    return model, history


def train_model(model, tcfg: TrainConfig, cfg, progress=None) -> TrainHistory:
    """Optimize an existing model in place; see :func:`train`."""
    rng = Rng((tcfg.seed, 1))
    params = model.named_parameters()
    opt = Adam(params.values(), tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
    pool = (
        sample_frame_batch(cfg, tcfg.fixed_pool, rng) if tcfg.fixed_pool > 0 else None
    )
    losses = np.empty(tcfg.iterations)
    lrs = np.empty(tcfg.iterations)
    history = TrainHistory(loss=losses, lr=lrs)
    for it in range(tcfg.iterations):
        if pool is not None:
            batch = _pool_slice(pool, it * tcfg.batch_size, tcfg.batch_size)
        else:
            batch = sample_frame_batch(cfg, tcfg.batch_size, rng)
        rollout = _rollout(model, batch, cfg, rng, tcfg.activation)
        if it == 0:
            assert_estimator_blind(rollout)
        loss_val = float(rollout.loss.value)
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(it)
        lr = learning_rate(it, tcfg)
        T.backward(rollout.loss)
        opt.step(lr)
        opt.zero_grad()
        _project_pilots(model)
        losses[it] = loss_val
        lrs[it] = lr
        if tcfg.eval_every > 0 and (it + 1) % tcfg.eval_every == 0:
            ratios = evaluate_model(model, cfg, tcfg.eval_frames, (tcfg.seed, 2, it))
            history.eval_iterations.append(it)
            history.eval_nmse_db.append(nmse_db(ratios))
        if progress is not None:
            progress(it, loss_val, lr)
    return history


def nmse(h_hat: np.ndarray, h: np.ndarray) -> float:
    """Mean of per-sample squared-error ratios ||h_hat - h||^2 / ||h||^2.

    Accepts single vectors or (N, M) batches; zero-power channels are
    excluded with a warning.
    """
    h_hat = np.atleast_2d(np.asarray(h_hat))
    h = np.atleast_2d(np.asarray(h))
    if h_hat.shape != h.shape:
        raise DomainError(f"shape mismatch {h_hat.shape} vs {h.shape}")
    num = np.sum(np.abs(h_hat - h) ** 2, axis=-1)
    den = np.sum(np.abs(h) ** 2, axis=-1)
    keep = den > 0
    if not np.all(keep):
        warnings.warn(f"excluded {int((~keep).sum())} zero-power channels from NMSE")
    if not np.any(keep):
        return float("nan")
    return float(np.mean(num[keep] / den[keep]))


def nmse_db(ratio):
    """10 log10 of NMSE ratios; exact zeros map to -inf."""
    arr = np.asarray(ratio, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(arr)
    return float(out) if np.isscalar(ratio) or arr.ndim == 0 else out


def _rollout_ratios(rollout: Rollout) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot (sum of ratios, count) over one rollout, excluding
    zero-power targets."""
    num = np.sum((rollout.estimates - rollout.targets) ** 2, axis=-1)
    den = np.sum(rollout.targets**2, axis=-1)
    keep = den > 0
    if not np.all(keep):
        warnings.warn(f"excluded {int((~keep).sum())} zero-power channels from NMSE")
    ratio = np.where(keep, num / np.where(keep, den, 1.0), 0.0)
    return ratio.sum(axis=1), keep.sum(axis=1)


def evaluate_model(
    model, cfg, n_frames: int, seed, chunk: int = 512, activation: str = "sign"
) -> np.ndarray:
    """Monte-Carlo per-slot NMSE (linear ratios, shape (T,)) over fresh
    frames and fresh noise.  Deterministic given ``seed``."""
    rng = Rng((seed, 3) if isinstance(seed, int) else tuple(seed) + (3,))
    sums = np.zeros(cfg.t_slots)
    counts = np.zeros(cfg.t_slots)
    done = 0
    while done < n_frames:
        n = min(chunk, n_frames - done)
        batch = sample_frame_batch(cfg, n, rng)
        rollout = _rollout(model, batch, cfg, rng, activation)
        s, c = _rollout_ratios(rollout)
        sums += s
        counts += c
        done += n
    return sums / np.maximum(counts, 1)


def save_history_csv(path, history: TrainHistory) -> None:
    """Write the per-iteration trace as CSV (iteration, loss, lr, and the
    slot-8 NMSE for iterations that were evaluated)."""
    eval_map = {
        it: row[-1] for it, row in zip(history.eval_iterations, history.eval_nmse_db)
    }
    with open(path, "w") as f:
        f.write("iteration,loss,lr,nmse_db\n")
        for i, (lo, lr) in enumerate(zip(history.loss, history.lr)):
            nm = f"{eval_map[i]:.6f}" if i in eval_map else ""
            f.write(f"{i},{lo:.10g},{lr:.10g},{nm}\n")
