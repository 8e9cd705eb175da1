"""Experiment sweeps: NMSE versus feedback budget B at several uplink
pilot lengths (uncorrelated fading), and NMSE versus path count P under
Doppler-correlated fading.  Each grid point trains its own model; results
land in a fixed-schema CSV plus optional checkpoints.

Two scales exist: ``desk`` shrinks antennas, widths, batch, and iteration
count so the full study runs on a laptop CPU; ``paper`` is the full-size
operating point.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ExperimentConfig
from .errors import TrainingDivergedError
from .networks import NetworkDims, load_model, save_model
from .training import TrainConfig, evaluate_model, nmse_db, train

__all__ = [
    "ScalePreset",
    "SCALES",
    "SweepRow",
    "SweepResult",
    "CSV_HEADER",
    "run_fig4_sweep",
    "run_fig5_sweep",
    "evaluate_checkpoint",
    "sweep_seed",
]

CSV_HEADER = "variant,B,L_ul,L_dl,P,M,snr_db,rho_ul,rho_dl,t,nmse_db,seed"


@dataclass(frozen=True)
class ScalePreset:
    """Size and protocol knobs that trade fidelity for runtime.

    ``snr_db`` and the per-sweep slot counts define the default operating
    point of the figure sweeps at this scale; the desk scale runs the
    static-fading sweep at high SNR with short frames, where the
    architectures separate cleanly despite the small antenna count.
    """

    name: str
    m_antennas: int
    batch_size: int
    iterations: int
    eval_frames: int
    dims: NetworkDims
    snr_db: float
    fig4_slots: int
    fig5_slots: int


SCALES = {
    "desk": ScalePreset(
        name="desk",
        m_antennas=16,
        batch_size=256,
        iterations=3000,
        eval_frames=10_000,
        dims=NetworkDims(
            quantizer_hidden=(128, 64, 32),
            l_e=128,
            l_h=256,
            baseline_hidden=(128, 64, 32),
        ),
        snr_db=30.0,
        fig4_slots=4,
        fig5_slots=8,
    ),
    "paper": ScalePreset(
        name="paper",
        m_antennas=64,
        batch_size=1024,
        iterations=50_000,
        eval_frames=10_000,
        dims=NetworkDims(),
        snr_db=10.0,
        fig4_slots=8,
        fig5_slots=8,
    ),
}


@dataclass
class SweepRow:
    """One evaluated slot of one trained grid point."""

    variant: str
    b_bits: int
    l_ul: int
    l_dl: int
    n_paths: int
    m_antennas: int
    snr_db: float
    rho_ul: float
    rho_dl: float
    t: int
    nmse_db: float
    seed: int
    runtime_s: float = 0.0
    checkpoint: str = ""

    def csv_line(self) -> str:
        nm = f"{self.nmse_db:.6f}" if np.isfinite(self.nmse_db) else "nan"
        return (
            f"{self.variant},{self.b_bits},{self.l_ul},{self.l_dl},{self.n_paths},"
            f"{self.m_antennas},{self.snr_db:g},{self.rho_ul:.6f},{self.rho_dl:.6f},"
            f"{self.t},{nm},{self.seed}"
        )


@dataclass
class SweepResult:
    """All rows of one sweep plus the outcome of its trend checks."""

    rows: list[SweepRow] = field(default_factory=list)
    trend_ok: bool = True
    notes: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return not self.failures

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(CSV_HEADER + "\n")
            for row in self.rows:
                f.write(row.csv_line() + "\n")

    def nmse_at(self, variant: str, t: int, **match) -> float:
        """NMSE (dB) of the unique row with the given variant, slot, and
        field values (e.g. b_bits=20, l_ul=4)."""
        hits = [
            r
            for r in self.rows
            if r.variant == variant
            and r.t == t
            and all(getattr(r, k) == v for k, v in match.items())
        ]
        if len(hits) != 1:
            raise KeyError(f"expected exactly one row for {variant} t={t} {match}, got {len(hits)}")
        return hits[0].nmse_db


def sweep_seed(base_seed: int, index: int) -> tuple[int, int]:
    """Stable per-grid-point seed: independent streams per point, all
    derived from one base seed."""
    return (base_seed, index)


def _train_point(variant, cfg, preset, seed, out_dir, tag, progress):
    """Train and evaluate one grid point; returns (per-slot dB array,
    runtime, checkpoint path) or raises TrainingDivergedError."""
    tcfg = TrainConfig(
        iterations=preset.iterations,
        batch_size=preset.batch_size,
        seed=seed,
    )
    t0 = time.perf_counter()
    model, _ = train(tcfg, cfg, variant, dims=preset.dims, progress=progress)
    runtime = time.perf_counter() - t0
    ratios = evaluate_model(model, cfg, preset.eval_frames, seed)
    ckpt = ""
    if out_dir:
        ckpt = os.path.join(out_dir, f"{tag}.ckpt")
        save_model(ckpt, model, cfg, preset.dims)
    return nmse_db(ratios), runtime, ckpt


def _emit_rows(result, variant, cfg, base_seed, per_slot_db, runtime, ckpt):
    for t in range(cfg.t_slots):
        result.rows.append(
            SweepRow(
                variant=variant,
                b_bits=cfg.b_bits,
                l_ul=cfg.l_ul,
                l_dl=cfg.l_dl,
                n_paths=cfg.n_paths,
                m_antennas=cfg.m_antennas,
                snr_db=cfg.snr_db,
                rho_ul=cfg.rho_ul(),
                rho_dl=cfg.rho_dl(),
                t=t + 1,
                nmse_db=float(per_slot_db[t]) if per_slot_db is not None else float("nan"),
                seed=base_seed,
                runtime_s=runtime,
                checkpoint=ckpt,
            )
        )


def _run_point(result, variant, cfg, preset, grid_index, base_seed, out_dir, tag, progress):
    seed = sweep_seed(base_seed, grid_index)
    try:
        per_slot_db, runtime, ckpt = _train_point(
            variant, cfg, preset, seed, out_dir, tag, progress
        )
    except TrainingDivergedError as err:
        result.failures.append(f"{tag}: {err}")
        _emit_rows(result, variant, cfg, base_seed, None, 0.0, "")
        return None
    _emit_rows(result, variant, cfg, base_seed, per_slot_db, runtime, ckpt)
    return float(per_slot_db[cfg.t_slots - 1])


def run_fig4_sweep(
    base: ExperimentConfig,
    b_values,
    lul_values,
    scale: str = "desk",
    out_dir=None,
    progress=None,
) -> SweepResult:
    """Feedback-budget study under uncorrelated fading: a baseline per B
    and a hypernetwork model per (B, L_ul); trend checks at the final slot.

    Only ``rho_override`` is forced (uncorrelated fading defines this
    study); antenna count, SNR, and slot count come from ``base``, for
    which the CLI fills preset defaults.
    """
    preset = SCALES[scale]
    base = replace(base, rho_override=0.0)
    result = SweepResult()
    t_eval = base.t_slots
    final = {}  # (variant, b, l_ul) -> final-slot NMSE dB
    grid_index = 0
    for b in b_values:
        cfg = replace(base, b_bits=b)
        nm = _run_point(
            result, "baseline", cfg, preset, grid_index, base.seed, out_dir,
            f"fig4_baseline_B{b}", progress,
        )
        if nm is not None:
            final[("baseline", b, cfg.l_ul)] = nm
        grid_index += 1
        for l_ul in lul_values:
            cfg_h = replace(cfg, l_ul=l_ul)
            nm = _run_point(
                result, "hyperrnn", cfg_h, preset, grid_index, base.seed, out_dir,
                f"fig4_hyperrnn_B{b}_L{l_ul}", progress,
            )
            if nm is not None:
                final[("hyperrnn", b, l_ul)] = nm
            grid_index += 1

    # trend checks (skipped vacuously for grids that lack the needed points)
    lmax = max(lul_values) if lul_values else None
    for b in b_values:
        if lmax is None:
            break
        base_nm = final.get(("baseline", b, base.l_ul))
        hyper_nm = final.get(("hyperrnn", b, lmax))
        if base_nm is None or hyper_nm is None:
            continue
        if hyper_nm >= base_nm:
            result.trend_ok = False
            result.notes.append(
                f"B={b}: hyperrnn (L_ul={lmax}) {hyper_nm:.2f} dB not below baseline {base_nm:.2f} dB"
            )
        if b == 20 and hyper_nm > base_nm - 1.0:
            result.trend_ok = False
            result.notes.append(
                f"B=20 margin: hyperrnn {hyper_nm:.2f} dB vs baseline {base_nm:.2f} dB (< 1 dB)"
            )
    for b in b_values:
        ordered = sorted(l for l in lul_values if ("hyperrnn", b, l) in final)
        for l_lo, l_hi in zip(ordered[:-1], ordered[1:]):
            lo, hi = final[("hyperrnn", b, l_lo)], final[("hyperrnn", b, l_hi)]
            if hi > lo + 0.5:
                result.trend_ok = False
                result.notes.append(
                    f"B={b}: NMSE rose from {lo:.2f} dB (L_ul={l_lo}) to {hi:.2f} dB (L_ul={l_hi})"
                )
    if result.failures:
        result.trend_ok = False
    return result


def run_fig5_sweep(
    base: ExperimentConfig,
    p_values,
    scale: str = "desk",
    out_dir=None,
    progress=None,
) -> SweepResult:
    """Path-count study under Doppler-correlated fading: both variants per
    P; the hypernetwork's edge should widen as paths get sparser.

    Only ``rho_override`` is forced (the Doppler correlation defines this
    study); other system fields come from ``base``.
    """
    preset = SCALES[scale]
    base = replace(base, rho_override=None)
    result = SweepResult()
    gaps = {}
    per_variant = {}
    grid_index = 0
    for p in p_values:
        cfg = replace(base, n_paths=p)
        nm_base = _run_point(
            result, "baseline", cfg, preset, grid_index, base.seed, out_dir,
            f"fig5_baseline_P{p}", progress,
        )
        grid_index += 1
        nm_hyper = _run_point(
            result, "hyperrnn", cfg, preset, grid_index, base.seed, out_dir,
            f"fig5_hyperrnn_P{p}", progress,
        )
        grid_index += 1
        if nm_base is not None and nm_hyper is not None:
            gaps[p] = nm_base - nm_hyper
        per_variant[("baseline", p)] = nm_base
        per_variant[("hyperrnn", p)] = nm_hyper

    if len(gaps) >= 2:
        p_lo, p_hi = min(gaps), max(gaps)
        if gaps[p_lo] <= gaps[p_hi]:
            result.trend_ok = False
            result.notes.append(
                f"gap at P={p_lo} ({gaps[p_lo]:.2f} dB) does not exceed gap at P={p_hi} ({gaps[p_hi]:.2f} dB)"
            )
    # informational check, not a gate: sparser channels should be easier
    for variant in ("baseline", "hyperrnn"):
        vals = {p: per_variant.get((variant, p)) for p in p_values}
        vals = {p: v for p, v in vals.items() if v is not None}
        if len(vals) >= 2 and vals[min(vals)] >= vals[max(vals)]:
            result.notes.append(
                f"note: {variant} NMSE at P={min(vals)} not below P={max(vals)}"
            )
    if result.failures:
        result.trend_ok = False
    return result


def evaluate_checkpoint(ckpt_path, cfg=None, n_frames: int = 10_000, seed: int = 0) -> np.ndarray:
    """Per-slot NMSE (dB) of a stored model over fresh frames and noise."""
    model, cfg, _ = load_model(ckpt_path, cfg)
    return nmse_db(evaluate_model(model, cfg, n_frames, seed))
