"""Multipath FDD channel simulation with shared long-term path features.

Each coherence frame draws P paths (angle of departure and gain, identical
for uplink and downlink) and, per link, P temporally correlated AR(1)
complex fading tracks.  The slot-t channel of a link is

    h_t = sum_p gain_p * a_link(aod_p) * beta_{p,t}

with a uniform linear array steering vector per carrier.  Frames are
immutable once sampled; sampling is vectorized across a batch for training
and exposed per-frame for tests and dataset export.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import Rng, bessel_j0

__all__ = [
    "SPEED_OF_LIGHT",
    "AOD_RANGE",
    "CarrierGeometry",
    "PathParams",
    "FadingTrack",
    "MultipathFrame",
    "FrameBatch",
    "doppler_rho",
    "steering_vector",
    "sample_fading_track",
    "sample_frame",
    "sample_frame_batch",
    "channel_at",
    "link_geometry",
    "frame_geometry",
    "batch_from_frames",
    "save_frames",
    "load_frames",
]

SPEED_OF_LIGHT = 299792458.0  # m/s

# angles of departure are drawn uniformly from this sector
AOD_RANGE = (-np.pi / 6.0, np.pi / 6.0)


@dataclass(frozen=True)
class CarrierGeometry:
    """Uniform linear array seen at one carrier frequency."""

    m_antennas: int
    spacing_m: float
    carrier_hz: float

    def __post_init__(self):
        if self.m_antennas < 1:
            raise DomainError("antenna count must be >= 1")
        if self.spacing_m <= 0 or self.carrier_hz <= 0:
            raise DomainError("spacing and carrier frequency must be positive")


@dataclass(frozen=True)
class PathParams:
    """Long-term features of one propagation path."""

    aod_rad: float
    gain: float


@dataclass(frozen=True, eq=False)
class FadingTrack:
    """Per-slot complex fading of one path on one link."""

    values: np.ndarray  # (T,) complex
    rho: float


@dataclass(frozen=True, eq=False)
class MultipathFrame:
    """One coherence frame: shared path features, independent ul/dl fading."""

    paths: tuple[PathParams, ...]
    ul_fading: tuple[FadingTrack, ...]
    dl_fading: tuple[FadingTrack, ...]
    t_slots: int
    f_ul_hz: float
    f_dl_hz: float

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def aods(self) -> np.ndarray:
        return np.array([p.aod_rad for p in self.paths])

    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths])


@dataclass(frozen=True, eq=False)
class FrameBatch:
    """Struct-of-arrays form of N frames, used by training and evaluation."""

    aods: np.ndarray  # (N, P)
    gains: np.ndarray  # (N, P)
    beta_ul: np.ndarray  # (N, P, T) complex
    beta_dl: np.ndarray  # (N, P, T) complex
    h_ul: np.ndarray  # (N, T, M) complex
    h_dl: np.ndarray  # (N, T, M) complex
    rho_ul: float
    rho_dl: float
    f_ul_hz: float
    f_dl_hz: float

    @property
    def n_frames(self) -> int:
        return self.aods.shape[0]

    @property
    def t_slots(self) -> int:
        return self.beta_ul.shape[2]

    def frame_at(self, i: int) -> MultipathFrame:
        """Materialize frame i as an individual MultipathFrame."""
        paths = tuple(
            PathParams(float(a), float(g)) for a, g in zip(self.aods[i], self.gains[i])
        )
        ul = tuple(FadingTrack(self.beta_ul[i, p].copy(), self.rho_ul) for p in range(len(paths)))
        dl = tuple(FadingTrack(self.beta_dl[i, p].copy(), self.rho_dl) for p in range(len(paths)))
        return MultipathFrame(paths, ul, dl, self.t_slots, self.f_ul_hz, self.f_dl_hz)


def doppler_rho(speed_mps: float, carrier_hz: float, slot_s: float) -> float:
    """AR(1) correlation coefficient J0(2 pi f_d tau), f_d = v f_C / c."""
    if speed_mps < 0:
        raise DomainError("speed must be non-negative")
    if carrier_hz <= 0 or slot_s <= 0:
        raise DomainError("carrier frequency and slot duration must be positive")
    f_d = speed_mps * carrier_hz / SPEED_OF_LIGHT
    return bessel_j0(2.0 * np.pi * f_d * slot_s)


def steering_vector(geom: CarrierGeometry, aod_rad: float) -> np.ndarray:
    """ULA response at angle ``aod_rad``: entry m (0-indexed) is
    exp(-j 2 pi m d sin(aod) f_C / c); unit modulus by construction."""
    m = np.arange(geom.m_antennas)
    phase = -2.0 * np.pi * m * geom.spacing_m * np.sin(aod_rad) * geom.carrier_hz / SPEED_OF_LIGHT
    return np.exp(1j * phase)


def sample_fading_track(rho: float, t_slots: int, rng: Rng) -> FadingTrack:
    """AR(1) track with stationary unit variance:
    beta_1 ~ CN(0,1), beta_t = rho beta_{t-1} + sqrt(1-rho^2) eps_t."""
    if abs(rho) > 1.0:
        raise DomainError(f"|rho| must be <= 1, got {rho}")
    if t_slots < 1:
        raise DomainError("need at least one slot")
    eps = rng.complex_normal(t_slots)
    values = np.empty(t_slots, dtype=np.complex128)
    values[0] = eps[0]
    innov = np.sqrt(max(0.0, 1.0 - rho * rho))
    for t in range(1, t_slots):
        values[t] = rho * values[t - 1] + innov * eps[t]
    return FadingTrack(values, float(rho))


def link_geometry(cfg, link: str) -> CarrierGeometry:
    """Geometry of one link: shared physical ULA with half-wavelength
    spacing at the uplink carrier, evaluated at the link's own carrier."""
    spacing = SPEED_OF_LIGHT / (2.0 * cfg.f_ul_hz)
    carrier = cfg.f_ul_hz if link == "ul" else cfg.f_dl_hz
    return CarrierGeometry(cfg.m_antennas, spacing, carrier)


def frame_geometry(frame: MultipathFrame, m_antennas: int, link: str) -> CarrierGeometry:
    """Geometry of one link reconstructed from a frame's carriers (the
    array spacing is always half the uplink wavelength)."""
    spacing = SPEED_OF_LIGHT / (2.0 * frame.f_ul_hz)
    carrier = frame.f_ul_hz if link == "ul" else frame.f_dl_hz
    return CarrierGeometry(m_antennas, spacing, carrier)


def batch_from_frames(frames, m_antennas: int) -> FrameBatch:
    """Pack individual frames into struct-of-arrays form (inverse of
    :meth:`FrameBatch.frame_at`).  All frames must share carriers, path
    count, and slot count."""
    first = frames[0]
    aods = np.stack([f.aods() for f in frames])
    gains = np.stack([f.gains() for f in frames])
    beta_ul = np.stack([[tr.values for tr in f.ul_fading] for f in frames])
    beta_dl = np.stack([[tr.values for tr in f.dl_fading] for f in frames])
    h_ul = _batch_channels(aods, gains, beta_ul, frame_geometry(first, m_antennas, "ul"))
    h_dl = _batch_channels(aods, gains, beta_dl, frame_geometry(first, m_antennas, "dl"))
    return FrameBatch(
        aods, gains, beta_ul, beta_dl, h_ul, h_dl,
        first.ul_fading[0].rho, first.dl_fading[0].rho,
        first.f_ul_hz, first.f_dl_hz,
    )


def _batch_channels(aods, gains, beta, geom: CarrierGeometry) -> np.ndarray:
    """(N,P),(N,P),(N,P,T) -> (N,T,M) channel matrix for one link."""
    m = np.arange(geom.m_antennas)
    wave = 2.0 * np.pi * geom.spacing_m * geom.carrier_hz / SPEED_OF_LIGHT
    steer = np.exp(-1j * wave * np.sin(aods)[..., None] * m)  # (N, P, M)
    return np.einsum("np,npt,npm->ntm", gains, beta, steer)


def sample_frame_batch(cfg, n_frames: int, rng: Rng) -> FrameBatch:
    """Draw N frames at once: AoDs uniform over the sector, equal-power
    gains 1/sqrt(P), independent AR(1) fading per link with Doppler-derived
    (or overridden) correlation."""
    p = cfg.n_paths
    t = cfg.t_slots
    aods = rng.uniform(AOD_RANGE[0], AOD_RANGE[1], (n_frames, p))
    gains = np.full((n_frames, p), 1.0 / np.sqrt(p))
    rho_ul = cfg.rho_ul()
    rho_dl = cfg.rho_dl()

    def tracks(rho):
        eps = rng.complex_normal((n_frames, p, t))
        beta = np.empty_like(eps)
        beta[..., 0] = eps[..., 0]
        innov = np.sqrt(max(0.0, 1.0 - rho * rho))
        for k in range(1, t):
            beta[..., k] = rho * beta[..., k - 1] + innov * eps[..., k]
        return beta

    beta_ul = tracks(rho_ul)
    beta_dl = tracks(rho_dl)
    h_ul = _batch_channels(aods, gains, beta_ul, link_geometry(cfg, "ul"))
    h_dl = _batch_channels(aods, gains, beta_dl, link_geometry(cfg, "dl"))
    return FrameBatch(
        aods, gains, beta_ul, beta_dl, h_ul, h_dl,
        rho_ul, rho_dl, cfg.f_ul_hz, cfg.f_dl_hz,
    )


def sample_frame(cfg, rng: Rng) -> MultipathFrame:
    """Draw a single frame (same distribution as one batch element)."""
    return sample_frame_batch(cfg, 1, rng).frame_at(0)


def channel_at(frame: MultipathFrame, t: int, link: str, geom: CarrierGeometry) -> np.ndarray:
    """Channel vector of ``link`` at 1-based slot ``t``: the path sum of
    gain * steering * fading.  Deterministic given (frame, t, link)."""
    if not 1 <= t <= frame.t_slots:
        raise IndexError(f"slot {t} outside 1..{frame.t_slots}")
    if link not in ("ul", "dl"):
        raise ValueError(f"link must be 'ul' or 'dl', got {link!r}")
    tracks = frame.ul_fading if link == "ul" else frame.dl_fading
    h = np.zeros(geom.m_antennas, dtype=np.complex128)
    for path, track in zip(frame.paths, tracks):
        h += path.gain * steering_vector(geom, path.aod_rad) * track.values[t - 1]
    return h


def save_frames(path, batch: FrameBatch, cfg=None) -> None:
    """Write a frame dataset as an ``.npz`` container (documented layout:
    aods, gains, beta_ul, beta_dl, h_ul, h_dl arrays plus scalar metadata
    and, optionally, the generating config as JSON)."""
    meta = {}
    if cfg is not None:
        meta["config_json"] = json.dumps(dataclasses.asdict(cfg))
    np.savez(
        path,
        aods=batch.aods,
        gains=batch.gains,
        beta_ul=batch.beta_ul,
        beta_dl=batch.beta_dl,
        h_ul=batch.h_ul,
        h_dl=batch.h_dl,
        rho_ul=batch.rho_ul,
        rho_dl=batch.rho_dl,
        f_ul_hz=batch.f_ul_hz,
        f_dl_hz=batch.f_dl_hz,
        **meta,
    )


def load_frames(path) -> tuple[FrameBatch, dict | None]:
    """Inverse of :func:`save_frames`; returns the batch and, when present,
    the stored config as a plain dict."""
    with np.load(path, allow_pickle=False) as z:
        batch = FrameBatch(
            z["aods"], z["gains"], z["beta_ul"], z["beta_dl"], z["h_ul"], z["h_dl"],
            float(z["rho_ul"]), float(z["rho_dl"]), float(z["f_ul_hz"]), float(z["f_dl_hz"]),
        )
        cfg = json.loads(str(z["config_json"])) if "config_json" in z else None
    return batch, cfg
