"""Experiment configuration: system scalars, serialization, validation.

Defaults follow the reference operating point: 3 GHz uplink carrier,
100 MHz duplex separation, 30 km/h mobile, 0.1 ms slots, a 64-antenna BS,
2 downlink pilots, 10 dB SNR, and 8-slot coherence frames.  Config files
are JSON objects with the same field names (see :func:`ExperimentConfig.from_json`).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .channel import doppler_rho
from .errors import DomainError

__all__ = ["ExperimentConfig"]


@dataclass
class ExperimentConfig:
    """Scalars defining one simulated system plus the experiment seed."""

    f_ul_hz: float = 3.0e9
    delta_f_hz: float = 1.0e8
    speed_mps: float = 30.0 / 3.6
    slot_s: float = 1.0e-4
    n_paths: int = 8
    m_antennas: int = 64
    b_bits: int = 20
    l_dl: int = 2
    l_ul: int = 2
    snr_db: float = 10.0
    t_slots: int = 8
    rho_override: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.f_ul_hz, self.slot_s) <= 0 or self.delta_f_hz < 0 or self.speed_mps < 0:
            raise DomainError("carrier/slot/speed parameters out of range")
        if min(self.n_paths, self.m_antennas, self.b_bits, self.l_dl, self.l_ul, self.t_slots) < 1:
            raise DomainError("counts must be >= 1")
        if self.rho_override is not None and abs(self.rho_override) > 1:
            raise DomainError("rho_override must lie in [-1, 1]")

    @property
    def f_dl_hz(self) -> float:
        return self.f_ul_hz + self.delta_f_hz

    def rho_ul(self) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        return doppler_rho(self.speed_mps, self.f_ul_hz, self.slot_s)

    def rho_dl(self) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        return doppler_rho(self.speed_mps, self.f_dl_hz, self.slot_s)

    def sigma2(self) -> float:
        """Noise variance for unit pilot power budgets."""
        from .airlink import snr_to_sigma

        return snr_to_sigma(self.snr_db, 1.0)

    def replace(self, **overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, **overrides)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)
