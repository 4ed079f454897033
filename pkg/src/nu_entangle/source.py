"""Tau-decay source: pair energy spectrum, s <-> distance conversion, energy smearing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from nu_entangle.bell import (
    DENOMINATOR_GUARD,
    TERM_NAMES,
    BellResult,
    NonPositiveDenominator,
    bell_terms,
    result_from_terms,
)
from nu_entangle.oscillation import MixingMatrix, OscillationParams

# L[km] = s * E[GeV] * 1e5 / 2.54
KM_PER_S_GEV = 1e5 / 2.54


class OutOfDomain(ValueError):
    pass


class ZeroEnergy(ValueError):
    pass


@dataclass(frozen=True)
class SourceConfig:
    """Masses and Fermi constant in GeV units; energy window for sampling."""

    m_tau: float = 1.77686
    m_mu: float = 0.10566
    g_fermi: float = 1.16637e-5
    e_window: tuple[float, float] = (0.095, 0.12)
    eps_halfwidth: float = 0.005

    def __post_init__(self) -> None:
        lo, hi = self.e_window
        if not 0 < lo < hi <= self.e_max:
            raise ValueError(
                f"energy window {self.e_window} must satisfy 0 < lo < hi <= {self.e_max:.6g} GeV")
        if self.eps_halfwidth < 0:
            raise ValueError("eps_halfwidth must be nonnegative")

    @property
    def e_max(self) -> float:
        """Upper end of the domain where the density is nonnegative."""
        return min(2.0 * self.m_mu, 0.5 * self.m_tau)

    @property
    def prefactor(self) -> float:
        """Overall 6 G_F^2 / (pi^5 m_mu^4); sampling ignores it."""
        return 6.0 * self.g_fermi ** 2 / (math.pi ** 5 * self.m_mu ** 4)


@dataclass(frozen=True)
class EnergySample:
    e_mean: float
    eps: float


def spectral_density(E, cfg: SourceConfig | None = None):
    """Unnormalised (m_mu - E/2)(m_tau - 2E)^2 E^4; vectorised over ``E``."""
    cfg = cfg if cfg is not None else SourceConfig()
    e = np.asarray(E, dtype=float)
    if np.any(e < 0) or np.any(e > cfg.e_max):
        raise OutOfDomain(f"energy outside [0, {cfg.e_max:.6g}] GeV")
    val = (cfg.m_mu - 0.5 * e) * (cfg.m_tau - 2.0 * e) ** 2 * e ** 4
    return float(val) if val.ndim == 0 else val


def spectral_mode(cfg: SourceConfig | None = None, window: tuple[float, float] | None = None) -> float:
    """Energy of the density maximum over ``window`` (default: whole positive domain)."""
    cfg = cfg if cfg is not None else SourceConfig()
    lo, hi = window if window is not None else (0.0, cfg.e_max)
    res = minimize_scalar(lambda e: -spectral_density(e, cfg), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def sample_pair_energies(n: int, cfg: SourceConfig | None = None,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` draws of (e_mean, eps) as an ``(n, 2)`` array, by rejection."""
    cfg = cfg if cfg is not None else SourceConfig()
    if rng is None:
        raise ValueError("an explicit numpy Generator is required")
    lo, hi = cfg.e_window
    # log-concave density: window maximum is the mode clipped to the window
    f_max = spectral_density(spectral_mode(cfg, cfg.e_window), cfg)
    out = np.empty(0)
    while out.size < n:
        need = n - out.size
        batch = max(1024, int(need * 1.25))
        e = rng.uniform(lo, hi, batch)
        keep = rng.uniform(0.0, f_max, batch) < spectral_density(e, cfg)
        out = np.concatenate([out, e[keep][:need]])
    eps = rng.uniform(-cfg.eps_halfwidth, cfg.eps_halfwidth, n) if cfg.eps_halfwidth > 0 \
        else np.zeros(n)
    return np.column_stack([out, eps])


def sample_pair_energy(cfg: SourceConfig | None = None,
                       rng: np.random.Generator | None = None) -> EnergySample:
    e, eps = sample_pair_energies(1, cfg, rng)[0]
    return EnergySample(float(e), float(eps))


def s_to_distance(s, E):
    """Detector distance in km for ``s`` at pair energy ``E`` (GeV)."""
    s, E = np.asarray(s, dtype=float), np.asarray(E, dtype=float)
    if np.any(s < 0) or np.any(E < 0):
        raise ValueError("s and E must be nonnegative")
    out = s * E * KM_PER_S_GEV
    return float(out) if out.ndim == 0 else out


def distance_to_s(L, E):
    L, E = np.asarray(L, dtype=float), np.asarray(E, dtype=float)
    if np.any(E == 0):
        raise ZeroEnergy("distance_to_s needs a positive energy")
    if np.any(L < 0) or np.any(E < 0):
        raise ValueError("L and E must be nonnegative")
    out = L / (E * KM_PER_S_GEV)
    return float(out) if out.ndim == 0 else out


def simpson_weights(n: int) -> np.ndarray:
    """Composite Simpson weights on ``n`` (odd) equally spaced points of [0, 1]."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of points >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (n - 1))


def smeared_terms(distances: Sequence[float], E_center: float, spread: float,
                  p: OscillationParams | None = None, m: MixingMatrix | None = None,
                  n_points: int = 129) -> dict[str, float]:
    """The six Bell probabilities averaged over E uniform in E_center*(1 +- spread/2)."""
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    if len(distances) != 4:
        raise ValueError("need four distances (L1, L2, R1, R2)")
    if spread == 0:
        energies, weights = np.array([E_center]), np.array([1.0])
    else:
        energies = E_center * (1.0 + spread * (np.linspace(0.0, 1.0, n_points) - 0.5))
        weights = simpson_weights(n_points)
    s = [distance_to_s(L, energies) for L in distances]
    terms = bell_terms(*s, p=p, m=m)
    return {k: float(np.dot(weights, np.atleast_1d(terms[k]))) for k in TERM_NAMES}


def smeared_bell(distances: Sequence[float], E_center: float, spread: float,
                 p: OscillationParams | None = None, m: MixingMatrix | None = None,
                 n_points: int = 129, guard: float = DENOMINATOR_GUARD) -> BellResult:
    """Hardy ratio for fixed detector distances and a flat energy band.

    ``distances`` are (L1, L2, R1, R2) in km, matching (t_l1, t_l2, t_r1, t_r2).
    Each probability is averaged first, then the ratio is formed.
    """
    res = result_from_terms(smeared_terms(distances, E_center, spread, p, m, n_points), guard)
    if not res.defined:
        raise NonPositiveDenominator(res)
    return res
