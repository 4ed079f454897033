"""Three-flavor vacuum oscillation of a flavor-entangled neutrino pair.

Times are dimensionless ``s`` coordinates (s = L / 2E in km/GeV units up to a
constant); the phase picked up between mass states i and j is
``1e5 * dm2_ij[eV^2] * s`` radians. Energies are measured relative to the
lightest state, so ``omega_1 = 0``.

Antineutrinos and neutrinos evolve identically here because the mixing matrix
is real (no CP phase), so the code does not distinguish them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

# rad per unit s per eV^2
PHASE_SCALE = 1e5


class Flavor(IntEnum):
    E = 0
    MU = 1
    TAU = 2

    @classmethod
    def parse(cls, value: "str | int | Flavor") -> "Flavor":
        if isinstance(value, Flavor):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        aliases = {"e": cls.E, "nu_e": cls.E, "mu": cls.MU, "nu_mu": cls.MU,
                   "tau": cls.TAU, "nu_tau": cls.TAU}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown flavor {value!r}; expected e, mu or tau") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class MixingMatrix:
    """Real orthogonal flavor-to-mass basis change; ``u[flavor, mass]``."""

    u: np.ndarray
    atol: float = field(default=1e-12, repr=False, compare=False)

    def __post_init__(self) -> None:
        u = np.array(self.u, dtype=float)
        if u.shape != (3, 3):
            raise ValueError(f"mixing matrix must be 3x3, got {u.shape}")
        err = np.max(np.abs(u @ u.T - np.eye(3)))
        if err > self.atol:
            raise ValueError(f"mixing matrix is not orthogonal (max |UU^T - I| = {err:.3e})")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def __getitem__(self, idx):
        return self.u[idx]


@lru_cache(maxsize=1)
def tribimaximal_matrix() -> MixingMatrix:
    r6, r3, r2 = np.sqrt(6.0), np.sqrt(3.0), np.sqrt(2.0)
    return MixingMatrix(np.array([
        [2.0 / r6, 1.0 / r3, 0.0],
        [-1.0 / r6, 1.0 / r3, 1.0 / r2],
        [-1.0 / r6, 1.0 / r3, -1.0 / r2],
    ]))


@dataclass(frozen=True)
class OscillationParams:
    """Mass-squared splittings in eV^2 (normal ordering by default)."""

    dm2_21: float = 8e-5
    dm2_32: float = 2.4e-3

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dm2_21) and np.isfinite(self.dm2_32)):
            raise ValueError("mass splittings must be finite")

    @property
    def dm2_31(self) -> float:
        return self.dm2_21 + self.dm2_32

    @property
    def dm2_13(self) -> float:
        return -self.dm2_31

    @property
    def omega(self) -> np.ndarray:
        """Phase rates (rad per unit s) of the three mass states."""
        return np.array([0.0, PHASE_SCALE * self.dm2_21, PHASE_SCALE * self.dm2_31])


@dataclass(frozen=True)
class PairState:
    """Two-particle amplitudes in the mass basis: |psi> = sum A[i,j] |i>|j>."""

    amp: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amp) ** 2)))


@dataclass(frozen=True)
class CoincidenceTable:
    """Joint detection probabilities ``p[left_flavor, right_flavor]``."""

    p: np.ndarray
    t_l: float
    t_r: float

    def __getitem__(self, idx):
        return self.p[idx]

    def left_marginal(self, f: Flavor | str) -> float:
        return float(self.p[Flavor.parse(f), :].sum())

    def right_marginal(self, f: Flavor | str) -> float:
        return float(self.p[:, Flavor.parse(f)].sum())


def _defaults(params, mixing):
    return (params if params is not None else OscillationParams(),
            mixing if mixing is not None else tribimaximal_matrix())


def initial_pair_state(m: MixingMatrix | None = None) -> PairState:
    """Mass-basis amplitudes of (nu_e nu_mu - nu_mu nu_e)/sqrt(2)."""
    u = (m if m is not None else tribimaximal_matrix()).u
    e, mu = u[Flavor.E], u[Flavor.MU]
    amp = (np.outer(e, mu) - np.outer(mu, e)) / np.sqrt(2.0)
    return PairState(amp.astype(complex))


def evolve_pair(s0: PairState, t_l: float, t_r: float,
                p: OscillationParams | None = None) -> PairState:
    if t_l < 0 or t_r < 0:
        raise ValueError("evolution times must be nonnegative")
    w = (p if p is not None else OscillationParams()).omega
    phase = np.exp(-1j * (w[:, None] * t_l + w[None, :] * t_r))
    return PairState(phase * s0.amp)


def coincidence_probability(st: PairState, a: Flavor | str, b: Flavor | str,
                            m: MixingMatrix | None = None) -> float:
    u = (m if m is not None else tribimaximal_matrix()).u
    amp = u[Flavor.parse(a)] @ st.amp @ u[Flavor.parse(b)]
    return float(abs(amp) ** 2)


def coincidence_tables(t_l, t_r, p: OscillationParams | None = None,
                       m: MixingMatrix | None = None) -> np.ndarray:
    """Vectorised tables: broadcast ``t_l``/``t_r``, return shape ``(..., 3, 3)``."""
    p, m = _defaults(p, m)
    tl, tr = np.broadcast_arrays(np.asarray(t_l, dtype=float), np.asarray(t_r, dtype=float))
    w = p.omega
    amp0 = initial_pair_state(m).amp
    ph_l = np.exp(-1j * tl[..., None] * w)
    ph_r = np.exp(-1j * tr[..., None] * w)
    evolved = ph_l[..., :, None] * amp0 * ph_r[..., None, :]
    flavor_amp = m.u @ evolved @ m.u.T
    # equal times keep the amplitude antisymmetric; enforce it so same-flavor
    # entries are exact zeros rather than rounding residue
    equal = (tl == tr)[..., None, None]
    if np.any(equal):
        anti = 0.5 * (flavor_amp - np.swapaxes(flavor_amp, -1, -2))
        flavor_amp = np.where(equal, anti, flavor_amp)
    return flavor_amp.real ** 2 + flavor_amp.imag ** 2


def coincidence_table(t_l: float, t_r: float, p: OscillationParams | None = None,
                      m: MixingMatrix | None = None) -> CoincidenceTable:
    if t_l < 0 or t_r < 0:
        raise ValueError("detection times must be nonnegative")
    return CoincidenceTable(coincidence_tables(t_l, t_r, p, m), float(t_l), float(t_r))


def osc_probability(a: Flavor | str, b: Flavor | str, s, p: OscillationParams | None = None,
                    m: MixingMatrix | None = None):
    """Single-particle P(a -> b) after ``s``; accepts scalar or array ``s``."""
    p, m = _defaults(p, m)
    a, b = Flavor.parse(a), Flavor.parse(b)
    s = np.asarray(s, dtype=float)
    u, w = m.u, p.omega
    prob = np.full(s.shape, 1.0 if a == b else 0.0)
    for i in range(3):
        for j in range(i + 1, 3):
            coeff = u[a, i] * u[b, i] * u[a, j] * u[b, j]
            prob = prob - 4.0 * coeff * np.sin(0.5 * (w[j] - w[i]) * s) ** 2
    return float(prob) if prob.ndim == 0 else prob


def marginal_probability(side: str, f: Flavor | str, t: float,
                         p: OscillationParams | None = None,
                         m: MixingMatrix | None = None,
                         other_time: float = 0.0) -> float:
    """Single-side detection probability with every flavor accepted on the other side.

    ``other_time`` is the far side's (irrelevant) detection time.
    """
    f = Flavor.parse(f)
    if side == "left":
        return coincidence_table(t, other_time, p, m).left_marginal(f)
    if side == "right":
        return coincidence_table(other_time, t, p, m).right_marginal(f)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")
