"""Clauser-Horne combination and Hardy-type ratio over four detection times.

With the left detectors at ``t_l1``, ``t_l2`` and the right ones at ``t_r1``,
``t_r2``, the six probabilities entering both tests are::

    p_l2e_r2mu   P(l2 = e,  r2 = mu)
    p_l2e_r1e    P(l2 = e,  r1 = e)
    p_l1mu_r2mu  P(l1 = mu, r2 = mu)
    p_l1mu_r1e   P(l1 = mu, r1 = e)
    p_inf_r2mu   P(any flavor on the left, r2 = mu)
    p_l1mu_inf   P(l1 = mu, any flavor on the right)

The CH value is ``p_l2e_r2mu - p_l2e_r1e + p_l1mu_r2mu + p_l1mu_r1e
- p_inf_r2mu - p_l1mu_inf`` (local models give <= 0) and the Hardy ratio is
``p_l1mu_r2mu`` over ``p_inf_r2mu - p_l2e_r2mu + p_l1mu_inf - p_l1mu_r1e +
p_l2e_r1e`` (local models give <= 1).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from nu_entangle.oscillation import (
    Flavor,
    MixingMatrix,
    OscillationParams,
    coincidence_tables,
)
from nu_entangle.parallel import resolve_workers

TERM_NAMES = (
    "p_l2e_r2mu",
    "p_l2e_r1e",
    "p_l1mu_r2mu",
    "p_l1mu_r1e",
    "p_inf_r2mu",
    "p_l1mu_inf",
)
TIME_NAMES = ("t_l1", "t_l2", "t_r1", "t_r2")
DENOMINATOR_GUARD = 1e-9

E, MU, TAU = Flavor.E, Flavor.MU, Flavor.TAU


class NonPositiveDenominator(ValueError):
    """The Hardy ratio is undefined; ``result`` still carries CH and all terms."""

    def __init__(self, result: "BellResult"):
        super().__init__(
            f"Hardy denominator {result.h_denominator:.3e} is not above the guard")
        self.result = result


class EmptyRange(ValueError):
    pass


@dataclass(frozen=True)
class BellTimes:
    t_l1: float
    t_l2: float
    t_r1: float
    t_r2: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and nonnegative, got {v}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "BellTimes":
        if len(values) != 4:
            raise ValueError(f"expected 4 times (t_l1, t_l2, t_r1, t_r2), got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.t_l1, self.t_l2, self.t_r1, self.t_r2)


# Detection times at which the Hardy ratio reaches ~1.71.
REFERENCE_TIMES = BellTimes(0.579497, 0.0579214, 0.0001, 0.180264)


@dataclass(frozen=True)
class BellResult:
    terms: dict[str, float]
    ch: float
    h_numerator: float
    h_denominator: float
    h: float | None
    guard: float = field(default=DENOMINATOR_GUARD, repr=False)

    @property
    def defined(self) -> bool:
        return self.h is not None

    @property
    def violated(self) -> bool:
        return self.h is not None and self.h > 1.0

    def to_dict(self) -> dict:
        return {
            "terms": dict(self.terms),
            "ch": self.ch,
            "h_numerator": self.h_numerator,
            "h_denominator": self.h_denominator,
            "h": self.h,
            "h_defined": self.defined,
            "violation": self.violated,
        }


def bell_terms(t_l1, t_l2, t_r1, t_r2, p: OscillationParams | None = None,
               m: MixingMatrix | None = None) -> dict[str, np.ndarray]:
    """The six probabilities for broadcastable arrays of times."""
    tl1, tl2, tr1, tr2 = np.broadcast_arrays(*(np.asarray(t, dtype=float)
                                               for t in (t_l1, t_l2, t_r1, t_r2)))
    tl = np.stack([tl2, tl2, tl1, tl1], axis=-1)
    tr = np.stack([tr2, tr1, tr2, tr1], axis=-1)
    tab = coincidence_tables(tl, tr, p, m)
    l2r2, l2r1, l1r2, l1r1 = (tab[..., k, :, :] for k in range(4))
    return {
        "p_l2e_r2mu": l2r2[..., E, MU],
        "p_l2e_r1e": l2r1[..., E, E],
        "p_l1mu_r2mu": l1r2[..., MU, MU],
        "p_l1mu_r1e": l1r1[..., MU, E],
        # marginals are exact column/row sums; no-signaling makes the
        # other side's time irrelevant
        "p_inf_r2mu": l2r2[..., :, MU].sum(axis=-1),
        "p_l1mu_inf": l1r1[..., MU, :].sum(axis=-1),
    }


def combine_terms(terms: dict) -> tuple:
    """(ch, numerator, denominator) from the six terms; works on arrays."""
    ch = (terms["p_l2e_r2mu"] - terms["p_l2e_r1e"] + terms["p_l1mu_r2mu"]
          + terms["p_l1mu_r1e"] - terms["p_inf_r2mu"] - terms["p_l1mu_inf"])
    num = terms["p_l1mu_r2mu"]
    den = (terms["p_inf_r2mu"] - terms["p_l2e_r2mu"] + terms["p_l1mu_inf"]
           - terms["p_l1mu_r1e"] + terms["p_l2e_r1e"])
    return ch, num, den


def result_from_terms(terms: dict, guard: float = DENOMINATOR_GUARD) -> BellResult:
    terms = {k: float(terms[k]) for k in TERM_NAMES}
    ch, num, den = combine_terms(terms)
    h = num / den if den > guard else None
    return BellResult(terms, ch, num, den, h, guard)


def bell_result(bt: BellTimes, p: OscillationParams | None = None,
                m: MixingMatrix | None = None, guard: float = DENOMINATOR_GUARD) -> BellResult:
    """Like :func:`h_value` but never raises; ``h`` is None when undefined."""
    return result_from_terms(bell_terms(*bt.as_tuple(), p=p, m=m), guard)


def ch_value(bt: BellTimes, p: OscillationParams | None = None,
             m: MixingMatrix | None = None) -> float:
    return bell_result(bt, p, m).ch


def h_value(bt: BellTimes, p: OscillationParams | None = None,
            m: MixingMatrix | None = None, guard: float = DENOMINATOR_GUARD) -> BellResult:
    """Full Hardy-ratio evaluation.

    Raises :class:`NonPositiveDenominator` when the denominator does not
    exceed ``guard``; the exception's ``result`` attribute keeps the terms.
    """
    res = bell_result(bt, p, m, guard)
    if not res.defined:
        raise NonPositiveDenominator(res)
    return res


@dataclass(frozen=True)
class GridScanSpec:
    """Two of the four times vary on a regular grid, the others stay at ``base``.

    Axes are inclusive ``linspace(lo, hi, resolution)``.
    """

    axes: tuple[str, str] = ("t_l2", "t_r1")
    base: BellTimes = REFERENCE_TIMES
    range1: tuple[float, float] = (0.0, 0.25)
    range2: tuple[float, float] = (0.0, 0.25)
    resolution: tuple[int, int] = (400, 400)
    guard: float = DENOMINATOR_GUARD

    def __post_init__(self) -> None:
        a1, a2 = self.axes
        if a1 not in TIME_NAMES or a2 not in TIME_NAMES or a1 == a2:
            raise ValueError(f"axes must be two distinct names from {TIME_NAMES}, got {self.axes}")
        for lo, hi in (self.range1, self.range2):
            if not lo < hi:
                raise ValueError(f"range must satisfy lo < hi, got ({lo}, {hi})")
            if lo < 0:
                raise ValueError("times must be nonnegative")
        if min(self.resolution) < 2:
            raise ValueError("resolution must be at least 2 per axis")


@dataclass
class ScanResult:
    spec: GridScanSpec
    axis1: np.ndarray
    axis2: np.ndarray
    h: np.ndarray  # shape (n1, n2); NaN where undefined
    defined: np.ndarray
    argmax: tuple[float, float] | None
    max: float | None

    def to_csv(self, path_or_file) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis1", "axis2", "h", "defined"])
            for i, x in enumerate(self.axis1):
                for j, y in enumerate(self.axis2):
                    ok = bool(self.defined[i, j])
                    w.writerow([f"{x:.12g}", f"{y:.12g}",
                                f"{self.h[i, j]:.12g}" if ok else "nan", int(ok)])
        finally:
            if own:
                fh.close()


def _scan_rows(spec: GridScanSpec, rows: np.ndarray, axis2: np.ndarray, p, m):
    times = {name: np.float64(getattr(spec.base, name)) for name in TIME_NAMES}
    times[spec.axes[0]] = rows[:, None]
    times[spec.axes[1]] = axis2[None, :]
    _, num, den = combine_terms(bell_terms(*(times[n] for n in TIME_NAMES), p=p, m=m))
    num, den = np.broadcast_arrays(num, den)
    ok = den > spec.guard
    h = np.full(ok.shape, np.nan)
    h[ok] = num[ok] / den[ok]
    return h, ok


def scan_h(spec: GridScanSpec, p: OscillationParams | None = None,
           m: MixingMatrix | None = None, workers: int | None = None,
           chunk_rows: int = 32) -> ScanResult:
    """Dense Hardy-ratio grid over two detection times."""
    axis1 = np.linspace(*spec.range1, spec.resolution[0])
    axis2 = np.linspace(*spec.range2, spec.resolution[1])
    chunks = [axis1[i:i + chunk_rows] for i in range(0, axis1.size, chunk_rows)]
    n = resolve_workers(workers)
    if n > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(lambda r: _scan_rows(spec, r, axis2, p, m), chunks))
    else:
        parts = [_scan_rows(spec, r, axis2, p, m) for r in chunks]
    h = np.concatenate([a for a, _ in parts], axis=0)
    ok = np.concatenate([b for _, b in parts], axis=0)
    if ok.any():
        flat = int(np.argmax(np.where(ok, h, -np.inf)))
        i, j = np.unravel_index(flat, h.shape)
        argmax, hmax = (float(axis1[i]), float(axis2[j])), float(h[i, j])
    else:
        argmax, hmax = None, None
    return ScanResult(spec, axis1, axis2, h, ok, argmax, hmax)


def tau_contamination(side: str, fixed_time: float, fixed_flavor: Flavor | str, t,
                      p: OscillationParams | None = None, m: MixingMatrix | None = None):
    """P(fixed_flavor at fixed_time on ``side``, nu_tau at ``t`` on the other side).

    Vectorised over ``t``.
    """
    f = Flavor.parse(fixed_flavor)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or fixed_time < 0:
        raise ValueError("times must be nonnegative")
    if side == "left":
        val = coincidence_tables(fixed_time, t, p, m)[..., f, TAU]
    elif side == "right":
        val = coincidence_tables(t, fixed_time, p, m)[..., TAU, f]
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return float(val) if val.ndim == 0 else val


def find_contamination_minimum(side: str, fixed_time: float, fixed_flavor: Flavor | str,
                               search_range: tuple[float, float],
                               p: OscillationParams | None = None,
                               m: MixingMatrix | None = None,
                               n_scan: int = 10_000) -> tuple[float, float]:
    """Global minimum of :func:`tau_contamination` over ``search_range``.

    Dense scan locates the basin, golden-section search polishes it.
    """
    lo, hi = map(float, search_range)
    if not lo <= hi:
        raise EmptyRange(f"search range ({lo}, {hi}) is empty")
    if lo == hi:
        return lo, tau_contamination(side, fixed_time, fixed_flavor, lo, p, m)
    grid = np.linspace(lo, hi, n_scan)
    vals = tau_contamination(side, fixed_time, fixed_flavor, grid, p, m)
    k = int(np.argmin(vals))
    best_t, best_v = float(grid[k]), float(vals[k])
    if 0 < k < n_scan - 1 and vals[k] < vals[k - 1] and vals[k] < vals[k + 1]:
        res = minimize_scalar(
            lambda x: tau_contamination(side, fixed_time, fixed_flavor, x, p, m),
            bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden",
            options={"xtol": 1e-12})
        if lo <= res.x <= hi and res.fun <= best_v:
            best_t, best_v = float(res.x), float(res.fun)
    return best_t, best_v


def with_times(bt: BellTimes, **changes: float) -> BellTimes:
    return replace(bt, **changes)
