"""Multistart derivative-free search for the largest Hardy ratio inside a box."""
from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from nu_entangle.bell import BellResult, BellTimes, result_from_terms
from nu_entangle.oscillation import (
    Flavor,
    MixingMatrix,
    OscillationParams,
    initial_pair_state,
    tribimaximal_matrix,
)
from nu_entangle.parallel import resolve_workers


class NoFeasiblePoint(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    bounds: tuple[tuple[float, float], ...] = ((1e-5, 0.6),) * 4
    den_min: float = 0.1
    n_starts: int = 256
    seed: int = 20070802
    max_iter: int = 500
    h_tol: float = 1e-8
    step_frac: float = 0.05
    line_points: int = 2001
    max_sweeps: int = 50
    workers: int | None = None

    def __post_init__(self) -> None:
        if len(self.bounds) != 4:
            raise ValueError("bounds needs one (lo, hi) pair per detection time")
        for lo, hi in self.bounds:
            if lo < 0 or lo > hi:
                raise ValueError(f"invalid bound ({lo}, {hi})")
        if self.den_min <= 0:
            raise ValueError("den_min must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.line_points < 2:
            raise ValueError("line_points must be >= 2")
        if not 0 < self.step_frac <= 1:
            raise ValueError("step_frac must lie in (0, 1]")


@dataclass
class OptimizerResult:
    best_times: BellTimes
    best: BellResult
    n_evals: int
    start_index: int = 0
    trace: list[float] = field(default_factory=list)
    start_bests: list[float | None] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "times": dict(zip(("t_l1", "t_l2", "t_r1", "t_r2"), self.best_times.as_tuple())),
            **self.best.to_dict(),
            "n_evals": self.n_evals,
            "start_index": self.start_index,
        }


class HardyObjective:
    """Hardy-ratio evaluator with the state and mixing folded into small kernels.

    Each probability is a bilinear form ``|phase_left . K . phase_right|^2`` in
    the per-detector phase vectors ``exp(-i omega t)``. Calling the object on
    four floats uses plain Python (cheap for single points); :meth:`line`
    evaluates a whole grid along one coordinate with numpy.
    """

    def __init__(self, p: OscillationParams | None = None, m: MixingMatrix | None = None):
        p = p if p is not None else OscillationParams()
        m = m if m is not None else tribimaximal_matrix()
        self.omega_arr = p.omega
        self.omega = [float(w) for w in p.omega]
        u = m.u
        a = initial_pair_state(m).amp.real
        e, mu = Flavor.E, Flavor.MU
        self.kernels = {
            "p_l2e_r2mu": np.outer(u[e], u[mu]) * a,
            "p_l2e_r1e": np.outer(u[e], u[e]) * a,
            "p_l1mu_r2mu": np.outer(u[mu], u[mu]) * a,
            "p_l1mu_r1e": np.outer(u[mu], u[e]) * a,
        }
        # marginals: sum over the unobserved side's flavors collapses, by
        # orthogonality, to a sum over its mass index
        self.r_mu = a * u[mu][None, :]        # rows i: sum_j a[i,j] u[mu,j] e^{-i w_j t}
        self.l_mu = (u[mu][:, None] * a).T    # rows j: sum_i u[mu,i] a[i,j] e^{-i w_i t}
        self._k = {name: k.tolist() for name, k in self.kernels.items()}
        self._r, self._l = self.r_mu.tolist(), self.l_mu.tolist()
        self.n_evals = 0

    def _phases(self, t):
        return [cmath.exp(-1j * w * t) for w in self.omega]

    @staticmethod
    def _amp2(k, pl, pr):
        z = 0j
        for i in range(3):
            ki = k[i]
            z += pl[i] * (ki[0] * pr[0] + ki[1] * pr[1] + ki[2] * pr[2])
        return z.real * z.real + z.imag * z.imag

    @staticmethod
    def _marg(rows, ph):
        s = 0.0
        for r in rows:
            z = r[0] * ph[0] + r[1] * ph[1] + r[2] * ph[2]
            s += z.real * z.real + z.imag * z.imag
        return s

    def terms(self, t_l1, t_l2, t_r1, t_r2) -> dict[str, float]:
        self.n_evals += 1
        l1, l2, r1, r2 = (self._phases(t) for t in (t_l1, t_l2, t_r1, t_r2))
        k = self._k
        return {
            "p_l2e_r2mu": self._amp2(k["p_l2e_r2mu"], l2, r2),
            "p_l2e_r1e": self._amp2(k["p_l2e_r1e"], l2, r1),
            "p_l1mu_r2mu": self._amp2(k["p_l1mu_r2mu"], l1, r2),
            "p_l1mu_r1e": self._amp2(k["p_l1mu_r1e"], l1, r1),
            "p_inf_r2mu": self._marg(self._r, r2),
            "p_l1mu_inf": self._marg(self._l, l1),
        }

    def __call__(self, t_l1, t_l2, t_r1, t_r2) -> tuple[float, float]:
        t = self.terms(t_l1, t_l2, t_r1, t_r2)
        return _num_den(t)

    def phase_table(self, grid: np.ndarray) -> np.ndarray:
        return np.exp(-1j * np.outer(grid, self.omega_arr))

    def line(self, x, k: int, phases: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(numerator, denominator) with coordinate ``k`` swept over ``phases`` rows."""
        ph = [np.exp(-1j * self.omega_arr * v)[None, :] for v in x]
        ph[k] = phases
        l1, l2, r1, r2 = ph
        self.n_evals += phases.shape[0]

        def amp2(name, pl, pr):
            z = np.sum((pl @ self.kernels[name]) * pr, axis=-1)
            return z.real ** 2 + z.imag ** 2

        t = {
            "p_l2e_r2mu": amp2("p_l2e_r2mu", l2, r2),
            "p_l2e_r1e": amp2("p_l2e_r1e", l2, r1),
            "p_l1mu_r2mu": amp2("p_l1mu_r2mu", l1, r2),
            "p_l1mu_r1e": amp2("p_l1mu_r1e", l1, r1),
            "p_inf_r2mu": np.sum(np.abs(r2 @ self.r_mu.T) ** 2, axis=-1),
            "p_l1mu_inf": np.sum(np.abs(l1 @ self.l_mu.T) ** 2, axis=-1),
        }
        num, den = _num_den(t)
        return np.broadcast_arrays(num, den)


def _num_den(t):
    num = t["p_l1mu_r2mu"]
    den = (t["p_inf_r2mu"] - t["p_l2e_r2mu"] + t["p_l1mu_inf"]
           - t["p_l1mu_r1e"] + t["p_l2e_r1e"])
    return num, den


def _in_bounds(x, bounds) -> bool:
    return all(lo <= v <= hi for v, (lo, hi) in zip(x, bounds))


class _LineGrids:
    """Per-coordinate sweep grids and their phase tables, shared by all starts."""

    def __init__(self, cfg: OptimizerConfig, objective: HardyObjective):
        self.grids, self.phases = [], []
        for lo, hi in cfg.bounds:
            g = np.linspace(lo, hi, cfg.line_points) if hi > lo else np.array([lo])
            self.grids.append(g)
            self.phases.append(objective.phase_table(g))


def _local_search(start, cfg: OptimizerConfig, objective: HardyObjective,
                  lines: _LineGrids | None = None):
    """Coordinate line sweeps followed by a bounded Nelder-Mead polish.

    Each sweep polls every grid point along one coordinate at a time and moves
    only on strict improvement; this steps over the fast oscillation
    (period ~0.025 in s) that traps a plain simplex. Returns
    (best_x, best_h, trace, n_evals).
    """
    bounds = np.array(cfg.bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    x_full = np.clip(np.asarray(start, dtype=float), lo, hi)
    free = np.flatnonzero(hi > lo)
    n0 = objective.n_evals
    best = {"h": -math.inf, "x": None}
    trace: list[float] = []

    def score(x):
        if not _in_bounds(x, cfg.bounds):
            return -math.inf
        num, den = objective(*x)
        if den < cfg.den_min:
            return -math.inf
        h = num / den
        if h > best["h"]:
            best["h"], best["x"] = h, tuple(float(v) for v in x)
        return h

    score(x_full)
    trace.append(best["h"])
    if free.size and cfg.max_sweeps > 0:
        lines = lines if lines is not None else _LineGrids(cfg, objective)
        x = x_full.copy()
        for _ in range(cfg.max_sweeps):
            moved = False
            for k in free:
                num, den = objective.line(x, k, lines.phases[k])
                ok = den >= cfg.den_min
                if not ok.any():
                    continue
                h = np.where(ok, num / np.where(ok, den, 1.0), -np.inf)
                j = int(np.argmax(h))
                if h[j] <= best["h"] + cfg.h_tol:
                    continue
                cand = x.copy()
                cand[k] = lines.grids[k][j]
                # rescore on the scalar path so best/feasibility use one evaluator
                before = best["h"]
                score(cand)
                if best["h"] > before:
                    x = cand
                    moved = True
                trace.append(best["h"])
            if not moved:
                break
        if best["x"] is not None:
            x_full = np.array(best["x"])

    if free.size:
        def neg(z):
            x = x_full.copy()
            x[free] = z
            return -score(x)

        z0 = x_full[free]
        step = cfg.step_frac * (hi[free] - lo[free])
        simplex = [z0.copy()]
        for k in range(free.size):
            z = z0.copy()
            z[k] = z0[k] + step[k] if z0[k] + step[k] <= hi[free][k] else z0[k] - step[k]
            simplex.append(z)
        with np.errstate(invalid="ignore"):
            minimize(neg, z0, method="Nelder-Mead",
                     bounds=list(zip(lo[free], hi[free])),
                     callback=lambda *_: trace.append(best["h"]),
                     options={"initial_simplex": np.array(simplex), "maxiter": cfg.max_iter,
                              "fatol": cfg.h_tol, "xatol": 1e-10})
        trace.append(best["h"])
    return best["x"], best["h"], trace, objective.n_evals - n0


def _final_result(x, p, m) -> BellResult:
    # same evaluator that judged feasibility, so den_min holds exactly
    return result_from_terms(HardyObjective(p, m).terms(*x))


def refine_local(start: BellTimes, cfg: OptimizerConfig | None = None,
                 p: OscillationParams | None = None,
                 m: MixingMatrix | None = None) -> OptimizerResult:
    """Single local search from ``start``; best-so-far never decreases."""
    cfg = cfg if cfg is not None else OptimizerConfig()
    if not _in_bounds(start.as_tuple(), cfg.bounds):
        raise ValueError("start point lies outside the configured bounds")
    x, h, trace, n = _local_search(start.as_tuple(), cfg, HardyObjective(p, m))
    if x is None:
        raise NoFeasiblePoint(
            f"no probe reached a Hardy denominator >= {cfg.den_min} from {start}")
    bt = BellTimes(*x)
    return OptimizerResult(bt, _final_result(x, p, m), n, 0, trace, [h])


def start_points(cfg: OptimizerConfig) -> np.ndarray:
    """Uniform starts; start k uses its own spawned stream so order is irrelevant."""
    bounds = np.array(cfg.bounds, dtype=float)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_starts)
    return np.array([np.random.default_rng(c).uniform(bounds[:, 0], bounds[:, 1])
                     for c in children])


def maximize_h(cfg: OptimizerConfig | None = None, p: OscillationParams | None = None,
               m: MixingMatrix | None = None) -> OptimizerResult:
    """Largest feasible Hardy ratio over the box.

    Feasible means ``h_denominator >= den_min``; infeasible probes score
    minus infinity. Ties go to the lowest start index.
    """
    cfg = cfg if cfg is not None else OptimizerConfig()
    starts = start_points(cfg)

    lines = _LineGrids(cfg, HardyObjective(p, m))

    def run(k):
        # one objective per start keeps evaluation counters thread-local
        return _local_search(starts[k], cfg, HardyObjective(p, m), lines)

    n_workers = resolve_workers(cfg.workers)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(run, range(cfg.n_starts)))
    else:
        runs = [run(k) for k in range(cfg.n_starts)]

    n_evals = sum(r[3] for r in runs)
    best_k = None
    for k, (x, h, _, _) in enumerate(runs):
        if x is not None and (best_k is None or h > runs[best_k][1]):
            best_k = k
    if best_k is None:
        raise NoFeasiblePoint(f"none of {cfg.n_starts} starts found h_denominator >= {cfg.den_min}")
    x, _, trace, _ = runs[best_k]
    bt = BellTimes(*x)
    return OptimizerResult(bt, _final_result(x, p, m), n_evals, best_k, trace,
                           [r[1] if r[0] is not None else None for r in runs])
