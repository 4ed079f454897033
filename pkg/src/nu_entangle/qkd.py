"""Key distribution with entangled neutrino pairs and an intercept-resend attacker.

Alice and Bob sit at equal distances from the source on one of two baselines
(``t1`` or ``t2``). The intact pair never gives the same flavor on both sides
at equal times, so any same-flavor coincidence reveals an eavesdropper. An
attacker measuring both particles at ``t_e`` and resending the observed
flavors produces a product state whose same-flavor rate vanishes only at
multiples of the oscillation period; two baselines closer than one period
cannot both sit on such a zero.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from nu_entangle.oscillation import (
    Flavor,
    MixingMatrix,
    OscillationParams,
    coincidence_tables,
    osc_probability,
    tribimaximal_matrix,
)
from nu_entangle.parallel import resolve_workers

CHUNK_SIZE = 1 << 16
_BIT = {Flavor.E: 0, Flavor.MU: 1}


@dataclass(frozen=True)
class EveConfig:
    t_e: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_e) and self.t_e >= 0):
            raise ValueError("t_e must be finite and nonnegative")


@dataclass(frozen=True)
class QkdConfig:
    t1: float
    t2: float
    n_pairs: int = 100_000
    efficiency: float = 1.0
    eve: EveConfig | None = None
    seed: int = 0
    alarm_threshold: int = 0
    # probability a pair is routed to baseline 1
    baseline1_prob: float = 0.5
    record_events: bool = False
    workers: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.t1 < self.t2:
            raise ValueError(f"need 0 <= t1 < t2, got t1={self.t1}, t2={self.t2}")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if not 0 <= self.baseline1_prob <= 1:
            raise ValueError("baseline1_prob must lie in [0, 1]")
        if self.eve is not None and not self.eve.t_e < self.t1:
            raise ValueError("the eavesdropper must intercept before the first baseline (t_e < t1)")


@dataclass
class BaselineStats:
    t: float
    n_pairs: int = 0
    n_detected: int = 0
    coincidences: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    @property
    def same_flavor_count(self) -> int:
        return int(np.trace(self.coincidences))

    @property
    def tau_count(self) -> int:
        c = self.coincidences
        return int(c[Flavor.TAU, :].sum() + c[:, Flavor.TAU].sum() - c[Flavor.TAU, Flavor.TAU])

    @property
    def same_flavor_rate(self) -> float | None:
        return self.same_flavor_count / self.n_detected if self.n_detected else None

    def to_dict(self) -> dict:
        labels = [f.label for f in Flavor]
        return {
            "t": self.t,
            "n_pairs": self.n_pairs,
            "n_detected": self.n_detected,
            "coincidences": {f"{a}_{b}": int(self.coincidences[i, j])
                             for i, a in enumerate(labels) for j, b in enumerate(labels)},
            "same_flavor_count": self.same_flavor_count,
            "tau_count": self.tau_count,
            "same_flavor_rate": self.same_flavor_rate,
        }


@dataclass
class QkdReport:
    config: QkdConfig
    baselines: tuple[BaselineStats, BaselineStats]
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    n_undetected: int
    events: dict[str, np.ndarray] | None = None

    @property
    def same_flavor_count(self) -> int:
        return sum(b.same_flavor_count for b in self.baselines)

    @property
    def tau_count(self) -> int:
        return sum(b.tau_count for b in self.baselines)

    @property
    def sifted_key_bits(self) -> int:
        return int(self.alice_bits.size)

    @property
    def alarm(self) -> bool:
        return self.same_flavor_count > self.config.alarm_threshold

    @property
    def key(self) -> np.ndarray:
        """Shared key: Alice's bits, equal to Bob's bits inverted."""
        return self.alice_bits

    def to_dict(self, include_bits: bool = False) -> dict:
        cfg = self.config
        out = {
            "config": {
                "t1": cfg.t1, "t2": cfg.t2, "n_pairs": cfg.n_pairs,
                "efficiency": cfg.efficiency, "seed": cfg.seed,
                "alarm_threshold": cfg.alarm_threshold,
                "baseline1_prob": cfg.baseline1_prob,
                "eve": None if cfg.eve is None else {"t_e": cfg.eve.t_e},
            },
            "baselines": [b.to_dict() for b in self.baselines],
            "same_flavor_count": self.same_flavor_count,
            "tau_count": self.tau_count,
            "n_undetected": self.n_undetected,
            "sifted_key_bits": self.sifted_key_bits,
            "alarm": self.alarm,
        }
        if include_bits:
            out["alice_bits"] = "".join(map(str, self.alice_bits.tolist()))
            out["bob_bits"] = "".join(map(str, self.bob_bits.tolist()))
        return out

    def write_events_csv(self, path) -> None:
        if self.events is None:
            raise ValueError("run with record_events=True to keep per-pair events")
        ev = self.events
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pair_index", "baseline", "alice_flavor", "bob_flavor",
                        "detected", "sifted_bit"])
            for k in range(ev["baseline"].size):
                bit = int(ev["sifted_bit"][k])
                w.writerow([k, int(ev["baseline"][k]) + 1, Flavor(ev["alice"][k]).label,
                            Flavor(ev["bob"][k]).label, int(ev["detected"][k]),
                            "" if bit < 0 else bit])


def _pick(u: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw; ``probs[..., k]`` rows per draw. Zero-probability cells never win."""
    cum = np.cumsum(probs, axis=-1)
    cum = cum / cum[..., -1:]
    return np.sum(u[..., None] >= cum[..., :-1], axis=-1)


def _simulate_chunk(cfg: QkdConfig, index: int, size: int, tables: dict):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(index,)))
    baseline = (rng.random(size) >= cfg.baseline1_prob).astype(np.int8)
    if cfg.eve is None:
        joint = _pick(rng.random(size), tables["pair"][baseline])
        alice, bob = joint // 3, joint % 3
    else:
        eve = _pick(rng.random(size), np.broadcast_to(tables["eve"], (size, 9)))
        ea, eb = eve // 3, eve % 3
        prop = tables["propagate"]  # (baseline, from, to)
        alice = _pick(rng.random(size), prop[baseline, ea])
        bob = _pick(rng.random(size), prop[baseline, eb])
    detected = (rng.random(size) < cfg.efficiency) & (rng.random(size) < cfg.efficiency)
    return baseline, alice.astype(np.int8), bob.astype(np.int8), detected


def run_protocol(cfg: QkdConfig, p: OscillationParams | None = None,
                 m: MixingMatrix | None = None) -> QkdReport:
    """Monte Carlo run of the protocol.

    Pairs are simulated in fixed-size chunks, each with its own seeded
    substream keyed by chunk index, so results do not depend on the worker
    count.
    """
    p = p if p is not None else OscillationParams()
    m = m if m is not None else tribimaximal_matrix()
    times = np.array([cfg.t1, cfg.t2])
    tables = {"pair": coincidence_tables(times, times, p, m).reshape(2, 9)}
    if cfg.eve is not None:
        t_e = cfg.eve.t_e
        tables["eve"] = coincidence_tables(t_e, t_e, p, m).reshape(9)
        tables["propagate"] = np.array([[[osc_probability(a, b, t - t_e, p, m) for b in Flavor]
                                         for a in Flavor] for t in times])

    sizes = [min(CHUNK_SIZE, cfg.n_pairs - s) for s in range(0, cfg.n_pairs, CHUNK_SIZE)]
    n_workers = resolve_workers(cfg.workers)
    jobs = list(enumerate(sizes))
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda j: _simulate_chunk(cfg, j[0], j[1], tables), jobs))
    else:
        parts = [_simulate_chunk(cfg, k, n, tables) for k, n in jobs]
    baseline, alice, bob, detected = (np.concatenate(x) for x in zip(*parts))

    stats = (BaselineStats(cfg.t1), BaselineStats(cfg.t2))
    for b, st in enumerate(stats):
        on = baseline == b
        st.n_pairs = int(on.sum())
        hit = on & detected
        st.n_detected = int(hit.sum())
        np.add.at(st.coincidences, (alice[hit], bob[hit]), 1)

    sift = detected & (((alice == Flavor.E) & (bob == Flavor.MU))
                       | ((alice == Flavor.MU) & (bob == Flavor.E)))
    alice_bits = (alice[sift] == Flavor.MU).astype(np.int8)
    bob_bits = (bob[sift] == Flavor.MU).astype(np.int8)

    events = None
    if cfg.record_events:
        bit = np.full(baseline.size, -1, dtype=np.int8)
        bit[sift] = alice_bits
        events = {"baseline": baseline, "alice": alice, "bob": bob,
                  "detected": detected, "sifted_bit": bit}
    return QkdReport(cfg, stats, alice_bits, bob_bits, int((~detected).sum()), events)


def product_same_flavor_prob(resent: tuple, tau, p: OscillationParams | None = None,
                             m: MixingMatrix | None = None):
    """Same-flavor probability for a resent product state evolved for ``tau``."""
    a, b = (Flavor.parse(f) for f in resent)
    return sum(osc_probability(a, f, tau, p, m) * osc_probability(b, f, tau, p, m)
               for f in Flavor)


def _propagators(tau: np.ndarray, p, m) -> np.ndarray:
    """P(a -> b) after each ``tau``; shape ``(..., 3, 3)``."""
    return np.stack([np.stack([np.asarray(osc_probability(a, b, tau, p, m)) for b in Flavor],
                              axis=-1) for a in Flavor], axis=-2)


def expected_same_flavor_rate(t_b, t_e, p: OscillationParams | None = None,
                              m: MixingMatrix | None = None):
    """Same-flavor rate at a symmetric baseline ``t_b`` after interception at ``t_e``.

    Mixes :func:`product_same_flavor_prob` over the attacker's outcome
    distribution. Vectorised over both arguments.
    """
    t_b, t_e = np.broadcast_arrays(np.asarray(t_b, dtype=float), np.asarray(t_e, dtype=float))
    if np.any(t_b < t_e):
        raise ValueError("baseline must lie beyond the interception point")
    eve = coincidence_tables(t_e, t_e, p, m)
    prop = _propagators(t_b - t_e, p, m)
    same = prop @ np.swapaxes(prop, -1, -2)  # [a, b] -> sum_f P(a->f) P(b->f)
    out = np.sum(eve * same, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def same_flavor_zero_period(p: OscillationParams | None = None, m: MixingMatrix | None = None,
                            cutoff: float = 10.0, tol: float = 1e-9) -> float | None:
    """Smallest T > 0 after which single-particle flavor evolution repeats.

    Candidates are multiples of 2*pi over the smallest phase-rate gap; each is
    checked against the full evolution operator up to a global phase. Returns
    None if nothing repeats below ``cutoff``.
    """
    p = p if p is not None else OscillationParams()
    m = m if m is not None else tribimaximal_matrix()
    w = p.omega
    gaps = np.abs(w[:, None] - w[None, :])
    gaps = gaps[gaps > 0]
    if gaps.size == 0:
        return None
    step = 2.0 * math.pi / gaps.min()
    u = m.u
    n = 1
    while n * step <= cutoff:
        T = n * step
        op = u @ np.diag(np.exp(-1j * w * T)) @ u.T
        if np.max(np.abs(op - op[0, 0] * np.eye(3))) <= tol:
            return T
        n += 1
    return None


def eve_detectability(spacing: float, t1: float = 0.15, p: OscillationParams | None = None,
                      m: MixingMatrix | None = None, n_grid: int = 10_001) -> float:
    """Best case for the attacker: min over t_e in [0, t1] of the larger baseline rate.

    Baselines are ``t1`` and ``t1 + spacing``. A positive value means no
    interception point hides from both baselines.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    t_e = np.linspace(0.0, t1, n_grid)
    r1 = expected_same_flavor_rate(t1, t_e, p, m)
    r2 = expected_same_flavor_rate(t1 + spacing, t_e, p, m)
    return float(np.min(np.maximum(r1, r2)))
