"""Cell-key-method style integer noise with a fixed variance.

A perturbation table holds one noise distribution over ``-D..D`` per original
count class ``0, 1, ..., D + js`` plus a shared "interior" row used for all
larger counts.  Every row has mean zero, never lands a perturbed count in the
forbidden band ``1..js``, and never produces a negative count.  Interior
rows reach the target variance exactly; rows near zero get as close to it as
their support allows, and the achieved value is kept in
``PerturbationTable.achieved_variance``.

Rows are maximum-entropy fits: ``p(v) ~ exp(a*v + b*v**2)`` on the allowed
support, i.e. a discretised Gaussian tilted so that mean and variance hit
their targets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import InfeasibleConfig
from .uncertainty import NoiseConfig

INTERIOR = "interior"
_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class PerturbationTable:
    """Noise distributions per original-count class.

    ``probabilities[r, k]`` is the probability of noise ``k - max_deviation``
    for row ``r``; rows ``0..max_deviation + small_count_threshold`` are the
    small-count classes and the final row is the interior class.
    """

    probabilities: np.ndarray
    variance: float
    max_deviation: int
    small_count_threshold: int
    preserve_zeros: bool = True

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64)
        width = 2 * self.max_deviation + 1
        if p.shape != (self.max_deviation + self.small_count_threshold + 2, width):
            raise ValueError(f"probability matrix has shape {p.shape}")
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)
        cdf = np.cumsum(p, axis=1)
        cdf[:, -1] = 1.0
        cdf.flags.writeable = False
        object.__setattr__(self, "cdf", cdf)

    @property
    def noise_values(self) -> np.ndarray:
        return np.arange(-self.max_deviation, self.max_deviation + 1)

    @property
    def interior_row(self) -> int:
        return self.probabilities.shape[0] - 1

    @property
    def row_classes(self) -> list[str]:
        return [str(i) for i in range(self.interior_row)] + [INTERIOR]

    def row_index(self, counts):
        return np.minimum(np.asarray(counts, dtype=np.int64), self.interior_row)

    def row(self, count: int) -> np.ndarray:
        return self.probabilities[min(int(count), self.interior_row)]

    def row_mean(self) -> np.ndarray:
        return self.probabilities @ self.noise_values

    @property
    def achieved_variance(self) -> np.ndarray:
        v = self.noise_values.astype(np.float64)
        mean = self.probabilities @ v
        return self.probabilities @ (v * v) - mean * mean

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_class", "noise_value", "probability"])
            for label, probs in zip(self.row_classes, self.probabilities):
                for v, p in zip(self.noise_values, probs):
                    w.writerow([label, int(v), repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "PerturbationTable":
        rows: dict[str, dict[int, float]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.setdefault(rec["row_class"], {})[int(rec["noise_value"])] = float(rec["probability"])
        if INTERIOR not in rows:
            raise ValueError(f"{path}: no interior row")
        values = sorted(rows[INTERIOR])
        d = values[-1]
        if values != list(range(-d, d + 1)):
            raise ValueError(f"{path}: noise values must cover -D..D")
        small = sorted(int(k) for k in rows if k != INTERIOR)
        if small != list(range(len(small))):
            raise ValueError(f"{path}: small-count rows must be 0..n")
        js = len(small) - d - 1
        if js < 0:
            raise ValueError(f"{path}: too few small-count rows for D={d}")
        labels = [str(i) for i in small] + [INTERIOR]
        p = np.array([[rows[lab].get(v, 0.0) for v in values] for lab in labels])
        vals = np.array(values, dtype=np.float64)
        var = float(p[-1] @ (vals * vals) - (p[-1] @ vals) ** 2)
        return cls(p, var, d, js, bool(p[0, d] == 1.0))


def _two_point(values, allowed, lo, hi):
    p = np.zeros(values.size)
    p[values == lo] = hi / (hi - lo)
    p[values == hi] = -lo / (hi - lo)
    return p


def _fit_row(values, allowed, variance, row):
    """Mean-zero distribution on ``values[allowed]`` with variance as close to
    ``variance`` as the support permits."""
    v = values[allowed].astype(np.float64)
    neg = v[v < 0]
    pos = v[v > 0]
    has_zero = bool(np.any(v == 0))
    p = np.zeros(values.size)
    if neg.size == 0 or pos.size == 0:
        if not has_zero:
            raise InfeasibleConfig("no mean-zero noise distribution on allowed support", row)
        p[values == 0] = 1.0
        return p
    var_max = -v.min() * v.max()
    var_min = 0.0 if has_zero else -neg.max() * pos.min()
    if variance <= var_min * (1 + _BOUNDARY_TOL):
        if has_zero:
            p[values == 0] = 1.0
            return p
        return _two_point(values, allowed, neg.max(), pos.min())
    if variance >= var_max * (1 - _BOUNDARY_TOL):
        return _two_point(values, allowed, v.min(), v.max())

    feats = np.stack([v, v * v])
    target = np.array([0.0, variance])
    theta = np.array([0.0, -0.5 / variance])

    def moments(th):
        logits = th @ feats
        q = np.exp(logits - logsumexp(logits))
        return q, feats @ q

    q, mean = moments(theta)
    grad = mean - target
    for _ in range(200):
        err = np.max(np.abs(grad))
        if err < 1e-14 * max(1.0, variance):
            break
        centered = feats - mean[:, None]
        hess = (centered * q) @ centered.T
        step = np.linalg.solve(hess, grad)
        # damped Newton on the convex dual; accept once the moment error shrinks
        t = 1.0
        while t > 1e-12:
            cand = theta - t * step
            q_c, mean_c = moments(cand)
            if np.max(np.abs(mean_c - target)) < err:
                break
            t *= 0.5
        else:
            break
        theta, q, mean = cand, q_c, mean_c
        grad = mean - target
    logits = theta @ feats
    q = np.exp(logits - logsumexp(logits))
    p[allowed] = q
    return p


def build_ptable(cfg: NoiseConfig) -> PerturbationTable:
    """Construct the perturbation table for ``cfg``.

    With ``cfg.variance == 0`` every row is a point mass at zero: nothing is
    perturbed, so the forbidden band is not enforced.
    """
    d = cfg.max_deviation
    js = cfg.small_count_threshold
    if js > d:
        raise InfeasibleConfig(f"small-count threshold {js} exceeds max deviation {d}")
    if d * d < cfg.variance:
        raise InfeasibleConfig(f"variance {cfg.variance} unreachable with max deviation {d}")
    values = np.arange(-d, d + 1)
    n_rows = d + js + 2
    probs = np.zeros((n_rows, values.size))
    for i in range(n_rows):
        if cfg.variance == 0 or i == 0:
            # zeros stay zeros; without that rule mean zero still forces it
            probs[i, d] = 1.0
            continue
        target = i + values
        allowed = (target == 0) | (target > js)
        probs[i] = _fit_row(values, allowed, cfg.variance, i)

    table = PerturbationTable(probs, cfg.variance, d, js, cfg.preserve_zeros)
    _check_table(table)
    return table


def _check_table(table: PerturbationTable) -> None:
    p = table.probabilities
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
        raise InfeasibleConfig("row probabilities do not sum to one")
    bad = np.flatnonzero(np.abs(table.row_mean()) > 1e-9)
    if bad.size:
        raise InfeasibleConfig("could not centre noise distribution", int(bad[0]))
    if table.variance > 0 and abs(table.achieved_variance[-1] - table.variance) > 1e-9:
        raise InfeasibleConfig("interior row misses target variance", INTERIOR)


def stream_key(seed) -> np.uint64:
    """64-bit key of the noise stream for ``seed`` (an int or tuple of ints)."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0]


def perturb_batch(counts, table: PerturbationTable, keys, cell_ids=None) -> np.ndarray:
    """Perturb ``counts`` once per stream key; returns shape (len(keys), len(counts))."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1:
        raise ValueError("counts must be 1-d")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    if cell_ids is None:
        cell_ids = np.arange(counts.size)
    cell_ids = np.ascontiguousarray(cell_ids, dtype=np.uint64)
    if cell_ids.shape != counts.shape:
        raise ValueError("cell_ids must match counts in shape")
    keys = np.ascontiguousarray(np.atleast_1d(keys), dtype=np.uint64)
    u = _kernels.keyed_uniforms(keys, cell_ids)
    rows = np.ascontiguousarray(np.broadcast_to(table.row_index(counts), u.shape))
    noise = _kernels.sample_noise(u, rows, table.cdf, table.max_deviation)
    return counts[None, :] + noise


def perturb(counts, table: PerturbationTable, seed=0, cell_ids=None) -> np.ndarray:
    """Add table noise to each count; cell ``c`` draws from stream (seed, c) only."""
    return perturb_batch(counts, table, [stream_key(seed)], cell_ids)[0]

