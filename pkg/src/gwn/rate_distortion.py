"""Blahut-Arimoto solvers for marginal, joint, and conditional rate-distortion.

The solvers are slope-parameterized: ``slope_s`` is the slope dR/dD of the
rate-distortion curve in bits per distortion unit, so ``slope_s <= 0``. Each
iterate carries a certificate: the optimal Lagrangian value I - s*D lies
within ``gap`` bits of the reported one, and convergence is declared when
that bound gap drops below ``tol``.

``slope_s == 0`` is the zero-rate endpoint. Its continuous limit places all
reproduction mass on the symbol minimizing expected distortion, which is the
distortion-minimizing point among rate-zero codes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .pmf import JointPmf, Pmf

LN2 = float(np.log(2.0))


class DistortionMatrix:
    """Non-negative distortion table indexed (source symbol, reproduction symbol)."""

    def __init__(self, d: np.ndarray):
        table = np.asarray(d, dtype=np.float64)
        if table.ndim != 2 or table.size == 0:
            raise ValidationError(f"distortion matrix must be 2-D, got shape {table.shape}")
        if np.any(table < 0):
            raise ValidationError("distortion entries must be non-negative")
        table = table.copy()
        table.flags.writeable = False
        self.d = table

    @property
    def shape(self) -> tuple[int, int]:
        return self.d.shape

    @staticmethod
    def hamming(n: int) -> "DistortionMatrix":
        return DistortionMatrix(1.0 - np.eye(n))

    @staticmethod
    def squared_error(symbols: Sequence[float], reproductions: Sequence[float] | None = None) -> "DistortionMatrix":
        src = np.asarray(symbols, dtype=np.float64)
        rep = src if reproductions is None else np.asarray(reproductions, dtype=np.float64)
        return DistortionMatrix((src[:, None] - rep[None, :]) ** 2)


@dataclass(frozen=True)
class RDPoint:
    rate: float
    distortion: float
    lagrange_s: float
    converged: bool = True
    gap: float = 0.0
    iterations: int = 0
    conditional: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class JointRDPoint:
    rate: float
    d1: float
    d2: float
    slopes: tuple[float, float]
    converged: bool
    gap: float
    iterations: int
    conditional: np.ndarray = field(repr=False, compare=False)  # (n1, n2, m1, m2)


class RDCurve:
    """Rate-distortion points ordered by ascending distortion."""

    def __init__(self, points: Sequence[RDPoint], tol: float = 1e-9):
        pts = sorted(points, key=lambda p: (p.distortion, -p.rate))
        kept: list[RDPoint] = []
        for p in pts:
            if kept and p.rate > kept[-1].rate + tol:
                continue  # violates monotone non-increasing rate
            kept.append(p)
        self.points = tuple(kept)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points])

    def rate_at(self, distortion: float) -> float:
        """Linear interpolation of rate at a distortion; clamps at the ends."""
        d = self.distortions
        r = self.rates
        return float(np.interp(distortion, d, r))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["slope", "rate_bits", "distortion", "converged"])
        for p in self.points:
            writer.writerow(
                [f"{p.lagrange_s:.17g}", f"{p.rate:.17g}", f"{p.distortion:.17g}",
                 "true" if p.converged else "false"]
            )
        return buf.getvalue()

    def __len__(self) -> int:
        return len(self.points)


def _validate_slope(slope_s: float) -> None:
    if slope_s > 0:
        raise ValidationError(f"slope must be <= 0, got {slope_s}")


def _zero_rate_point(p: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, float]:
    expected = p @ d
    best = int(np.argmin(expected))
    cond = np.zeros_like(d)
    cond[:, best] = 1.0
    return cond, float(expected[best])


def _ba_core(p: np.ndarray, d: np.ndarray, slope_s: float, tol: float, max_iters: int):
    """Fixed-point iteration on the reproduction marginal.

    Returns (conditional, rate_bits, distortion, converged, gap_bits, iters).
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    _validate_slope(slope_s)
    if slope_s == 0.0:
        cond, dist = _zero_rate_point(p, d)
        return cond, 0.0, dist, True, 0.0, 0

    logw = LN2 * slope_s * d  # natural-log weights
    shift = logw.max(axis=1, keepdims=True)
    a = np.exp(logw - shift)  # rows have max entry 1

    m = d.shape[1]
    q = np.full(m, 1.0 / m)
    support = p > 0
    gap = np.inf
    iters = 0
    converged = False
    for iters in range(1, max_iters + 1):
        z = a @ q  # shifted partition function, > 0
        ratios = a / z[:, None]
        c = p @ ratios  # growth factors; sum(q * c) == 1
        gap = float(np.log2(max(c.max(), 1.0)))
        if gap < tol:
            converged = True
            break
        q = q * c
        q /= q.sum()

    cond = q[None, :] * a / (a @ q)[:, None]
    qbar = p @ cond
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where((cond > 0) & (qbar[None, :] > 0), np.log2(cond / qbar[None, :]), 0.0)
    rate = float(np.einsum("i,ij,ij->", p[support], cond[support], logterm[support]))
    dist = float(np.einsum("i,ij,ij->", p, cond, d))
    return cond, max(rate, 0.0), dist, converged, gap, iters


def ba_marginal(
    source: Pmf,
    d: DistortionMatrix,
    slope_s: float,
    tol: float = 1e-9,
    max_iters: int = 50_000,
) -> RDPoint:
    """Rate-distortion point of a memoryless source at the given curve slope."""
    if d.shape[0] != source.size:
        raise ValidationError(
            f"distortion rows {d.shape[0]} must match source alphabet {source.size}"
        )
    cond, rate, dist, converged, gap, iters = _ba_core(
        source.probs, d.d, slope_s, tol, max_iters
    )
    return RDPoint(rate, dist, slope_s, converged, gap, iters, conditional=cond)


def ba_joint(
    joint: JointPmf,
    d1: DistortionMatrix,
    d2: DistortionMatrix,
    slopes: tuple[float, float],
    tol: float = 1e-9,
    max_iters: int = 50_000,
) -> JointRDPoint:
    """Joint rate-distortion of a source pair over the product reproduction alphabet."""
    if joint.n_axes != 2:
        raise ValidationError("ba_joint expects a 2-axis joint pmf")
    n1, n2 = joint.axis_sizes
    if d1.shape[0] != n1 or d2.shape[0] != n2:
        raise ValidationError("distortion matrices must match the joint axis sizes")
    s1, s2 = slopes
    _validate_slope(s1)
    _validate_slope(s2)
    m1, m2 = d1.shape[1], d2.shape[1]

    p_flat = joint.probs.reshape(-1)
    d1e = np.broadcast_to(d1.d[:, None, :, None], (n1, n2, m1, m2)).reshape(n1 * n2, m1 * m2)
    d2e = np.broadcast_to(d2.d[None, :, None, :], (n1, n2, m1, m2)).reshape(n1 * n2, m1 * m2)
    if s1 == 0.0 and s2 == 0.0:
        cond, _ = _zero_rate_point(p_flat, d1e + d2e)
        rate, converged, gap, iters = 0.0, True, 0.0, 0
    else:
        # fold both slopes into one cost and run the core at slope -1
        cost_flat = -(s1 * d1e + s2 * d2e)
        cond, rate, _, converged, gap, iters = _ba_core(
            p_flat, cost_flat, -1.0, tol, max_iters
        )
    dist1 = float(np.einsum("i,ij,ij->", p_flat, cond, d1e))
    dist2 = float(np.einsum("i,ij,ij->", p_flat, cond, d2e))
    return JointRDPoint(
        rate=rate,
        d1=dist1,
        d2=dist2,
        slopes=(s1, s2),
        converged=converged,
        gap=gap,
        iterations=iters,
        conditional=cond.reshape(n1, n2, m1, m2),
    )


def ba_conditional(
    joint: JointPmf,
    side_axes: int,
    d: DistortionMatrix,
    slope_s: float,
    tol: float = 1e-9,
    max_iters: int = 50_000,
) -> RDPoint:
    """Conditional rate-distortion with side information at encoder and decoder.

    Decomposes into one marginal problem per side symbol; the total rate is
    the side-marginal average of the per-symbol rates at the common slope.
    """
    if joint.n_axes != 2:
        raise ValidationError("ba_conditional expects a 2-axis joint pmf")
    side = int(side_axes)
    if side not in (0, 1):
        raise ValidationError("side_axes must identify axis 0 or 1")
    table = joint.probs if side == 1 else joint.probs.T  # (coded, side)
    if d.shape[0] != table.shape[0]:
        raise ValidationError("distortion rows must match the coded axis size")
    p_side = table.sum(axis=0)
    rate = 0.0
    dist = 0.0
    converged = True
    gap = 0.0
    iters = 0
    for s_idx in range(table.shape[1]):
        if p_side[s_idx] <= 0:
            continue
        p_cond = table[:, s_idx] / p_side[s_idx]
        _, r, dd, conv, g, it = _ba_core(p_cond, d.d, slope_s, tol, max_iters)
        rate += p_side[s_idx] * r
        dist += p_side[s_idx] * dd
        converged &= conv
        gap = max(gap, g)
        iters = max(iters, it)
    return RDPoint(rate, dist, slope_s, converged, gap, iters)


def sweep_curve(solver: Callable[[float], RDPoint], slopes: Sequence[float], tol: float = 1e-9) -> RDCurve:
    """Evaluate ``solver`` over a sorted slope list and assemble an RDCurve."""
    if len(slopes) == 0:
        raise ValidationError("slope list must be non-empty")
    ordered = list(slopes)
    if ordered != sorted(ordered):
        raise ValidationError("slopes must be sorted ascending")
    unique = sorted(set(ordered))
    points = [solver(s) for s in unique]
    return RDCurve(points, tol=tol)
