"""Dense discrete probability tables and exact information measures.

All measures are in bits (log base 2). Probabilities below ``ZERO_EPS``
are treated as exact zeros inside logarithms, so ``0 * log 0 == 0`` and
no ``-inf`` can leak out of entropy computations.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

MASS_TOL = 1e-12
ZERO_EPS = 1e-15
MAX_CELLS = 10_000_000

Axes = tuple[int, ...]


def _xlog2x(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > ZERO_EPS
    out[mask] = p[mask] * np.log2(p[mask])
    return out


def _as_axes(axes: int | Iterable[int]) -> Axes:
    if isinstance(axes, (int, np.integer)):
        return (int(axes),)
    return tuple(int(a) for a in axes)


class Pmf:
    """Probability mass function over a finite symbol alphabet."""

    def __init__(self, probs: Sequence[float] | np.ndarray):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValidationError(f"pmf must be a non-empty 1-D array, got shape {p.shape}")
        if np.any(p < 0):
            raise ValidationError("pmf entries must be non-negative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise ValidationError(f"pmf mass {p.sum()!r} deviates from 1 by more than {MASS_TOL}")
        p = p.copy()
        p.flags.writeable = False
        self.probs = p

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def __repr__(self) -> str:
        return f"Pmf(size={self.size})"


class JointPmf:
    """Dense joint probability table over 2 to 5 axes."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=np.float64)
        if not 2 <= p.ndim <= 5:
            raise ValidationError(f"joint pmf must have 2..5 axes, got {p.ndim}")
        if p.size > MAX_CELLS:
            raise ValidationError(f"table has {p.size} cells, exceeding the {MAX_CELLS} cap")
        if np.any(p < 0):
            raise ValidationError("joint pmf entries must be non-negative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise ValidationError(f"joint mass {p.sum()!r} deviates from 1 by more than {MASS_TOL}")
        p = p.copy()
        p.flags.writeable = False
        self.probs = p

    @property
    def axis_sizes(self) -> Axes:
        return tuple(self.probs.shape)

    @property
    def n_axes(self) -> int:
        return self.probs.ndim

    def marginal(self, axes: int | Iterable[int]) -> np.ndarray:
        """Return the marginal table over ``axes`` (in the given order)."""
        keep = _as_axes(axes)
        self._check_axes(keep)
        drop = tuple(a for a in range(self.n_axes) if a not in keep)
        table = self.probs.sum(axis=drop) if drop else self.probs
        kept_sorted = tuple(sorted(keep))
        if keep != kept_sorted:
            # sum() keeps remaining axes in ascending order; permute to request order
            table = np.transpose(table, axes=tuple(kept_sorted.index(a) for a in keep))
        return table

    def marginal_pmf(self, axis: int) -> Pmf:
        return Pmf(self.marginal((axis,)))

    def _check_axes(self, *axis_sets: Axes) -> None:
        seen: set[int] = set()
        for axes in axis_sets:
            if len(axes) == 0:
                raise ValueError("axis set must be non-empty")
            for a in axes:
                if not 0 <= a < self.n_axes:
                    raise ValueError(f"axis {a} out of range for {self.n_axes}-axis table")
                if a in seen:
                    raise ValueError(f"axis sets must be pairwise disjoint, axis {a} repeats")
                seen.add(a)

    def __repr__(self) -> str:
        return f"JointPmf(axis_sizes={self.axis_sizes})"


def entropy(p: Pmf | np.ndarray) -> float:
    """Shannon entropy H(p) in bits."""
    table = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=np.float64)
    return float(-_xlog2x(table).sum())


def joint_entropy(j: JointPmf, axes: int | Iterable[int] | None = None) -> float:
    """Entropy of the marginal over ``axes`` (whole table when omitted)."""
    if axes is None:
        return float(-_xlog2x(j.probs).sum())
    return float(-_xlog2x(j.marginal(axes)).sum())


def conditional_entropy(j: JointPmf, target_axes, given_axes) -> float:
    """H(target | given) = H(target, given) - H(given), in bits."""
    t, g = _as_axes(target_axes), _as_axes(given_axes)
    j._check_axes(t, g)
    return joint_entropy(j, t + g) - joint_entropy(j, g)


def mutual_information(j: JointPmf, axes_a, axes_b) -> float:
    """I(A; B) = H(A) + H(B) - H(A, B), in bits."""
    a, b = _as_axes(axes_a), _as_axes(axes_b)
    j._check_axes(a, b)
    return joint_entropy(j, a) + joint_entropy(j, b) - joint_entropy(j, a + b)


def conditional_mutual_information(j: JointPmf, axes_a, axes_b, given_axes) -> float:
    """I(A; B | C) = H(A,C) + H(B,C) - H(A,B,C) - H(C), in bits."""
    a, b, c = _as_axes(axes_a), _as_axes(axes_b), _as_axes(given_axes)
    j._check_axes(a, b, c)
    return (
        joint_entropy(j, a + c)
        + joint_entropy(j, b + c)
        - joint_entropy(j, a + b + c)
        - joint_entropy(j, c)
    )


def interaction_information(j: JointPmf, axes_a, axes_b, axes_c) -> float:
    """I(A; B; C) = I(A; B) - I(A; B | C). May be negative."""
    a, b, c = _as_axes(axes_a), _as_axes(axes_b), _as_axes(axes_c)
    j._check_axes(a, b, c)
    return mutual_information(j, a, b) - conditional_mutual_information(j, a, b, c)


# --- serialization ----------------------------------------------------------

def dumps(j: JointPmf) -> str:
    """Serialize to text: an ``axes:`` header then one probability per line."""
    lines = ["axes: " + " ".join(str(s) for s in j.axis_sizes)]
    lines.extend(f"{v:.17g}" for v in j.probs.reshape(-1))
    return "\n".join(lines) + "\n"


def loads(text: str) -> JointPmf:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("axes:"):
        raise ValidationError("missing 'axes:' header line")
    sizes = tuple(int(tok) for tok in lines[0][len("axes:"):].split())
    if any(s < 1 for s in sizes):
        raise ValidationError(f"axis sizes must be positive, got {sizes}")
    n = int(np.prod(sizes))
    values = lines[1:]
    if len(values) != n:
        raise ValidationError(f"expected {n} probability lines, got {len(values)}")
    table = np.array([float(v) for v in values], dtype=np.float64).reshape(sizes)
    return JointPmf(table)


def dump(j: JointPmf, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps(j))


def load(path) -> JointPmf:
    with open(path, "r", encoding="ascii") as fh:
        return loads(fh.read())
