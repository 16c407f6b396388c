"""Synthetic correlated sources and edge-case attribute sources.

The spatial source draws 9-symbol values from a clipped, integer-quantized
zero-mean Gaussian (variance 4) and correlates the two channels through a
frozen per-position dependency map: copy positions duplicate the first
channel, independent positions draw fresh symbols. Regression targets apply
fixed unimodular (|det| = 1) linear maps per position block.

Attribute sources emit noisy one-hot (digit, color) embeddings under a
dependent, independent, or mixture label joint; the mixture joint is found
by projected-gradient search to hit configured entropy and mutual
information targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import NumericalError, ValidationError
from .pmf import JointPmf, Pmf, entropy, joint_entropy, mutual_information

SYMBOLS = np.arange(-4, 5, dtype=np.float64)
GAUSS_SIGMA = 2.0  # N(0, 4) read as variance 4

MIXTURE_JOINT_ENTROPY = 5.12
MIXTURE_MUTUAL_INFORMATION = 1.4
MIXTURE_TOL = 0.05


def build_base_pmf() -> Pmf:
    """Clipped N(0, 4) quantized to the nine integer symbols in [-4, 4].

    Interior bins are unit-width intervals around each integer; out-of-range
    mass folds into the boundary bins.
    """
    edges = np.arange(-3.5, 4.0, 1.0)
    cdf = norm.cdf(edges, scale=GAUSS_SIGMA)
    return Pmf(np.diff(np.concatenate([[0.0], cdf, [1.0]])))


@dataclass(frozen=True)
class SyntheticSourceSpec:
    spatial: tuple[int, int] = (4, 4)
    copy_prob: float = 0.8
    seed: int = 0
    target_block: int = 1

    def __post_init__(self):
        if not 0.0 <= self.copy_prob <= 1.0:
            raise ValidationError(f"copy_prob must lie in [0, 1], got {self.copy_prob}")
        h, w = self.spatial
        if h < 1 or w < 1:
            raise ValidationError(f"spatial dims must be positive, got {self.spatial}")
        if (h * w) % self.target_block != 0:
            raise ValidationError(
                f"target_block {self.target_block} must divide {h * w} positions"
            )


class DependencyMap:
    """Frozen per-position copy/independent assignment."""

    def __init__(self, flags: np.ndarray, copy_prob: float):
        flags = np.asarray(flags, dtype=bool).copy()
        flags.flags.writeable = False
        self.flags = flags
        self.copy_prob = copy_prob

    @classmethod
    def from_spec(cls, spec: SyntheticSourceSpec) -> "DependencyMap":
        rng = np.random.default_rng((spec.seed, 0xD0))
        flags = rng.random(spec.spatial) < spec.copy_prob
        return cls(flags, spec.copy_prob)

    @property
    def copy_fraction(self) -> float:
        return float(self.flags.mean())


class TaskTargets:
    """Per-block unimodular regression targets Z_i = A_i x_i.

    Matrices are products of integer shear matrices, so the determinant is
    exactly +/-1 and inversion is exact.
    """

    def __init__(self, a1: np.ndarray, a2: np.ndarray):
        for a in (a1, a2):
            if abs(abs(np.linalg.det(a)) - 1.0) > 1e-9:
                raise ValidationError("target matrices must have |det| = 1")
        self.a1 = a1
        self.a2 = a2

    @classmethod
    def generate(cls, seed: int, block: int) -> "TaskTargets":
        rng = np.random.default_rng((seed, 0xA1))

        def unimodular():
            a = np.eye(block)
            if block == 1:
                return a * rng.choice([-1.0, 1.0])
            for _ in range(2 * block):
                i, j = rng.integers(0, block, size=2)
                if i == j:
                    continue
                shear = np.eye(block)
                shear[i, j] = float(rng.integers(-1, 2))
                a = a @ shear
            return a

        return cls(unimodular(), unimodular())

    @staticmethod
    def _apply(a: np.ndarray, x: np.ndarray) -> np.ndarray:
        n, dim = x.shape
        block = a.shape[0]
        blocks = x.reshape(n, dim // block, block)
        return np.einsum("ij,nbj->nbi", a, blocks).reshape(n, dim)

    def forward(self, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._apply(self.a1, x1), self._apply(self.a2, x2)

    def invert(self, z1: np.ndarray, z2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inv1 = np.linalg.inv(self.a1)
        inv2 = np.linalg.inv(self.a2)
        return self._apply(inv1, z1), self._apply(inv2, z2)


class SyntheticSource:
    """Deterministic sampler for the correlated spatial regression source."""

    task_kind = "regression"

    def __init__(self, spec: SyntheticSourceSpec):
        self.spec = spec
        self.base_pmf = build_base_pmf()
        self.dep_map = DependencyMap.from_spec(spec)
        self.targets = TaskTargets.generate(spec.seed, spec.target_block)

    @property
    def pixels(self) -> int:
        h, w = self.spec.spatial
        return h * w

    @property
    def input_dim(self) -> int:
        return 2 * self.pixels

    @property
    def target_dim(self) -> int:
        return self.pixels

    def sample_batch(self, n: int, batch_index: int = 0):
        """Raw (X, Z1, Z2) with X shaped (n, 2, H, W)."""
        if n <= 0:
            raise ValidationError(f"batch size must be positive, got {n}")
        h, w = self.spec.spatial
        rng = np.random.default_rng((self.spec.seed, 0x5A, batch_index))
        probs = self.base_pmf.probs
        x1 = rng.choice(SYMBOLS, size=(n, h, w), p=probs)
        fresh = rng.choice(SYMBOLS, size=(n, h, w), p=probs)
        x2 = np.where(self.dep_map.flags[None, :, :], x1, fresh)
        z1, z2 = self.targets.forward(x1.reshape(n, -1), x2.reshape(n, -1))
        x = np.stack([x1, x2], axis=1)
        return x, z1, z2

    def batch(self, n: int, batch_index: int = 0):
        """Codec-facing view: flattened inputs and per-task targets."""
        x, z1, z2 = self.sample_batch(n, batch_index)
        return x.reshape(n, -1), z1, z2


def theoretical_measures(spec: SyntheticSourceSpec, dep_map: DependencyMap) -> dict:
    """Exact per-element measures of the blended pair joint.

    Blends the diagonal (copy) and product (independent) joints at the
    dependency map's realized copy fraction and reports H(X1,X2),
    H(X1)+H(X2), and I(X1;X2) in bits per element.
    """
    p = build_base_pmf().probs
    phi = dep_map.copy_fraction
    blend = phi * np.diag(p) + (1 - phi) * np.outer(p, p)
    j = JointPmf(blend)
    h_joint = joint_entropy(j)
    h_sum = 2 * entropy(Pmf(p))
    return {
        "H_joint": h_joint,
        "H_sum": h_sum,
        "MI": mutual_information(j, 0, 1),
        "copy_fraction": phi,
    }


# --- attribute sources --------------------------------------------------------

def _project_rows_to_simplex(q: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    n, m = q.shape
    u = np.sort(q, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, m + 1)
    cond = u - css / idx > 0
    rho = m - np.argmax(cond[:, ::-1], axis=1) - 1
    theta = css[np.arange(n), rho] / (rho + 1)
    return np.maximum(q - theta[:, None], 0.0)


def _mixture_joint(seed: int = 0, iters: int = 4000, lr: float = 0.25) -> np.ndarray:
    """Projected-gradient search over 10x10 joints with uniform digit marginal.

    Minimizes the squared miss of (joint entropy, mutual information) from
    the configured targets; rows parameterize P(color | digit).
    """
    rng = np.random.default_rng((seed, 0x317))
    # banded start: each digit spreads over a handful of adjacent colors
    q = np.zeros((10, 10))
    for d in range(10):
        for k in range(4):
            q[d, (d + k) % 10] = 1.0 / 4
    q = _project_rows_to_simplex(q + 0.01 * rng.random((10, 10)))

    inv_ln2 = 1.0 / np.log(2.0)
    for _ in range(iters):
        j = q / 10.0
        m = j.sum(axis=0)
        safe_j = np.maximum(j, 1e-30)
        safe_m = np.maximum(m, 1e-30)
        h = float(-(j * np.log2(safe_j)).sum())
        h_color = float(-(m * np.log2(safe_m)).sum())
        mi = np.log2(10.0) + h_color - h
        err_h = h - MIXTURE_JOINT_ENTROPY
        err_i = mi - MIXTURE_MUTUAL_INFORMATION
        if abs(err_h) < MIXTURE_TOL / 10 and abs(err_i) < MIXTURE_TOL / 10:
            break
        dh = (-np.log2(safe_j) - inv_ln2) / 10.0
        dh_color = (-np.log2(safe_m)[None, :] - inv_ln2) / 10.0
        grad = 2 * err_h * dh + 2 * err_i * (dh_color - dh)
        q = _project_rows_to_simplex(q - lr * grad)

    j = q / 10.0
    achieved_h = float(-(j[j > 0] * np.log2(j[j > 0])).sum())
    m = j.sum(axis=0)
    h_color = float(-(m[m > 0] * np.log2(m[m > 0])).sum())
    achieved_i = np.log2(10.0) + h_color - achieved_h
    if abs(achieved_h - MIXTURE_JOINT_ENTROPY) > MIXTURE_TOL or (
        abs(achieved_i - MIXTURE_MUTUAL_INFORMATION) > MIXTURE_TOL
    ):
        raise NumericalError(
            f"mixture search missed targets: achieved H={achieved_h:.4f}, "
            f"I={achieved_i:.4f} vs ({MIXTURE_JOINT_ENTROPY}, {MIXTURE_MUTUAL_INFORMATION})"
        )
    return j


@dataclass(frozen=True)
class AttributePmfSpec:
    kind: str  # dependent | independent | mixture
    embedding_dim: int = 20
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("dependent", "independent", "mixture"):
            raise ValidationError(f"unknown attribute source kind {self.kind!r}")
        if self.embedding_dim != 20:
            raise ValidationError("embedding_dim must be 20: one-hot digit + one-hot color")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be non-negative")


class AttributeSource:
    """Sampler of noisy one-hot (digit, color) embeddings under a label joint."""

    task_kind = "classification"
    pixels = 1
    target_dim = 10

    def __init__(self, spec: AttributePmfSpec):
        self.spec = spec
        rng = np.random.default_rng((spec.seed, 0xA77))
        if spec.kind == "dependent":
            perm = rng.permutation(10)
            joint = np.zeros((10, 10))
            joint[np.arange(10), perm] = 0.1
        elif spec.kind == "independent":
            joint = np.full((10, 10), 0.01)
        else:
            joint = _mixture_joint(spec.seed)
        self.joint = JointPmf(joint)

    @property
    def input_dim(self) -> int:
        return self.spec.embedding_dim

    def batch(self, n: int, batch_index: int = 0):
        if n <= 0:
            raise ValidationError(f"batch size must be positive, got {n}")
        rng = np.random.default_rng((self.spec.seed, 0x5B, batch_index))
        flat = self.joint.probs.reshape(-1)
        cells = rng.choice(flat.size, size=n, p=flat)
        digits = cells // 10
        colors = cells % 10
        vectors = np.zeros((n, 20))
        vectors[np.arange(n), digits] = 1.0
        vectors[np.arange(n), 10 + colors] = 1.0
        vectors += self.spec.noise_scale * rng.standard_normal((n, 20))
        return vectors, digits, colors


def build_attribute_source(spec: AttributePmfSpec) -> AttributeSource:
    return AttributeSource(spec)
