"""Common-information measures and the transmit/receive bound checker.

Contains the exact ergodic-decomposition computation of Gacs-Korner common
information, a penalized alternating-minimization solver for Wyner common
information (with a dense-grid certifier for tiny alphabets), grid
enumeration of rate-distortion-achieving tuples, the interaction-information
bound chain check, and the entropy-form Gray-Wyner objective over
deterministic mappings.

Wyner values are reported in certified form I(X1,X2;U) + I(X1;X2|U), which
upper-bounds I(X1;X2) for every conditional and collapses to I(X1,X2;U) as
the witness approaches exact conditional independence.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .pmf import (
    JointPmf,
    Pmf,
    conditional_mutual_information,
    entropy,
    joint_entropy,
    mutual_information,
    interaction_information,
)
from .rate_distortion import DistortionMatrix, JointRDPoint, ba_joint, ba_marginal

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class CommonInfoResult:
    value_bits: float
    witness: JointPmf
    aux_alphabet_size: int
    method: str  # exact_decomposition | exhaustive | alternating
    feasible: bool = True
    raw_mi: float = 0.0
    conditional_mi: float = 0.0


@dataclass(frozen=True)
class BoundCheckReport:
    max_receive_ii: float
    min_transmit_ii: float
    gk_value: float
    wyner_value: float
    ordering_satisfied: bool
    enumerated_tuples: int
    receive_iis: tuple[float, ...] = field(default=(), repr=False)
    transmit_iis: tuple[float, ...] = field(default=(), repr=False)

    def to_json(self, bins: int = 16) -> str:
        def histogram(values):
            if not values:
                return {"edges": [], "counts": []}
            counts, edges = np.histogram(np.array(values), bins=bins)
            return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}

        payload = {
            "max_receive_ii": self.max_receive_ii,
            "min_transmit_ii": self.min_transmit_ii,
            "gk_value": self.gk_value,
            "wyner_value": self.wyner_value,
            "ordering_satisfied": self.ordering_satisfied,
            "enumerated_tuples": self.enumerated_tuples,
            "receive_ii_histogram": histogram(self.receive_iis),
            "transmit_ii_histogram": histogram(self.transmit_iis),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


# --- Gacs-Korner -------------------------------------------------------------

def gk_common_information_lossless(joint: JointPmf) -> CommonInfoResult:
    """Entropy of the connected-component distribution of the support graph.

    Components of the bipartite support graph of P(X1, X2) are exactly the
    blocks of the ergodic (block-diagonal) decomposition; the maximal common
    random variable V is the block index.
    """
    if joint.n_axes != 2:
        raise ValidationError("gk computation expects a 2-axis joint pmf")
    p = joint.probs
    n1, n2 = p.shape
    # union-find over row nodes [0, n1) and column nodes [n1, n1+n2)
    parent = list(range(n1 + n2))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    rows, cols = np.nonzero(p)
    for i, j in zip(rows.tolist(), cols.tolist()):
        union(i, n1 + j)

    roots = sorted({find(i) for i in rows.tolist()})
    comp_index = {r: k for k, r in enumerate(roots)}
    n_comp = max(len(roots), 1)

    witness_table = np.zeros((n1, n2, n_comp))
    comp_mass = np.zeros(n_comp)
    for i, j in zip(rows.tolist(), cols.tolist()):
        k = comp_index[find(i)]
        witness_table[i, j, k] = p[i, j]
        comp_mass[k] += p[i, j]

    if not roots:  # degenerate: no support (cannot happen for a valid pmf)
        witness_table[..., 0] = p
        comp_mass[0] = 1.0

    value = max(entropy(Pmf(comp_mass)), 0.0)
    return CommonInfoResult(
        value_bits=value,
        witness=JointPmf(witness_table),
        aux_alphabet_size=n_comp,
        method="exact_decomposition",
        raw_mi=value,
        conditional_mi=0.0,
    )


# --- Wyner -------------------------------------------------------------------

def _wyner_measures(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (I(X1,X2;U), I(X1;X2|U)) in bits for a batch of conditionals.

    ``q`` has shape (batch, aux, n1, n2) with unit sums over the aux axis.
    """
    pj = q * p[None, None, :, :]

    def h(t, axes):
        tt = t.sum(axis=axes) if axes else t
        flat = tt.reshape(tt.shape[0], -1)
        out = np.zeros_like(flat)
        mask = flat > 1e-15
        out[mask] = flat[mask] * np.log2(flat[mask])
        return -out.sum(axis=1)

    h_u = h(pj, (2, 3))
    h_all = h(pj, ())
    h_x1u = h(pj, (3,))
    h_x2u = h(pj, (2,))
    h_x = -np.sum(p[p > 1e-15] * np.log2(p[p > 1e-15]))
    i_xu = h_u + h_x - h_all
    cond_mi = (h_x1u - h_u) + (h_x2u - h_u) - (h_all - h_u)
    return i_xu, cond_mi


def wyner_common_information_lossless(
    joint: JointPmf,
    aux_size: int | None = None,
    restarts: int = 32,
    tol: float = 1e-6,
    max_inner: int = 400,
    seed: int = 0,
) -> CommonInfoResult:
    """Penalized alternating minimization of I(X1,X2;U) s.t. X1 - U - X2.

    All restarts are updated in one vectorized batch. When the auxiliary
    alphabet can index the full source alphabet, the deterministic witness
    U = (X1, X2) is seeded as restart 0 so a feasible decomposition always
    exists. The reported value is the certified I(X1,X2;U) + I(X1;X2|U).
    """
    if joint.n_axes != 2:
        raise ValidationError("wyner computation expects a 2-axis joint pmf")
    p = joint.probs
    n1, n2 = p.shape
    aux = int(aux_size) if aux_size is not None else n1 * n2
    if aux < 1:
        raise ValidationError("aux_size must be >= 1")
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")

    rng = np.random.default_rng(seed)
    q = rng.random((restarts, aux, n1, n2))
    q /= q.sum(axis=1, keepdims=True)
    if aux >= n1 * n2:
        ident = np.zeros((aux, n1, n2))
        for i in range(n1):
            for j in range(n2):
                ident[i * n2 + j, i, j] = 1.0
        q[0] = ident

    for mu in (1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0, 16384.0):
        expo = mu / (1.0 + mu)
        for _ in range(max_inner):
            pu = np.einsum("rkij,ij->rk", q, p)
            px1u = np.einsum("rkij,ij->rki", q, p)
            px2u = np.einsum("rkij,ij->rkj", q, p)
            safe_pu = np.maximum(pu, _LOG_FLOOR)
            log_r1 = np.log(np.maximum(px1u, _LOG_FLOOR)) - np.log(safe_pu)[:, :, None]
            log_r2 = np.log(np.maximum(px2u, _LOG_FLOOR)) - np.log(safe_pu)[:, :, None]
            logits = (
                np.log(safe_pu)[:, :, None, None]
                + expo * (log_r1[:, :, :, None] + log_r2[:, :, None, :])
            )
            logits -= logits.max(axis=1, keepdims=True)
            q_new = np.exp(logits)
            q_new /= q_new.sum(axis=1, keepdims=True)
            delta = np.max(np.abs(q_new - q))
            q = q_new
            if delta < 1e-13:
                break

    i_xu, cond_mi = _wyner_measures(p, q)
    certified = i_xu + cond_mi
    feasible_mask = cond_mi < tol
    if feasible_mask.any():
        candidates = np.where(feasible_mask, certified, np.inf)
        best = int(np.argmin(candidates))
        feasible = True
    else:
        best = int(np.argmin(certified))
        feasible = False

    witness = JointPmf(np.transpose(q[best] * p[None, :, :], (1, 2, 0)))
    return CommonInfoResult(
        value_bits=max(float(certified[best]), 0.0),
        witness=witness,
        aux_alphabet_size=aux,
        method="alternating",
        feasible=feasible,
        raw_mi=float(i_xu[best]),
        conditional_mi=float(cond_mi[best]),
    )


def wyner_common_information_grid(
    joint: JointPmf,
    aux_size: int = 2,
    grid: int = 32,
    feas_tol: float = 1e-3,
) -> CommonInfoResult:
    """Dense-grid certification of the Wyner value for tiny alphabets.

    Enumerates P(U | X1, X2) with every conditional probability on the
    1/grid lattice, restricted to aux_size == 2 and 2x2 sources where the
    full lattice fits in memory.
    """
    if joint.n_axes != 2 or joint.axis_sizes != (2, 2) or aux_size != 2:
        raise ValidationError("grid certification supports 2x2 joints with aux_size=2")
    p = joint.probs
    ticks = np.linspace(0.0, 1.0, grid + 1)
    axes = np.meshgrid(ticks, ticks, ticks, ticks, indexing="ij")
    flat = np.stack([a.reshape(-1) for a in axes], axis=1)  # (N, 4) = q(u=0 | x1, x2)
    q = np.empty((flat.shape[0], 2, 2, 2))
    q[:, 0] = flat.reshape(-1, 2, 2)
    q[:, 1] = 1.0 - q[:, 0]

    i_xu, cond_mi = _wyner_measures(p, q)
    feasible_mask = cond_mi <= feas_tol
    if not feasible_mask.any():
        raise NumericalError(
            f"no grid point satisfies I(X1;X2|U) <= {feas_tol}; refine the grid"
        )
    candidates = np.where(feasible_mask, i_xu + cond_mi, np.inf)
    best = int(np.argmin(candidates))
    witness = JointPmf(np.transpose(q[best] * p[None, :, :], (1, 2, 0)))
    return CommonInfoResult(
        value_bits=float(i_xu[best] + cond_mi[best]),
        witness=witness,
        aux_alphabet_size=2,
        method="exhaustive",
        feasible=True,
        raw_mi=float(i_xu[best]),
        conditional_mi=float(cond_mi[best]),
    )


# --- tuple enumeration and Theorem-1 bound check ------------------------------

def _simplex_lattice(grid: int, m: int) -> np.ndarray:
    """All points of the probability simplex with coordinates k/grid."""
    points = []
    for combo in itertools.combinations(range(grid + m - 1), m - 1):
        counts = []
        prev = -1
        for c in combo:
            counts.append(c - prev - 1)
            prev = c
        counts.append(grid + m - 2 - prev)
        points.append(counts)
    return np.array(points, dtype=np.float64) / grid


def _channel_lattice(grid: int, n: int, m: int, cap: int) -> np.ndarray:
    """All channels (n rows on the m-simplex lattice), shape (N, n, m)."""
    rows = _simplex_lattice(grid, m)
    count = rows.shape[0] ** n
    if count > cap:
        raise ValidationError(
            f"channel lattice size {count} exceeds the {cap} enumeration cap; "
            "reduce grid or alphabet sizes"
        )
    idx = np.indices((rows.shape[0],) * n).reshape(n, -1).T
    return rows[idx]  # (N, n, m)


def _channel_rate_distortion(p: np.ndarray, channels: np.ndarray, d: np.ndarray):
    """Vectorized I(X; Zhat) and E[d] for a batch of channels (N, n, m)."""
    out = np.einsum("i,nij->nj", p, channels)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(
            (channels > 0) & (out[:, None, :] > 0),
            np.log2(np.maximum(channels, _LOG_FLOOR))
            - np.log2(np.maximum(out[:, None, :], _LOG_FLOOR)),
            0.0,
        )
    rates = np.einsum("i,nij,nij->n", p, channels, ratio)
    dists = np.einsum("i,nij,ij->n", p, channels, d)
    return rates, dists


def _tuple_ii(joint: JointPmf, conditional: np.ndarray) -> float:
    """Interaction information I(X1,X2; Zhat1; Zhat2) of one tuple."""
    n1, n2, m1, m2 = conditional.shape
    table = joint.probs[:, :, None, None] * conditional
    j = JointPmf(table)
    return interaction_information(j, (0, 1), (2,), (3,))


def _canonical_channel(channel: np.ndarray, p_source: np.ndarray) -> bytes:
    fixed = channel.copy()
    dead = p_source <= 0
    if dead.any():
        fixed[dead] = 0.0
        fixed[dead, 0] = 1.0
    return np.round(fixed, 12).tobytes()


def _aligned_coupling(w1_row: np.ndarray, w2_row: np.ndarray) -> np.ndarray:
    """Coupling of two reproduction rows maximizing P(Zhat1 == Zhat2)."""
    m1, m2 = w1_row.size, w2_row.size
    k = min(m1, m2)
    c = np.zeros((m1, m2))
    r1 = w1_row.copy()
    r2 = w2_row.copy()
    diag = np.minimum(r1[:k], r2[:k])
    c[np.arange(k), np.arange(k)] = diag
    r1[:k] -= diag
    r2[:k] -= diag
    i = j = 0
    while i < m1 and j < m2:
        if r1[i] <= 1e-15:
            i += 1
            continue
        if r2[j] <= 1e-15:
            j += 1
            continue
        move = min(r1[i], r2[j])
        c[i, j] += move
        r1[i] -= move
        r2[j] -= move
    return c


@dataclass(frozen=True)
class TupleSets:
    transmit: tuple[np.ndarray, ...]
    receive: tuple[np.ndarray, ...]
    rate_refs: tuple[float, float, float]  # (R1, R2, Rt)
    tol: float
    grid: int


def _reference_solutions(joint, d1, d2, D1, D2, tol):
    """BA reference rates/witnesses at the distortion targets.

    Lossless targets (D == 0) are resolved exactly through entropies and
    identity channels; positive targets are matched by bisection on the
    slope of the corresponding BA problem.
    """
    p1 = joint.probs.sum(axis=1)
    p2 = joint.probs.sum(axis=0)

    def marginal_ref(p, d, target):
        if target == 0.0:
            if d.shape[0] != d.shape[1]:
                raise ValidationError("lossless targets need square distortion matrices")
            return entropy(Pmf(p)), np.eye(d.shape[0])
        point = _match_marginal_distortion(Pmf(p), DistortionMatrix(d), target)
        return point.rate, point.conditional

    r1, w1 = marginal_ref(p1, d1.d, D1)
    r2, w2 = marginal_ref(p2, d2.d, D2)

    if D1 == 0.0 and D2 == 0.0:
        n1, n2 = joint.axis_sizes
        ident = np.einsum("ik,jl->ijkl", np.eye(n1), np.eye(n2))
        rt = joint_entropy(joint)
        wt = ident
    else:
        jp = _match_joint_distortion(joint, d1, d2, D1, D2)
        rt, wt = jp.rate, jp.conditional
    return (r1, w1), (r2, w2), (rt, wt)


def _match_marginal_distortion(source, d, target, tol=1e-10, steps=80):
    lo, hi = -60.0, 0.0  # distortion decreases as the slope decreases
    point = ba_marginal(source, d, lo, tol=tol)
    if point.distortion > target:
        return point
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        point = ba_marginal(source, d, mid, tol=tol)
        if point.distortion > target:
            hi = mid
        else:
            lo = mid
    return ba_marginal(source, d, lo, tol=tol)


def _match_joint_distortion(joint, d1, d2, D1, D2, tol=1e-10, steps=80) -> JointRDPoint:
    # common slope scaling for both constraints; adequate for symmetric targets
    lo, hi = -60.0, 0.0
    point = ba_joint(joint, d1, d2, (lo, lo), tol=tol)
    if point.d1 > D1 or point.d2 > D2:
        return point
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        point = ba_joint(joint, d1, d2, (mid, mid), tol=tol)
        if point.d1 > D1 or point.d2 > D2:
            hi = mid
        else:
            lo = mid
    return ba_joint(joint, d1, d2, (lo, lo), tol=tol)


def lossy_tuple_enumeration(
    joint: JointPmf,
    d1: DistortionMatrix,
    d2: DistortionMatrix,
    D1: float,
    D2: float,
    grid: int = 8,
    tol: float = 1e-9,
    max_pairs: int = 256,
    lattice_cap: int = 1_000_000,
) -> TupleSets:
    """Grid-enumerate conditionals achieving the marginal and joint BA rates.

    Receive candidates are per-task lattice channels within ``tol`` of the
    marginal rate-distortion references, paired through independent and
    match-maximizing couplings. Transmit candidates are lattice products and
    BA witnesses within ``tol`` of the joint reference. Both sets are
    certified subsets of the true achieving sets up to the admission
    tolerance.
    """
    if joint.n_axes != 2:
        raise ValidationError("tuple enumeration expects a 2-axis joint pmf")
    n1, n2 = joint.axis_sizes
    m1, m2 = d1.shape[1], d2.shape[1]
    p1 = joint.probs.sum(axis=1)
    p2 = joint.probs.sum(axis=0)

    (r1_ref, w1_ref), (r2_ref, w2_ref), (rt_ref, wt_ref) = _reference_solutions(
        joint, d1, d2, D1, D2, tol
    )

    def achieving_channels(p, d, name, rate_ref, target):
        channels = _channel_lattice(grid, p.size, d.shape[1], lattice_cap)
        rates, dists = _channel_rate_distortion(p, channels, d)
        keep = (np.abs(rates - rate_ref) <= tol) & (dists <= target + tol)
        found = channels[keep]
        if found.shape[0] == 0:
            raise NumericalError(
                f"no grid-{grid} channel achieves the {name} reference within "
                f"tol={tol}; use a coarser tol or finer grid"
            )
        seen: dict[bytes, np.ndarray] = {}
        for ch in found:
            seen.setdefault(_canonical_channel(ch, p), ch)
        return list(seen.values())

    set1 = achieving_channels(p1, d1.d, "task-1 marginal", r1_ref, D1)
    set2 = achieving_channels(p2, d2.d, "task-2 marginal", r2_ref, D2)

    receive: list[np.ndarray] = []
    pair_budget = max(1, int(math.isqrt(max_pairs)))
    for w1 in set1[:pair_budget]:
        for w2 in set2[:pair_budget]:
            product = np.einsum("ik,jl->ijkl", w1, w2)
            receive.append(product)
            aligned = np.empty((n1, n2, m1, m2))
            for i in range(n1):
                for j in range(n2):
                    aligned[i, j] = _aligned_coupling(w1[i], w2[j])
            receive.append(aligned)

    transmit: list[np.ndarray] = []

    def joint_metrics(conds):
        flat = conds.reshape(conds.shape[0], n1 * n2, m1 * m2)
        rates, _ = _channel_rate_distortion(
            joint.probs.reshape(-1), flat, np.zeros((n1 * n2, m1 * m2))
        )
        d1e = np.broadcast_to(d1.d[:, None, :, None], (n1, n2, m1, m2)).reshape(-1, m1 * m2)
        d2e = np.broadcast_to(d2.d[None, :, None, :], (n1, n2, m1, m2)).reshape(-1, m1 * m2)
        dist1 = np.einsum("i,nij,ij->n", joint.probs.reshape(-1), flat, d1e)
        dist2 = np.einsum("i,nij,ij->n", joint.probs.reshape(-1), flat, d2e)
        return rates, dist1, dist2

    candidates = receive + [wt_ref, np.einsum("ik,jl->ijkl", w1_ref, w2_ref)]
    stacked = np.stack(candidates)
    rates, dist1, dist2 = joint_metrics(stacked)
    for idx in range(stacked.shape[0]):
        if (
            abs(rates[idx] - rt_ref) <= tol
            and dist1[idx] <= D1 + tol
            and dist2[idx] <= D2 + tol
        ):
            transmit.append(stacked[idx])
    if not transmit:
        raise NumericalError(
            f"no enumerated tuple achieves the joint reference within tol={tol}; "
            "use a coarser tol or finer grid"
        )

    def dedupe(conds):
        seen: dict[bytes, np.ndarray] = {}
        mass = joint.probs.reshape(-1)
        for c in conds:
            seen.setdefault(_canonical_channel(c.reshape(n1 * n2, m1 * m2), mass), c)
        return tuple(seen.values())

    return TupleSets(
        transmit=dedupe(transmit),
        receive=dedupe(receive),
        rate_refs=(r1_ref, r2_ref, rt_ref),
        tol=tol,
        grid=grid,
    )


def check_theorem1(
    joint: JointPmf,
    d1: DistortionMatrix,
    d2: DistortionMatrix,
    D1: float = 0.0,
    D2: float = 0.0,
    grid: int = 8,
    tol: float = 1e-9,
    wyner_restarts: int = 8,
    seed: int = 0,
) -> BoundCheckReport:
    """Interaction-information bound chain between the two common informations."""
    sets = lossy_tuple_enumeration(joint, d1, d2, D1, D2, grid=grid, tol=tol)
    receive_iis = tuple(_tuple_ii(joint, c) for c in sets.receive)
    transmit_iis = tuple(_tuple_ii(joint, c) for c in sets.transmit)
    max_receive = max(receive_iis)
    min_transmit = min(transmit_iis)
    gk = gk_common_information_lossless(joint)
    wyner = wyner_common_information_lossless(
        joint, restarts=wyner_restarts, seed=seed
    )
    ordering = (
        gk.value_bits <= max_receive + 1e-9
        and max_receive <= min_transmit + 1e-9
        and min_transmit <= wyner.value_bits + 1e-9
    )
    return BoundCheckReport(
        max_receive_ii=max_receive,
        min_transmit_ii=min_transmit,
        gk_value=gk.value_bits,
        wyner_value=wyner.value_bits,
        ordering_satisfied=ordering,
        enumerated_tuples=len(sets.receive) + len(sets.transmit),
        receive_iis=receive_iis,
        transmit_iis=transmit_iis,
    )


# --- discrete Gray-Wyner objective --------------------------------------------

EXHAUSTIVE_CAP = 2_000_000


def _all_mappings(n_inputs: int, n_outputs: int) -> np.ndarray:
    """Every deterministic mapping as an index table, in lexicographic order."""
    grids = np.indices((n_outputs,) * n_inputs)
    return grids.reshape(n_inputs, -1).T


def _xlog2x_vec(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    mask = t > 1e-15
    out[mask] = t[mask] * np.log2(t[mask])
    return out


def gw_objective_discrete(
    joint: JointPmf,
    d1: DistortionMatrix,
    d2: DistortionMatrix,
    D1: float,
    D2: float,
    alpha1: float,
    alpha2: float,
    y_sizes: tuple[int, int, int],
    seed: int = 0,
    anneal_steps: int = 200_000,
):
    """Minimize H(Y0) + a1 H(Y1|Y0) + a2 H(Y2|Y0) over deterministic encoders.

    Y0 maps the source pair, Y1 maps the first source, Y2 maps the second.
    Each task decoder is the Bayes-optimal reproduction given (Y0, Yi); a
    mapping triple is feasible when both expected distortions stay within
    the targets. Exhaustive when the factored search space fits the cap,
    simulated annealing otherwise. Ties break in lexicographic mapping
    order.
    """
    if not (0.0 <= alpha1 <= 1.0 and 0.0 <= alpha2 <= 1.0):
        raise ValidationError("alpha weights must lie in [0, 1]")
    if alpha1 + alpha2 < 1.0:
        raise ValidationError("alpha1 + alpha2 must be >= 1")
    if joint.n_axes != 2:
        raise ValidationError("discrete objective expects a 2-axis joint pmf")
    k0, k1, k2 = y_sizes
    if min(k0, k1, k2) < 1:
        raise ValidationError("channel alphabet sizes must be positive")
    n1, n2 = joint.axis_sizes

    size = (k0 ** (n1 * n2)) * (k1 ** n1 + k2 ** n2)
    if size <= EXHAUSTIVE_CAP:
        return _gw_exhaustive(joint, d1, d2, D1, D2, alpha1, alpha2, y_sizes)
    return _gw_anneal(joint, d1, d2, D1, D2, alpha1, alpha2, y_sizes, seed, anneal_steps)


def _gw_objective_terms(joint, d, f0, f_task, task_axis, k0, k_task):
    """(H(Ytask | Y0), expected distortion under the Bayes decoder)."""
    p = joint.probs
    n1, n2 = p.shape
    # joint over (y0, y_task, x_task)
    table = np.zeros((k0, k_task, p.shape[task_axis]))
    for i in range(n1):
        for j in range(n2):
            x = i if task_axis == 0 else j
            table[f0[i * n2 + j], f_task[x], x] += p[i, j]
    p_y0y = table.sum(axis=2)
    h_joint = -_xlog2x_vec(p_y0y).sum()
    p_y0 = p_y0y.sum(axis=1)
    h_y0 = -_xlog2x_vec(p_y0).sum()
    cond_entropy = h_joint - h_y0
    # Bayes decoder: reproduction minimizing expected distortion per (y0, y)
    exp_d = np.einsum("abx,xz->abz", table, d)
    dist = float(np.min(exp_d, axis=2).sum())
    return cond_entropy, dist


def _task_terms_for_chunk(p_y0_x, onehots, d, alpha, target):
    """Best feasible alpha*H(Y|Y0) per f0 in a chunk, fully vectorized.

    p_y0_x: (M, k0, n) chunk of P(Y0, X_task); onehots: (N, n, k) task mappings.
    Returns (term values (M,), argmin indices (M,)); infeasible rows carry inf.
    """
    p_y0y = np.einsum("myx,nxb->mnyb", p_y0_x, onehots)
    h_joint = -_xlog2x_vec(p_y0y).sum(axis=(2, 3))
    p_y0 = p_y0_x.sum(axis=2)
    h_y0 = -_xlog2x_vec(p_y0).sum(axis=1)
    cond = h_joint - h_y0[:, None]
    exp_d = np.einsum("myx,nxb,xz->mnybz", p_y0_x, onehots, d)
    dist = exp_d.min(axis=4).sum(axis=(2, 3))
    term = np.where(dist <= target + 1e-12, alpha * cond, np.inf)
    idx = term.argmin(axis=1)  # first minimum = lexicographically smallest mapping
    return term[np.arange(term.shape[0]), idx], idx


def _gw_exhaustive(joint, d1, d2, D1, D2, alpha1, alpha2, y_sizes):
    k0, k1, k2 = y_sizes
    p = joint.probs
    n1, n2 = p.shape
    p_flat = p.reshape(-1)

    f0_all = _all_mappings(n1 * n2, k0)
    f1_all = _all_mappings(n1, k1)
    f2_all = _all_mappings(n2, k2)

    onehot1 = np.zeros((f1_all.shape[0], n1, k1))
    onehot1[np.arange(f1_all.shape[0])[:, None], np.arange(n1)[None, :], f1_all] = 1.0
    onehot2 = np.zeros((f2_all.shape[0], n2, k2))
    onehot2[np.arange(f2_all.shape[0])[:, None], np.arange(n2)[None, :], f2_all] = 1.0
    cell_to_x1 = np.repeat(np.eye(n1), n2, axis=0)  # (n1*n2, n1)
    cell_to_x2 = np.tile(np.eye(n2), (n1, 1))  # (n1*n2, n2)

    best = None
    best_key = None
    any_feasible1 = any_feasible2 = False
    chunk = 1024
    for start in range(0, f0_all.shape[0], chunk):
        f0_chunk = f0_all[start : start + chunk]
        m = f0_chunk.shape[0]
        onehot0 = np.zeros((m, n1 * n2, k0))
        onehot0[np.arange(m)[:, None], np.arange(n1 * n2)[None, :], f0_chunk] = 1.0
        weighted = p_flat[None, :, None] * onehot0  # (m, cells, k0)
        p_y0_x1 = np.einsum("mcy,cx->myx", weighted, cell_to_x1)
        p_y0_x2 = np.einsum("mcy,cx->myx", weighted, cell_to_x2)
        h_y0 = -_xlog2x_vec(weighted.sum(axis=1)).sum(axis=1)

        term1, idx1 = _task_terms_for_chunk(p_y0_x1, onehot1, d1.d, alpha1, D1)
        term2, idx2 = _task_terms_for_chunk(p_y0_x2, onehot2, d2.d, alpha2, D2)
        any_feasible1 |= bool(np.isfinite(term1).any())
        any_feasible2 |= bool(np.isfinite(term2).any())
        totals = h_y0 + term1 + term2
        chunk_min = totals.min()
        if not np.isfinite(chunk_min):
            continue
        if best is not None and chunk_min > best[0] + 1e-15:
            continue
        for local in np.nonzero(totals <= chunk_min + 1e-15)[0]:
            total = totals[local]
            key = (
                tuple(f0_chunk[local]),
                tuple(f1_all[idx1[local]]),
                tuple(f2_all[idx2[local]]),
            )
            wins = best is None or total < best[0] - 1e-15
            ties = best is not None and abs(total - best[0]) <= 1e-15 and key < best_key
            if wins or ties:
                best = (
                    float(total),
                    f0_chunk[local].copy(),
                    f1_all[idx1[local]].copy(),
                    f2_all[idx2[local]].copy(),
                )
                best_key = key

    if best is None:
        which = (
            "d1" if not any_feasible1 else "d2" if not any_feasible2 else "d1 and d2 jointly"
        )
        raise ValidationError(
            f"distortion targets (D1={D1}, D2={D2}) are infeasible: constraint {which} "
            "cannot be met by any deterministic mapping at the given alphabet sizes"
        )
    t_value, f0, f1, f2 = best
    mappings = {"f0": f0.tolist(), "f1": f1.tolist(), "f2": f2.tolist()}
    return float(t_value), mappings


def _gw_anneal(joint, d1, d2, D1, D2, alpha1, alpha2, y_sizes, seed, steps):
    k0, k1, k2 = y_sizes
    n1, n2 = joint.axis_sizes
    rng = np.random.default_rng(seed)

    def energy(f0, f1, f2):
        h1, dist1 = _gw_objective_terms(joint, d1.d, f0, f1, 0, k0, k1)
        h2c, dist2 = _gw_objective_terms(joint, d2.d, f0, f2, 1, k0, k2)
        p_y0 = np.zeros(k0)
        for c, pr in enumerate(joint.probs.reshape(-1)):
            p_y0[f0[c]] += pr
        h_y0 = -_xlog2x_vec(p_y0).sum()
        penalty = 100.0 * (max(0.0, dist1 - D1) + max(0.0, dist2 - D2))
        return h_y0 + alpha1 * h1 + alpha2 * h2c + penalty, penalty == 0.0

    f0 = rng.integers(0, k0, size=n1 * n2)
    f1 = rng.integers(0, k1, size=n1)
    f2 = rng.integers(0, k2, size=n2)
    e, feas = energy(f0, f1, f2)
    best = (e, f0.copy(), f1.copy(), f2.copy(), feas)
    for step in range(steps):
        temp = max(1e-3, 1.0 * (1.0 - step / steps))
        which = rng.integers(0, 3)
        target = (f0, f1, f2)[which]
        pos = rng.integers(0, target.size)
        old = target[pos]
        target[pos] = rng.integers(0, (k0, k1, k2)[which])
        e_new, feas_new = energy(f0, f1, f2)
        if e_new <= e or rng.random() < math.exp((e - e_new) / temp):
            e, feas = e_new, feas_new
            if feas and (not best[4] or e < best[0] - 1e-15):
                best = (e, f0.copy(), f1.copy(), f2.copy(), True)
        else:
            target[pos] = old
    if not best[4]:
        raise ValidationError(
            f"distortion targets (D1={D1}, D2={D2}) were never met during annealing"
        )
    t_value, f0, f1, f2, _ = best
    mappings = {"f0": f0.tolist(), "f1": f1.tolist(), "f2": f2.tolist()}
    return float(t_value), mappings
