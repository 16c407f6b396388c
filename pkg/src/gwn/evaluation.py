"""Operating points, BD-rate, empirical mutual information, theory gaps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ValidationError
from .rate_distortion import RDCurve, RDPoint


@dataclass(frozen=True)
class GWRatePoint:
    """One codec operating point; rate fields are bits per sample."""

    arch: str
    beta: float
    eta: float
    R1: float
    R2: float
    R0: float
    Rt: float
    Rr: float
    D1: float
    D2: float
    pixels: int = 1
    acc1: float | None = None
    acc2: float | None = None

    def __post_init__(self):
        if self.Rt != self.R0 + self.R1 + self.R2:
            raise ValidationError(
                f"Rt={self.Rt!r} must equal R0+R1+R2={self.R0 + self.R1 + self.R2!r} exactly"
            )
        if self.Rr != 2 * self.R0 + self.R1 + self.R2:
            raise ValidationError(
                f"Rr={self.Rr!r} must equal 2*R0+R1+R2 exactly"
            )

    @classmethod
    def from_channel_rates(cls, arch, beta, eta, r0, r1, r2, d1, d2, pixels=1,
                           acc1=None, acc2=None) -> "GWRatePoint":
        return cls(
            arch=arch, beta=beta, eta=eta,
            R1=r1, R2=r2, R0=r0,
            Rt=r0 + r1 + r2, Rr=2 * r0 + r1 + r2,
            D1=d1, D2=d2, pixels=pixels, acc1=acc1, acc2=acc2,
        )

    @property
    def bpp_t(self) -> float:
        return self.Rt / self.pixels

    @property
    def bpp_r(self) -> float:
        return self.Rr / self.pixels

    @property
    def bpp_0(self) -> float:
        return self.R0 / self.pixels

    @property
    def mean_distortion(self) -> float:
        return 0.5 * (self.D1 + self.D2)

    def to_dict(self) -> dict:
        out = {
            "arch": self.arch, "beta": self.beta, "eta": self.eta,
            "R1": self.R1, "R2": self.R2, "R0": self.R0,
            "Rt": self.Rt, "Rr": self.Rr, "D1": self.D1, "D2": self.D2,
            "pixels": self.pixels,
        }
        if self.acc1 is not None:
            out["acc1"] = self.acc1
            out["acc2"] = self.acc2
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GWRatePoint":
        return cls(
            arch=d["arch"], beta=float(d["beta"]), eta=float(d["eta"]),
            R1=float(d["R1"]), R2=float(d["R2"]), R0=float(d["R0"]),
            Rt=float(d["Rt"]), Rr=float(d["Rr"]),
            D1=float(d["D1"]), D2=float(d["D2"]),
            pixels=int(d.get("pixels", 1)),
            acc1=float(d["acc1"]) if d.get("acc1") not in (None, "") else None,
            acc2=float(d["acc2"]) if d.get("acc2") not in (None, "") else None,
        )


CSV_HEADER = ["codec", "beta", "eta", "R1", "R2", "R0", "Rt", "Rr", "D1", "D2", "pixels"]


def points_to_csv(points: Sequence[GWRatePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p in points:
        writer.writerow(
            [p.arch, f"{p.beta:.17g}", f"{p.eta:.17g}"]
            + [f"{v:.17g}" for v in (p.R1, p.R2, p.R0, p.Rt, p.Rr, p.D1, p.D2)]
            + [str(p.pixels)]
        )
    return buf.getvalue()


def points_from_csv(text: str) -> list[GWRatePoint]:
    reader = csv.DictReader(io.StringIO(text))
    points = []
    for row in reader:
        points.append(
            GWRatePoint.from_dict(
                {
                    "arch": row["codec"], "beta": row["beta"], "eta": row["eta"],
                    "R1": row["R1"], "R2": row["R2"], "R0": row["R0"],
                    "Rt": row["Rt"], "Rr": row["Rr"],
                    "D1": row["D1"], "D2": row["D2"],
                    "pixels": row.get("pixels", 1),
                }
            )
        )
    return points


def points_to_curve(points: Sequence[GWRatePoint], rate_kind: str = "transmit",
                    per_pixel: bool = True) -> RDCurve:
    """Assemble an RDCurve from operating points at their mean distortions."""
    if rate_kind not in ("transmit", "receive", "common"):
        raise ValidationError(f"unknown rate kind {rate_kind!r}")
    rd_points = []
    for p in points:
        rate = {"transmit": p.Rt, "receive": p.Rr, "common": p.R0}[rate_kind]
        if per_pixel:
            rate /= p.pixels
        rd_points.append(RDPoint(rate=rate, distortion=p.mean_distortion, lagrange_s=0.0))
    return RDCurve(rd_points, tol=np.inf)


# --- BD-rate ------------------------------------------------------------------------

def bd_rate(reference: RDCurve, test: RDCurve, min_points: int = 4) -> float:
    """Bjontegaard delta rate of ``test`` against ``reference``, in percent.

    Monotone cubic (PCHIP) fit of log-rate against distortion, integrated
    over the overlapping distortion range; negative means the test curve
    needs less rate at equal distortion.
    """
    def prepare(curve: RDCurve):
        d = curve.distortions
        r = curve.rates
        if len(d) < min_points:
            raise ValidationError(f"BD-rate needs >= {min_points} points, got {len(d)}")
        if np.any(r <= 0):
            raise ValidationError("BD-rate needs strictly positive rates")
        order = np.argsort(d)
        d, r = d[order], r[order]
        keep = np.concatenate([[True], np.diff(d) > 1e-15])
        return d[keep], np.log(r[keep])

    d_ref, logr_ref = prepare(reference)
    d_test, logr_test = prepare(test)
    lo = max(d_ref.min(), d_test.min())
    hi = min(d_ref.max(), d_test.max())
    if hi <= lo:
        raise ValidationError(
            f"no distortion overlap: reference [{d_ref.min()}, {d_ref.max()}] vs "
            f"test [{d_test.min()}, {d_test.max()}]"
        )
    samples = np.linspace(lo, hi, 200)
    fit_ref = PchipInterpolator(d_ref, logr_ref)(samples)
    fit_test = PchipInterpolator(d_test, logr_test)(samples)
    avg_log_diff = np.trapezoid(fit_test - fit_ref, samples) / (hi - lo)
    return float((np.exp(avg_log_diff) - 1.0) * 100.0)


def bd_rate_matrix(points_by_arch: dict[str, Sequence[GWRatePoint]],
                   rate_kinds: tuple[str, ...] = ("transmit", "receive")) -> dict:
    """All-pairs BD-rates keyed (reference arch, test arch, rate kind)."""
    matrix = {}
    for kind in rate_kinds:
        curves = {
            arch: points_to_curve(pts, kind)
            for arch, pts in points_by_arch.items()
            if any(
                (p.Rt if kind == "transmit" else p.Rr if kind == "receive" else p.R0) > 0
                for p in pts
            )
        }
        for ref_arch, ref_curve in curves.items():
            for test_arch, test_curve in curves.items():
                if ref_arch == test_arch:
                    continue
                try:
                    value = bd_rate(ref_curve, test_curve)
                except ValidationError:
                    continue
                matrix[(ref_arch, test_arch, kind)] = value
    return matrix


# --- empirical mutual information ----------------------------------------------------

@dataclass(frozen=True)
class MIEstimate:
    distortion: float
    mi: float
    extrapolated: bool


def _interp_with_flag(curve: RDCurve, query: np.ndarray):
    d = curve.distortions
    r = curve.rates
    order = np.argsort(d)
    d, r = d[order], r[order]
    inside = (query >= d[0]) & (query <= d[-1])
    values = np.interp(query, d, r)
    # linear extrapolation from the edge segments outside the support
    if len(d) >= 2:
        left_slope = (r[1] - r[0]) / (d[1] - d[0])
        right_slope = (r[-1] - r[-2]) / (d[-1] - d[-2])
        values = np.where(query < d[0], r[0] + (query - d[0]) * left_slope, values)
        values = np.where(query > d[-1], r[-1] + (query - d[-1]) * right_slope, values)
    return values, ~inside


def empirical_mi(joint_curve: RDCurve, marg1: RDCurve, marg2: RDCurve,
                 queries: Sequence[float] | None = None) -> list[MIEstimate]:
    """I-hat(D) = R1(D) + R2(D) - Rjoint(D) at matched distortion values.

    Queries default to the union of the three curves' distortion values;
    points outside any curve's support are linearly extrapolated and
    flagged.
    """
    for name, curve in (("joint", joint_curve), ("marg1", marg1), ("marg2", marg2)):
        if len(curve) < 2:
            raise ValidationError(f"{name} curve needs >= 2 points")
    if queries is None:
        queries = np.unique(
            np.concatenate([joint_curve.distortions, marg1.distortions, marg2.distortions])
        )
    queries = np.asarray(list(queries), dtype=np.float64)
    lo = max(c.distortions.min() for c in (joint_curve, marg1, marg2))
    hi = min(c.distortions.max() for c in (joint_curve, marg1, marg2))
    if hi < lo:
        raise ValidationError("curves share no distortion overlap")
    vj, fj = _interp_with_flag(joint_curve, queries)
    v1, f1 = _interp_with_flag(marg1, queries)
    v2, f2 = _interp_with_flag(marg2, queries)
    return [
        MIEstimate(float(q), float(a + b - j), bool(x or y or z))
        for q, j, a, b, x, y, z in zip(queries, vj, v1, v2, fj, f1, f2)
    ]


def mi_estimates_to_csv(estimates: Sequence[MIEstimate]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["distortion", "mi_bits", "extrapolated"])
    for e in estimates:
        writer.writerow([f"{e.distortion:.17g}", f"{e.mi:.17g}",
                         "true" if e.extrapolated else "false"])
    return buf.getvalue()


# --- theory comparison -----------------------------------------------------------------

def compare_to_theory(
    points: Sequence[GWRatePoint],
    ba_curve: RDCurve,
    rate_kind: str = "transmit",
    distortion_map: Callable[[float], float] = lambda d: d * d,
) -> list[dict]:
    """Per-point gap between codec rate (bpp) and the BA bound at matched distortion.

    ``distortion_map`` converts task distortions to the BA curve's distortion
    units (squared error by default, matching RMSE task losses).
    """
    rows = []
    d_axis = ba_curve.distortions
    for p in points:
        d = 0.5 * (distortion_map(p.D1) + distortion_map(p.D2))
        theoretical = ba_curve.rate_at(d)
        clipped = bool(d < d_axis.min() or d > d_axis.max())
        empirical = p.bpp_t if rate_kind == "transmit" else p.bpp_r
        rows.append(
            {
                "arch": p.arch,
                "beta": p.beta,
                "eta": p.eta,
                "distortion": d,
                "empirical_rate": empirical,
                "theoretical_rate": theoretical,
                "gap": empirical - theoretical,
                "clipped": clipped,
            }
        )
    return rows
