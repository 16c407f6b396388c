import numpy as np
import pytest

from gwn import evaluation as ev
from gwn.errors import ValidationError
from gwn.rate_distortion import RDCurve, RDPoint


def make_point(arch="shared", r0=1.0, r1=2.0, r2=3.0, d1=0.1, d2=0.2, eta=0.1, beta=1.0):
    return ev.GWRatePoint.from_channel_rates(
        arch=arch, beta=beta, eta=eta, r0=r0, r1=r1, r2=r2, d1=d1, d2=d2, pixels=4
    )


def curve(pairs):
    return RDCurve([RDPoint(rate=r, distortion=d, lagrange_s=0.0) for d, r in pairs],
                   tol=np.inf)


class TestGWRatePoint:
    def test_identities_hold_exactly(self):
        p = make_point(r0=0.1, r1=0.2, r2=0.3)
        assert p.Rt == p.R0 + p.R1 + p.R2
        assert p.Rr == 2 * p.R0 + p.R1 + p.R2

    def test_broken_identity_rejected(self):
        with pytest.raises(ValidationError):
            ev.GWRatePoint(
                arch="shared", beta=1.0, eta=0.1,
                R1=1.0, R2=1.0, R0=1.0, Rt=3.5, Rr=4.0, D1=0.1, D2=0.1,
            )

    def test_csv_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        points = [
            make_point(r0=rng.random(), r1=rng.random(), r2=rng.random(),
                       d1=rng.random(), d2=rng.random())
            for _ in range(5)
        ]
        text = ev.points_to_csv(points)
        back = ev.points_from_csv(text)
        for a, b in zip(points, back):
            assert a.R0 == b.R0 and a.Rt == b.Rt and a.Rr == b.Rr
            assert a.D1 == b.D1 and a.D2 == b.D2

    def test_csv_schema(self):
        text = ev.points_to_csv([make_point()])
        assert text.splitlines()[0] == "codec,beta,eta,R1,R2,R0,Rt,Rr,D1,D2,pixels"

    def test_bpp_scaling(self):
        p = make_point(r0=4.0, r1=4.0, r2=0.0)
        assert p.bpp_t == pytest.approx(2.0)
        assert p.bpp_r == pytest.approx(3.0)


class TestBDRate:
    def test_identical_curves_zero(self):
        c = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0), (0.4, 1.0)])
        assert ev.bd_rate(c, c) == pytest.approx(0.0, abs=1e-12)

    def test_halved_rates_minus_fifty(self):
        ref = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0), (0.4, 1.0)])
        test = curve([(0.1, 4.0), (0.2, 2.0), (0.3, 1.0), (0.4, 0.5)])
        assert ev.bd_rate(ref, test) == pytest.approx(-50.0, abs=1e-9)

    def test_doubled_rates_plus_hundred(self):
        ref = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0), (0.4, 1.0)])
        test = curve([(0.1, 16.0), (0.2, 8.0), (0.3, 4.0), (0.4, 2.0)])
        assert ev.bd_rate(ref, test) == pytest.approx(100.0, abs=1e-9)

    def test_reciprocal_consistency(self):
        rng = np.random.default_rng(1)
        a = curve([(d, float(r)) for d, r in zip(np.linspace(0.1, 0.5, 6),
                                                 np.sort(rng.uniform(1, 10, 6))[::-1])])
        b = curve([(d, float(r)) for d, r in zip(np.linspace(0.12, 0.48, 6),
                                                 np.sort(rng.uniform(1, 10, 6))[::-1])])
        ab = ev.bd_rate(a, b)
        ba = ev.bd_rate(b, a)
        assert (1 + ab / 100) * (1 + ba / 100) == pytest.approx(1.0, abs=1e-6)

    def test_too_few_points(self):
        c = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0), (0.4, 1.0)])
        short = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0)])
        with pytest.raises(ValidationError):
            ev.bd_rate(c, short)

    def test_no_overlap_rejected(self):
        a = curve([(0.1, 8.0), (0.2, 4.0), (0.3, 2.0), (0.4, 1.0)])
        b = curve([(1.1, 8.0), (1.2, 4.0), (1.3, 2.0), (1.4, 1.0)])
        with pytest.raises(ValidationError, match="overlap"):
            ev.bd_rate(a, b)


class TestEmpiricalMI:
    def test_sum_of_marginals_gives_zero(self):
        m1 = curve([(0.1, 4.0), (0.2, 3.0), (0.3, 2.0), (0.4, 1.0)])
        m2 = curve([(0.1, 2.0), (0.2, 1.5), (0.3, 1.0), (0.4, 0.5)])
        joint = curve([(0.1, 6.0), (0.2, 4.5), (0.3, 3.0), (0.4, 1.5)])
        for est in ev.empirical_mi(joint, m1, m2):
            assert est.mi == pytest.approx(0.0, abs=1e-12)

    def test_order_invariance(self):
        pts = [(0.1, 5.0), (0.3, 2.0), (0.2, 3.0), (0.4, 1.0)]
        m = curve(pts)
        j = curve([(d, r + 0.5) for d, r in pts])
        a = ev.empirical_mi(j, m, m)
        b = ev.empirical_mi(j, curve(list(reversed(pts))), m)
        assert [(e.distortion, e.mi) for e in a] == [(e.distortion, e.mi) for e in b]

    def test_extrapolation_flagged(self):
        m1 = curve([(0.2, 4.0), (0.3, 3.0)])
        m2 = curve([(0.2, 2.0), (0.3, 1.0)])
        joint = curve([(0.1, 6.0), (0.4, 1.0)])
        estimates = ev.empirical_mi(joint, m1, m2, queries=[0.1, 0.25, 0.4])
        flags = {round(e.distortion, 2): e.extrapolated for e in estimates}
        assert flags[0.1] and flags[0.4]
        assert not flags[0.25]

    def test_positive_mi_for_sub_additive_joint(self):
        m1 = curve([(0.1, 4.0), (0.2, 3.0), (0.3, 2.0)])
        m2 = curve([(0.1, 4.0), (0.2, 3.0), (0.3, 2.0)])
        joint = curve([(0.1, 5.0), (0.2, 4.0), (0.3, 2.5)])
        for est in ev.empirical_mi(joint, m1, m2):
            assert est.mi > 0


class TestCompareToTheory:
    def test_gap_sign_and_clipping(self):
        ba = curve([(0.0, 3.0), (1.0, 2.0), (4.0, 1.0), (9.0, 0.0)])
        inside = make_point(r0=8.0, r1=0.0, r2=0.0, d1=1.0, d2=1.0)  # bpp_t = 2
        rows = ev.compare_to_theory([inside], ba)
        assert rows[0]["distortion"] == pytest.approx(1.0)
        assert rows[0]["gap"] == pytest.approx(2.0 - 2.0)
        assert not rows[0]["clipped"]
        outside = make_point(r0=8.0, r1=0.0, r2=0.0, d1=4.0, d2=4.0)
        assert ev.compare_to_theory([outside], ba)[0]["clipped"]

    def test_bd_matrix_keys(self):
        pts_a = [make_point(arch="shared", r0=r, d1=d, d2=d)
                 for r, d in ((8, 0.1), (4, 0.2), (2, 0.3), (1, 0.4))]
        pts_b = [make_point(arch="joint", r0=2 * r, r1=0.0, r2=0.0, d1=d, d2=d)
                 for r, d in ((8, 0.1), (4, 0.2), (2, 0.3), (1, 0.4))]
        matrix = ev.bd_rate_matrix({"shared": pts_a, "joint": pts_b})
        assert ("shared", "joint", "transmit") in matrix
        assert ("joint", "shared", "receive") in matrix
