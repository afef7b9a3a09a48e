import math
import time

import numpy as np
import pytest

from obflow.chartlab import CATALOG, ChartDomainError, ChartMetric, chart_eval
from obflow.grid import DIM

MEMBERS = ("Gamma", "Rm", "Rc", "R", "A", "W", "C", "B", "O", "Ohat", "Q", "lapR")


def _pt_norm(b, T):
    """|T|_g at the chart point, every slot covariant."""
    gi = b.ginv
    S = T
    for k in range(T.ndim):
        S = np.moveaxis(np.tensordot(gi, S, axes=([1], [k])), 0, k)
    return math.sqrt(max(float(np.sum(T * S)), 0.0))


@pytest.fixture(scope="module")
def sphere():
    return chart_eval(ChartMetric.sphere_stereographic(1.0), (0.0, 0.0, 0.0, 0.0), 1e-2)


def test_flat_chart_exactly_zero():
    b = chart_eval(ChartMetric.flat(), (0.3, -1.0, 2.0, 0.5))
    for name in MEMBERS:
        assert np.abs(b.fields[name]).max() <= 1e-12, name


def test_constant_conformal_chart_zero():
    b = chart_eval(ChartMetric.constant_conformal(3.0), (0.1, 0.2, 0.3, 0.4))
    for name in MEMBERS:
        assert np.abs(b.fields[name]).max() <= 1e-12, name


def test_unit_sphere_exact_values(sphere):
    b = sphere
    assert float(b.R) == pytest.approx(12.0, rel=1e-6)
    assert float(b.Q) == pytest.approx(6.0, rel=1e-6)
    assert _pt_norm(b, b.Rc - 3 * b.g) <= 1e-6 * 6
    assert _pt_norm(b, b.A - 0.5 * b.g) <= 1e-6
    for name in ("C", "W", "B", "O"):
        assert _pt_norm(b, b.fields[name]) <= 1e-6, name


def test_sphere_ricci_norm_and_trace(sphere):
    b = sphere
    assert _pt_norm(b, b.Rc) == pytest.approx(6.0, rel=1e-6)
    assert float(np.einsum("ij,ij->", b.ginv, b.Rc)) == pytest.approx(float(b.R), rel=1e-12)


def test_sphere_grad_r_and_laplacian_vanish(sphere):
    assert abs(float(sphere.lapR)) <= 1e-5


@pytest.mark.parametrize("radius", [0.5, 2.0])
def test_sphere_radius_scaling(radius):
    b = chart_eval(ChartMetric.sphere_stereographic(radius), (0.1, 0.0, -0.1, 0.2))
    K = 1 / radius**2
    assert float(b.R) == pytest.approx(12 * K, rel=1e-6)
    assert float(b.Q) == pytest.approx(6 * K**2, rel=1e-6)


def test_einstein_product_has_zero_bach_and_einstein_q():
    b = chart_eval(ChartMetric.product_spheres(1.0, 1.0), (math.pi / 2, 0.3, math.pi / 2, 1.0))
    assert b.norm("B") <= 1e-6
    # Rc = g, so Q = (2/3) lambda^2 with lambda = 1
    assert float(b.Q) == pytest.approx(2.0 / 3.0, rel=1e-6)


def test_non_einstein_product_control():
    b = chart_eval(ChartMetric.product_spheres(1.0, 2.0), (math.pi / 2, 0.3, math.pi / 2, 1.0))
    assert b.norm("B") > 10 * 1e-6


def test_conformally_flat_chart_has_zero_weyl_and_bach():
    b = chart_eval(ChartMetric.conformally_flat(amplitude=0.2, wavevector=(1, 0.5, 0, 0)), (0.1, 0.2, 0.3, 0.4))
    assert b.norm("Rm") > 0.1
    assert b.norm("W") <= 1e-6 and b.norm("B") <= 1e-6


def test_conformally_flat_with_callable_factor():
    chart = ChartMetric.conformally_flat(u=lambda x: 0.1 * x[0] * x[1])
    b = chart_eval(chart, (0.2, 0.1, 0.0, 0.0))
    assert b.norm("W") <= 1e-6


@pytest.mark.parametrize("p,order", [(2, 3), (4, 5)])
def test_richardson_convergence_order(p, order):
    chart = ChartMetric.sphere_stereographic(1.0)
    pt = (0.3, -0.2, 0.1, 0.25)
    errs = [abs(float(chart_eval(chart, pt, h, p).Q) - 6.0) for h in (0.1, 0.05)]
    assert math.log2(errs[0] / errs[1]) >= order


def test_runtime_is_small():
    t0 = time.perf_counter()
    chart_eval(ChartMetric.sphere_stereographic(), (0.0,) * DIM)
    assert time.perf_counter() - t0 < 1.0


def test_domain_and_margin_errors():
    with pytest.raises(ChartDomainError):
        chart_eval(ChartMetric.product_spheres(), (0.5, 0.0, math.pi / 2, 0.0))
    with pytest.raises(ChartDomainError):
        chart_eval(ChartMetric.product_spheres(), (0.8, 0.0, math.pi / 2, 0.0))
    with pytest.raises(ValueError):
        chart_eval(ChartMetric.flat(), (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ChartMetric("torus")
    with pytest.raises(ValueError):
        ChartMetric.constant_conformal(-1.0)


def test_catalog_lists_all_kinds():
    assert set(CATALOG) == {"flat", "constant_conformal", "conformally_flat", "sphere_stereographic", "product_spheres"}
