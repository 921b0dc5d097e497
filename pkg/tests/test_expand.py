import pytest

from pded.equation import parse_equation
from pded.expand import expand_terms, monomial_terms


def expand(text, lib):
    _, terms = parse_equation(text, lib)
    return expand_terms([t for _, t in terms], [c for c, _ in terms])


def test_derivative_of_square(lib):
    got = expand("u_t = 0.096*u_xx - 0.486*(u^2)_x", lib)
    assert got.keys() == {"u_xx", "u*u_x"}
    assert got["u*u_x"] == pytest.approx(-0.972)
    assert got["u_xx"] == pytest.approx(0.096)


def test_nonlinear_diffusion(lib):
    got = expand("u_t = 0.02*(u^2)_xx + 10*u - 10*u^2", lib)
    assert got == pytest.approx({"u_x^2": 0.04, "u*u_xx": 0.04, "u": 10.0, "u^2": -10.0})


def test_cancellation_and_division(lib):
    assert expand("u_t = (u + x - x)_x", lib) == {"u_x": 1.0}
    assert expand("u_t = 2*(u^2/u)", lib) == {"u": 2.0}
    assert expand("u_t = u - u", lib) == {}


def test_product_rule_with_coordinate(lib):
    assert expand("u_t = (x*u)_x", lib) == pytest.approx({"u": 1.0, "u_x*x": 1.0})


def test_monomials_parse_back(lib):
    exp = expand("u_t = (u^2)_xx + u^3", lib)
    terms = monomial_terms(exp, lib)
    assert sorted(str(t) for t in terms) == sorted(["(u_x)^2", "u*u_xx", "u^3"])
    assert monomial_terms({"u^4": 1.0}, lib) is None
