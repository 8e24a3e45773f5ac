import numpy as np
import pytest

from subsol.model import ConvexQuadratic, InitialLaw, LinearConvexProblem, NoiseModel

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def quad1(Q, q=0.0, q0=0.0) -> ConvexQuadratic:
    """1-d quadratic Q x^2 + q x + q0."""
    return ConvexQuadratic([[Q]], [q], q0)


def scalar_problem(x0=0.0, *, h=0.1, T=None, N=1, r=1.0, c=0.0, a=0.0, b=1.0, F=None, fbar=None,
                   sigma=None, name="toy-1d"):
    """1-d instance with F = x^2 unless given; ``sigma`` switches on Rademacher noise."""
    kw = {}
    if sigma is not None:
        kw = dict(C=np.array([[sigma]]), noise=NoiseModel.rademacher(1))
    return LinearConvexProblem(A=np.array([[a]]), B=np.array([[b]]), h=h, T=h * N if T is None else T,
                               r=r, c=c, state_cost=fbar or ConvexQuadratic.zero(1),
                               terminal_cost=F or quad1(1.0), initial_law=InitialLaw.dirac([x0]),
                               name=name, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
