import pytest
from hypothesis import HealthCheck, settings

from hamperturb.hydro import HydroSystem, RiemannChart
from hamperturb.jets import Metric
from hamperturb.kernel import Workspace
from hamperturb.parsing import parse_expr

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def ww_ws():
    return Workspace(["r", "v"], ["r > 0"])


@pytest.fixture(scope="session")
def ww_rws():
    return Workspace(["R1", "R2"], ["R1 > R2"])


@pytest.fixture(scope="session")
def ww_system(ww_ws):
    return HydroSystem(ww_ws, Metric([[0, 1], [1, 0]]),
                       parse_expr("-(1/2)*r*v^2 - (1/2)*r^2", ww_ws))


@pytest.fixture(scope="session")
def ww_chart(ww_system, ww_ws, ww_rws):
    P = parse_expr
    return RiemannChart(ww_system, ww_rws,
                        [P("v/2 + sqrt(r)", ww_ws), P("v/2 - sqrt(r)", ww_ws)],
                        [P("(R1 - R2)^2/4", ww_rws), P("R1 + R2", ww_rws)],
                        [P("-(3/2)*R1 - (1/2)*R2", ww_rws), P("-(1/2)*R1 - (3/2)*R2", ww_rws)])


@pytest.fixture(scope="session")
def diagonal3():
    """Three decoupled components ``u_t = u u_x``: speeds ``lambda_i = R_i``."""
    ws = Workspace(["u1", "u2", "u3"])
    rws = Workspace(["R1", "R2", "R3"])
    u = ws.symbols
    sys = HydroSystem(ws, Metric([[1, 0, 0], [0, 1, 0], [0, 0, 1]]),
                      sum(x ** 3 for x in u) / 6)
    ch = RiemannChart(sys, rws, list(u), list(rws.symbols), list(rws.symbols))
    return sys, ch
