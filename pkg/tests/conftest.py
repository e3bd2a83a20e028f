import pytest

from rnp.laplace import FeeMode
from rnp.model import LogCoords, MarketParams, NormalizedPosition
from rnp.montecarlo import McConfig, simulate_exits

# the two-boundary Monte Carlo setup used throughout: S0=1, sigma=0.6, mu=0, r=0.04, (0.8, 1.2)
FIG2_POS = NormalizedPosition(0.8, 1.2)
FIG2_MARKET = MarketParams(mu=0.0, sigma=0.6, r=0.04, fee_annual=0.0)
FIG2_MC = McConfig(paths=100_000, dt=1e-4, seed=7)

TABLE1 = MarketParams(mu=0.0, sigma=0.7, r=0.05, fee_annual=0.2)
TABLE2 = MarketParams(mu=0.0, sigma=0.4, r=0.05, fee_annual=0.04)
RANGE = NormalizedPosition(0.8, 1.2)

MODES = [FeeMode.CONTINUOUS, FeeMode.AT_CLOSE]


def coords(ap: float, bp: float, mu_prime: float) -> LogCoords:
    """Log coordinates with the current point at the origin."""
    return LogCoords(0.0, -ap, bp, ap, bp, mu_prime)


@pytest.fixture(scope="session")
def fig2_sample():
    """One 10^5-path simulation shared by every test that needs the Fig. 2 market."""
    return simulate_exits(1.0, 0.8, 1.2, FIG2_MARKET, FIG2_MC)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    if acceptance is None or not acceptance.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
