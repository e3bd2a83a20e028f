import csv
import io
import math

import pytest

from rnp.greeks import (
    BumpConfig,
    BumpError,
    GreeksTable,
    american_model,
    european_model,
    fd_greeks,
    greeks_rows,
    greeks_table,
    write_greeks_csv,
)
from rnp.laplace import FeeMode
from rnp.model import lp_payoff_v3, payoff_greeks
from rnp.pricer import OptimizerConfig

from conftest import RANGE, TABLE1, TABLE2

FAST = OptimizerConfig(grid_n=16)


def payoff_model(p, sigma, r):
    return lp_payoff_v3(p, RANGE)


@pytest.mark.parametrize("p", [0.5, 0.85, 1.0, 1.15, 1.5])
def test_fd_matches_analytic_payoff(p):
    g = fd_greeks(payoff_model, p, 0.7, 0.05)
    ref = payoff_greeks(p, RANGE)
    assert g.delta == pytest.approx(ref.delta, abs=1e-5)
    assert g.gamma == pytest.approx(ref.gamma, abs=1e-5)
    assert g.vega == 0.0 and g.rho == 0.0


@pytest.mark.parametrize("mode", list(FeeMode))
@pytest.mark.parametrize("p", [0.9, 1.0, 1.1])
def test_european_gamma_is_derivative_of_delta(mode, p):
    model = european_model(RANGE, TABLE1, mode)
    k = 1e-3
    up = fd_greeks(model, p + k, 0.7, 0.05).delta
    dn = fd_greeks(model, p - k, 0.7, 0.05).delta
    gamma = fd_greeks(model, p, 0.7, 0.05).gamma
    assert gamma == pytest.approx((up - dn) / (2 * k), rel=1e-4)


def test_delta_second_order_convergence():
    model = european_model(RANGE, TABLE1, FeeMode.CONTINUOUS)
    d = [fd_greeks(model, 1.0, 0.7, 0.05, BumpConfig(h_spot_rel=h)).delta for h in (2e-3, 1e-3, 5e-4)]
    richardson = abs(d[1] - d[0]) / 3
    assert abs(d[2] - d[1]) < 4 * richardson


def test_rho_and_vega_against_wide_steps():
    model = european_model(RANGE, TABLE1, FeeMode.AT_CLOSE)
    g = fd_greeks(model, 1.0, 0.7, 0.05)
    h = 1e-3
    vega = (model(1.0, 0.7 + h, 0.05) - model(1.0, 0.7 - h, 0.05)) / (2 * h)
    rho = (model(1.0, 0.7, 0.05 + h) - model(1.0, 0.7, 0.05 - h)) / (2 * h)
    assert g.vega == pytest.approx(vega, rel=1e-4)
    assert g.rho == pytest.approx(rho, rel=1e-4)


def test_rate_at_zero_uses_one_sided():
    model = european_model(RANGE, TABLE1.replace(r=0.0), FeeMode.AT_CLOSE)
    g = fd_greeks(model, 1.0, 0.7, 0.0)
    assert "rate_one_sided" in g.flags
    assert math.isfinite(g.rho)


def test_boundary_clipped_near_bound():
    model = european_model(RANGE, TABLE1, FeeMode.AT_CLOSE)
    g = fd_greeks(model, 1.2 - 1e-5, 0.7, 0.05, live=(0.8, 1.2))
    assert "boundary_clipped" in g.flags
    assert math.isfinite(g.delta)


def test_american_reproducible():
    model = american_model(RANGE, TABLE1, FeeMode.AT_CLOSE, OptimizerConfig(refine_tol=1e-10))
    a = fd_greeks(model, 1.0, 0.7, 0.05)
    b = fd_greeks(model, 1.0, 0.7, 0.05)
    for x, y in zip((a.pv, a.delta, a.gamma, a.vega, a.rho), (b.pv, b.delta, b.gamma, b.vega, b.rho)):
        assert abs(x - y) <= 1e-6


def test_bump_config_validation():
    for kw in ({"h_spot_rel": 0.0}, {"h_sigma": 0.1}, {"h_r": -1e-5}):
        with pytest.raises(ValueError):
            BumpConfig(**kw)


def test_model_failure_is_reported():
    def broken(p, sigma, r):
        if p > 1.0:
            raise ZeroDivisionError("boom")
        return p

    with pytest.raises(BumpError, match="spot bump"):
        fd_greeks(broken, 1.0, 0.5, 0.05)


@pytest.fixture(scope="module")
def tables():
    return greeks_table([("Table I", TABLE1), ("Table II", TABLE2)], RANGE, 1.0, opt=FAST)


class TestTable:
    def test_layout(self, tables):
        assert [t.title.split(":")[0] for t in tables] == ["Table I", "Table II"]
        for t in tables:
            assert [row.model for row in t.rows] == ["Payoff", "European", "American"]
            payoff = t.rows[0].report
            assert payoff.pv == pytest.approx(1.0, abs=1e-15)
            assert math.isnan(payoff.vega) and math.isnan(payoff.rho)

    def test_text_rendering(self, tables):
        text = tables[0].to_text()
        lines = text.splitlines()
        assert lines[1].split() == ["Model", "PV", "Delta", "Gamma", "Vega", "Rho"]
        payoff = lines[2].split()
        assert payoff[:2] == ["Payoff", "1.000"]
        assert payoff[-2:] == ["nan", "nan"]

    def test_american_not_below_european(self, tables):
        for t in tables:
            assert t.rows[2].report.pv >= t.rows[1].report.pv - 1e-9

    def test_table2_american_above_european(self, tables):
        assert tables[1].rows[2].report.pv > tables[1].rows[1].report.pv

    def test_csv(self, tables, tmp_path):
        path = tmp_path / "greeks.csv"
        write_greeks_csv(tables, path)
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["model", "pv", "delta", "gamma", "vega", "rho"]
        assert rows[1][0] == "Table I/Payoff"
        assert rows[1][4:] == ["nan", "nan"]
        assert len(rows) == 7

    def test_csv_single_table_to_stream(self):
        rows = greeks_rows(RANGE, TABLE2, 1.0, FeeMode.AT_CLOSE, opt=FAST)
        buf = io.StringIO()
        write_greeks_csv([GreeksTable("x", rows)], buf)
        assert buf.getvalue().splitlines()[1].startswith("Payoff,1.0,")
