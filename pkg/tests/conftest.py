from pathlib import Path

import numpy as np
import pytest

from stocknet.ingest import MinuteBarSeries, aggregate_by_manager
from stocknet.network import build_bipartite, filter_edges, project
from stocknet.synthetic import make_market
from stocknet.timeseries import day_changes


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def market():
    return make_market(seed=0)


@pytest.fixture(scope="session")
def market_bipartite(market):
    return build_bipartite(aggregate_by_manager(market.holdings))


@pytest.fixture(scope="session")
def market_network(market_bipartite):
    return filter_edges(project(market_bipartite), 0.94)


@pytest.fixture(scope="session")
def market_changes(market):
    series = [MinuteBarSeries(s, market.trade_date, market.prices(s), market.prev_close[s])
              for s in market.stocks]
    return day_changes(series)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance check and return the flag."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
