import numpy as np
import pytest

from tokpress.model import TokenSet


def make_tokens(data, frames=1, grid=None, weights=None, token_ids=None) -> TokenSet:
    data = np.asarray(data, dtype=np.float32)
    if grid is None:
        grid = (1, data.shape[0] // frames)
    return TokenSet(data=data, frames=frames, grid=grid, token_ids=token_ids, weights=weights)


@pytest.fixture
def tokens_factory():
    return make_tokens


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "xfailed", "xpassed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_" not in nodeid:
                continue
            name = nodeid.split("::test_", 1)[1]
            lines.append((name, outcome))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    by_criterion: dict[str, list[str]] = {}
    for name, outcome in lines:
        base = name.split("[")[0]
        by_criterion.setdefault(base, []).append(outcome)
    for criterion, outcomes in sorted(by_criterion.items()):
        bad = [o for o in outcomes if o in ("failed", "error", "xpassed")]
        known = [o for o in outcomes if o == "xfailed"]
        status = "FAIL" if bad else "PASS"
        note = f" ({len(known)} known-inconsistent row(s) xfailed)" if known else ""
        terminalreporter.write_line(f"[{status}] {criterion}{note}")
