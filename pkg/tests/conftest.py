import time

import pytest

from shardsim.config import config_from_dict


def small_config(**overrides):
    """A small, fast scenario; nested sections are merged shallowly."""
    raw = {
        "nodes": 4,
        "duration": 120,
        "bucket_width": 10,
        "seed": 11,
        "workload": {"key_count": 1000, "zipf_exponent": 1.1, "base_rate": 20},
        "node": {"capacity": 10},
        "sharding": {"rebalance_interval": 30},
        "windows": {"hot_window": 60, "warm_window": 600},
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k] = {**raw[k], **v}
        else:
            raw[k] = v
    return config_from_dict(raw)


@pytest.fixture
def make_config():
    return small_config


# --- acceptance reporting --------------------------------------------------

ACCEPTANCE: list[tuple[str, bool, str]] = []
_SESSION_START = time.perf_counter()


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(label, passed, detail)."""
    def record(label: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((label, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - _SESSION_START
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE:
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    tr.write_line(f"[{'PASS' if elapsed < 300 else 'FAIL'}] 10b session wall time: {elapsed:.1f} s (< 300 s)")
