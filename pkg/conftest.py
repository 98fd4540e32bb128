"""Hoppar över långsamma tester om inte RANDPROGNOS_LANGSAMMA=1"""

import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RANDPROGNOS_LANGSAMMA") == "1":
        return
    hoppa = pytest.mark.skip(reason="långsamt test, sätt RANDPROGNOS_LANGSAMMA=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(hoppa)
