import json
from types import SimpleNamespace

import numpy as np
import pytest

from distobs import build_report, classify
from distobs.cli import bundled_example, parse_config

ACCEPTANCE_LINES = []


def load_example():
    with open(bundled_example()) as fh:
        doc = json.load(fh)
    cfg = parse_config(doc)
    cls = classify(cfg.system, cfg.outputs)
    report = build_report(cfg.system, cfg.outputs, cfg.network, cls)
    return SimpleNamespace(doc=doc, cfg=cfg, system=cfg.system, outputs=cfg.outputs,
                           net=cfg.network, cls=cls, report=report,
                           gains=dict(cfg.gains), L_d=dict(cfg.L_d))


@pytest.fixture(scope="session")
def ex():
    return load_example()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_bank(ex, strategy, gains=None, L_d="example", system=None):
    from distobs import build_observers
    return build_observers(system or ex.system, ex.outputs, ex.net, ex.cls, strategy,
                           ex.gains if gains is None else gains,
                           L_overrides=ex.L_d if L_d == "example" else L_d)
