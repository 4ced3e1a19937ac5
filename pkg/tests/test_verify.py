"""The randomised property driver itself."""

from lognpu.dataflow import LayerConfig
from lognpu.grid import wiring_fault
from lognpu.verify import check_config, random_config, run_verify

import numpy as np


def test_random_configs_are_deterministic():
    a = [random_config(np.random.default_rng(5)) for _ in range(3)]
    b = [random_config(np.random.default_rng(5)) for _ in range(3)]
    assert a == b


def test_seed_1_passes():
    rep = run_verify(seed=1, trials=15)
    assert rep.passed and rep.minimized is None


def test_fault_is_caught_and_minimized():
    rep = run_verify(seed=1, trials=10, fault=wiring_fault())
    assert not rep.passed
    t, seed, res = rep.failures[0]
    assert any("mismatch" in p for p in res.problems)
    m = rep.minimized
    assert m.in_w * m.in_h * m.in_c <= res.cfg.in_w * res.cfg.in_h * res.cfg.in_c


def test_check_config_with_invariants():
    assert check_config(LayerConfig(3, 1, 6, 12, 1, 1), seed=3).ok
