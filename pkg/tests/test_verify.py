import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

import socialav.verify as verify
from socialav.nn import MIN_COORDS, Tensor, grad_check, square, tsum
from socialav.verify import CHAIN_TOLERANCE, LAYER_TOLERANCE, SUITE, GradCheckResult, run_grad_checks


def test_suite_covers_every_block():
    assert [name for name, _, _ in SUITE] == ["linear", "gru", "attention", "vae_chain", "policy_stack"]


def test_all_blocks_pass():
    results = run_grad_checks(seed=0, coords_per_tensor=8)
    for r in results:
        assert r.passed, f"{r.name}: {r.max_relative_error:.3e} > {r.tolerance:.0e}"
    tolerances = {r.name: r.tolerance for r in results}
    assert tolerances["linear"] == LAYER_TOLERANCE
    assert tolerances["policy_stack"] == CHAIN_TOLERANCE


@pytest.mark.parametrize("seed", [1, 2])
def test_other_seeds_pass(seed):
    assert all(r.passed for r in run_grad_checks(seed=seed, coords_per_tensor=4))


def test_result_threshold():
    assert GradCheckResult("x", 1e-5, 1e-4).passed
    assert not GradCheckResult("x", 2e-4, 1e-4).passed


def test_grad_check_on_exact_gradient():
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True, dtype=np.float64)
    err = grad_check(lambda: tsum(square(x)), [x], h=1e-5, coords_per_tensor=3, rng=np.random.default_rng(0))
    assert err < 1e-6


def test_grad_check_catches_a_missing_path():
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True, dtype=np.float64)

    def leaky() -> Tensor:
        # the second term reads x off the tape, so backprop misses it
        return tsum(square(x)) + tsum(Tensor(x.data.copy(), dtype=np.float64) * 3.0)

    err = grad_check(leaky, [x], h=1e-5, coords_per_tensor=3, rng=np.random.default_rng(0))
    assert err > 0.1


def test_large_tensors_sample_at_least_fifty_coordinates():
    x = Tensor(np.linspace(-1.0, 1.0, 200), requires_grad=True, dtype=np.float64)
    calls = []

    def fn() -> Tensor:
        calls.append(1)
        return tsum(square(x))

    grad_check(fn, [x], h=1e-5, rng=np.random.default_rng(0))
    sampled = (len(calls) - 1) // 2
    assert MIN_COORDS >= 50
    assert sampled == MIN_COORDS


def test_suite_default_sampling(monkeypatch):
    seen = []

    def record(fn, tensors, h, coords_per_tensor, rng):
        seen.append(coords_per_tensor)
        return 0.0

    monkeypatch.setattr(verify, "grad_check", record)
    verify.run_grad_checks(seed=0)
    assert len(seen) == len(SUITE)
    assert all(n >= 50 for n in seen)
