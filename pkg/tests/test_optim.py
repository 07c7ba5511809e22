"""Adam optimizer: hand-computed step oracles and state round trips."""

import math

import numpy as np
import pytest

from rtlab.tensor import Tensor
from rtlab.optim import Adam

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8  # standard constants, fixed here as oracle


def make_param(value=1.0):
    t = Tensor(np.array([value]))
    t.grad = np.zeros_like(t.data)
    return t


def reference_adam(p, g, lr, steps):
    """Straight-line reference of the update rule, independent of the module."""
    m = v = 0.0
    for t in range(1, steps + 1):
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + EPS)
    return p


def test_default_hyperparameters_match_oracle_constants():
    opt = Adam({"p": make_param()}, lr=0.1)
    assert (opt.state.beta1, opt.state.beta2, opt.state.eps) == (BETA1, BETA2, EPS)


def test_single_step_matches_reference():
    p = make_param(1.0)
    p.grad[:] = 0.5
    opt = Adam({"p": p}, lr=0.1)
    opt.step()
    assert p.data[0] == pytest.approx(reference_adam(1.0, 0.5, 0.1, 1), abs=1e-15)
    # bias correction makes the first step very close to -lr * sign(g)
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)


def test_three_steps_match_reference():
    p = make_param(2.0)
    opt = Adam({"p": p}, lr=0.01)
    for _ in range(3):
        p.grad[:] = -0.25
        opt.step()
        opt.zero_grad()
    assert p.data[0] == pytest.approx(reference_adam(2.0, -0.25, 0.01, 3), abs=1e-14)


def test_zero_grad_clears():
    p = make_param()
    p.grad[:] = 3.0
    opt = Adam({"p": p}, lr=0.1)
    opt.zero_grad()
    assert np.all(p.grad == 0.0)


def test_set_lr_takes_effect():
    p = make_param(0.0)
    opt = Adam({"p": p}, lr=1.0)
    opt.set_lr(1e-3)
    p.grad[:] = 1.0
    opt.step()
    assert abs(p.data[0]) < 1.1e-3


def test_per_group_scale():
    a, b = make_param(0.0), make_param(0.0)
    opt = Adam({"ext.w": a, "rec.w": b}, lr=1e-2)
    opt.set_scale("ext.", 0.1)
    a.grad[:] = 1.0
    b.grad[:] = 1.0
    opt.step()
    # both see the same unit gradient; the scaled group moves 10x less
    assert a.data[0] == pytest.approx(0.1 * b.data[0], rel=1e-9)


def test_moments_roundtrip_resumes_identically():
    rng = np.random.default_rng(0)
    p1 = make_param(1.5)
    p2 = make_param(1.5)
    opt1 = Adam({"p": p1}, lr=0.05)
    grads = rng.normal(size=10)
    for g in grads[:5]:
        p1.grad[:] = g
        opt1.step()

    blobs = opt1.moments()
    assert set(blobs) == {"adam.m.p", "adam.v.p"}
    opt2 = Adam({"p": p2}, lr=0.05)
    p2.data[:] = p1.data
    opt2.load_moments({k: v.copy() for k, v in blobs.items()},
                      step_count=opt1.state.step_count)

    for g in grads[5:]:
        p1.grad[:] = g
        opt1.step()
        p2.grad[:] = g
        opt2.step()
    assert np.array_equal(p1.data, p2.data)


def test_fresh_moments_differ_from_resumed():
    # dropping the moments changes the trajectory: the round trip above is
    # meaningful only if this negative control holds
    p1, p2 = make_param(1.5), make_param(1.5)
    opt1 = Adam({"p": p1}, lr=0.05)
    for g in (1.0, -1.0, 1.0):
        p1.grad[:] = g
        opt1.step()
    p2.data[:] = p1.data
    opt2 = Adam({"p": p2}, lr=0.05)  # fresh state
    p1.grad[:] = 0.3
    opt1.step()
    p2.grad[:] = 0.3
    opt2.step()
    assert not np.array_equal(p1.data, p2.data)
