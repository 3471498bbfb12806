import numpy as np

from reviewpt.autograd import Tensor
from reviewpt.optim import AdamState, adam_step, clip_grad_norm

RNG = np.random.default_rng(7)


def make_params():
    return {
        "w": Tensor(RNG.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(RNG.normal(size=4), requires_grad=True),
    }


def test_zero_grads_leave_params_unchanged():
    params = make_params()
    before = {k: p.data.copy() for k, p in params.items()}
    for p in params.values():
        p.zero_grad()
    state = AdamState(params, learning_rate=1e-2)
    adam_step(state, params)
    for k, p in params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert state.t == 1


def test_first_step_magnitude_is_learning_rate():
    # with m_hat/sqrt(v_hat) == sign(g), every update entry is ~lr
    params = make_params()
    lr = 3e-5
    for p in params.values():
        p.grad = np.sign(RNG.normal(size=p.shape)) * RNG.uniform(0.5, 1.5, p.shape)
    before = {k: p.data.copy() for k, p in params.items()}
    adam_step(AdamState(params, learning_rate=lr), params)
    for k, p in params.items():
        delta = np.abs(p.data - before[k])
        np.testing.assert_allclose(delta, lr, rtol=1e-6)


def test_constant_grads_move_monotonically_against_sign():
    params = {"w": Tensor(np.zeros(5), requires_grad=True)}
    g = np.array([1.0, -1.0, 2.0, -0.5, 3.0])
    state = AdamState(params, learning_rate=1e-3)
    prev = params["w"].data.copy()
    for _ in range(2):
        params["w"].grad = g.copy()
        adam_step(state, params)
        step = params["w"].data - prev
        assert np.all(np.sign(step) == -np.sign(g))
        prev = params["w"].data.copy()


def test_zero_learning_rate_is_identity():
    params = make_params()
    for p in params.values():
        p.grad = RNG.normal(size=p.shape)
    before = {k: p.data.copy() for k, p in params.items()}
    adam_step(AdamState(params, learning_rate=0.0), params)
    for k, p in params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_grads_untouched_by_step():
    params = make_params()
    grads = {}
    for k, p in params.items():
        p.grad = RNG.normal(size=p.shape)
        grads[k] = p.grad.copy()
    adam_step(AdamState(params, learning_rate=1e-3), params)
    for k, p in params.items():
        np.testing.assert_array_equal(p.grad, grads[k])


def test_step_counter_increments_by_one():
    params = make_params()
    state = AdamState(params)
    for p in params.values():
        p.zero_grad()
    for expected in (1, 2, 3):
        adam_step(state, params)
        assert state.t == expected


def test_clip_grad_norm_scales_to_bound():
    params = make_params()
    for p in params.values():
        p.grad = np.full(p.shape, 10.0)
    norm = clip_grad_norm(params, 1.0)
    assert norm > 1.0
    total = sum(float((p.grad**2).sum()) for p in params.values())
    assert abs(np.sqrt(total) - 1.0) < 1e-6
