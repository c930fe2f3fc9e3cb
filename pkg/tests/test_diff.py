import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from ecco import diff
from ecco.diff import AdamState, Parameter, Tape, adam_step, check_gradients, full_grads
from ecco.gradcheck import case_cts_conv

seeds = st.integers(0, 2**32 - 1)


def test_linear_loss_gradient_is_input():
    c = Parameter(np.array(3.0), "c")
    x = np.array(2.5)
    with Tape() as tape:
        loss = diff.mul(c, x)
    assert tape.backward(loss)[c] == pytest.approx(2.5)


def test_loss_not_on_tape():
    p = Parameter(np.ones(2), "p")
    with Tape():
        loss = diff.total(diff.square(p))
    with pytest.raises(ValueError):
        Tape().backward(loss)


def test_untracked_loss_has_no_gradients():
    with Tape() as tape:
        loss = diff.total(diff.const(np.ones(3)))
    assert tape.backward(loss) == {}


def test_zero_loss_gives_zero_gradients():
    loss_fn, params = case_cts_conv(0)
    f = params[-1]
    f.value[:] = 0.0
    with Tape() as tape:
        loss = loss_fn()
    assert float(loss.value) == 0.0
    grads = tape.backward(loss)
    for p in params:
        assert np.all(grads.get(p, np.zeros_like(p.value)) == 0.0)


def test_cts_conv_norm_gradient_matches_finite_differences():
    loss_fn, params = case_cts_conv(3)
    assert check_gradients(loss_fn, params, h=1e-5, max_entries=None) < 1e-4


@given(seeds)
def test_backward_is_linear_in_the_loss(seed):
    rng = np.random.default_rng(seed)
    w = Parameter(rng.normal(size=(3, 4)), "w")
    x = rng.normal(size=(5, 3))

    def l1():
        return diff.total(diff.square(diff.matmul(x, w)))

    def l2():
        return diff.total(diff.leaky_relu(diff.matmul(x, w)))

    with Tape() as t:
        a = l1()
    ga = t.backward(a)[w]
    with Tape() as t:
        b = l2()
    gb = t.backward(b)[w]
    with Tape() as t:
        c = diff.add(l1(), l2())
    gc = t.backward(c)[w]
    assert np.allclose(gc, ga + gb, atol=1e-10)


def _check(loss_fn, params):
    return check_gradients(loss_fn, params, h=1e-6, max_entries=None)


@given(seeds)
def test_primitive_gradients(seed):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(4, 2)), "b")
    c = Parameter(rng.uniform(0.5, 2.0, size=(3, 4)), "c")
    proj = rng.normal(size=(3, 2))
    m = sp.random(5, 3, density=0.6, random_state=seed % (2**31), format="csr")
    stack_w = rng.normal(size=(2, 3, 4))
    batched = Parameter(rng.normal(size=(2, 1, 4, 4)), "batched")
    r = rng.normal(size=(3, 4, 4))
    blocks = Parameter(rng.normal(size=(3, 4, 2)), "blocks")
    segs = ((2, 0, 1), (0, 1, 3))
    cases = [
        (lambda: diff.total(diff.mul(diff.matmul(a, b), proj)), [a, b]),
        (lambda: diff.total(diff.div(diff.mul(a, a), c)), [a, c]),
        (lambda: diff.total(diff.square(diff.sub(a, c))), [a, c]),
        (lambda: diff.mean(diff.spmm(m, diff.square(a))), [a]),
        (lambda: diff.total(diff.mul(diff.stack([a, c], axis=0), stack_w)), [a, c]),
        (lambda: diff.total(diff.square(diff.concat([a, c], axis=1))), [a, c]),
        (lambda: diff.total(diff.square(diff.take(a, np.array([0, 2, 2, 1]), axis=1))), [a]),
        (lambda: diff.total(diff.square(diff.getitem(a, (slice(None), 1)))), [a]),
        (lambda: diff.total(diff.square(diff.transpose(a, (1, 0)).reshape(2, 6))), [a]),
        (lambda: diff.total(diff.square(diff.sum_axis(a, 0))), [a]),
        (lambda: diff.total(diff.square(diff.einsum("ij,jk->ik", a, b))), [a, b]),
        (lambda: diff.total(diff.square(diff.bmatmul(batched, r))), [batched]),
        (lambda: diff.total(diff.mul(diff.segment_matmul(a, blocks, segs), proj)), [a, blocks]),
    ]
    for fn, ps in cases:
        assert _check(fn, ps) < 1e-4


def test_segment_matmul_matches_blockwise_products(rng):
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(4, 3, 2))
    segs = ((3, 0, 2), (1, 2, 5))
    out = diff.segment_matmul(a, b, segs).value
    assert np.allclose(out, np.concatenate([a[:2] @ b[3], a[2:] @ b[1]]), atol=1e-14)


def test_einsum_rejects_summed_only_index():
    a = Parameter(np.ones((2, 3)), "a")
    with Tape() as t:
        loss = diff.total(diff.einsum("ij,kl->ik", a, np.ones((2, 2))))
    with pytest.raises(NotImplementedError):
        t.backward(loss)


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]), "p")
    st_ = AdamState()
    adam_step(st_, {"p": p}, {"p": np.zeros(2)})
    assert np.array_equal(p.value, [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_moves_by_base_lr():
    p = Parameter(np.array(0.5), "p")
    st_ = AdamState(base_lr=1e-3)
    adam_step(st_, {"p": p}, {"p": np.array(1.0)})
    assert 0.5 - float(p.value) == pytest.approx(1e-3, rel=1e-6)


def test_adam_learning_rate_schedule():
    st_ = AdamState(base_lr=1e-3, gamma=0.95, decay_interval=300)
    assert st_.lr(299) == pytest.approx(1e-3)
    assert st_.lr(300) == pytest.approx(0.95e-3)
    assert st_.lr(600) == pytest.approx(0.95**2 * 1e-3)


def test_adam_missing_gradient_and_name_or_object_keys():
    p = Parameter(np.ones(2), "p")
    q = Parameter(np.ones(2), "q")
    with pytest.raises(KeyError):
        adam_step(AdamState(), {"p": p, "q": q}, {"p": np.ones(2)})
    adam_step(AdamState(), {"p": p, "q": q}, {p: np.ones(2), "q": np.ones(2)})
    assert full_grads({"p": p, "q": q}, {p: np.ones(2)})["q"].tolist() == [0.0, 0.0]


def test_identical_runs_give_identical_parameter_trajectories():
    def run():
        rng = np.random.default_rng(0)
        w = Parameter(rng.normal(size=(3, 3)), "w")
        x = rng.normal(size=(8, 3))
        st_ = AdamState(base_lr=1e-2)
        vals = []
        for _ in range(5):
            with Tape() as t:
                loss = diff.mean(diff.square(diff.matmul(x, w)))
            adam_step(st_, {"w": w}, full_grads({"w": w}, t.backward(loss)))
            vals.append(w.value.copy())
        return np.stack(vals)

    assert np.array_equal(run(), run())
