"""Array-level reverse-mode differentiation and the Adam optimizer.

Every primitive returns a :class:`Var`. While a :class:`Tape` is active,
primitives whose inputs depend on a :class:`Parameter` (directly or through
earlier recorded nodes) are appended to the tape together with their
vector-Jacobian product; everything else is computed eagerly and treated as a
constant, so the same model code serves inference and training.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field

import numpy as np

_ACTIVE = contextvars.ContextVar("ecco_tape", default=None)


class Var:
    __slots__ = ("value", "parents", "vjp", "tracked")

    def __init__(self, value, parents=(), vjp=None, tracked=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.tracked = tracked

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / _val(other)) if not isinstance(other, Var) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Var):
    """A trainable leaf. Its value is replaced in place by the optimizer."""

    __slots__ = ("name",)

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=float), tracked=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tape:
    """Records differentiable primitives executed inside ``with Tape():``."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        return False

    def backward(self, loss: Var) -> dict:
        return backward(self, loss)


def _tracked(x) -> bool:
    return isinstance(x, Var) and x.tracked


def _val(x):
    return x.value if isinstance(x, Var) else x


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float))


def _make(value, parents, vjp) -> Var:
    tape = _ACTIVE.get()
    if tape is None or not any(isinstance(p, Var) and p.tracked for p in parents):
        return Var(value)
    out = Var(value, tuple(parents), vjp, tracked=True)
    tape.nodes.append(out)
    return out


def backward(tape: Tape, loss: Var) -> dict:
    """Gradients of a scalar ``loss`` for every parameter it depends on.

    Returns a dict keyed by :class:`Parameter` objects.
    """
    if not isinstance(loss, Var):
        raise ValueError("loss must be a Var")
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    grads: dict[int, np.ndarray] = {}
    params: dict[int, Parameter] = {}
    if isinstance(loss, Parameter):
        return {loss: np.ones_like(loss.value)}
    if not loss.tracked:
        return {}
    if not tape.nodes or not any(n is loss for n in reversed(tape.nodes)):
        raise ValueError("loss was not recorded on this tape")
    grads[id(loss)] = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not isinstance(p, Var) or not p.tracked:
                continue
            if isinstance(p, Parameter):
                params[id(p)] = p
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {p: grads[k] for k, p in params.items()}


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _make(av + bv, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv))))


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _make(av - bv, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), -_unbroadcast(g, np.shape(bv))))


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv))),
    )


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _make(
        av / bv,
        (a, b),
        lambda g: (_unbroadcast(g / bv, np.shape(av)), _unbroadcast(-g * av / bv**2, np.shape(bv))),
    )


def square(a) -> Var:
    av = _val(a)
    return _make(av * av, (a,), lambda g: (2.0 * g * av,))


def matmul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    ta, tb = _tracked(a), _tracked(b)
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T if ta else None, av.T @ g if tb else None))


def bmatmul(a, b) -> Var:
    """Batched matrix product with numpy broadcasting over leading axes."""
    av, bv = _val(a), _val(b)
    ta, tb = _tracked(a), _tracked(b)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), np.shape(av)) if ta else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, np.shape(bv)) if tb else None
        return ga, gb

    return _make(av @ bv, (a, b), vjp)


def segment_matmul(a, b, segments) -> Var:
    """Row blocks of ``a`` times per-block matrices of ``b``.

    ``segments`` holds ``(index, start, stop)`` ranges tiling the rows of
    ``a`` in order; rows ``start:stop`` are multiplied by ``b[index]``.
    """
    av, bv = _val(a), _val(b)
    ta, tb = _tracked(a), _tracked(b)
    out = np.empty((av.shape[0], bv.shape[2]))
    for i, lo, hi in segments:
        np.matmul(av[lo:hi], bv[i], out=out[lo:hi])

    def vjp(g):
        ga = np.empty_like(av) if ta else None
        gb = np.zeros_like(bv) if tb else None
        for i, lo, hi in segments:
            if ta:
                np.matmul(g[lo:hi], bv[i].T, out=ga[lo:hi])
            if tb:
                gb[i] += av[lo:hi].T @ g[lo:hi]
        return ga, gb

    return _make(out, (a, b), vjp)


def spmm(m, b) -> Var:
    """Constant sparse matrix times a dense Var."""
    bv = _val(b)
    return _make(m @ bv, (b,), lambda g: (m.T @ g,))


def einsum(subscripts: str, *operands) -> Var:
    """Two-or-more operand einsum with explicit output subscripts."""
    ins, out = subscripts.replace(" ", "").split("->")
    in_subs = ins.split(",")
    vals = [_val(o) for o in operands]
    value = np.einsum(subscripts, *vals, optimize=len(vals) > 2)

    def vjp(g):
        res = []
        for k, sk in enumerate(in_subs):
            if not (isinstance(operands[k], Var) and operands[k].tracked):
                res.append(None)
                continue
            others = [s for i, s in enumerate(in_subs) if i != k]
            have = set(out).union(*others) if others else set(out)
            missing = [c for c in sk if c not in have]
            if missing:
                raise NotImplementedError(f"einsum vjp with summed-only index {missing}")
            spec = ",".join([out] + others) + "->" + sk
            ovals = [vals[i] for i in range(len(vals)) if i != k]
            res.append(np.einsum(spec, g, *ovals, optimize=len(ovals) > 1))
        return tuple(res)

    return _make(value, tuple(operands), vjp)


def reshape(a, shape) -> Var:
    av = _val(a)
    return _make(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes=None) -> Var:
    av = _val(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(av, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a, indices, axis: int = 0) -> Var:
    """Gather along ``axis``; the adjoint scatter-adds."""
    av = _val(a)
    idx = np.asarray(indices)

    def vjp(g):
        out = np.zeros_like(av)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        om = np.moveaxis(out, axis, 0)
        np.add.at(om, idx, gm)
        return (out,)

    return _make(np.take(av, idx, axis=axis), (a,), vjp)


def getitem(a, index) -> Var:
    av = _val(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return (out,)

    return _make(av[index], (a,), vjp)


def concat(items, axis: int = 0) -> Var:
    vals = [_val(x) for x in items]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(vals, axis=axis), tuple(items), vjp)


def stack(items, axis: int = 0) -> Var:
    vals = [_val(x) for x in items]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _make(np.stack(vals, axis=axis), tuple(items), vjp)


def leaky_relu(a, slope: float = 0.01) -> Var:
    av = _val(a)
    scale = np.where(av > 0, 1.0, slope)
    return _make(av * scale, (a,), lambda g: (g * scale,))


def total(a) -> Var:
    av = _val(a)
    return _make(np.asarray(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean(a) -> Var:
    av = _val(a)
    n = av.size
    return _make(np.asarray(av.mean()), (a,), lambda g: (np.broadcast_to(g / n, av.shape).copy(),))


def sum_axis(a, axis) -> Var:
    av = _val(a)
    return _make(av.sum(axis=axis), (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),))


# --- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    base_lr: float = 1e-3
    gamma: float = 0.95
    decay_interval: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self, step: int | None = None) -> float:
        step = self.step if step is None else step
        return self.base_lr * self.gamma ** (step // self.decay_interval)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam update of ``params`` (name -> Parameter) in place.

    ``grads`` maps names (or the Parameter objects themselves) to arrays. A
    parameter absent from the loss graph must still be given an explicit zero.
    """
    lr = state.lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if name in grads:
            g = grads[name]
        elif p in grads:
            g = grads[p]
        else:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = np.asarray(g, dtype=float)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.value = p.value - lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


def full_grads(params: dict, grads: dict) -> dict:
    """Name-keyed gradients with zeros for parameters the loss did not reach."""
    return {n: np.asarray(grads[p]) if p in grads else np.zeros_like(p.value) for n, p in params.items()}


# --- finite-difference checking ------------------------------------------------


def relative_error(a, b, floor: float = 1e-12) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(loss_fn, param: Parameter, h: float = 1e-5, max_entries: int | None = None, rng=None):
    """Central differences of ``loss_fn()`` w.r.t. ``param``.

    With ``max_entries`` only a random subset of entries is probed; the rest
    are returned as NaN.
    """
    flat = param.value.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = np.random.default_rng(0) if rng is None else rng
        idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
    out = np.full(flat.size, np.nan)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = float(_val(loss_fn()))
        flat[i] = old - h
        fm = float(_val(loss_fn()))
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.value.shape)


def check_gradients(loss_fn, params, h: float = 1e-5, max_entries: int | None = 64, rng=None) -> float:
    """Worst relative error between tape gradients and central differences."""
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    worst = 0.0
    for p in params:
        g = grads.get(p, np.zeros_like(p.value))
        fd = numeric_grad(loss_fn, p, h=h, max_entries=max_entries, rng=rng)
        mask = ~np.isnan(fd)
        worst = max(worst, relative_error(g[mask], fd[mask]))
    return worst


def isfinite(x) -> bool:
    return bool(np.all(np.isfinite(_val(x))))

