import weakref
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from disprod.autodiff.hyperdual import HyperDual, _xp, _is_concrete
from disprod.errors import ArgumentError, PropagationError


@dataclass(frozen=True)
class PartialsBundle:
    """Transition value with Jacobians and pure second partials.

    Matrices are indexed ``[output, input, *batch]``; ``j_s[j, k]`` is
    ``dT_j/ds_k`` and ``h_s[j, k]`` is ``d2T_j/ds_k2`` at the evaluation point.
    """

    value: object
    j_s: object
    j_a: object
    j_eps: object
    h_s: object
    h_a: object
    h_eps: object


def _stack_inputs(parts):
    xp = _xp(*parts) if parts else np
    return xp, [p if xp is jnp else np.asarray(p, dtype=float) for p in parts]


def seed(s, a, e):
    """Seed every input coordinate at once along a new leading axis.

    Returns hyper-dual lists ``(hs, ha, he)`` whose ``first`` part is one-hot
    over the ``n_z = n_s + n_a + n_eps`` coordinates.
    """
    s, a, e = list(s), list(a), list(e)
    xp, flat = _stack_inputs(s + a + e)
    n_z = len(flat)
    batch_ndim = max((xp.ndim(v) for v in flat), default=0)
    eye = xp.eye(n_z).reshape((n_z, n_z) + (1,) * batch_ndim)
    seeded = [HyperDual(v, eye[:, k], 0.0) for k, v in enumerate(flat)]
    n_s, n_a = len(s), len(a)
    return seeded[:n_s], seeded[n_s : n_s + n_a], seeded[n_s + n_a :], n_z


def collect(outputs, n_z, batch_shape, xp):
    """Stack hyper-dual outputs into ``(value, first, second)`` arrays.

    ``first`` and ``second`` have shape ``(n_out, n_z, *batch)``.
    """
    values, firsts, seconds = [], [], []
    full = (n_z,) + tuple(batch_shape)
    for out in outputs:
        if isinstance(out, HyperDual):
            v, f, s = out.value, out.first, out.second
        else:
            v, f, s = out, 0.0, 0.0
        values.append(xp.broadcast_to(xp.asarray(v, dtype=float), tuple(batch_shape)))
        firsts.append(xp.broadcast_to(xp.asarray(f, dtype=float), full))
        seconds.append(xp.broadcast_to(xp.asarray(s, dtype=float), full))
    return xp.stack(values), xp.stack(firsts), xp.stack(seconds)


def _coordinate_names(n_s, n_a, n_e):
    return [f"s[{k}]" for k in range(n_s)] + [f"a[{k}]" for k in range(n_a)] + [f"eps[{k}]" for k in range(n_e)]


def eval_partials(f, s, a, e=(), dims=None):
    """Value, Jacobians and pure second partials of ``f(s, a, e)``.

    ``f`` maps sequences of state, action and noise components to a sequence
    of outputs and must be built from the elementary functions in
    :mod:`disprod.autodiff.hyperdual`.  It may also be an environment model,
    in which case its transition and declared dimensions are used.  Inputs
    may carry trailing batch dimensions; all coordinates are seeded in one
    vectorised pass.
    """
    if hasattr(f, "transition") and hasattr(f, "n_s"):
        dims = (f.n_s, f.n_a, f.n_eps)
        f = f.transition
    s, a, e = list(s), list(a), list(e)
    if dims is not None and (len(s), len(a), len(e)) != tuple(dims):
        raise ArgumentError(f"point has dimensions {(len(s), len(a), len(e))}, function expects {tuple(dims)}")
    xp, flat = _stack_inputs(s + a + e)
    batch_shape = xp.broadcast_shapes(*[xp.shape(v) for v in flat]) if flat else ()
    hs, ha, he, n_z = seed(s, a, e)
    outputs = list(f(hs, ha, he))
    value, first, second = collect(outputs, n_z, batch_shape, xp)

    if xp is np or _is_concrete(value):
        bad = ~np.isfinite(np.asarray(first)) | ~np.isfinite(np.asarray(second))
        bad_cols = np.nonzero(bad.reshape(bad.shape[0], n_z, -1).any(axis=(0, 2)))[0]
        if bad_cols.size or not np.all(np.isfinite(np.asarray(value))):
            names = _coordinate_names(len(s), len(a), len(e))
            coord = names[bad_cols[0]] if bad_cols.size else "value"
            raise PropagationError(f"non-finite partial with respect to {coord}", coordinate=coord)

    n_s, n_a = len(s), len(a)
    return PartialsBundle(
        value=value,
        j_s=first[:, :n_s],
        j_a=first[:, n_s : n_s + n_a],
        j_eps=first[:, n_s + n_a :],
        h_s=second[:, :n_s],
        h_a=second[:, n_s : n_s + n_a],
        h_eps=second[:, n_s + n_a :],
    )


def grad_policy_loss(loss, params):
    """Exact gradient of a scalar ``loss`` with respect to every policy parameter.

    ``params`` may be a raw array or any pytree (e.g. ``PolicyParams``); the
    gradient has the same structure.  Reverse-mode differentiation runs over
    the whole computation, including the hyper-dual arithmetic inside.
    """
    if hasattr(params, "validate"):
        params.validate()
    value, grad = jax.value_and_grad(lambda p: jnp.asarray(loss(p)).sum())(params)
    if not np.isfinite(float(value)):
        raise PropagationError("loss is not finite at the evaluation point")
    return grad


_BATCHED = weakref.WeakKeyDictionary()


def _batched_loss(loss, params):
    """A jitted vmap of ``loss`` over flat parameter vectors, cached per loss and layout."""
    _, unravel = ravel_pytree(params)
    key = (jax.tree_util.tree_structure(params), tuple(jnp.shape(x) for x in jax.tree_util.tree_leaves(params)))
    try:
        per_loss = _BATCHED.setdefault(loss, {})
    except TypeError:
        per_loss = {}
    if key not in per_loss:
        per_loss[key] = jax.jit(jax.vmap(lambda x: jnp.asarray(loss(unravel(x))).sum()))
    return per_loss[key]


def finite_difference_gradient(loss, params, fd_step, vectorize=True, richardson=False):
    """Central-difference gradient; evaluates all probes as one vmapped batch when possible.

    With ``richardson`` the estimates at ``fd_step`` and ``fd_step / 2`` are
    combined to cancel the leading truncation term, which matters for stiff
    losses whose third derivatives are large.
    """
    flat, unravel = ravel_pytree(params)
    flat = jnp.asarray(flat, dtype=float)
    n = flat.shape[0]
    steps = (fd_step, fd_step / 2) if richardson else (fd_step,)
    probes = jnp.concatenate([flat + sign * h * jnp.eye(n, dtype=flat.dtype) for h in steps for sign in (1.0, -1.0)])

    if vectorize:
        try:
            vals = _batched_loss(loss, params)(probes)
        except (TypeError, jax.errors.TracerArrayConversionError, jax.errors.ConcretizationTypeError):
            vectorize = False
    if not vectorize:
        vals = jnp.asarray([float(jnp.asarray(loss(unravel(p))).sum()) for p in probes])
    vals = vals.reshape(len(steps), 2, n)
    central = (vals[:, 0] - vals[:, 1]) / (2.0 * jnp.asarray(steps)[:, None])
    return (4.0 * central[1] - central[0]) / 3.0 if richardson else central[0]


def check_gradient(loss, params, fd_step=1e-5, vectorize=True, richardson=False):
    """Max over coordinates of ``|analytic - central| / max(1, |central|)``."""
    if fd_step <= 0:
        raise ArgumentError("fd_step must be positive")
    analytic = grad_policy_loss(loss, params)
    analytic_flat, _ = ravel_pytree(analytic)
    numeric = finite_difference_gradient(loss, params, fd_step, vectorize=vectorize, richardson=richardson)
    err = jnp.abs(analytic_flat - numeric) / jnp.maximum(1.0, jnp.abs(numeric))
    return float(jnp.max(err))
