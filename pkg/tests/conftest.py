import numpy as np
import pytest

from dtca.tensor import ComputationRecord


def rel_err(analytic, numeric):
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def finite_diff(build, param, h=1e-5):
    """Central finite differences of the scalar ``build()`` wrt ``param``.

    ``build`` must recompute the loss from the current ``param.data``;
    the perturbation is applied in place.
    """
    flat = param.data.ravel()
    grad = np.zeros_like(param.data, dtype=np.float64)
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = build().item()
        flat[i] = orig - h
        minus = build().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def analytic_grads(build, params):
    """Backward gradients of ``build()`` for each tensor in ``params``."""
    for p in params:
        p.grad = None
    with ComputationRecord() as record:
        loss = build()
    record.backward(loss)
    return [p.grad for p in params]


def gradcheck(build, params, tol=1e-5, h=1e-5):
    """Assert analytic vs central-FD gradients agree within ``tol``."""
    analytic = analytic_grads(build, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        assert a is not None, "parameter received no gradient"
        fd = finite_diff(build, p, h=h)
        worst = max(worst, rel_err(a, fd))
    assert worst < tol, f"gradient mismatch: rel err {worst} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
