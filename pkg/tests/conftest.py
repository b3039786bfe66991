import numpy as np
import pytest

from calseg import autodiff as ad


def central_difference(build_loss, var, indices, h=1e-4):
    """Finite-difference gradient of build_loss() w.r.t. var at flat indices.

    build_loss re-evaluates the full forward pass from scratch; var.value is
    perturbed in place and restored. Everything runs in the array's dtype,
    so pass float64 inputs for trustworthy derivatives.
    """
    flat = var.value.reshape(-1)
    grads = np.empty(len(indices), dtype=np.float64)
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        up = float(build_loss().value)
        flat[i] = orig - h
        down = float(build_loss().value)
        flat[i] = orig
        grads[j] = (up - down) / (2.0 * h)
    return grads


def relative_error(a, b, floor=1e-10):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(make_variables, build_loss, h=1e-4, tol=1e-3,
                    max_positions=None, rng=None):
    """Backprop vs central differences for every requires_grad Variable.

    make_variables() -> list of Variables (fresh state is the caller's job);
    build_loss() -> scalar Variable built from those Variables.
    Returns the worst relative error seen.
    """
    variables = make_variables
    with ad.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    worst = 0.0
    for var in variables:
        assert var.grad is not None, "no gradient reached a checked Variable"
        size = var.value.size
        if max_positions is not None and size > max_positions:
            assert rng is not None
            indices = rng.choice(size, size=max_positions, replace=False)
        else:
            indices = np.arange(size)
        fd = central_difference(build_loss, var, indices, h=h)
        got = var.grad.reshape(-1)[indices]
        worst = max(worst, float(relative_error(got, fd).max()))
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)
