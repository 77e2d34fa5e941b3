"""Finite-difference gradient checker."""



def grad_check(closure, params, eps=1e-5, stencil=2):
    """Compare analytic gradients with central finite differences.

    ``closure()`` must build a fresh tape from the current parameter
    values, run backward, and return the scalar loss value. It has to be
    deterministic (freeze any dropout masks). Returns the max over all
    parameter coordinates of |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8).

    ``stencil`` selects the central-difference order: 2 is the classic
    (f(x+h) - f(x-h)) / 2h, 4 the five-point rule. The five-point rule
    with a larger step pushes the float64 roundoff floor from ~1e-11
    down to ~1e-12 absolute, which matters when some coordinates carry
    gradients around 1e-5.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    params.zero_grads()
    closure()
    analytic = {n: params.grad(n).copy() for n in params.names()}
    params.zero_grads()

    worst = 0.0
    for name in params.names():
        value = params.value(name)
        flat = value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            if stencil == 2:
                flat[i] = orig + eps
                up = closure()
                flat[i] = orig - eps
                down = closure()
                numeric = (up - down) / (2.0 * eps)
            else:
                samples = []
                for k in (2, 1, -1, -2):
                    flat[i] = orig + k * eps
                    samples.append(closure())
                f2, f1, m1, m2 = samples
                # Grouped as differences so that coordinates the loss
                # does not depend on give exactly zero instead of a
                # summation-order rounding residual.
                numeric = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * eps)
            flat[i] = orig
            params.zero_grads()
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
