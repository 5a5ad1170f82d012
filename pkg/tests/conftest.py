import numpy as np
import pytest

import mirnn.expr as E


def make_tanh_net(rng, coords=("x", "t"), hidden=(30, 30, 30, 30)):
    """A random uncoupled tanh MLP as (output expr, params dict).

    Input leaves are named after the coordinates; weights follow the same
    naming scheme the package uses.
    """
    params = {}
    terms = []
    for c in coords:
        params[f"w0:{c}"] = rng.normal(size=(1, hidden[0])) * 0.5
        terms.append(E.matmul(E.inp(c), E.par(f"w0:{c}")))
    params["b0"] = rng.normal(size=hidden[0]) * 0.1
    a = E.tanh(E.add(*terms, E.par("b0")))
    for l in range(1, len(hidden)):
        params[f"w{l}"] = rng.normal(size=(hidden[l - 1], hidden[l])) * 0.3
        params[f"b{l}"] = rng.normal(size=hidden[l]) * 0.1
        a = E.tanh(E.add(E.matmul(a, E.par(f"w{l}")), E.par(f"b{l}")))
    params["wout"] = rng.normal(size=(hidden[-1], 1)) * 0.3
    params["bout"] = rng.normal(size=1) * 0.1
    u = E.add(E.matmul(a, E.par("wout")), E.par("bout"))
    return u, params


def random_points(rng, coords, n, lo=0.1, hi=2.0):
    return {c: rng.uniform(lo, hi, size=(n, 1)) for c in coords}


def directional_grad_gap(loss, bindings, params, grads, rng, step=1e-6):
    """Relative gap between the reverse-mode gradient and a central FD
    directional derivative along one random parameter direction."""
    direction = {k: rng.normal(size=v.shape) for k, v in params.items()}
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
    direction = {k: d / norm for k, d in direction.items()}
    analytic = sum(float(np.sum(grads[k] * direction[k])) for k in params)
    prog = E.compile_program(loss)

    def at(sign):
        shifted = {k: v + sign * step * direction[k] for k, v in params.items()}
        return float(prog.run(bindings, shifted, kernel="blas",
                              check_finite=False)[0])

    fd = (at(+1.0) - at(-1.0)) / (2.0 * step)
    return abs(analytic - fd) / (abs(analytic) + step)


@pytest.fixture
def net_factory():
    return make_tanh_net
