"""A tour of the expression engine behind the physics losses.

Everything the training loop needs reduces to three operations on one graph:
evaluate, differentiate with respect to an input coordinate (as a new graph,
so it nests), and take the gradient of a scalar with respect to parameters.
This script builds a small network, checks its derivatives against central
finite differences, and shows second derivatives composing.
"""

import numpy as np

import mirnn.expr as E

rng = np.random.default_rng(0)

# A two-input tanh network: u(x, t) with 3 hidden layers of 16 neurons.
hidden = (16, 16, 16)
params = {}
terms = []
for c in ("x", "t"):
    params[f"w0:{c}"] = rng.normal(size=(1, hidden[0])) * 0.5
    terms.append(E.matmul(E.inp(c), E.par(f"w0:{c}")))
params["b0"] = np.zeros(hidden[0])
a = E.tanh(E.add(*terms, E.par("b0")))
for l in range(1, len(hidden)):
    params[f"w{l}"] = rng.normal(size=(hidden[l - 1], hidden[l])) * 0.4
    params[f"b{l}"] = np.zeros(hidden[l])
    a = E.tanh(E.add(E.matmul(a, E.par(f"w{l}")), E.par(f"b{l}")))
params["wout"] = rng.normal(size=(hidden[-1], 1)) * 0.4
u = E.matmul(a, E.par("wout"))

print("== derivatives as graphs ==")
ux = E.derivative(u, "x")
uxx = E.derivative(u, "x", order=2)
print(f"u has {len(E.compile_program(u).nodes)} nodes; "
      f"du/dx has {len(E.compile_program(ux).nodes)}; "
      f"d2u/dx2 has {len(E.compile_program(uxx).nodes)}")
print("d(d(u)) is the same interned graph as order=2:",
      E.derivative(ux, "x") is uxx)

print("\n== finite-difference agreement ==")
pts = {"x": rng.uniform(0.2, 1.8, size=(25, 1)),
       "t": rng.uniform(0.2, 1.8, size=(25, 1))}
gap = E.fd_check(u, pts, [("x", 1), ("t", 1), ("x", 2), ("t", 2)],
                 step=1e-4, params=params)
print(f"max relative gap over 25 points, first+second derivatives: {gap:.2e}")

print("\n== parameter gradients through input derivatives ==")
# the shape of every physics loss: a mean of squared derivative expressions
loss = E.mean(E.square(E.add(E.derivative(u, "t"), E.mul(u, ux))))
values, grads = E.compile_program(loss).value_and_grad(pts, params)
print(f"loss value: {float(values[0]):.6f}")
gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
print(f"gradient norm over {sum(g.size for g in grads.values())} parameters: "
      f"{gnorm:.6f}")

# directional finite-difference check of the full gradient vector
direction = {k: rng.normal(size=v.shape) for k, v in params.items()}
scale = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
direction = {k: d / scale for k, d in direction.items()}
h = 1e-6
prog = E.compile_program(loss)
f = lambda sgn: float(prog.run(
    pts, {k: v + sgn * h * direction[k] for k, v in params.items()})[0])
fd = (f(+1) - f(-1)) / (2 * h)
an = sum(float(np.sum(grads[k] * direction[k])) for k in params)
print(f"directional derivative: analytic {an:.10f} vs FD {fd:.10f}")
