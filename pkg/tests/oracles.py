"""Independent reference implementations used only by the tests."""

import math

import numpy as np
from scipy import optimize


def newton_raphson(feeder, injections, tol=1e-12, max_iter=50):
    """Polar Newton-Raphson on the full bus-admittance model.

    Shares nothing with the sweep solver except the feeder data: builds Y from
    the line list and solves the power-balance equations with a numerically
    differentiated Jacobian via scipy's root finder.
    """
    n = feeder.n + 1
    idx = {node: k for k, node in enumerate(feeder.nodes)}
    y = np.zeros((n, n), dtype=complex)
    for line in feeder.lines:
        a, b = idx[line.from_node], idx[line.to_node]
        ys = 1.0 / complex(line.r, line.x)
        y[a, a] += ys
        y[b, b] += ys
        y[a, b] -= ys
        y[b, a] -= ys
    v0 = feeder.head_voltage
    s_spec = np.asarray(injections, dtype=complex)

    def mismatch(x):
        ang, mag = x[: n - 1], x[n - 1 :]
        v = np.concatenate([[v0], mag * np.exp(1j * ang)])
        s = v * np.conj(y @ v)
        d = s[1:] - s_spec
        return np.concatenate([d.real, d.imag])

    x0 = np.concatenate([np.zeros(n - 1), np.full(n - 1, v0)])
    sol = optimize.root(mismatch, x0, method="hybr", tol=tol)
    assert sol.success, sol.message
    ang, mag = sol.x[: n - 1], sol.x[n - 1 :]
    v = mag * np.exp(1j * ang)
    full = np.concatenate([[v0], v])
    head = full[0] * np.conj(y[0] @ full)
    return v, head  # complex power the head injects into the feeder


def two_bus_voltage(r, x, p_load, q_load, v0=1.0):
    """Closed-form receiving-end magnitude of a two-bus system (larger root)."""
    # |V|^4 + (2(rP + xQ) - V0^2)|V|^2 + (r^2 + x^2)(P^2 + Q^2) = 0
    b = 2 * (r * p_load + x * q_load) - v0**2
    c = (r * r + x * x) * (p_load**2 + q_load**2)
    return math.sqrt((-b + math.sqrt(b * b - 4 * c)) / 2)


def brute_force_projection(p, q, p_av, s_max, step):
    """Nearest feasible point on a grid covering the capability set."""
    top = min(p_av, s_max)
    ps = np.append(np.arange(0.0, top, step), top)
    qs = np.arange(-s_max, s_max + step / 2, step)
    pp, qq = np.meshgrid(ps, qs, indexing="ij")
    ok = pp**2 + qq**2 <= s_max**2 + 1e-12
    d = np.where(ok, (pp - p) ** 2 + (qq - q) ** 2, np.inf)
    k = np.unravel_index(np.argmin(d), d.shape)
    return pp[k], qq[k], math.sqrt(d[k])


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_lstm_step(cell, x, h_prev, c_prev):
    """Straight-line loops over the gate equations, one unit at a time."""
    hs = len(h_prev)
    hx = list(h_prev) + list(x)
    h, c = [], []
    for j in range(hs):
        zi = sum(cell.W_i[j][k] * hx[k] for k in range(len(hx))) + cell.b_i[j]
        zf = sum(cell.W_f[j][k] * hx[k] for k in range(len(hx))) + cell.b_f[j]
        zo = sum(cell.W_o[j][k] * hx[k] for k in range(len(hx))) + cell.b_o[j]
        zc = sum(cell.W_C[j][k] * hx[k] for k in range(len(hx))) + cell.b_C[j]
        cj = _sig(zf) * c_prev[j] + _sig(zi) * math.tanh(zc)
        c.append(cj)
        h.append(_sig(zo) * math.tanh(cj))
    return np.array(h), np.array(c)


def random_radial_doc(rng, n_nodes, base_kva=1000.0, base_kv=1.0):
    """Random radial feeder document with 2..n nodes, impedances in ohms."""
    nodes = list(range(n_nodes))
    lines = []
    for k in range(1, n_nodes):
        parent = int(rng.integers(0, k))
        lines.append({"from": parent, "to": k, "r_ohm": float(rng.uniform(0.002, 0.03)), "x_ohm": float(rng.uniform(0.002, 0.03))})
    loads = [
        {"node": k, "p_kw": float(rng.uniform(0, 150)), "q_kvar": float(rng.uniform(-30, 60))} for k in range(1, n_nodes)
    ]
    return {
        "base_kva": base_kva,
        "base_kv": base_kv,
        "head_voltage_pu": float(rng.uniform(0.98, 1.03)),
        "nodes": nodes,
        "lines": lines,
        "loads": loads,
        "ders": [],
        "measured_nodes": [],
    }
