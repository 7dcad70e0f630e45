"""Independent reference implementations shared by the tests."""

import itertools

import numpy as np


def numeric_grad(f, params, h=1e-5, coords=None, pattern=None):
    """Central differences of f at params; only `coords` are filled when given.

    With `pattern(params) -> bytes` (e.g. ReLU on/off signs), coordinates
    whose +-h probes change the pattern straddle a kink; they are set to nan.
    """
    params = np.array(params, dtype=np.float64)
    g = np.zeros_like(params)
    base = None if pattern is None else pattern(params)
    for k in range(len(params)) if coords is None else coords:
        up, dn = params.copy(), params.copy()
        up[k] += h
        dn[k] -= h
        if base is not None and (pattern(up) != base or pattern(dn) != base):
            g[k] = np.nan
            continue
        g[k] = (f(up) - f(dn)) / (2 * h)
    return g


def relu_pattern(model, x):
    """Signs of every hidden pre-activation, recomputed from raw weights."""

    def pattern(params):
        h, bits = np.asarray(x, dtype=np.float64), []
        layers = model.split(params)
        for w, b in layers[:-1]:
            z = h @ w + b
            bits.append(z > 0)
            h = np.maximum(z, 0)
        return np.concatenate([m.ravel() for m in bits]).tobytes() if bits else b""

    return pattern


def max_rel_error(analytic, numeric, floor=1e-5):
    # components below the floor are compared in absolute terms; central
    # differences carry ~1e-10 of cancellation noise
    ok = ~np.isnan(numeric)
    analytic, numeric = analytic[ok], numeric[ok]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def with_params(model, params):
    m = model.copy()
    m.params = np.asarray(params, dtype=np.float64)
    return m


def brute_gmad(attacker, defender, centers, eps):
    """Exhaustive search over ordered candidate pairs within each defender band."""
    out = []
    seen = set()
    for level, c in enumerate(centers):
        if c in seen:
            continue
        seen.add(c)
        cand = [k for k in range(len(defender)) if abs(defender[k] - c) <= eps]
        if len(cand) < 2:
            continue
        best = max(itertools.permutations(cand, 2), key=lambda p: (attacker[p[0]] - attacker[p[1]], -p[0], -p[1]))
        out.append((best[0], best[1], level))
    return out
