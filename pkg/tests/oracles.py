"""Independent reference computations used by the test-suite."""
import numpy as np


def central_differences(f, params, h=1e-5):
    """Gradient of scalar ``f(params)`` by central differences, entry by entry."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        grads.append(g)
    return grads


# numpy's default closeness (rtol 1e-5, atol 1e-8) expressed as a floor atol/rtol
GRAD_FLOOR = 1e-3
# finite differences straddling a relu kink are meaningless; require this clearance
KINK_MARGIN = 1e-3


def relu_margin(net, x):
    """Smallest |pre-activation| feeding a relu layer of ``net`` on inputs ``x``."""
    from chfsurrogate.nn import forward_trace

    _, trace = forward_trace(net, x)
    margins = [np.abs(z).min() for z, layer in zip(trace.pre, net.layers) if layer.activation == "relu"]
    return min(margins, default=np.inf)


def gradient_error(analytic, numeric):
    """Relative error with the floor scaled by the largest gradient entry (loss-unit free)."""
    return max_relative_error(analytic, numeric, GRAD_FLOOR, scaled=True)


def max_relative_error(analytic, numeric, floor=1e-6, scaled=False):
    """max |a - n| / max(|a|, |n|, floor) over every entry.

    With ``scaled`` the floor becomes ``floor * max(1, largest |gradient entry|)``
    so entries far below the model's gradient scale, where central differences
    are pure round-off, are judged in absolute terms.
    """
    if scaled:
        top = max(max(float(np.max(np.abs(a))), float(np.max(np.abs(n)))) for a, n in zip(analytic, numeric))
        floor = floor * max(1.0, top)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_2d(points):
    """Andrew's monotone chain; counter-clockwise vertices, collinear points dropped."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def inside_2d(points, q, eps=1e-12):
    """Orientation test against every edge of the 2-D hull (boundary counts as inside)."""
    h = hull_2d(points)
    if len(h) < 3:
        raise ValueError("degenerate 2-D hull")
    return all(cross(h[i], h[(i + 1) % len(h)], q) >= -eps for i in range(len(h)))


def inside_3d(points, q, eps=1e-12):
    """Half-space test against qhull facets."""
    from scipy.spatial import ConvexHull

    hull = ConvexHull(points)
    return bool(np.all(hull.equations[:, :-1] @ q + hull.equations[:, -1] <= eps))


def random_hull_cases(n_cases, seed=0):
    """Yield (points, query, inside_by_oracle), alternating 2-D and 3-D cases.

    2-D hulls use 3-6 points, 3-D hulls 4-10 points; queries are drawn from a
    box slightly larger than the points so both answers occur often.
    """
    rng = np.random.default_rng(seed)
    for k in range(n_cases):
        if k % 2 == 0:
            while True:
                pts = rng.uniform(-1, 1, size=(rng.integers(3, 7), 2))
                if len(hull_2d(pts)) >= 3:
                    break
            q = rng.uniform(-1.2, 1.2, size=2)
            yield pts, q, inside_2d(pts, q)
        else:
            pts = rng.uniform(-1, 1, size=(rng.integers(4, 11), 3))
            q = rng.uniform(-1.2, 1.2, size=3)
            yield pts, q, inside_3d(pts, q)
