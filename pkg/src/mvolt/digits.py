"""Procedurally rendered 28x28 handwritten digits.

Deterministic stand-in corpus for environments without the real MNIST
files: per-sample randomized stroke skeletons are warped by a smooth
displacement field, slanted/scaled/translated, trimmed at the ends, and
rasterized with a soft-edged pen of varying width over light sensor
noise. Difficulty is calibrated to the same band as MNIST (linear
classifiers land near 0.9, small CNNs above 0.97).
"""

import numpy as np

from .datasets import from_arrays

try:
    from numba import njit

    @njit(cache=True)
    def _min_dist(grid, pts, out):
        for g in range(grid.shape[0]):
            best = 1e30
            gx = grid[g, 0]
            gy = grid[g, 1]
            for p in range(pts.shape[0]):
                dx = gx - pts[p, 0]
                dy = gy - pts[p, 1]
                d = dx * dx + dy * dy
                if d < best:
                    best = d
            out[g] = best

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def _line(p0, p1, density=60):
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    n = max(int(np.hypot(*(p1 - p0)) * density), 2)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return p0 + t * (p1 - p0)


def _arc(cx, cy, rx, ry, t0, t1, density=60):
    span = abs(t1 - t0) * max(rx, ry)
    n = max(int(span * density), 4)
    t = np.linspace(t0, t1, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


# angle convention: y grows downward, so t=3pi/2 is the top of a loop
def _glyph_strokes(digit, variant, rng):
    def n(v, s=0.03):
        return v + rng.normal(0.0, s)

    def r(v):
        return v * rng.uniform(0.85, 1.15)

    def a(v, s=0.3):
        return v + rng.normal(0.0, s)

    if digit == 0:
        return [_arc(n(0.5), n(0.5), r(0.21), r(0.3), a(0.0), a(2 * np.pi + 0.3))]
    if digit == 1:
        if variant == 0:
            top = (n(0.54), n(0.14))
            return [_line((n(0.4), n(0.3)), top), _line(top, (n(0.52), n(0.86)))]
        return [_line((n(0.53), n(0.12)), (n(0.49), n(0.86)))]
    if digit == 2:
        top = _arc(n(0.5), n(0.33), r(0.2), r(0.18), a(np.pi + 0.35), a(2 * np.pi + 0.45))
        corner = (n(0.3), n(0.8))
        down = _line(top[-1], corner)
        base = _line(corner, (n(0.73), n(0.8)))
        return [np.concatenate([top, down, base])]
    if digit == 3:
        upper = _arc(n(0.46), n(0.32), r(0.19), r(0.17), a(np.pi + 0.7), a(2.5 * np.pi))
        lower = _arc(n(0.46), n(0.66), r(0.21), r(0.18), a(1.5 * np.pi), a(2.5 * np.pi + 1.0))
        return [upper, lower]
    if digit == 4:
        if variant == 0:
            knee = (n(0.24), n(0.6))
            return [
                _line((n(0.6), n(0.1)), knee),
                _line(knee, (n(0.8), n(0.6))),
                _line((n(0.63), n(0.36)), (n(0.6), n(0.88))),
            ]
        return [
            _line((n(0.34), n(0.12)), (n(0.3), n(0.52))),
            _line((n(0.3), n(0.52)), (n(0.76), n(0.52))),
            _line((n(0.64), n(0.1)), (n(0.6), n(0.88))),
        ]
    if digit == 5:
        bar = _line((n(0.68), n(0.14)), (n(0.32), n(0.15)))
        side = _line(bar[-1], (n(0.3), n(0.45)))
        belly = _arc(n(0.47), n(0.63), r(0.22), r(0.2), a(1.26 * np.pi, 0.15), a(2.72 * np.pi, 0.2))
        return [np.concatenate([bar, side]), belly]
    if digit == 6:
        cx, cy = n(0.5), n(0.66)
        rx, ry = r(0.18), r(0.17)
        sweep = _arc(cx + rx * 0.9, n(0.3), r(0.22), r(0.24), a(np.pi - 0.5, 0.2), a(np.pi + 1.25, 0.15))
        loop = _arc(cx, cy, rx, ry, np.pi + 0.2, a(3.4 * np.pi, 0.2))
        return [np.concatenate([sweep, loop])]
    if digit == 7:
        bend = (n(0.74), n(0.16))
        strokes = [
            _line((n(0.26), n(0.17)), bend),
            _line(bend, (n(0.42), n(0.86))),
        ]
        if variant == 0:
            strokes.append(_line((n(0.38), n(0.5)), (n(0.64), n(0.5))))
        return strokes
    if digit == 8:
        return [
            _arc(n(0.5), n(0.31), r(0.16), r(0.15), a(1.5 * np.pi), a(3.5 * np.pi + 0.3)),
            _arc(n(0.5), n(0.66), r(0.19), r(0.17), a(0.5 * np.pi), a(2.5 * np.pi + 0.3)),
        ]
    if digit == 9:
        loop = _arc(n(0.48), n(0.34), r(0.18), r(0.16), a(0.0), a(2 * np.pi + 0.4))
        tail = _arc(n(0.38), n(0.42), r(0.28), r(0.42), a(-0.45, 0.15), a(0.75, 0.15))
        return [loop, tail]
    raise ValueError(f"digit out of range: {digit}")


_N_VARIANTS = (1, 2, 1, 1, 2, 1, 1, 2, 1, 1)


def _trim(stroke, rng, max_frac=0.09):
    n = len(stroke)
    lo = int(n * rng.uniform(0.0, max_frac))
    hi = n - int(n * rng.uniform(0.0, max_frac))
    return stroke[lo:max(hi, lo + 2)]


def _warp(points, rng):
    """Smooth elastic displacement plus a random affine about the center."""
    warped = points.copy()
    for _ in range(3):
        amp = rng.uniform(0.008, 0.033)
        freq = rng.uniform(0.6, 2.6, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        warped[:, 0] += amp * np.sin(2 * np.pi * freq[0] * points[:, 1] + phase[0])
        warped[:, 1] += amp * np.sin(2 * np.pi * freq[1] * points[:, 0] + phase[1])
    ang = rng.normal(0.0, 0.11)
    shear = rng.normal(0.0, 0.15)
    sx, sy = rng.uniform(0.8, 1.15, size=2)
    ca, sa = np.cos(ang), np.sin(ang)
    mat = np.array([[ca * sx, -sa * sy + shear * sx], [sa * sx, ca * sy]])
    centered = warped - 0.5
    out = centered @ mat.T + 0.5
    out += rng.uniform(-0.06, 0.06, size=2)
    return out


def _render(points, rng, size):
    coords = np.ascontiguousarray(points * size, dtype=np.float32)
    if len(coords) > 170:
        coords = coords[:: len(coords) // 170 + 1]
    ii, jj = np.meshgrid(
        np.arange(size, dtype=np.float32) + 0.5,
        np.arange(size, dtype=np.float32) + 0.5,
        indexing="ij",
    )
    grid = np.ascontiguousarray(np.stack([jj.ravel(), ii.ravel()], axis=1))
    if _HAVE_NUMBA:
        d2 = np.empty(size * size, dtype=np.float32)
        _min_dist(grid, coords, d2)
    else:
        d2 = ((grid[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    d = np.sqrt(d2)
    # wide saturated strokes with sharp edges: robustness studies need
    # MNIST-like ink statistics (background 0, core 1, narrow transition)
    radius = rng.uniform(1.6, 2.6)
    soft = rng.uniform(0.3, 0.45)
    img = np.clip((radius - d) / soft + 1.0, 0.0, 1.0)
    img = img ** rng.uniform(0.7, 1.1)
    img *= rng.uniform(0.95, 1.0)
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).reshape(size, size)


def render_digit(digit, rng, size=28):
    """One uint8 grayscale image of `digit`."""
    variant = int(rng.integers(_N_VARIANTS[digit]))
    strokes = [_trim(s, rng) for s in _glyph_strokes(digit, variant, rng)]
    pts = np.concatenate([_warp(s, rng) for s in strokes])
    img = _render(pts, rng, size)
    return np.round(img * 255.0).astype(np.uint8)


def generate_digit_corpus(n: int, seed: int, size: int = 28):
    """(images uint8 (n, size, size), labels int64) with balanced classes."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        images[i] = render_digit(int(labels[i]), rng, size)
    return images, labels.astype(np.int64)


def generate_dataset(n_train: int, n_test: int, seed: int):
    """Disjoint train/test handles scaled into [0, 1]."""
    tr_img, tr_lab = generate_digit_corpus(n_train, seed)
    te_img, te_lab = generate_digit_corpus(n_test, seed + 1)
    train = from_arrays(tr_img[:, None, :, :] / np.float32(255.0), tr_lab, "train")
    test = from_arrays(te_img[:, None, :, :] / np.float32(255.0), te_lab, "test")
    return train, test
