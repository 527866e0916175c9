"""Multidimensional scaling of proximity matrices plus figure emission.

The embedder is stress-majorization (SMACOF) over an arbitrary distance
matrix: each Guttman transform provably does not increase the raw stress,
so the recorded stress sequence is monotone non-increasing. The reported
stress is Kruskal stress-1, sqrt(sum (d - delta)^2 / sum delta^2), a
fixed monotone rescaling of the raw stress since the targets are fixed.

Initialization is drawn per point from a stream keyed by (seed, point id),
so permuting the input rows together with their ids permutes the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, SchemaError, UsageError
from .proximity import ProximityMatrix

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class MdsEmbedding:
    coords: np.ndarray
    stress: float
    iterations: int
    converged: bool
    stress_trace: tuple

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise SchemaError("embedding coordinates must be finite")
        if self.stress < 0:
            raise SchemaError("stress must be non-negative")


def _validate_distances(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise SchemaError(f"distances must be square, got shape {d.shape}")
    if np.abs(d - d.T).max() > SYMMETRY_TOL:
        raise SchemaError("distance matrix is not symmetric")
    if np.abs(np.diagonal(d)).max() > SYMMETRY_TOL:
        raise SchemaError("distance matrix must have a zero diagonal")
    if d.min() < 0:
        raise SchemaError("distances must be non-negative")
    return 0.5 * (d + d.T)


def _seeded_init(n: int, seed: int, point_ids) -> np.ndarray:
    coords = np.empty((n, 2))
    for i, pid in enumerate(point_ids):
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(pid)]))
        coords[i] = rng.normal(size=2)
    return coords


def _classical_init(d: np.ndarray) -> np.ndarray:
    """Torgerson double-centering start; exact for Euclidean-realizable
    distance matrices, a decent warm start otherwise."""
    n = d.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d ** 2) @ j
    evals, evecs = np.linalg.eigh(b)
    top = np.argsort(evals)[::-1][:2]
    lam = np.clip(evals[top], 0.0, None)
    return evecs[:, top] * np.sqrt(lam)[None, :]


def _raw_stress(coords: np.ndarray, delta: np.ndarray) -> tuple[float, np.ndarray]:
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=-1))
    resid = d - delta
    return 0.5 * float((resid ** 2).sum()), d


def mds_embed(distances: np.ndarray, max_iter: int = 300, tol: float = 1e-6,
              seed: int = 0, init: str = "random", point_ids=None) -> MdsEmbedding:
    """Embed a distance matrix into the plane by stress majorization.

    Stops when the relative raw-stress decrease falls below tol or after
    max_iter Guttman transforms. init="classical" warm-starts from
    Torgerson's double-centering solution.
    """
    delta = _validate_distances(distances)
    n = delta.shape[0]
    if n < 2:
        raise DataError("need at least two points to embed")
    if init not in ("random", "classical"):
        raise UsageError(f"init must be 'random' or 'classical', got {init!r}")
    if point_ids is None:
        point_ids = range(n)
    else:
        point_ids = list(point_ids)
        if len(point_ids) != n:
            raise SchemaError(f"need {n} point ids, got {len(point_ids)}")

    coords = _classical_init(delta) if init == "classical" else _seeded_init(n, seed, point_ids)
    denom = float((delta ** 2).sum()) * 0.5
    if denom == 0.0:
        # All-zero targets: any single point placement is exact.
        coords = np.zeros_like(coords)
        return MdsEmbedding(coords=coords, stress=0.0, iterations=0,
                            converged=True, stress_trace=(0.0,))

    sigma, d = _raw_stress(coords, delta)
    trace = [np.sqrt(sigma / denom)]
    converged = False
    iterations = 0
    for _ in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0.0, delta / d, 0.0)
        b = -ratio
        b[np.diag_indices(n)] = ratio.sum(axis=1) - ratio.diagonal()
        coords = b @ coords / n
        iterations += 1
        sigma_new, d = _raw_stress(coords, delta)
        trace.append(np.sqrt(sigma_new / denom))
        if sigma - sigma_new < tol * max(sigma, np.finfo(float).tiny):
            converged = True
            sigma = sigma_new
            break
        sigma = sigma_new
    return MdsEmbedding(coords=coords, stress=float(trace[-1]), iterations=iterations,
                        converged=converged, stress_trace=tuple(float(s) for s in trace))


# ---------------------------------------------------------------------------
# Distance histograms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceHistogram:
    values: np.ndarray  # per-row mean distance to the other points
    counts: np.ndarray
    edges: np.ndarray


def distance_histogram(prox: ProximityMatrix, bins=20) -> DistanceHistogram:
    """Per-row mean distance (1 - proximity, diagonal excluded), binned."""
    vals = prox.values
    if vals.shape[0] != vals.shape[1]:
        raise SchemaError(f"need a square proximity matrix, got {vals.shape}")
    n = vals.shape[0]
    if n < 2:
        raise DataError("need at least two points for a distance histogram")
    d = 1.0 - vals
    off_sum = d.sum(axis=1) - d.diagonal()
    means = off_sum / (n - 1)
    counts, edges = np.histogram(means, bins=bins)
    return DistanceHistogram(values=means, counts=counts, edges=edges)


# ---------------------------------------------------------------------------
# Deterministic SVG emission
# ---------------------------------------------------------------------------

_CANVAS = 640
_MARGIN = 48


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _color_scale(t: float) -> str:
    """Light-to-dark blue ramp; darker means a higher target value."""
    lo = (198, 219, 239)
    hi = (8, 48, 107)
    rgb = tuple(round(a + (b - a) * t) for a, b in zip(lo, hi))
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def _project(coords: np.ndarray) -> np.ndarray:
    span = coords.max(axis=0) - coords.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    unit = (coords - coords.min(axis=0)) / span
    px = _MARGIN + unit[:, 0] * (_CANVAS - 2 * _MARGIN)
    py = _CANVAS - _MARGIN - unit[:, 1] * (_CANVAS - 2 * _MARGIN)
    return np.column_stack([px, py])


def render_scatter(embedding: MdsEmbedding, colors, highlight=None) -> str:
    """Scatter plot of an embedding as a standalone SVG document.

    colors is one real value per point, mapped to a documented
    light-to-dark ramp (darker = higher). highlight is an optional
    (reference index, neighbor indices) pair drawn in red and black.
    """
    coords = embedding.coords
    colors = np.asarray(colors, dtype=np.float64)
    n = coords.shape[0]
    if colors.shape != (n,):
        raise SchemaError(f"need {n} color values, got shape {colors.shape}")
    ref, neighbors = None, []
    if highlight is not None:
        ref, neighbors = highlight
        for idx in [ref, *neighbors]:
            if not 0 <= int(idx) < n:
                raise UsageError(f"highlight index {idx} out of range [0, {n})")
        neighbors = [int(i) for i in neighbors]
        ref = int(ref)

    lo, hi = colors.min(), colors.max()
    span = hi - lo if hi > lo else 1.0
    pts = _project(coords)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS}" height="{_CANVAS}" '
        f'viewBox="0 0 {_CANVAS} {_CANVAS}">',
        f'<rect width="{_CANVAS}" height="{_CANVAS}" fill="white"/>',
    ]
    special = set(neighbors) | ({ref} if ref is not None else set())
    for i in range(n):
        if i in special:
            continue
        fill = _color_scale(float((colors[i] - lo) / span))
        parts.append(f'<circle cx="{_fmt(pts[i, 0])}" cy="{_fmt(pts[i, 1])}" r="3" '
                     f'fill="{fill}"/>')
    for i in neighbors:
        parts.append(f'<circle cx="{_fmt(pts[i, 0])}" cy="{_fmt(pts[i, 1])}" r="4" '
                     f'fill="#000000"/>')
    if ref is not None:
        parts.append(f'<circle cx="{_fmt(pts[ref, 0])}" cy="{_fmt(pts[ref, 1])}" r="5" '
                     f'fill="#d62728"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_histogram(hist: DistanceHistogram, log_scale: bool = False,
                     title: str = "") -> str:
    """Bar chart of a distance histogram; log_scale plots log10(1+count)."""
    counts = hist.counts.astype(np.float64)
    heights = np.log10(1.0 + counts) if log_scale else counts
    top = heights.max() if heights.max() > 0 else 1.0
    n_bins = counts.size
    plot_w = _CANVAS - 2 * _MARGIN
    plot_h = _CANVAS - 2 * _MARGIN
    bar_w = plot_w / n_bins

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS}" height="{_CANVAS}" '
        f'viewBox="0 0 {_CANVAS} {_CANVAS}">',
        f'<rect width="{_CANVAS}" height="{_CANVAS}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_CANVAS // 2}" y="24" text-anchor="middle" '
                     f'font-family="monospace" font-size="14">{title}</text>')
    for b in range(n_bins):
        h = heights[b] / top * plot_h
        x = _MARGIN + b * bar_w
        y = _CANVAS - _MARGIN - h
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w * 0.9)}" '
                     f'height="{_fmt(h)}" fill="#4c78a8"/>')
    parts.append(f'<line x1="{_MARGIN}" y1="{_CANVAS - _MARGIN}" x2="{_CANVAS - _MARGIN}" '
                 f'y2="{_CANVAS - _MARGIN}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


_CURVE_COLORS = ("#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2")


def render_curves(curves: dict, title: str = "") -> str:
    """Line chart of KNN error curves (mean per k) for several metrics."""
    kinds = sorted(curves)
    if not kinds:
        raise UsageError("no curves to render")
    all_y = np.concatenate([np.asarray(curves[k].mean) for k in kinds])
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    ks = curves[kinds[0]].ks
    x_lo, x_hi = ks[0], ks[-1] if ks[-1] > ks[0] else ks[0] + 1
    plot_w = _CANVAS - 2 * _MARGIN
    plot_h = _CANVAS - 2 * _MARGIN

    def px(k):
        return _MARGIN + (k - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return _CANVAS - _MARGIN - (v - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS}" height="{_CANVAS}" '
        f'viewBox="0 0 {_CANVAS} {_CANVAS}">',
        f'<rect width="{_CANVAS}" height="{_CANVAS}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_CANVAS // 2}" y="24" text-anchor="middle" '
                     f'font-family="monospace" font-size="14">{title}</text>')
    for ci, kind in enumerate(kinds):
        c = curves[kind]
        color = _CURVE_COLORS[ci % len(_CURVE_COLORS)]
        points = " ".join(f"{_fmt(px(k))},{_fmt(py(v))}" for k, v in zip(c.ks, c.mean))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{_MARGIN + 8}" y="{36 + 16 * ci}" font-family="monospace" '
                     f'font-size="12" fill="{color}">{kind}</text>')
    parts.append(f'<line x1="{_MARGIN}" y1="{_CANVAS - _MARGIN}" x2="{_CANVAS - _MARGIN}" '
                 f'y2="{_CANVAS - _MARGIN}" stroke="black"/>')
    parts.append(f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
                 f'y2="{_CANVAS - _MARGIN}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def embedding_to_csv(embedding: MdsEmbedding, colors, path) -> None:
    """Coordinates as CSV rows (index, x, y, color value)."""
    import csv

    colors = np.asarray(colors, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y", "color"])
        for i, (x, y) in enumerate(embedding.coords):
            writer.writerow([i, repr(float(x)), repr(float(y)), repr(float(colors[i]))])
