"""Distribution distances, mode coverage, and the teacher/student rel-abs sweep."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

COV_EPS = 1e-6


# ---------------------------------------------------------------- linear algebra


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors as columns).
    """
    A = np.array(a, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.sqrt(np.sum(A * A)) or 1.0
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A * A * (1.0 - np.eye(n))))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix (negative eigenvalues clipped)."""
    w, V = jacobi_eigh(a)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


# ---------------------------------------------------------------- features


@dataclass
class FeatureMap:
    """Embedding applied before a distance: raw coordinates or a fixed random network."""

    kind: str = "raw"
    seed: int = 0
    out_dim: int = 16
    hidden: int = 64
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("raw", "frozen_random"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.out_dim < 1:
            raise ValueError("out_dim must be positive")

    def _weights(self, d: int):
        if d not in self._cache:
            rng = np.random.default_rng([self.seed, d])
            w1 = rng.standard_normal((d, self.hidden)) * (2.0 / math.sqrt(d))
            b1 = rng.uniform(-1.0, 1.0, self.hidden)
            w2 = rng.standard_normal((self.hidden, self.out_dim)) / math.sqrt(self.hidden)
            self._cache[d] = (w1, b1, w2)
        return self._cache[d]

    def dim(self, d: int) -> int:
        return d if self.kind == "raw" else self.out_dim

    def __call__(self, x) -> np.ndarray:
        x = _flat(x)
        if self.kind == "raw":
            return x
        w1, b1, w2 = self._weights(x.shape[1])
        return np.tanh(x @ w1 + b1) @ w2


def _flat(x) -> np.ndarray:
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return x.reshape(x.shape[0], -1)


# ---------------------------------------------------------------- distances


def gaussian_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False))


def frechet_from_stats(mu1, s1, mu2, s2) -> float:
    d = s1.shape[0]
    s1 = s1 + COV_EPS * np.eye(d)
    s2 = s2 + COV_EPS * np.eye(d)
    r1 = sqrtm_psd(s1)
    cross = sqrtm_psd(r1 @ s2 @ r1)
    diff = mu1 - mu2
    val = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def frechet_distance(set_a, set_b, feature_map: FeatureMap | None = None) -> float:
    """Frechet distance between Gaussian fits of the (embedded) sets."""
    fm = feature_map or FeatureMap()
    fa, fb = fm(set_a), fm(set_b)
    need = fa.shape[1] + 1
    if fa.shape[0] < need or fb.shape[0] < need:
        raise ValueError(f"each set needs at least {need} samples")
    if _same(fa, fb):
        return 0.0
    return frechet_from_stats(*gaussian_stats(fa), *gaussian_stats(fb))


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and np.array_equal(a, b)


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.sum(d * d, axis=2)


def median_bandwidth(a: np.ndarray, b: np.ndarray, max_points: int = 1000) -> float:
    """Median pairwise distance over the pooled sets (first max_points rows)."""
    z = np.concatenate([a, b])[:max_points]
    d = np.sqrt(_sq_dists(z, z)[np.triu_indices(z.shape[0], 1)])
    med = float(np.median(d))
    return med if med > 0 else 1.0


def _kernel_sum(x: np.ndarray, y: np.ndarray, bw: float, block: int = 1024) -> float:
    total = 0.0
    for i in range(0, x.shape[0], block):
        k = np.exp(-_sq_dists(x[i : i + block], y) / (2.0 * bw * bw))
        total += float(np.sum(k))
    return total


def mmd2_unbiased(set_a, set_b, bandwidth="median", feature_map: FeatureMap | None = None) -> float:
    """Unbiased Gaussian-kernel MMD^2; may come out slightly negative."""
    fm = feature_map or FeatureMap()
    a, b = fm(set_a), fm(set_b)
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ValueError("each set needs at least 2 samples")
    bw = median_bandwidth(a, b) if bandwidth == "median" else float(bandwidth)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    # the diagonal of a Gaussian kernel is exactly 1
    kaa = (_kernel_sum(a, a, bw) - m) / (m * (m - 1))
    kbb = (_kernel_sum(b, b, bw) - n) / (n * (n - 1))
    kab = _kernel_sum(a, b, bw) / (m * n)
    return kaa + kbb - 2.0 * kab


# ---------------------------------------------------------------- collapse detection


@dataclass
class ModeCoverage:
    fractions: np.ndarray
    background: float

    def min(self) -> float:
        return float(self.fractions.min())

    def collapsed(self, floor: float = 0.02) -> bool:
        return bool(np.any(self.fractions < floor))


def mode_coverage(samples, centers, radius: float) -> ModeCoverage:
    """Mass fraction assigned to each center (nearest center within ``radius``)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = _flat(samples)
    c = np.asarray(centers, dtype=np.float64).reshape(len(centers), -1)
    d2 = _sq_dists(x, c)
    near = np.argmin(d2, axis=1)
    inside = d2[np.arange(x.shape[0]), near] <= radius * radius
    counts = np.bincount(near[inside], minlength=c.shape[0])
    frac = counts / x.shape[0]
    return ModeCoverage(frac, float(1.0 - frac.sum()))


# ---------------------------------------------------------------- reports and sweeps


@dataclass
class MetricReport:
    values: dict
    n: int
    seed_lo: int
    seed_hi: int

    COLUMNS = ("metric", "value", "n", "seed_lo", "seed_hi")

    def __post_init__(self):
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metric values: {bad}")

    def rows(self) -> list[tuple]:
        return [(k, v, self.n, self.seed_lo, self.seed_hi) for k, v in self.values.items()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for k, v, n, lo, hi in self.rows():
                w.writerow([k, f"{v:.9g}", n, lo, hi])


@dataclass
class SweepRow:
    k: int
    abs_metric: float
    rel_metric: float
    label: str = ""


def rel_abs_sweep(student, teachers, data, feature_map: FeatureMap | None = None, n: int = 20_000,
                  seed_lo: int = 0, labels=None) -> list[SweepRow]:
    """Frechet distance of every teacher to the data (abs) and to the student (rel).

    Every model samples the same seed range, so a model compared with itself scores 0.
    """
    fm = feature_map or FeatureMap()
    ref = _flat(getattr(data, "x", data))[:n]
    s_samples = student.sample(seed_lo, n).samples
    rows = []
    for idx, teacher in enumerate(teachers):
        t_samples = teacher.sample(seed_lo, n).samples
        rows.append(
            SweepRow(
                k=int(teacher.steps),
                abs_metric=frechet_distance(t_samples, ref, fm),
                rel_metric=frechet_distance(s_samples, t_samples, fm),
                label="" if labels is None else str(labels[idx]),
            )
        )
    return rows


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "label", "abs_metric", "rel_metric"))
        for r in rows:
            w.writerow([r.k, r.label, f"{r.abs_metric:.9g}", f"{r.rel_metric:.9g}"])
