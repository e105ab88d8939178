"""Per-layer activation magnitudes along a sampling trajectory, with min-max normalization."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, no_grad
from .diffusion import PreconditioningSpec, ScheduleSpec, denoiser, schedule_time, sigma_grid, solve

PROFILE_COLUMNS = ("time_index", "sigma", "layer_name", "depth", "side", "value", "constant")


@dataclass
class LayerMeta:
    name: str
    depth: int
    side: str


@dataclass
class ActivationMatrix:
    """values[r, l] is layer l at time index r + 1 (sigma = T(r + 1, N))."""

    values: np.ndarray
    layers: list
    N: int
    schedule: ScheduleSpec

    @property
    def time_indices(self) -> np.ndarray:
        return np.arange(1, self.N + 1)

    @property
    def sigmas(self) -> np.ndarray:
        return np.asarray(schedule_time(self.time_indices, self.N, self.schedule), dtype=np.float64)


def record_activations(
    model,
    N: int = 64,
    probe=16,
    seed: int = 0,
    solver: str = "heun",
    schedule: ScheduleSpec | None = None,
    precond: PreconditioningSpec | None = None,
) -> ActivationMatrix:
    """Sample a probe batch with N steps and record mean |output| of every tagged layer.

    ``probe`` is a batch size (noise drawn from ``seed``) or an explicit noise array.
    Only the first network evaluation of each step is recorded.
    """
    info = model.layer_info() if hasattr(model, "layer_info") else []
    if not info:
        raise ValueError("model has no recordable layers")
    base = schedule or ScheduleSpec()
    sched = ScheduleSpec(base.sigma_min, base.sigma_max, base.rho, N)
    layers = [LayerMeta(*row) for row in info]
    col = {m.name: i for i, m in enumerate(layers)}
    dtype = next(iter(model.named_parameters().values())).dtype
    if np.isscalar(probe):
        if int(probe) < 1:
            raise ValueError("probe batch must be nonempty")
        z = np.random.default_rng(seed).standard_normal((int(probe),) + model.sample_shape).astype(dtype)
    else:
        z = np.asarray(probe, dtype=dtype)
        if z.shape[0] < 1:
            raise ValueError("probe batch must be nonempty")
    values = np.full((N, len(layers)), np.nan)
    state = {"row": None, "nfe": None}

    def on_step(k, sigma, x):
        state["row"] = N - k - 1  # step k runs at T(N - k, N)
        state["nfe"] = model.nfe

    def hook(name, arr):
        if state["row"] is not None and model.nfe == state["nfe"] + 1 and name in col:
            values[state["row"], col[name]] = float(np.mean(np.abs(arr)))

    prev = getattr(model, "_hook", None)
    model.set_hook(hook)
    try:
        with no_grad():
            x = Tensor(z * np.asarray(sched.sigma_max, dtype=dtype))
            solve(denoiser(model, precond), x, sigma_grid(N, sched), solver, on_step)
    finally:
        model.set_hook(prev)
    if np.isnan(values).any():
        raise RuntimeError("some layers were not recorded at every step")
    return ActivationMatrix(values, layers, N, sched)


def minmax_normalize(O):
    """Scale each layer column to [0, 1] across time; constant columns become zeros (with a warning)."""
    mat = O.values if isinstance(O, ActivationMatrix) else np.asarray(O, dtype=np.float64)
    if not np.all(np.isfinite(mat)):
        raise ValueError("activation matrix must be finite")
    mat = np.atleast_2d(mat)
    lo, hi = mat.min(axis=0), mat.max(axis=0)
    span = hi - lo
    const = span == 0
    out = np.zeros_like(mat)
    ok = ~const
    out[:, ok] = (mat[:, ok] - lo[ok]) / span[ok]
    if const.any():
        names = [O.layers[i].name for i in np.flatnonzero(const)] if isinstance(O, ActivationMatrix) else list(
            np.flatnonzero(const)
        )
        warnings.warn(f"constant activation for layers {names}; normalized to 0", RuntimeWarning, stacklevel=2)
    if isinstance(O, ActivationMatrix):
        return ActivationMatrix(out, O.layers, O.N, O.schedule)
    return out


def emit_profile(Ohat: ActivationMatrix, path) -> int:
    """Write one row per (time index, layer); returns the row count."""
    vals = Ohat.values
    const = np.all(vals == 0, axis=0)
    sig = Ohat.sigmas
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for r, t in enumerate(Ohat.time_indices):
            for l, meta in enumerate(Ohat.layers):
                w.writerow([int(t), f"{sig[r]:.9g}", meta.name, meta.depth, meta.side, f"{vals[r, l]:.9g}", int(const[l])])
                n += 1
    return n


def read_profile(path) -> tuple[np.ndarray, list[str]]:
    """Parse a profile CSV back into a [N, L] matrix and the layer order."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = list(dict.fromkeys(r["layer_name"] for r in rows))
    times = sorted({int(r["time_index"]) for r in rows})
    mat = np.zeros((len(times), len(names)))
    for r in rows:
        mat[times.index(int(r["time_index"])), names.index(r["layer_name"])] = float(r["value"])
    return mat, names
