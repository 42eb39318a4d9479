"""Randomized correctness and tightness experiments over paper-random networks.

Every trial owns an independent random stream
``make_rng(seed, <experiment id>, <sweep coordinates>..., trial)``, so a
trial's result depends only on its coordinates and never on the order in
which trials run or on how many worker processes share the work.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import InputBox, ibp_network, propagate_blockwise
from .errors import ParameterError
from .linalg import make_rng
from .network import init_network
from .oracle import CORNER_CAP, emit_polytope_cloud, empirical_range, gamma, tightness

CSV_VERSION = 1
_CORRECTNESS_ID = 1
_TIGHTNESS_ID = 2
_POLYTOPE_ID = 3
_AXIS_CODE = {"k": 0, "n": 1, "depth": 2}


def map_ordered(fn, tasks, threads=1):
    """``[fn(t) for t in tasks]``, optionally spread over worker processes."""
    tasks = list(tasks)
    if threads <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


@dataclass(frozen=True)
class CorrectnessConfig:
    mode: str = "two_layer"
    n_values: tuple = (2, 5, 10, 15, 20)
    k_values: tuple = (10, 100, 1000)
    depths: tuple = (2,)
    eps: float = 0.1
    trials: int = 1000
    n_uniform: int = 1_000_000
    include_corners: bool = True
    corner_cap: int = CORNER_CAP
    out_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("two_layer", "deep"):
            raise ParameterError(f"mode must be 'two_layer' or 'deep', got {self.mode!r}")
        if not self.n_values or (self.mode == "two_layer" and not self.k_values) or \
                (self.mode == "deep" and not self.depths):
            raise ParameterError("sweep lists must be nonempty")
        if self.trials < 1 or self.eps < 0 or self.n_uniform < 0:
            raise ParameterError("trials must be >= 1, eps and n_uniform >= 0")
        if any(v < 1 for v in self.n_values) or any(v < 1 for v in self.k_values):
            raise ParameterError("n and k values must be positive")
        if self.mode == "deep" and any(d < 2 for d in self.depths):
            raise ParameterError("depths must be >= 2")
        if self.include_corners and max(self.n_values) > self.corner_cap:
            raise ParameterError(f"n={max(self.n_values)} exceeds the corner cap {self.corner_cap}")

    def cells(self):
        if self.mode == "two_layer":
            return [(n, k, 2) for k in self.k_values for n in self.n_values]
        return [(n, n, d) for n in self.n_values for d in self.depths]


def _dims(n, k, depth, out_dim):
    return [n] + [k] * (depth - 1) + [out_dim]


def correctness_trial(task):
    cfg, n, k, depth, trial = task
    rng = make_rng(cfg.seed, _CORRECTNESS_ID, n, k, depth, trial)
    net = init_network(rng, _dims(n, k, depth, cfg.out_dim))
    x = rng.normal(size=n)
    box = InputBox(x, cfg.eps)
    cand, _ = propagate_blockwise(net, box)
    truth = empirical_range(net, box, cfg.n_uniform, cfg.include_corners, rng, cfg.corner_cap)
    g = gamma(cand, truth)
    row = {"n": n, "k": k, "depth": depth, "eps": cfg.eps, "trial": trial}
    for o in range(net.out_dim):
        row[f"gamma_{o}"] = float(g[o])
    for o in range(net.out_dim):
        row[f"lower_m_{o}"] = float(cand.lower[o])
        row[f"upper_m_{o}"] = float(cand.upper[o])
        row[f"lower_true_{o}"] = float(truth.lower[o])
        row[f"upper_true_{o}"] = float(truth.upper[o])
    return row


def run_correctness_experiment(cfg, threads=1):
    """One row per trial: coverage Γ of the expected bounds vs the sampled truth."""
    tasks = [(cfg, n, k, d, t) for (n, k, d) in cfg.cells() for t in range(cfg.trials)]
    return map_ordered(correctness_trial, tasks, threads)


def _gamma_columns(row):
    return [key for key in row if key.startswith("gamma_")]


def summarize_correctness(rows):
    """Mean Γ per (n, k, depth); multi-output Γ aggregated by mean and by min."""
    groups = {}
    for row in rows:
        gs = [row[c] for c in _gamma_columns(row)]
        key = (row["n"], row["k"], row["depth"])
        groups.setdefault(key, []).append((float(np.mean(gs)), float(np.min(gs))))
    out = []
    for (n, k, d), vals in groups.items():
        arr = np.array(vals)
        out.append({"n": n, "k": k, "depth": d, "trials": len(vals),
                    "mean_gamma": float(arr[:, 0].mean()),
                    "mean_min_gamma": float(arr[:, 1].mean()),
                    "se_gamma": float(arr[:, 0].std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                    "frac_superset": float(np.mean(arr[:, 1] >= 1.0 - 1e-9))})
    return out


@dataclass(frozen=True)
class TightnessConfig:
    axis: str = "k"
    values: tuple = (10, 100, 1000)
    n: int = 100
    k: int = 100
    eps_values: tuple = (0.01, 0.1)
    trials: int = 1000
    out_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.axis not in _AXIS_CODE:
            raise ParameterError(f"axis must be one of {sorted(_AXIS_CODE)}, got {self.axis!r}")
        if not self.values or not self.eps_values:
            raise ParameterError("sweep lists must be nonempty")
        if self.trials < 1 or any(e < 0 for e in self.eps_values):
            raise ParameterError("trials must be >= 1 and eps >= 0")
        low = 2 if self.axis == "depth" else 1
        if any(v < low for v in self.values):
            raise ParameterError(f"{self.axis} values must be >= {low}")

    def dims(self, value):
        if self.axis == "k":
            return _dims(self.n, value, 2, self.out_dim)
        if self.axis == "n":
            return _dims(value, self.k, 2, self.out_dim)
        return _dims(self.n, self.k, value, self.out_dim)


def tightness_trial(task):
    cfg, value, trial = task
    rng = make_rng(cfg.seed, _TIGHTNESS_ID, _AXIS_CODE[cfg.axis], value, trial)
    dims = cfg.dims(value)
    net = init_network(rng, dims)
    x = rng.normal(size=dims[0])
    rows = []
    for eps in cfg.eps_values:
        box = InputBox(x, eps)
        rep = tightness(ibp_network(net, box), propagate_blockwise(net, box)[0])
        for o in range(net.out_dim):
            rows.append({"axis": cfg.axis, "axis_value": value, "eps": eps, "trial": trial,
                         "output": o, "width_ibp": float(rep.width_ibp[o]),
                         "width_m": float(rep.width_m[o]), "diff": float(rep.diff[o]),
                         "ratio": float(rep.ratio[o]) if rep.ratio_valid[o] else math.nan})
    return rows


def run_tightness_experiment(cfg, threads=1):
    """One row per (value, eps, trial, output): IBP vs expected-bound widths."""
    tasks = [(cfg, v, t) for v in cfg.values for t in range(cfg.trials)]
    return [r for rows in map_ordered(tightness_trial, tasks, threads) for r in rows]


def summarize_tightness(rows):
    groups = {}
    for row in rows:
        groups.setdefault((row["axis"], row["axis_value"], row["eps"]), []).append(row)
    out = []
    for (axis, value, eps), grp in groups.items():
        diff = np.array([r["diff"] for r in grp])
        ratio = np.array([r["ratio"] for r in grp])
        ok = np.isfinite(ratio) & (ratio > 0)
        out.append({"axis": axis, "axis_value": value, "eps": eps, "trials": len(grp),
                    "mean_diff": float(diff.mean()),
                    "mean_ratio": float(ratio[ok].mean()) if ok.any() else math.nan,
                    "geomean_ratio": float(np.exp(np.log(ratio[ok]).mean())) if ok.any() else math.nan,
                    "median_ratio": float(np.median(ratio[ok])) if ok.any() else math.nan,
                    "ratio_suppressed": int((~ok).sum())})
    return out


@dataclass(frozen=True)
class PolytopeConfig:
    n: int = 20
    hidden: tuple = (100, 100, 100, 100)
    eps_values: tuple = (0.05, 0.1, 0.25)
    nets_per_eps: int = 5
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or not self.eps_values or self.nets_per_eps < 1 or self.n_samples < 0:
            raise ParameterError("invalid polytope configuration")


def run_polytope(cfg):
    """Output clouds and bound rectangles of random ``n-hidden-2`` networks.

    Returns ``(point_rows, rect_rows)``.
    """
    points, rects = [], []
    for ei, eps in enumerate(cfg.eps_values):
        for j in range(cfg.nets_per_eps):
            rng = make_rng(cfg.seed, _POLYTOPE_ID, ei, j)
            net = init_network(rng, [cfg.n, *cfg.hidden, 2])
            x = rng.normal(size=cfg.n)
            cloud = emit_polytope_cloud(net, InputBox(x, eps), cfg.n_samples, rng)
            for p in cloud.points:
                points.append({"eps": eps, "net": j, "method": "sample", "corner": "",
                               "x": float(p[0]), "y": float(p[1])})
            for method, iv in cloud.rectangles.items():
                for corner, v in (("lower", iv.lower), ("upper", iv.upper)):
                    rects.append({"eps": eps, "net": j, "method": method, "corner": corner,
                                  "x": float(v[0]), "y": float(v[1])})
    return points, rects


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows, kind, columns=None):
    """Serialize rows to CSV text with a leading ``# tightprop-csv`` version line.

    Floats are written with ``repr`` (shortest round-trip form), so equal
    inputs give byte-identical files.
    """
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    buf = io.StringIO()
    buf.write(f"# tightprop-csv v{CSV_VERSION} {kind}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path):
    """Read a tightprop CSV back into a list of dicts (strings untouched)."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def config_dict(cfg):
    return asdict(cfg)
