"""Figures rendered from experiment tables (optional ``matplotlib`` extra).

matplotlib is imported lazily with the non-interactive Agg backend, so
the rest of the package works without it. :func:`available` reports
whether rendering is possible.
"""

import math

_PNG_META = {"Software": None}


def available():
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    _pyplot().close(fig)
    return path


def plot_correctness(summary, path):
    """Mean Γ against n (one line per k) or against depth (one line per n)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    deep = len({r["depth"] for r in summary}) > 1
    series, xkey = ("n", "depth") if deep else ("k", "n")
    for key in sorted({r[series] for r in summary}):
        rows = sorted((r for r in summary if r[series] == key), key=lambda r: r[xkey])
        ax.errorbar([r[xkey] for r in rows], [r["mean_gamma"] for r in rows],
                    yerr=[r["se_gamma"] for r in rows], marker="o", capsize=3,
                    label=f"{series}={key}")
    ax.set_xlabel(xkey)
    ax.set_ylabel("mean Γ")
    ax.set_ylim(top=1.005)
    ax.legend()
    return _save(fig, path)


def plot_tightness(summary, path):
    """Width difference and ratio against the swept axis, one line per ε."""
    plt = _pyplot()
    fig, (ax_d, ax_r) = plt.subplots(1, 2, figsize=(9, 3.5))
    axis = summary[0]["axis"]
    for eps in sorted({r["eps"] for r in summary}):
        rows = sorted((r for r in summary if r["eps"] == eps), key=lambda r: r["axis_value"])
        xs = [r["axis_value"] for r in rows]
        ax_d.plot(xs, [r["mean_diff"] for r in rows], marker="o", label=f"ε={eps:g}")
        ax_r.plot(xs, [r["geomean_ratio"] for r in rows], marker="o", label=f"ε={eps:g}")
    for ax, label in ((ax_d, "mean W_IBP − W_M"), (ax_r, "geometric-mean W_IBP / W_M")):
        ax.set_xlabel(axis)
        ax.set_ylabel(label)
        ax.set_yscale("log")
        if axis != "depth":
            ax.set_xscale("log")
        ax.legend()
    return _save(fig, path)


def plot_polytope(points, rects, path):
    """Output clouds with IBP and expected-bound rectangles, one panel per (ε, net)."""
    import numpy as np
    from matplotlib.patches import Rectangle

    plt = _pyplot()
    panels = sorted({(r["eps"], r["net"]) for r in rects})
    cols = min(len(panels), 5)
    rows_n = math.ceil(len(panels) / cols)
    fig, axes = plt.subplots(rows_n, cols, figsize=(3 * cols, 3 * rows_n), squeeze=False)
    colors = {"ibp": "tab:red", "expected": "tab:blue"}
    for ax, (eps, net) in zip(axes.flat, panels):
        pts = np.array([(p["x"], p["y"]) for p in points if p["eps"] == eps and p["net"] == net])
        if pts.size:
            ax.scatter(pts[:, 0], pts[:, 1], s=1, c="0.4", alpha=0.3, rasterized=True)
        for method in ("ibp", "expected"):
            corners = {r["corner"]: (r["x"], r["y"]) for r in rects
                       if r["eps"] == eps and r["net"] == net and r["method"] == method}
            if len(corners) == 2:
                (x0, y0), (x1, y1) = corners["lower"], corners["upper"]
                ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False,
                                       edgecolor=colors[method], label=method))
        ax.set_title(f"ε={eps:g}, net {net}", fontsize=9)
        ax.legend(fontsize=7)
        # The IBP box can dwarf the cloud; zoom on the expected rectangle.
        exp = [(r["x"], r["y"]) for r in rects
               if r["eps"] == eps and r["net"] == net and r["method"] == "expected"]
        if exp and pts.size:
            xs = [e[0] for e in exp] + list(pts[:, 0])
            ys = [e[1] for e in exp] + list(pts[:, 1])
            pad_x = 0.1 * (max(xs) - min(xs) or 1.0)
            pad_y = 0.1 * (max(ys) - min(ys) or 1.0)
            ax.set_xlim(min(xs) - pad_x, max(xs) + pad_x)
            ax.set_ylim(min(ys) - pad_y, max(ys) + pad_y)
    for ax in list(axes.flat)[len(panels):]:
        ax.axis("off")
    return _save(fig, path)


def plot_scatter(rows, path):
    """Test accuracy against mean PGD robustness, one point per model."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for row in rows:
        kappa = row.get("kappa")
        marker = "o" if not kappa else "^"
        ax.scatter(row["mean_robustness"], row["accuracy"], marker=marker,
                   c="tab:orange" if kappa else "tab:gray")
        ax.annotate(str(row["model_id"]), (row["mean_robustness"], row["accuracy"]), fontsize=7)
    ax.set_xlabel("mean PGD robustness")
    ax.set_ylabel("test accuracy")
    return _save(fig, path)


def plot_training(log_rows, path):
    """Loss and mean bound width per epoch for every training run."""
    plt = _pyplot()
    fig, (ax_l, ax_w) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in sorted({(r["model_id"], r["seed"]) for r in log_rows}):
        rows = [r for r in log_rows if (r["model_id"], r["seed"]) == key]
        epochs = [r["epoch"] for r in rows]
        ax_l.plot(epochs, [r["loss"] for r in rows], label=f"{key[0]} s{key[1]}")
        ax_w.plot(epochs, [r["mean_bound_width"] for r in rows], label=f"{key[0]} s{key[1]}")
    ax_l.set_ylabel("train loss")
    ax_w.set_ylabel("mean bound width")
    ax_w.set_yscale("log")
    for ax in (ax_l, ax_w):
        ax.set_xlabel("epoch")
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_prop3(rows, path):
    """Monte-Carlo mean against both closed forms, per k."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = [r["k"] for r in rows]
    ax.plot(ks, [r["mc_mean"] for r in rows], "ko", label="Monte Carlo")
    ax.plot(ks, [r["formula_l1"] for r in rows], "s--", label="k·sqrt(2/π) form")
    ax.plot(ks, [r["formula_scaled"] for r in rows], "^:", label="k/π form")
    ax.set_xscale("log")
    ax.set_xlabel("k")
    ax.set_ylabel("E[‖a‖₂ − ‖a‖₁/√(2π)]")
    ax.legend()
    return _save(fig, path)
