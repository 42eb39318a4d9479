"""Command-line driver: one subcommand per experiment family.

Every run validates its JSON config against ``configs/schema.json`` before
doing any work, writes CSV tables (plus PNG figures when matplotlib is
installed) into the output directory, and finishes with a
``manifest.json`` holding the config hash, library version, seed, file
checksums and timings.

Exit codes: 0 ok, 2 config or parameter error, 3 refusal to overwrite
existing outputs (pass ``--force``), 4 numeric divergence.
"""

import argparse
import copy
import hashlib
import json
import logging
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, find_mnist, load_idx, synthetic_blobs
from .errors import DimensionError, DivergenceError, ParameterError, ParseError
from .experiments import (CorrectnessConfig, PolytopeConfig, TightnessConfig, rows_to_csv,
                          run_correctness_experiment, run_polytope, run_tightness_experiment,
                          summarize_correctness, summarize_tightness)
from .linalg import make_rng
from .network import init_network, load_network, save_network

log = logging.getLogger("tightprop")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REFUSED = 3
EXIT_DIVERGED = 4

EXPERIMENTS = ("correctness", "tightness", "polytope", "train", "evaluate", "stats")
MANIFEST_NAME = "manifest.json"

_STATS_IDS = {"prop2": 1, "prop3": 2, "clt": 3, "assumption1": 4, "theorem2": 5}


class ConfigError(Exception):
    pass


class OutputExists(Exception):
    pass


def load_schema():
    return json.loads(resources.files("tightprop").joinpath("configs/schema.json").read_text())


def bundled_config(name):
    """Path-like handle to a config shipped with the package."""
    return resources.files("tightprop").joinpath("configs", name)


def _resolve_config_path(arg):
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_config(arg if arg.endswith(".json") else arg + ".json")
    if bundled.is_file():
        return bundled
    raise ConfigError(f"config file not found: {arg}")


def load_config(arg):
    """Read and schema-validate a config; errors name the offending path."""
    import jsonschema

    path = _resolve_config_path(arg)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{arg}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{arg}: schema error at {where}: {err.message}")
    return doc, Path(str(path)).stem


def resolve(doc, args, stem):
    """Apply command-line overrides; the result is what actually runs."""
    cfg = copy.deepcopy(doc)
    if cfg["experiment"] != args.command:
        raise ConfigError(f"config is for '{cfg['experiment']}', not '{args.command}'")
    if args.seed is not None:
        cfg["seed"] = args.seed
        if cfg["experiment"] == "train":
            cfg["params"]["seeds"] = [args.seed]
    cfg.setdefault("seed", 0)
    if args.trials is not None:
        if cfg["experiment"] not in ("correctness", "tightness"):
            raise ConfigError("--trials applies to correctness and tightness only")
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        cfg["params"]["trials"] = args.trials
    if args.out is not None:
        cfg["output_dir"] = args.out
    cfg.setdefault("output_dir", str(Path("tightprop-runs") / stem))
    return cfg


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, cfg, force, plots):
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.force = force
        self.plots = plots
        self.files = []
        self.timings = {}

    def check_targets(self, names):
        """Refuse before any work if a planned output already exists."""
        clash = [n for n in list(names) + [MANIFEST_NAME] if (self.out / n).exists()]
        if clash and not self.force:
            raise OutputExists(f"refusing to overwrite {self.out / clash[0]}"
                               f"{f' (and {len(clash) - 1} more)' if len(clash) > 1 else ''};"
                               " pass --force to replace")

    def write_text(self, name, text):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(name)
        return path

    def write_csv(self, name, rows, kind, columns=None):
        return self.write_text(name, rows_to_csv(rows, kind, columns))

    def save_network(self, name, net):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        save_network(net, path)
        self.files.append(name)

    def figure(self, name, fn, *args):
        if not self.plots:
            return
        from . import plotting
        if not plotting.available():
            log.warning("matplotlib is not installed; skipping %s", name)
            return
        self.out.mkdir(parents=True, exist_ok=True)
        fn(*args, self.out / name)
        self.files.append(name)

    def timed(self, label):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = round(time.perf_counter() - self.t0, 3)

        return _Timer()

    def write_manifest(self, argv):
        manifest = {
            "format": "tightprop-manifest",
            "version": 1,
            "library_version": __version__,
            "experiment": self.cfg["experiment"],
            "seed": self.cfg["seed"],
            "config_sha256": config_hash(self.cfg),
            "config": self.cfg,
            "files": {name: _sha256(self.out / name) for name in sorted(self.files)},
            "timings_s": self.timings,
            "argv": list(argv),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _params(cls, params, seed, **extra):
    fields = dict(params)
    for key in ("n_values", "k_values", "depths", "values", "eps_values", "hidden"):
        if key in fields:
            fields[key] = tuple(fields[key])
    return cls(seed=seed, **fields, **extra)


# correctness -----------------------------------------------------------------

def _correctness_stem(p):
    return "gamma_vs_n" if p.get("mode", "two_layer") == "two_layer" else "gamma_vs_depth"


def plan_correctness(cfg):
    stem = _correctness_stem(cfg["params"])
    return [f"{stem}.csv", f"{stem}_summary.csv"]


def cmd_correctness(cfg, run, threads):
    p = _params(CorrectnessConfig, cfg["params"], cfg["seed"])
    stem = _correctness_stem(cfg["params"])
    with run.timed("trials"):
        rows = run_correctness_experiment(p, threads)
    summary = summarize_correctness(rows)
    run.write_csv(f"{stem}.csv", rows, "correctness")
    run.write_csv(f"{stem}_summary.csv", summary, "correctness-summary")
    for row in summary:
        print(f"n={row['n']:<5} k={row['k']:<6} depth={row['depth']:<3} "
              f"mean_gamma={row['mean_gamma']:.4f} (se {row['se_gamma']:.4f}, {row['trials']} trials)")
    from .plotting import plot_correctness
    run.figure(f"{stem}.png", plot_correctness, summary)


# tightness -------------------------------------------------------------------

def plan_tightness(cfg):
    stem = f"tightness_vs_{cfg['params']['axis']}"
    return [f"{stem}.csv", f"{stem}_summary.csv"]


def cmd_tightness(cfg, run, threads):
    p = _params(TightnessConfig, cfg["params"], cfg["seed"])
    stem = f"tightness_vs_{p.axis}"
    with run.timed("trials"):
        rows = run_tightness_experiment(p, threads)
    summary = summarize_tightness(rows)
    run.write_csv(f"{stem}.csv", rows, "tightness")
    run.write_csv(f"{stem}_summary.csv", summary, "tightness-summary")
    for row in summary:
        print(f"{p.axis}={row['axis_value']:<6} eps={row['eps']:<6g} mean_diff={row['mean_diff']:.4g} "
              f"geomean_ratio={row['geomean_ratio']:.4g}")
    from .plotting import plot_tightness
    run.figure(f"{stem}.png", plot_tightness, summary)


# polytope --------------------------------------------------------------------

def plan_polytope(cfg):
    return ["polytope.csv"]


def cmd_polytope(cfg, run, threads):
    p = _params(PolytopeConfig, cfg["params"], cfg["seed"])
    with run.timed("clouds"):
        points, rects = run_polytope(p)
    run.write_csv("polytope.csv", rects + points, "polytope",
                  ["eps", "net", "method", "corner", "x", "y"])
    print(f"{len(points)} sampled outputs, {len(rects) // 2} rectangles")
    from .plotting import plot_polytope
    run.figure("polytope.png", plot_polytope, points, rects)


# datasets for train/evaluate -------------------------------------------------

def load_datasets(spec):
    """``(train, test)`` per a dataset spec; the subset depends only on ``data_seed``."""
    data_seed = spec.get("data_seed", 0)
    n_train = spec.get("train_size", 2000)
    n_test = spec.get("test_size", 1000)
    if spec["source"] == "mnist":
        full = load_idx(*find_mnist())
        if n_train + n_test > len(full):
            raise ParameterError(f"requested {n_train + n_test} records, file holds {len(full)}")
        order = make_rng(data_seed, 0xDA7A).permutation(len(full))
        return full.subset(order[:n_train]), full.subset(order[n_train:n_train + n_test])
    classes = spec.get("n_classes", 2)
    dim = spec.get("dim", 4)
    sep = spec.get("separation", 3.0)
    noise = spec.get("noise", 1.0)
    if n_train % classes or n_test % classes:
        raise ParameterError("blob train/test sizes must be multiples of n_classes")
    train = synthetic_blobs(make_rng(data_seed, 0xB10B, 0), classes, n_train // classes, dim, sep, noise)
    test = synthetic_blobs(make_rng(data_seed, 0xB10B, 1), classes, n_test // classes, dim, sep, noise)
    return train, test


def _pgd_kwargs(spec):
    from .robust import MNIST_EPS_TEST
    return {"eps_test_set": tuple(spec.get("eps_test", MNIST_EPS_TEST)),
            "steps": spec.get("steps", 40), "restarts": spec.get("restarts", 1),
            "step_size": spec.get("step_size"),
            "accuracy_floor": spec.get("accuracy_floor")}


def _scatter(models, dataset, spec, seed):
    from .robust import evaluate_grid
    kw = _pgd_kwargs(spec)
    return evaluate_grid(models, dataset, kw["eps_test_set"], kw["steps"], kw["restarts"], seed,
                         kw["accuracy_floor"], step_size=kw["step_size"])


# train -----------------------------------------------------------------------

def _checkpoint(run_id, seed):
    return f"checkpoints/{run_id}_s{seed}.json"


def plan_train(cfg):
    p = cfg["params"]
    names = ["train_log.csv", "models.json"]
    names += [_checkpoint(r["id"], s) for s in p.get("seeds", [cfg["seed"]]) for r in p["runs"]]
    if "evaluate" in p:
        names.append("scatter.csv")
    return names


def cmd_train(cfg, run, threads):
    from .robust import TrainConfig, train

    p = cfg["params"]
    ids = [r["id"] for r in p["runs"]]
    if len(set(ids)) != len(ids):
        raise ParameterError("run ids must be unique")
    with run.timed("load_data"):
        train_set, test_set = load_datasets(p["dataset"])
    dims = [train_set.dim, *p["hidden"], train_set.class_count]
    seeds = p.get("seeds", [cfg["seed"]])
    log_rows, index, models = [], [], {}
    for seed in seeds:
        init = init_network(make_rng(seed, 0x1A17), dims, scheme=p.get("init", "trained_default"),
                            seed=seed)
        for spec in p["runs"]:
            tc = TrainConfig(kappa=spec["kappa"], eps_train=spec["eps_train"],
                             learning_rate=p.get("learning_rate", 0.1), epochs=p.get("epochs", 20),
                             batch_size=p.get("batch_size", 50),
                             temperature=p.get("temperature", 1.0), seed=seed,
                             momentum=p.get("momentum", 0.0))
            model_id = f"{spec['id']}_s{seed}"
            with run.timed(f"train_{model_id}"):
                result = train(init, train_set, tc, test=test_set)
            for row in result.log:
                log_rows.append({"model_id": spec["id"], "seed": seed, "kappa": tc.kappa,
                                 "eps_train": tc.eps_train, **row})
            last = result.log[-1] if result.log else {}
            print(f"{model_id}: loss={last.get('loss', math.nan):.4f} "
                  f"test_acc={last.get('nominal_acc', math.nan):.4f}")
            run.save_network(_checkpoint(spec["id"], seed), result.net)
            index.append({"id": model_id, "path": _checkpoint(spec["id"], seed),
                          "kappa": tc.kappa, "eps_train": tc.eps_train, "seed": seed})
            models[model_id] = (result.net, {"kappa": tc.kappa, "eps_train": tc.eps_train})
    run.write_csv("train_log.csv", log_rows, "train-log",
                  ["model_id", "seed", "kappa", "eps_train", "epoch", "loss", "nominal_acc",
                   "mean_bound_width"])
    run.write_text("models.json", json.dumps({"models": index}, indent=2) + "\n")
    from .plotting import plot_scatter, plot_training
    run.figure("training.png", plot_training, log_rows)
    if "evaluate" in p:
        with run.timed("evaluate"):
            rows = _scatter(models, test_set, p["evaluate"], cfg["seed"])
        _write_scatter(run, rows)
        run.figure("scatter.png", plot_scatter, rows)


def _write_scatter(run, rows):
    for row in rows:
        print(f"{row['model_id']}: accuracy={row['accuracy']:.4f} "
              f"mean_robustness={row['mean_robustness']:.4f}")
    run.write_csv("scatter.csv", rows, "scatter")


# evaluate --------------------------------------------------------------------

def plan_evaluate(cfg):
    return ["scatter.csv"]


def _evaluate_models(p):
    entries = list(p.get("models", []))
    if "checkpoint_dir" in p:
        root = Path(p["checkpoint_dir"])
        index = root / "models.json"
        if not index.exists():
            raise ParameterError(f"no models.json under {root}")
        for e in json.loads(index.read_text())["models"]:
            entries.append({**e, "path": str(root / e["path"])})
    if not entries:
        raise ParameterError("evaluate needs 'models' or 'checkpoint_dir'")
    models = {}
    for e in entries:
        if e["id"] in models:
            raise ParameterError(f"duplicate model id {e['id']!r}")
        if not Path(e["path"]).exists():
            raise ParameterError(f"checkpoint not found: {e['path']}")
        models[e["id"]] = (load_network(e["path"]),
                           {"kappa": e.get("kappa"), "eps_train": e.get("eps_train")})
    return models


def cmd_evaluate(cfg, run, threads):
    p = cfg["params"]
    models = _evaluate_models(p)
    _, test_set = load_datasets(p["dataset"])
    with run.timed("evaluate"):
        rows = _scatter(models, test_set, p.get("pgd", {}), cfg["seed"])
    _write_scatter(run, rows)
    from .plotting import plot_scatter
    run.figure("scatter.png", plot_scatter, rows)


# stats -----------------------------------------------------------------------

def plan_stats(cfg):
    return [f"{name}.csv" for name in _STATS_IDS if name in cfg["params"]]


def _prop2_x(spec, n, rng):
    x = spec.get("x", "random")
    if x == "zeros":
        return np.zeros(n)
    if x == "random":
        return rng.normal(size=n)
    x = np.asarray(x, dtype=float)
    if x.size != n:
        raise ParameterError(f"prop2.x has {x.size} entries, n={n}")
    return x


def stats_prop2(spec, rng):
    from .stats import layer_output_law, mc_layer_output_moments

    sigma, n, eps = spec.get("sigma", 1.0), spec.get("n", 3), spec.get("eps", 1.0)
    x = _prop2_x(spec, n, rng)
    var = layer_output_law(sigma, x, eps).variance
    row = {"sigma": sigma, "n": n, "eps": eps, "x_norm_sq": float(x @ x), "variance": var}
    draws = spec.get("draws", 0)
    if draws:
        cov, se = mc_layer_output_moments(sigma, x, eps, spec.get("k", 4), draws, rng)
        diag = np.diag(cov)
        off = ~np.eye(cov.shape[0], dtype=bool)
        row.update({"mc_draws": draws, "mc_diag_min": float(diag.min()),
                    "mc_diag_max": float(diag.max()),
                    "mc_diag_max_rel_err": float(np.max(np.abs(diag - var)) / var) if var else math.nan,
                    "mc_offdiag_max_z": float(np.max(np.abs(cov[off]) / se[off])) if off.any() else 0.0})
    print(f"prop2: variance = {var:.12g}")
    return [row]


def stats_prop3(spec, rng):
    from .stats import prop3_arbitration

    ks = spec.get("k_values", [1, 4, 16, 64])
    if any(k < 1 for k in ks):
        raise ParameterError(f"prop3 k values must be >= 1, got {ks}")
    rows = prop3_arbitration(ks, spec.get("draws", 1_000_000), rng, spec.get("rel_tol", 0.01))
    for r in rows:
        print(f"prop3: k={r['k']:<4} mc={r['mc_mean']:.5f} k*sqrt(2/pi) form={r['formula_l1']:.5f} "
              f"k/pi form={r['formula_scaled']:.5f}")
    return rows


def stats_clt(spec, rng):
    from .stats import clt_normality_check

    rows = [clt_normality_check(n, spec.get("trials", 100_000), rng, eps=spec.get("eps", 1.0))
            for n in spec.get("n_values", [2, 10, 100])]
    for r in rows:
        print(f"clt: n={r['n']:<5} ks_distance={r['ks_distance']:.4f} "
              f"excess_kurtosis={r['excess_kurtosis']:.4f}")
    return rows


def stats_assumption1(spec, rng):
    from .stats import assumption1_self_check, layer_output_law

    n, k, eps = spec.get("n", 10), spec.get("k", 100), spec.get("eps", 0.1)
    x = rng.normal(size=n)
    b1 = rng.uniform(-1 / math.sqrt(n), 1 / math.sqrt(n), size=k)
    law = layer_output_law(1 / math.sqrt(n), x, eps)
    res = assumption1_self_check(law, b1, 1 / math.sqrt(k), 0.0, spec.get("draws", 100_000), rng)
    b = res.pop("bounds")
    row = {"n": n, "k": k, "eps": eps, **res, "l_approx": b.l_approx, "u_approx": b.u_approx}
    print(f"assumption1: m_hat={row['m_hat']:.3f} "
          f"var closed={row['closed_form_var']:.4g} sampled={row['sample_var']:.4g}")
    return [row]


def stats_theorem2(spec, rng):
    from .bounds import InputBox, ibp_network, propagate_blockwise, width
    from .stats import theorem2_assumption_check

    n, k, trials = spec.get("n", 100), spec.get("k", 100), spec.get("trials", 100)
    rows = []
    for eps in spec.get("eps_values", [0.01, 0.1]):
        cols, full, tighter = [], 0, 0
        for _ in range(trials):
            net = init_network(rng, [n, k, 1])
            x = rng.normal(size=n)
            ok, _, _ = theorem2_assumption_check(net.layers[0].weights, net.layers[0].bias, x, eps)
            cols.append(ok.mean())
            full += bool(ok.all())
            box = InputBox(x, eps)
            tighter += bool(width(propagate_blockwise(net, box)[0])[0] <= width(ibp_network(net, box))[0])
        rows.append({"n": n, "k": k, "eps": eps, "trials": trials,
                     "mean_fraction_columns_ok": float(np.mean(cols)),
                     "fraction_all_columns_ok": full / trials,
                     "fraction_m_not_wider": tighter / trials})
        print(f"theorem2: eps={eps:g} columns_ok={rows[-1]['mean_fraction_columns_ok']:.3f} "
              f"m_not_wider={rows[-1]['fraction_m_not_wider']:.3f}")
    return rows


_STATS_FNS = {"prop2": stats_prop2, "prop3": stats_prop3, "clt": stats_clt,
              "assumption1": stats_assumption1, "theorem2": stats_theorem2}


def cmd_stats(cfg, run, threads):
    p = cfg["params"]
    if not p:
        raise ParameterError("stats config selects no checks")
    ks = p.get("prop3", {}).get("k_values", [])
    if any(k < 1 for k in ks):
        raise ParameterError(f"prop3 k values must be >= 1, got {ks}")
    results = {}
    for name, fn in _STATS_FNS.items():
        if name in p:
            with run.timed(name):
                results[name] = fn(p[name], make_rng(cfg["seed"], 0x5A, _STATS_IDS[name]))
            run.write_csv(f"{name}.csv", results[name], f"stats-{name}")
    if "prop3" in results:
        from .plotting import plot_prop3
        run.figure("prop3.png", plot_prop3, results["prop3"])


_COMMANDS = {
    "correctness": (plan_correctness, cmd_correctness),
    "tightness": (plan_tightness, cmd_tightness),
    "polytope": (plan_polytope, cmd_polytope),
    "train": (plan_train, cmd_train),
    "evaluate": (plan_evaluate, cmd_evaluate),
    "stats": (plan_stats, cmd_stats),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tightprop", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"tightprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run a {name} experiment")
        sp.add_argument("--config", required=True,
                        help="JSON config file, or the name of a bundled config")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent trials (results do not depend on it)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--trials", type=int, help="override the trial count")
        sp.add_argument("--dry-run", action="store_true",
                        help="print the resolved config and exit")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        doc, stem = load_config(args.config)
        cfg = resolve(doc, args, stem)
        if args.dry_run:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        plan, cmd = _COMMANDS[args.command]
        run = Run(cfg, args.force, not args.no_plots)
        run.check_targets(plan(cfg))
        t0 = time.perf_counter()
        cmd(cfg, run, args.threads)
        run.timings["total"] = round(time.perf_counter() - t0, 3)
        run.write_manifest(["tightprop", *argv])
        print(f"wrote {len(run.files)} files and {MANIFEST_NAME} to {run.out}")
        return EXIT_OK
    except (ConfigError, ParameterError, DimensionError, ParseError) as exc:
        print(f"tightprop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"tightprop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputExists as exc:
        print(f"tightprop: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except DivergenceError as exc:
        print(f"tightprop: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
