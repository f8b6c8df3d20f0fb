"""Command-line front end.

Subcommands::

    toy       sample a Gaussian-process toy dataset with its five orderings
    impute    remove and impute pixels for one (saliency, order, eta) setting
    evaluate  run the curves described by a JSON run config and write a report
    mi-check  run the information-theory property suite
    bench     time noisy linear imputation

Exit codes: 0 ok, 2 usage or config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .classifiers import TrainConfig, eval_accuracy, split_index
from .errors import InputError, IoError, RoadError, UsageError
from .imputation import ImputationConfig, equation_residuals, impute_dataset
from .infotheory import (
    DiscreteJoint,
    accuracy_bounds,
    bayes_accuracy,
    info_from_accuracies,
    leakage_decomposition,
    mutual_information,
)
from .masking import rank_positions, removal_masks
from .tensor_io import (
    Dataset,
    file_readable,
    load_dataset,
    load_saliency,
    read_array,
    write_array,
    write_curve_csv,
    write_rows_csv,
)
from .toyworld import ORDERINGS, GPDatasetConfig, GPWorld, handcrafted_ordering

log = logging.getLogger("roadeval")

SEED_ENV = "ROAD_SEED"


def substream(seed: int, purpose: str) -> int:
    """Stable 32-bit seed for one consumer of randomness."""
    digest = hashlib.sha256(f"{int(seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def unit_float(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _verify(paths):
    for p in paths:
        if not file_readable(p):
            raise IoError(f"output {p} missing or unreadable")


# --------------------------------------------------------------------------
# toy


def cmd_toy(args) -> int:
    seed = resolve_seed(args.seed)
    cfg = GPDatasetConfig(height=args.height, width=args.width, kernel_width_fraction=args.kernel_width,
                          n_samples=args.n, seed=substream(seed, "toy/sample"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = GPWorld(cfg).sample()
    written = [out / "images.npy", out / "labels.npy"]
    write_array(ds.images, written[0])
    write_array(ds.labels.astype(np.int64), written[1])
    for kind in ORDERINGS:
        path = out / f"saliency_{kind}.npy"
        write_array(handcrafted_ordering(kind, cfg, seed=substream(seed, "toy/ordering")), path)
        written.append(path)
    _verify(written)
    echo = {"seed": seed, "dataset": cfg.to_dict(), "files": [p.name for p in written]}
    print(json.dumps(echo, indent=2, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# impute


def cmd_impute(args) -> int:
    seed = resolve_seed(args.seed)
    data = Path(args.data)
    raw = read_array(data / "images.npy")
    ds = load_dataset(data)
    if args.saliency_file:
        sal = read_array(args.saliency_file).astype(np.float64)
        if sal.ndim == 4:
            sal = sal.sum(axis=3)
    else:
        sal_path = data / f"saliency_{args.saliency}.npy"
        if not sal_path.is_file():
            raise UsageError(f"no saliency file {sal_path}")
        sal = load_saliency(data, args.saliency)
    n = len(ds)
    h, w, c = ds.image_shape
    sal = ev._saliency_stack(sal, n, (h, w))
    cfg = ImputationConfig(strategy=args.strategy, fill_value=args.fill_value, noise_fraction=args.noise,
                           solver_tol=args.solver_tol, solver_max_iters=args.max_iters,
                           rng_seed=substream(seed, "impute"))
    removed = removal_masks(rank_positions(sal), args.eta, args.order, (h, w))
    out = impute_dataset(ds.images, removed, cfg, channel_mean=ds.per_channel_mean, value_range=ds.value_range)
    out = out.reshape(raw.shape).astype(raw.dtype, copy=False)
    write_array(out, args.out)
    written = [Path(args.out)]
    if args.masks_out:
        write_array(removed.astype(np.float64), args.masks_out)
        written.append(Path(args.masks_out))
    _verify(written)
    line = f"imputed {n} images, {int(removed.sum())} pixels, strategy={cfg.strategy} eta={args.eta:g}"
    if cfg.strategy == "noisy_linear" and cfg.noise_scale(ds.value_range) == 0 and removed.any():
        img = out.reshape((n, h, w, c)).astype(np.float64)
        worst = max(float(np.abs(equation_residuals(img[i], removed[i], ch)).max(initial=0.0))
                    for i in range(n) for ch in range(c))
        line += f" max_residual={worst:.3e}"
    print(line)
    return 0


# --------------------------------------------------------------------------
# evaluate


@dataclasses.dataclass
class RunConfig:
    output_dir: Path
    strategies: list
    saliency: dict
    dataset_path: Path | None = None
    toy: dict | None = None
    seed: int = 0
    debias: bool = True
    plots: bool = True
    base_dir: Path = Path(".")

    @classmethod
    def from_file(cls, path, seed_override=None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"run config {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"run config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("run config must be a JSON object")
        allowed = {"output_dir", "strategies", "saliency", "dataset_path", "toy", "seed", "debias", "plots"}
        unknown = set(doc) - allowed
        if unknown:
            raise UsageError(f"unknown run config keys: {sorted(unknown)}")
        base = path.parent
        if "output_dir" not in doc or not doc.get("strategies") or not doc.get("saliency"):
            raise UsageError("run config needs output_dir, strategies and saliency")
        if (doc.get("dataset_path") is None) == (doc.get("toy") is None):
            raise UsageError("give exactly one of dataset_path and toy")
        seed = resolve_seed(seed_override if seed_override is not None else doc.get("seed"))
        return cls(
            output_dir=base / doc["output_dir"],
            strategies=[_strategy(s, seed, i) for i, s in enumerate(doc["strategies"])],
            saliency=dict(doc["saliency"]),
            dataset_path=base / doc["dataset_path"] if doc.get("dataset_path") else None,
            toy=doc.get("toy"),
            seed=seed,
            debias=bool(doc.get("debias", True)),
            plots=bool(doc.get("plots", True)),
            base_dir=base,
        )


def _strategy(spec: dict, seed: int, position: int) -> tuple[str, ev.StrategyConfig]:
    if not isinstance(spec, dict):
        raise UsageError("every strategy must be a JSON object")
    spec = dict(spec)
    name = spec.pop("name", None)
    try:
        imp = dict(spec.pop("imputation", {}))
        train = dict(spec.pop("train", {}))
        cfg = ev.StrategyConfig(**spec, imputation=ImputationConfig(**imp), train=TrainConfig(**train))
    except TypeError as exc:
        raise UsageError(f"strategy {position}: {exc}") from None
    name = name or cfg.name
    if "rng_seed" not in imp:
        cfg.imputation.rng_seed = substream(seed, f"impute/{name}")
    if "seed" not in train:
        cfg.train.seed = substream(seed, f"train/{name}")
    return name, cfg


def _load_run_data(run: RunConfig) -> tuple[Dataset, GPDatasetConfig | None]:
    if run.dataset_path is not None:
        return load_dataset(run.dataset_path), None
    toy = dict(run.toy)
    toy.setdefault("seed", substream(run.seed, "toy/sample"))
    try:
        cfg = GPDatasetConfig(**toy)
    except TypeError as exc:
        raise UsageError(f"toy config: {exc}") from None
    return GPWorld(cfg).sample(), cfg


def _load_saliency_sources(run: RunConfig, ds: Dataset, toy_cfg) -> dict:
    h, w, _ = ds.image_shape
    grid = toy_cfg or GPDatasetConfig(height=h, width=w)
    out = {}
    for method in sorted(run.saliency):
        src = run.saliency[method]
        if src is None:
            if run.dataset_path is None:
                raise UsageError(f"saliency {method!r}: no source and no dataset directory")
            path = run.dataset_path / f"saliency_{method}.npy"
        elif isinstance(src, str) and src.lower() in ORDERINGS:
            out[method] = handcrafted_ordering(src, grid, seed=substream(run.seed, "toy/ordering"))
            continue
        else:
            path = run.base_dir / src
        if not path.is_file():
            raise UsageError(f"saliency {method!r}: file {path} not found")
        arr = read_array(path).astype(np.float64)
        # H x W shared map, N x H x W stack, or N x H x W x C per-channel stack
        out[method] = arr.sum(axis=3) if arr.ndim == 4 else arr
    return out


# worker state for the process pool
_STATE: dict = {}


def _init_worker(ds, saliency, baselines):
    _STATE.update(ds=ds, saliency=saliency, baselines=baselines, clean={})


def _run_task(task):
    kind, key, payload = task
    ds, sal = _STATE["ds"], _STATE["saliency"]
    if kind == "curve":
        sname, cfg, method = payload
        return ev.run_curve(ds, sal[method], cfg, name=method, baseline=_STATE["baselines"].get(sname),
                            clean_cache=_STATE["clean"])
    order, grid, method = payload
    return ev.estimate_gamma(ds, sal[method], order, grid)


def _fan_out(tasks, jobs, ds, saliency, baselines) -> dict:
    if jobs <= 1 or len(tasks) <= 1:
        _init_worker(ds, saliency, baselines)
        try:
            return {t[1]: _run_task(t) for t in tasks}
        finally:
            _STATE.clear()
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                                initargs=(ds, saliency, baselines)) as pool:
        results = list(pool.map(_run_task, tasks))
    return {t[1]: r for t, r in zip(tasks, results)}


def _baseline_accuracy(ds, cfg, models, curve) -> float:
    if curve.eta[0] == 0.0:
        return float(curve.acc_mean[0])
    n_train = split_index(len(ds))
    X = ds.images[n_train:].reshape(len(ds) - n_train, -1)
    return float(np.mean([eval_accuracy(m, X, ds.labels[n_train:]) for m in models]))


def run_evaluation(run: RunConfig, jobs: int = 1) -> list[Path]:
    """Compute every curve in `run` and write the report; returns the files written."""
    ds, toy_cfg = _load_run_data(run)
    saliency = _load_saliency_sources(run, ds, toy_cfg)
    methods = sorted(saliency)
    strategies = dict(run.strategies)
    if len(strategies) != len(run.strategies):
        raise UsageError("strategy names must be unique")

    baselines = {}
    for sname in sorted(strategies):
        cfg = strategies[sname]
        if not cfg.retrain or (run.debias and cfg.eta_grid[0] != 0.0):
            baselines[sname] = ev.train_baseline(ds, cfg)
    tasks = [("curve", ("curve", s, m), (s, strategies[s], m)) for s in sorted(strategies) for m in methods]
    gamma_keys = set()
    if run.debias:
        h, w, c = ds.image_shape
        if len(ds) < 2 * h * w * c:
            raise InputError(f"debiasing needs at least {2 * h * w * c} images, have {len(ds)}; "
                             "set \"debias\": false")
        gamma_keys = {(strategies[s].order.value, strategies[s].eta_grid) for s in strategies}
        tasks += [("gamma", ("gamma", o, g, m), (o, g, m)) for o, g in sorted(gamma_keys) for m in methods]
    results = _fan_out(tasks, jobs, ds, saliency, baselines)

    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []
    report = {"seed": run.seed, "methods": methods, "strategies": {}}
    per_strategy = {}
    for sname in sorted(strategies):
        cfg = strategies[sname]
        curves = {m: results[("curve", sname, m)] for m in methods}
        per_strategy[sname] = curves
        path = out / f"curves_{sname}.csv"
        write_curve_csv([curves[m] for m in methods], path)
        written.append(path)
        entry = {
            "order": cfg.order.value,
            "retrain": cfg.retrain,
            "imputation": cfg.imputation.strategy,
            "auc": {m: curves[m].auc() for m in methods},
            "auc_rank": ev.auc_ranking(curves, cfg.order),
        }
        if len(methods) >= 2:
            _, ranks = ev.strategy_ranking(curves, cfg.order)
            entry["rank_matrix"] = {"eta": list(cfg.eta_grid), "methods": methods, "ranks": ranks.tolist()}
        if run.debias:
            gammas = {m: results[("gamma", cfg.order.value, cfg.eta_grid, m)] for m in methods}
            path = out / f"gamma_{sname}.csv"
            write_rows_csv(["eta"] + methods,
                           [[e] + [gammas[m].gamma[i] for m in methods] for i, e in enumerate(cfg.eta_grid)], path)
            written.append(path)
            debiased, clamped = [], {}
            for m in methods:
                base = _baseline_accuracy(ds, cfg, baselines.get(sname), curves[m])
                d = ev.debias_curve(curves[m], base, gammas[m], cfg.order)
                d.name = m
                debiased.append(d)
                clamped[m] = [bool(x) for x in d.clamped]
            path = out / f"debiased_{sname}.csv"
            write_curve_csv(debiased, path)
            written.append(path)
            entry["debiased_clamped"] = clamped
            if run.plots:
                written.append(_plot_gamma(gammas, out / f"gamma_{sname}.svg", sname))
        if run.plots:
            written.append(_plot_curves(curves, out / f"curves_{sname}.svg", sname))
        report["strategies"][sname] = entry

    names = sorted(strategies)
    if len(methods) >= 2 and len(names) >= 2:
        report["spearman"] = {}
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                pair = {}
                for mode in ("concat", "mean"):
                    try:
                        pair[mode] = ev.consistency(per_strategy[a], strategies[a].order,
                                                    per_strategy[b], strategies[b].order, mode=mode)
                    except RoadError as exc:
                        log.warning("spearman %s vs %s (%s) undefined: %s", a, b, mode, exc)
                        pair[mode] = None
                report["spearman"][f"{a}|{b}"] = pair
    path = out / "rankings.json"
    try:
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    _verify(written)
    return written


def _plot_curves(curves, path, title):
    from .plotting import plot_curves
    return plot_curves(curves, path, title)


def _plot_gamma(gammas, path, title):
    from .plotting import plot_gamma
    return plot_gamma(gammas, path, title)


def cmd_evaluate(args) -> int:
    run = RunConfig.from_file(args.config, seed_override=args.seed)
    if args.no_plots:
        run.plots = False
    before = set(run.output_dir.rglob("*")) if run.output_dir.exists() else set()
    created_dir = not run.output_dir.exists()
    try:
        written = run_evaluation(run, jobs=args.jobs)
    except BaseException:
        # remove partial outputs
        if run.output_dir.exists():
            for p in sorted(set(run.output_dir.rglob("*")) - before, reverse=True):
                if p.is_file():
                    p.unlink()
                elif p.is_dir() and not any(p.iterdir()):
                    p.rmdir()
            if created_dir and not any(run.output_dir.iterdir()):
                run.output_dir.rmdir()
        raise
    for p in written:
        print(f"wrote {p}")
    return 0


# --------------------------------------------------------------------------
# mi-check


def _random_probs(rng, shape):
    p = rng.random(shape) ** 2
    p[rng.random(shape) < 0.2] = 0.0
    if p.sum() == 0:
        p.flat[0] = 1.0
    return p / p.sum()


def mi_property_suite(n: int, seed: int) -> dict:
    """Largest violation of each identity over `n` random joints."""
    rng = np.random.default_rng(substream(seed, "mi-check"))
    worst = {"leakage_identity": 0.0, "accuracy_bounds": 0.0, "accuracy_lemma": 0.0, "mitigator_zero": 0.0}
    for _ in range(n):
        shape = tuple(rng.integers(1, 5, 3))
        d = leakage_decomposition(DiscreteJoint(["C", "X", "M"], _random_probs(rng, shape)))
        worst["leakage_identity"] = max(worst["leakage_identity"], abs(d.residual))

        nx = int(rng.integers(1, 9))
        t = rng.random((2, nx)) ** 2
        t /= t.sum(axis=1, keepdims=True) * 2
        j = DiscreteJoint(["C", "X"], t)
        info = mutual_information(j, "X", "C")
        lo, hi = accuracy_bounds(info)
        acc = bayes_accuracy(j)
        worst["accuracy_bounds"] = max(worst["accuracy_bounds"], lo - acc, acc - hi)
        worst["accuracy_lemma"] = max(worst["accuracy_lemma"], abs(info_from_accuracies(j) - info))

        nc, nxx, nm = (int(v) for v in rng.integers(2, 5, 3))
        f = rng.integers(0, nm, nxx)
        p = np.zeros((nc, nxx, nm))
        p[:, np.arange(nxx), f] = _random_probs(rng, (nc, nxx))
        dm = leakage_decomposition(DiscreteJoint(["C", "X", "M"], p))
        worst["mitigator_zero"] = max(worst["mitigator_zero"], dm.mitigator)
    return worst


def cmd_mi_check(args) -> int:
    worst = mi_property_suite(args.n, resolve_seed(args.seed))
    ok = True
    for name in sorted(worst):
        passed = worst[name] < args.tol
        ok &= passed
        print(f"{name} n={args.n} max_violation={worst[name]:.3e} {'ok' if passed else 'FAIL'}")
    return 0 if ok else 3


# --------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    cfg = ImputationConfig(strategy="noisy_linear", noise_fraction=args.noise)
    rows = ev.runtime_benchmark(cfg, sizes=args.sizes, fractions=args.fractions, repeats=args.repeats,
                                seed=substream(resolve_seed(args.seed), "bench"), channels=args.channels)
    print("size,fraction,n_unknown,seconds")
    for r in rows:
        print(f"{r['size']},{r['fraction']:g},{r['n_unknown']},{r['seconds']:.6g}")
    if len(rows) >= 2:
        print(f"log-log slope {ev.scaling_slope(rows):.3f}")
    if args.out:
        write_rows_csv(["size", "fraction", "n_unknown", "seconds"],
                       [[r["size"], r["fraction"], r["n_unknown"], r["seconds"]] for r in rows], args.out)
        _verify([args.out])
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"global seed (default: ${SEED_ENV}, else 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="roadeval", description="Evaluate feature attributions by pixel removal.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("toy", parents=[common], help="write a Gaussian-process toy dataset",
                       description="Sample the two-class toy dataset and its five fixed orderings.")
    t.add_argument("--n", type=positive_int, default=2000, help="number of images (default 2000)")
    t.add_argument("--height", type=positive_int, default=28)
    t.add_argument("--width", type=positive_int, default=28)
    t.add_argument("--kernel-width", type=float, default=0.2, help="kernel length as a fraction of the width")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_toy)

    i = sub.add_parser("impute", parents=[common], help="remove and impute pixels",
                       description="Impute one removal setting for a whole dataset directory.")
    i.add_argument("--data", required=True, help="directory with images.npy and labels.npy")
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--saliency", help="method name, read from <data>/saliency_<name>.npy")
    src.add_argument("--saliency-file", help="explicit saliency .npy path")
    i.add_argument("--order", choices=["morf", "lerf"], default="morf")
    i.add_argument("--eta", type=unit_float, required=True, help="fraction of pixels removed")
    i.add_argument("--strategy", choices=["fixed", "noisy-linear"], default="noisy-linear")
    i.add_argument("--noise", type=float, default=0.01, help="noise std as a fraction of the value range")
    i.add_argument("--fill-value", type=float, default=None, help="fixed fill value (default: channel mean)")
    i.add_argument("--solver-tol", type=float, default=1e-8)
    i.add_argument("--max-iters", type=positive_int, default=None, help="CG iteration cap")
    i.add_argument("--out", required=True, help="output .npy for the imputed images")
    i.add_argument("--masks-out", help="optional .npy for the removal masks")
    i.set_defaults(func=cmd_impute)

    e = sub.add_parser("evaluate", parents=[common], help="run a JSON run config",
                       description="Compute curves, bias indicators, debiased curves and rankings.")
    e.add_argument("config", help="run config JSON")
    e.add_argument("--jobs", type=positive_int, default=1, help="worker processes (output does not depend on it)")
    e.add_argument("--no-plots", action="store_true", help="skip the SVG figures")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("mi-check", parents=[common], help="information-theory property suite",
                       description="Check the leakage identity, accuracy bounds and mitigator property "
                                   "on random discrete joints.")
    m.add_argument("--n", type=positive_int, default=1000, help="joints per property")
    m.add_argument("--tol", type=float, default=1e-9)
    m.set_defaults(func=cmd_mi_check)

    b = sub.add_parser("bench", parents=[common], help="time noisy linear imputation",
                       description="Median single-image imputation time per size and removal fraction.")
    b.add_argument("--sizes", type=lambda s: [int(v) for v in float_list(s)], default=[28])
    b.add_argument("--fractions", type=float_list, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    b.add_argument("--repeats", type=positive_int, default=5)
    b.add_argument("--channels", type=positive_int, default=1)
    b.add_argument("--noise", type=float, default=0.01)
    b.add_argument("--out", help="optional CSV path")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RoadError as exc:
        print(f"roadeval {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"roadeval {args.command}: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
