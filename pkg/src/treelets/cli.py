"""Command-line interface.

Every command writes its output atomically plus a ``<out>.manifest.json``.
Failures print one JSON line ``{"error": <code>, "message": <text>}`` to
stderr and exit nonzero (2 for usage errors, 1 otherwise).
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from .basis_select import best_k_basis, curve_csv, knee_level
from .engine import EngineConfig, TreeletModel, fit, transform, basis
from .exceptions import TreeletError
from .io import atomic_write_text, matrix_csv, read_csv, write_manifest
from .matrix import SimilarityConfig
from .stability import BootstrapConfig, bands_csv, confidence_set_loadings
from .supervised import figure4_csv, figure4_experiment
from .synthetic import (BlockModelSpec, convergence_experiment, example1_spec, example2_spec,
                        example3_spec, sample_block, sample_mixture)


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(values):
    out = []
    for v in values:
        for tok in str(v).split(","):
            tok = tok.strip()
            if tok:
                try:
                    out.append(int(tok))
                except ValueError:
                    raise UsageError(f"grid value {tok!r} is not an integer") from None
    if not out:
        raise UsageError("empty grid")
    return out


def build_parser():
    p = _Parser(prog="treelets", description="Treelet transform toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a treelet model on a CSV data matrix")
    f.add_argument("--input", required=True)
    f.add_argument("--out", required=True)
    g = f.add_mutually_exclusive_group()
    g.add_argument("--level", type=int)
    g.add_argument("--full", action="store_true")
    f.add_argument("--similarity", choices=["corr", "abscorr", "corr+cov"], default="corr")
    f.add_argument("--lambda", dest="lam", type=float, default=0.0)
    f.add_argument("--haar", action="store_true")

    t = sub.add_parser("transform", help="rotate data into (or back from) a level-L basis")
    t.add_argument("--model", required=True)
    t.add_argument("--input", required=True)
    t.add_argument("--level", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--inverse", action="store_true")

    b = sub.add_parser("best-basis", help="cross-validated energy curve and best level")
    b.add_argument("--input", required=True)
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--folds", type=int, required=True)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--out", required=True)

    s = sub.add_parser("bootstrap", help="bootstrap confidence bands of top treelets")
    s.add_argument("--input", required=True)
    s.add_argument("--replicates", type=int, required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--top-k", dest="top_k", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)

    y = sub.add_parser("synth", help="draw synthetic data")
    y.add_argument("model", choices=["block", "example1", "example2", "example3"])
    y.add_argument("--spec")
    y.add_argument("--n", type=int, required=True)
    y.add_argument("--seed", type=int, required=True)
    y.add_argument("--out", required=True)

    e = sub.add_parser("bench", help="run an experiment")
    e.add_argument("experiment", choices=["convergence", "figure4"])
    e.add_argument("--p-grid", dest="p_grid", nargs="+")
    e.add_argument("--n-grid", dest="n_grid", nargs="+")
    e.add_argument("--reps", type=int, required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    return p


def _data(path):
    return read_csv(path, header="auto")


def cmd_fit(a):
    X = _data(a.input)
    sim = SimilarityConfig(a.similarity, a.lam)
    height = a.level if a.level is not None else None
    cfg = EngineConfig(sim, height, "haar" if a.haar else "adaptive")
    model = fit(X, cfg)
    atomic_write_text(a.out, model.to_json())
    conf = {"similarity": sim.to_dict(), "level": height, "angle_mode": cfg.angle_mode}
    write_manifest(a.out, "fit", conf, None, [a.input], {"L": model.height})


def cmd_transform(a):
    with open(a.model) as fh:
        model = TreeletModel.from_json(fh.read())
    X = _data(a.input)
    level = model.check_level(a.level)
    if a.inverse:
        if X.shape[1] != model.p:
            raise TreeletError(f"expected {model.p} coordinates per row, got {X.shape[1]}")
        Y = X @ basis(model, level).T
    else:
        Y = transform(X, model, level)
    atomic_write_text(a.out, matrix_csv(Y))
    write_manifest(a.out, "transform", {"level": level, "inverse": a.inverse}, None,
                   [a.model, a.input])


def cmd_best_basis(a):
    X = _data(a.input)
    r = best_k_basis(X, a.k, folds=a.folds, seed=a.seed)
    atomic_write_text(a.out, curve_csv(r))
    result = {"level": r.level}
    if len(r.mean) >= 3:
        result["knee"] = knee_level(r.mean)
    write_manifest(a.out, "best-basis", {"k": a.k, "folds": a.folds}, a.seed, [a.input], result)


def cmd_bootstrap(a):
    X = _data(a.input)
    cfg = BootstrapConfig(a.replicates, a.alpha, a.seed, a.level, a.top_k)
    s = confidence_set_loadings(X, cfg)
    atomic_write_text(a.out, bands_csv(s))
    conf = {"replicates": a.replicates, "alpha": a.alpha, "level": a.level, "top_k": a.top_k}
    write_manifest(a.out, "bootstrap", conf, a.seed, [a.input],
                   {"delta_n": s.delta_n, "accepted_count": s.accepted_count})


def cmd_synth(a):
    if a.n < 1:
        raise UsageError("--n must be >= 1")
    if a.model == "block":
        if not a.spec:
            raise UsageError("synth block requires --spec")
        with open(a.spec) as fh:
            spec = BlockModelSpec.from_json(fh.read())
        X = sample_block(spec, a.n, a.seed)
        conf, inputs = {"model": "block", "spec": spec.to_dict(), "n": a.n}, [a.spec]
    else:
        if a.spec:
            raise UsageError("--spec only applies to synth block")
        spec = {"example1": example1_spec, "example2": example2_spec, "example3": example3_spec}[a.model]()
        X, _, _ = sample_mixture(spec, a.n, a.seed)
        conf, inputs = {"model": a.model, "n": a.n}, []
    atomic_write_text(a.out, matrix_csv(X))
    write_manifest(a.out, "synth", conf, a.seed, inputs)


def cmd_bench(a):
    if a.reps < 1:
        raise UsageError("--reps must be >= 1")
    if a.experiment == "convergence":
        if not a.p_grid or not a.n_grid:
            raise UsageError("bench convergence requires --p-grid and --n-grid")
        pg, ng = _int_list(a.p_grid), _int_list(a.n_grid)
        table = convergence_experiment(pg, ng, a.reps, a.seed)
        atomic_write_text(a.out, table.to_csv())
        conf = {"experiment": "convergence", "p_grid": pg, "n_grid": ng, "reps": a.reps}
        write_manifest(a.out, "bench", conf, a.seed, [],
                       {"n_star": {str(p): table.n_star(p) for p in pg}})
    else:
        if a.p_grid or a.n_grid:
            raise UsageError("grids only apply to bench convergence")
        rows = figure4_experiment(a.seed, a.reps)
        atomic_write_text(a.out, figure4_csv(rows))
        means = {k: float(np.mean([getattr(r, k) for r in rows]))
                 for k in ("full_pls", "supervised_pls", "treelet_pls", "oracle_pls")}
        write_manifest(a.out, "bench", {"experiment": "figure4", "reps": a.reps}, a.seed, [],
                       {"mean_msep": means, "treelet_levels": [r.treelet_level for r in rows]})


COMMANDS = {
    "fit": cmd_fit,
    "transform": cmd_transform,
    "best-basis": cmd_best_basis,
    "bootstrap": cmd_bootstrap,
    "synth": cmd_synth,
    "bench": cmd_bench,
}


def _fail(code, message, status):
    line = json.dumps({"error": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return status


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except TreeletError as exc:
        return _fail(exc.code, exc, 1)
    except FileNotFoundError as exc:
        return _fail("file-not-found", f"{exc.filename}: {exc.strerror}", 1)
    except OSError as exc:
        return _fail("io-error", exc, 1)
    except json.JSONDecodeError as exc:
        return _fail("bad-json", exc, 1)
    except (KeyError, ValueError, TypeError) as exc:
        return _fail("invalid-input", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
