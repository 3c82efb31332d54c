"""Command-line entry point: ``gfgn <subcommand> ...``.

Exit codes: 0 ok, 1 check failed, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import spectral as S
from .data import DataError, SynthSpec, generate_synthetic, load_dataset, write_dataset
from .denoise import InstabilityError
from .graph import (GraphFormatError, edge_homophily, induced_subgraph, largest_component_sample,
                    normalized_laplacian)
from .gradcheck import check_model
from .layers import MODELS
from .tensor import ConfigError, Tape, Tensor
from .training import (DEFAULT_GRID, NumericalError, TrainConfig, dataset_splits, noise_sweep, run_seed,
                       sweep, train_one, run_experiment)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def atomic_write(path, text: str) -> None:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, out) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def to_json(payload) -> str:
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def csv_text(header, rows, config: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def resolve_dataset(name: str) -> Path:
    """A path as given, else a directory of that name under $GFGN_DATA."""
    p = Path(name)
    if p.is_dir():
        return p
    root = os.environ.get("GFGN_DATA")
    if root and (Path(root) / name).is_dir():
        return Path(root) / name
    hint = f" (also looked under GFGN_DATA={root})" if root else " (set GFGN_DATA to a dataset root)"
    raise DataError(f"dataset not found: {name}{hint}")


def _load(args):
    normalize = None if args.row_normalize is None else args.row_normalize == "on"
    return load_dataset(resolve_dataset(args.dataset), normalize)


def parse_floats(text: str) -> list:
    """'0,0.2,1' or 'start:stop:step' (stop inclusive)."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(np.floor((b - a) / step + 1e-9)) + 1
            return [round(a + k * step, 12) for k in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _add_train_flags(p, model_default="gfgn-graph"):
    d = TrainConfig()
    p.add_argument("--dataset", required=True, help="dataset directory, or a name under $GFGN_DATA")
    p.add_argument("--model", default=model_default, choices=MODELS)
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--heads", type=int, default=d.heads)
    p.add_argument("--hidden", type=int, default=d.units_per_head, help="units per head")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--splits", type=int, default=d.splits)
    p.add_argument("--repeats", type=int, default=d.repeats)
    p.add_argument("--row-normalize", choices=["on", "off"], default=None,
                   help="override the dataset's meta.json setting")


def _config(args) -> TrainConfig:
    return TrainConfig(args.model, args.lam, args.lr, args.dropout, args.weight_decay, args.epochs,
                       args.patience, args.heads, args.hidden, args.seed, args.splits, args.repeats).validate()


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load(args)
    res = run_experiment(ds, cfg)
    emit(to_json(res.to_json(ds)), args.out)
    print(f"{cfg.model}: {100 * res.mean:.2f} ± {100 * res.std:.2f}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def _grid(args) -> dict:
    grid = {}
    for key, flag in (("lam", "lambdas"), ("lr", "lrs"), ("dropout", "dropouts"), ("weight_decay", "weight_decays")):
        val = getattr(args, flag)
        grid[key] = parse_floats(val) if val else DEFAULT_GRID[key]
    return grid


def cmd_sweep(args) -> int:
    cfg = _config(args)
    ds = _load(args)
    grid = _grid(args)
    results, best = sweep(ds, cfg, grid)
    payload = {
        "grid": grid,
        "best_index": best,
        "best": results[best].to_json(),
        "rows": [{"config": r.to_json()["config"], "mean": r.mean, "std": r.std, "val_mean": r.val_mean,
                  "test_accs": r.test_accs.tolist()} for r in results],
    }
    if ds is not None:
        payload["dataset"] = results[best].to_json(ds)["dataset"]
    emit(to_json(payload), args.out)
    b = results[best]
    print(f"best {cfg.model} (validation): {100 * b.mean:.2f} ± {100 * b.std:.2f} "
          f"at lam={b.config.lam} lr={b.config.lr} dropout={b.config.dropout} wd={b.config.weight_decay}",
          file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    base = _config(args)
    ds = _load(args)
    ratios = parse_floats(args.ratios)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}")
    grid = _grid(args) if args.grid else None
    rows = noise_sweep(ds, base, ratios, models, grid)
    config = {"base": base.__dict__, "ratios": ratios, "models": models, "grid": grid,
              "dataset": ds.name, "content_hash": ds.content_hash, "row_normalized": ds.row_normalized}
    table = [(ratio, m, r.mean, r.std, r.val_mean, len(r.entries), r.config.lam, r.config.lr,
              r.config.dropout, r.config.weight_decay) for ratio, m, r in rows]
    header = ("ratio", "model", "mean", "std", "val_mean", "runs", "lambda", "lr", "dropout", "weight_decay")
    emit(csv_text(header, table, config), args.out)
    return EXIT_OK


def cmd_dump_scores(args) -> int:
    cfg = _config(args)
    if not cfg.model.startswith("gfgn-"):
        raise ConfigError("dump-scores needs a gating model (gfgn-graph, gfgn-neighbor or gfgn-pair)")
    ds = _load(args)
    split = dataset_splits(ds, replace(cfg, splits=1))[0]
    seed = run_seed(cfg.seed, 0, 0)
    _, model = train_one(ds, split, cfg, seed, keep_model=True)
    with Tape():
        _, records = model.forward(ds.graph, Tensor(ds.features))
    rec = records[args.layer - 1]
    config = {"train": cfg.__dict__, "layer": args.layer, "dataset": ds.name, "content_hash": ds.content_hash}
    emit(csv_text(rec.header, rec.rows(), config), args.out)
    return EXIT_OK


def cmd_spectral(args) -> int:
    ds = _load(args)
    g = ds.graph
    nodes = largest_component_sample(g, args.max_nodes)
    if nodes.size < g.n:
        g = induced_subgraph(g, nodes)
        print(f"spectral: using a {g.n}-node induced subgraph of the largest component", file=sys.stderr)
    L = normalized_laplacian(g, self_loops=args.augmented)
    eig = S.eig_symmetric(L, max_nodes=args.max_nodes)
    ortho, resid = eig.residuals(L.dense())
    h = np.random.default_rng(args.seed).standard_normal((g.n, 1))
    rows = []
    for s in parse_floats(args.s_grid):
        poly = S.polynomial_filter_apply(L, h, s, args.k).data
        spec = S.spectral_filter_apply(eig, h, s, args.k)
        filt_resid = float(np.max(np.abs(poly - spec))) if g.n else 0.0
        for lam, coef in zip(eig.eigenvalues, S.filter_coefficients(eig.eigenvalues, s, args.k)):
            rows.append((lam, s, args.k, coef, filt_resid))
    config = {"dataset": ds.name, "nodes": int(g.n), "max_nodes": args.max_nodes, "augmented": args.augmented,
              "s_grid": args.s_grid, "k": args.k, "seed": args.seed, "sweeps": eig.sweeps,
              "orthogonality_residual": ortho, "eigen_residual": resid}
    emit(csv_text(("eigenvalue", "s", "K", "coefficient", "filter_residual"), rows, config), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rep = check_model(args.model, n=args.n, seed=args.seed, heads=args.heads, units=args.units)
    status = "pass" if rep.passed(args.tol) else "FAIL"
    print(f"{args.model}: max relative error {rep.max_rel_err:.3e} over {rep.checked} weights "
          f"(worst {rep.worst_param}) {status}")
    return EXIT_OK if rep.passed(args.tol) else EXIT_CHECK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_json(json.loads(Path(args.spec).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read synth spec {args.spec}: {exc}") from None
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    ds = generate_synthetic(spec)
    write_dataset(ds, args.out, row_normalize_on_load=False)
    (Path(args.out) / "spec.json").write_text(to_json(spec.to_json()))
    print(f"wrote {ds.n} nodes, {ds.graph.num_edges} edges to {args.out}")
    return EXIT_OK


def cmd_homophily(args) -> int:
    ds = _load(args)
    print(repr(edge_homophily(ds.graph, ds.labels)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfgn", description="Feature-gating graph networks: training and analysis.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over splits x repeats")
    _add_train_flags(p)
    p.add_argument("--out", help="results JSON (stdout when omitted)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid search, best config picked by validation accuracy")
    _add_train_flags(p)
    for flag in ("lambdas", "lrs", "dropouts", "weight-decays"):
        p.add_argument(f"--{flag}", help="comma list or start:stop:step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise-sweep", help="accuracy under randomly added edges")
    _add_train_flags(p)
    p.add_argument("--ratios", default="0:1:0.2")
    p.add_argument("--models", default="gcn,gfgn-graph,gfgn-neighbor,gfgn-pair")
    p.add_argument("--grid", action="store_true", help="select hyperparameters per cell by validation")
    for flag in ("lambdas", "lrs", "dropouts", "weight-decays"):
        p.add_argument(f"--{flag}")
    p.add_argument("--out")
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("dump-scores", help="train on split 0 then write smoothing scores")
    _add_train_flags(p)
    p.add_argument("--layer", type=int, choices=[1, 2], default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_scores)

    p = sub.add_parser("spectral", help="Laplacian spectrum and filter coefficients (1 - s*lambda)^K")
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-nodes", type=int, default=512)
    p.add_argument("--s-grid", default="0.1:1.0:0.1")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--augmented", action="store_true", help="use the self-looped Laplacian")
    p.add_argument("--seed", type=int, default=0, help="seed of the probe signal for the residual column")
    p.add_argument("--row-normalize", choices=["on", "off"], default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--model", default="gfgn-graph", choices=MODELS)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--units", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic block-model dataset")
    p.add_argument("--spec", required=True, help="JSON with SynthSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("homophily", help="print the edge homophily of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--row-normalize", choices=["on", "off"], default=None)
    p.set_defaults(func=cmd_homophily)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (DataError, GraphFormatError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, S.EigenError, InstabilityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
