"""Command-line entry point: ``cdc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import convert, pipeline
from .dataset import DatasetError, load_dataset, read_labels
from .metrics import evaluate

logger = logging.getLogger("cdc")

SYLVESTER_FLAG = {"alpha": "derived_alpha", "beta": "paper_beta"}


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _anchor_list(text):
    return [x.strip() if x.strip() == "c" else int(x) for x in text.split(",") if x.strip()]


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def _add_model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("model")
    g.add_argument("--k", type=_nonneg_int, default=2, help="graph filter order (default 2)")
    g.add_argument("--alpha", type=float, default=1.0, help="similarity-preserving weight (default 1)")
    g.add_argument("--beta", type=float, default=1.0, help="Frobenius penalty on Z (default 1)")
    g.add_argument("--anchors", type=int, default=None, help="anchor count m (default max(c, 30))")
    g.add_argument("--clusters", type=int, default=None, help="override the manifest's cluster count")
    g.add_argument("--knn", type=int, default=5, help="neighbours for graphs built from features (default 5)")
    g.add_argument("--max-iter", type=int, default=50)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normalize-rows", action="store_true", help="unit-normalize embedding rows before k-means")
    g.add_argument("--sylvester-mode", choices=sorted(SYLVESTER_FLAG), default="alpha",
                   help="coefficient of B T in the anchor update (default alpha)")


def _run_config(args) -> pipeline.RunConfig:
    return pipeline.RunConfig(
        k=args.k,
        alpha=args.alpha,
        beta=args.beta,
        anchors=args.anchors,
        knn=args.knn,
        max_iter=args.max_iter,
        tol=args.tol,
        seed=args.seed,
        normalize_rows=args.normalize_rows,
        sylvester_mode=SYLVESTER_FLAG[args.sylvester_mode],
    )


def _load(args):
    t0 = time.perf_counter()
    try:
        ds = load_dataset(args.manifest)
        if args.clusters is not None:
            ds.c = args.clusters
            ds.__post_init__()
    except (DatasetError, OSError, ValueError) as exc:
        raise pipeline.StageError("load", exc) from exc
    args.load_seconds = time.perf_counter() - t0
    return ds


def _write_outputs(args, res: pipeline.RunResult, out: Path):
    res.report.timings["load"] = getattr(args, "load_seconds", res.report.timings["load"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(res.report.to_json(), encoding="utf-8")
    pipeline.write_labels(args.dump_labels or out / "labels.txt", res.labels)
    if args.dump_trace:
        pipeline.write_trace(args.dump_trace, res.model)
    if args.dump_embedding:
        header = [f"u_{i + 1}" for i in range(res.embedding.shape[1])]
        pipeline.write_matrix_csv(args.dump_embedding, res.embedding, header)
    if args.dump_filtered:
        pipeline.write_filtered(args.dump_filtered, res.filtered)


def _add_dump_flags(p):
    p.add_argument("--output", "-o", type=Path, default=Path("cdc-out"),
                   help="directory for report.json and labels.txt")
    p.add_argument("--dump-labels", type=Path, help="predicted labels, one per line")
    p.add_argument("--dump-trace", type=Path, help="objective and view weights per iteration (CSV)")
    p.add_argument("--dump-embedding", type=Path, help="N x c spectral embedding (CSV)")
    p.add_argument("--dump-filtered", type=Path, help="directory for filtered views (Matrix Market)")


def cmd_run(args):
    ds = _load(args)
    res = pipeline.run(ds, _run_config(args))
    _write_outputs(args, res, args.output)
    print(res.report.to_json(), end="")
    return 0


def cmd_grid(args):
    ds = _load(args)
    spec = dict(pipeline.DEFAULT_GRID)
    if args.grid_spec:
        spec.update(json.loads(Path(args.grid_spec).read_text(encoding="utf-8")))
    for key, attr in (("k", "k_values"), ("alpha", "alpha_values"), ("beta", "beta_values"), ("m", "m_values")):
        if getattr(args, attr) is not None:
            spec[key] = getattr(args, attr)
    base = _run_config(args)
    result = pipeline.grid(ds, spec, base, workers=args.workers)
    args.output.mkdir(parents=True, exist_ok=True)
    result.write_csv(args.output / "grid.csv")
    best = result.best
    if best is None:
        print("error: every grid cell failed", file=sys.stderr)
        return 1
    cfg = pipeline.RunConfig(**({**base.__dict__} | {
        "k": best["k"], "alpha": best["alpha"], "beta": best["beta"], "anchors": best["m"]}))
    res = pipeline.run(ds, cfg)
    _write_outputs(args, res, args.output)
    print(res.report.to_json(), end="")
    return 0


def cmd_synth(args):
    manifest = pipeline.synth(args.output, n=args.n, c=args.clusters, p_in=args.p_in, p_out=args.p_out,
                              d=args.dim, seed=args.seed, mean_scale=args.mean_scale, noise=args.noise)
    print(manifest)
    return 0


def cmd_metrics(args):
    pred = read_labels(args.pred)
    truth = read_labels(args.truth)
    scores = evaluate(pred, truth)
    text = json.dumps(scores, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_grouping_dump(args):
    ds = _load(args)
    if ds.labels is None:
        raise pipeline.StageError("grouping-dump", ValueError("dataset has no labels"))
    res = pipeline.run(ds, _run_config(args))
    pipeline.grouping_dump(res.model, ds.labels, args.per_class, args.seed, path=args.output)
    print(args.output)
    return 0


def cmd_scale_bench(args):
    rows = pipeline.scale_bench(
        args.sizes, c=args.clusters, d=args.dim, m=args.anchors, k=args.k,
        iterations=args.iterations, seed=args.seed, measure_memory=args.memory, path=args.output,
    )
    for row in rows:
        print(f"n={row['n']:>8d}  fit {row['fit_seconds']:.3f}s  filter {row['filter_seconds']:.3f}s"
              f"  cluster {row['cluster_seconds']:.3f}s")
    return 0


def cmd_convert(args):
    if args.format == "planetoid":
        if not args.name:
            raise ValueError("--name is required for planetoid sources")
        manifest = convert.convert_planetoid(args.source, args.name, args.output)
    else:
        manifest = convert.convert_mat(args.source, args.output, name=args.name, feature_key=args.feature_key,
                                       relation_keys=args.relations.split(","), label_key=args.label_key)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="cluster one dataset")
    p.add_argument("manifest", type=Path)
    _add_model_flags(p)
    _add_dump_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid search over k, alpha, beta and m")
    p.add_argument("manifest", type=Path)
    _add_model_flags(p)
    _add_dump_flags(p)
    p.add_argument("--grid-spec", type=Path, help="JSON object with lists for k, alpha, beta, m")
    p.add_argument("--k-values", type=_int_list)
    p.add_argument("--alpha-values", type=_float_list)
    p.add_argument("--beta-values", type=_float_list)
    p.add_argument("--m-values", type=_anchor_list, help="comma list; 'c' means the cluster count")
    p.add_argument("--workers", type=int, default=None, help="processes (default: $CDC_THREADS or 1)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="write a stochastic block model dataset")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.2)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--mean-scale", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="ACC/NMI/ARI/F1 of two label files")
    p.add_argument("pred", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--output", "-o", type=Path)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("grouping-dump", help="dump Z columns of sampled nodes per class")
    p.add_argument("manifest", type=Path)
    _add_model_flags(p)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(func=cmd_grouping_dump)

    p = sub.add_parser("scale-bench", help="fit time versus sample count on synthetic SBM data")
    p.add_argument("--sizes", type=_int_list, default=[10000, 20000, 40000, 80000])
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--anchors", type=int, default=50)
    p.add_argument("--k", type=_nonneg_int, default=2)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--memory", action="store_true", help="also record peak fit allocation")
    p.add_argument("--output", "-o", type=Path)
    p.set_defaults(func=cmd_scale_bench)

    p = sub.add_parser("convert", help="turn Planetoid split files or a .mat file into a manifest")
    p.add_argument("format", choices=["planetoid", "mat"])
    p.add_argument("source", type=Path, help="Planetoid directory or .mat file")
    p.add_argument("--name", help="dataset name (required for planetoid, e.g. citeseer)")
    p.add_argument("--feature-key", default="feature")
    p.add_argument("--relations", default="PAP,PLP", help="comma list of relation keys in the .mat file")
    p.add_argument("--label-key", default="label")
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except pipeline.StageError as exc:
        print(f"error: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 2
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
