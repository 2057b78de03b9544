"""Command-line interface: gen, dist, eval, sweep, loss-check.

Option resolution: an explicit flag beats the optional JSON config file
(``--config``), which beats the built-in default.  Boolean switches are
flag-only.  Exit codes: 0 success, 1 validation or usage error, 2 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .alignment import pairwise_matrix
from .core import (
    AlignmentConfig,
    FormatError,
    ValidationError,
    load_embeddings,
    pool_stripes,
    save_embeddings,
)
from .evaluation import cmc_at, rank_queries, rerank, sweep
from .losses import gradient_check_report
from .synth import SynthSpec, generate

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_METRICS = ("global", "lsa", "hard", "combined")


def _add_common(sub: argparse.ArgumentParser, threads: bool = False) -> None:
    sub.add_argument("--config", help="JSON file with default option values")
    if threads:
        sub.add_argument(
            "--threads", type=int, help="worker threads for distance matrices"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stripealign",
        description="Sliding-alignment distances for stripe-partitioned "
        "re-identification embeddings.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", metavar="command")

    gen = commands.add_parser(
        "gen", help="generate a synthetic query/gallery benchmark"
    )
    gen.add_argument("--ids", type=int, help="number of identities")
    gen.add_argument("--per-id", type=int, help="records per identity")
    gen.add_argument("--k", type=int, help="stripes per record (default 8)")
    gen.add_argument("--d", type=int, help="stripe dimension (default 16)")
    gen.add_argument("--noise-sigma", type=float, help="within-identity spread")
    gen.add_argument("--shift-prob", type=float, help="stripe shift probability")
    gen.add_argument("--max-shift", type=int, help="largest stripe shift")
    gen.add_argument("--occl-prob", type=float, help="occlusion probability")
    gen.add_argument("--seed", type=int, help="RNG seed (required)")
    gen.add_argument("--out", help="directory receiving q/ and g/ subdirectories")
    _add_common(gen)
    gen.set_defaults(func=_cmd_gen)

    dist = commands.add_parser(
        "dist", help="write a query x gallery distance matrix"
    )
    dist.add_argument("--query", help="query embedding directory")
    dist.add_argument("--gallery", help="gallery embedding directory")
    dist.add_argument("--metric", choices=_METRICS, help="distance metric")
    dist.add_argument(
        "--k", type=int, help="re-pool stripes to this count before measuring"
    )
    dist.add_argument("--window", type=int, help="sliding window size")
    dist.add_argument("--out", help="output path for the binary matrix")
    _add_common(dist, threads=True)
    dist.set_defaults(func=_cmd_dist)

    ev = commands.add_parser("eval", help="rank the gallery and report CMC/mAP")
    ev.add_argument("--query", help="query embedding directory")
    ev.add_argument("--gallery", help="gallery embedding directory")
    ev.add_argument("--metric", choices=_METRICS, help="distance metric")
    ev.add_argument("--window", type=int, help="sliding window size")
    ev.add_argument(
        "--rerank", action="store_true", help="apply k-reciprocal re-ranking"
    )
    ev.add_argument("--k1", type=int, help="re-ranking neighborhood size")
    ev.add_argument("--k2", type=int, help="re-ranking expansion size")
    ev.add_argument(
        "--lambda", dest="lambda_value", type=float, help="re-ranking blend weight"
    )
    ev.add_argument("--out", help="path of the JSON report")
    ev.add_argument(
        "--no-plot", action="store_true", help="skip the CMC curve figure"
    )
    _add_common(ev, threads=True)
    ev.set_defaults(func=_cmd_eval)

    sw = commands.add_parser(
        "sweep", help="evaluate across stripe counts or window sizes"
    )
    sw.add_argument("--query", help="query embedding directory")
    sw.add_argument("--gallery", help="gallery embedding directory")
    sw.add_argument("--param", choices=("stripes", "window"), help="swept parameter")
    sw.add_argument("--values", help="comma-separated parameter values")
    sw.add_argument("--metric", choices=_METRICS, help="distance metric")
    sw.add_argument("--out", help="path of the CSV table")
    sw.add_argument("--no-plot", action="store_true", help="skip the trend figure")
    _add_common(sw, threads=True)
    sw.set_defaults(func=_cmd_sweep)

    lc = commands.add_parser(
        "loss-check", help="verify analytic loss gradients by finite differences"
    )
    _add_common(lc)
    lc.set_defaults(func=_cmd_loss_check)

    return parser


_CONFIG_ALIASES = {"lambda": "lambda_value"}


def _effective(args, defaults: dict, required: tuple[str, ...] = ()) -> dict:
    """Resolve options as flag > config > default; reject unknown config keys."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ValidationError("config file must contain a JSON object")
        config = {_CONFIG_ALIASES.get(k, k): v for k, v in config.items()}
    out = {}
    for key, default in defaults.items():
        from_config = config.pop(key, None)
        value = getattr(args, key)
        if value is None:
            value = from_config
        if value is None:
            value = default
        out[key] = value
    if config:
        raise ValidationError(f"unknown config keys: {', '.join(sorted(config))}")
    for key in required:
        if out[key] is None:
            raise ValidationError(f"missing required option --{key.replace('_', '-')}")
    return out


def _cmd_gen(args) -> int:
    opts = _effective(
        args,
        {
            "ids": None,
            "per_id": None,
            "k": 8,
            "d": 16,
            "noise_sigma": 0.1,
            "shift_prob": 0.0,
            "max_shift": 1,
            "occl_prob": 0.0,
            "seed": None,
            "out": None,
        },
        required=("ids", "per_id", "seed", "out"),
    )
    spec = SynthSpec(
        n_ids=int(opts["ids"]),
        per_id=int(opts["per_id"]),
        k=int(opts["k"]),
        d_local=int(opts["d"]),
        noise_sigma=float(opts["noise_sigma"]),
        shift_prob=float(opts["shift_prob"]),
        max_shift=int(opts["max_shift"]),
        occl_prob=float(opts["occl_prob"]),
        seed=int(opts["seed"]),
    )
    query, gallery, _ = generate(spec)
    out = Path(opts["out"])
    save_embeddings(query, out / "q")
    save_embeddings(gallery, out / "g")
    print(f"wrote {len(query)} query and {len(gallery)} gallery records under {out}")
    return EXIT_OK


def _load_pair(opts):
    queries = load_embeddings(opts["query"])
    gallery = load_embeddings(opts["gallery"])
    return queries, gallery


def _cmd_dist(args) -> int:
    opts = _effective(
        args,
        {
            "query": None,
            "gallery": None,
            "metric": "lsa",
            "k": None,
            "window": None,
            "threads": 1,
            "out": None,
        },
        required=("query", "gallery", "out"),
    )
    queries, gallery = _load_pair(opts)
    if opts["k"] is not None and int(opts["k"]) != queries.k:
        queries = pool_stripes(queries, int(opts["k"]))
        gallery = pool_stripes(gallery, int(opts["k"]))
    cfg = AlignmentConfig(
        k=queries.k,
        window=None if opts["window"] is None else int(opts["window"]),
    )
    dist = pairwise_matrix(
        queries, gallery, cfg, metric=opts["metric"], threads=int(opts["threads"])
    )
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dist.values.astype("<f8").tofile(out)
    sidecar = {
        "n_query": dist.shape[0],
        "n_gallery": dist.shape[1],
        "metric": dist.metric_tag,
    }
    _write_json(Path(str(out) + ".json"), sidecar)
    print(f"wrote {dist.shape[0]}x{dist.shape[1]} {dist.metric_tag} matrix to {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    opts = _effective(
        args,
        {
            "query": None,
            "gallery": None,
            "metric": "lsa",
            "window": None,
            "k1": 20,
            "k2": 6,
            "lambda_value": 0.3,
            "threads": 1,
            "out": None,
        },
        required=("query", "gallery", "out"),
    )
    queries, gallery = _load_pair(opts)
    cfg = AlignmentConfig(
        k=queries.k,
        window=None if opts["window"] is None else int(opts["window"]),
    )
    threads = int(opts["threads"])
    dist = pairwise_matrix(
        queries, gallery, cfg, metric=opts["metric"], threads=threads
    )
    if args.rerank:
        dist_qq = pairwise_matrix(
            queries, queries, cfg, metric=opts["metric"], threads=threads
        )
        dist_gg = pairwise_matrix(
            gallery, gallery, cfg, metric=opts["metric"], threads=threads
        )
        dist = rerank(
            dist,
            dist_qq,
            dist_gg,
            k1=int(opts["k1"]),
            k2=int(opts["k2"]),
            lambda_value=float(opts["lambda_value"]),
        )
    result = rank_queries(
        dist, (queries.ids, queries.cams), (gallery.ids, gallery.cams)
    )
    report = {
        "metric": opts["metric"],
        "window": cfg.window,
        "rank1": cmc_at(result, 1),
        "rank5": cmc_at(result, 5),
        "rank10": cmc_at(result, 10),
        "map": result.map,
        "n_query": len(queries),
        "n_gallery": len(gallery),
    }
    out = Path(opts["out"])
    _write_json(out, report)
    if not args.no_plot:
        from .figures import save_cmc_curve

        figure = save_cmc_curve(result, out.with_suffix(".png"))
        print(f"figure: {figure}")
    print(
        f"rank1={report['rank1']:.4f} rank5={report['rank5']:.4f} "
        f"map={report['map']:.4f} -> {out}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    opts = _effective(
        args,
        {
            "query": None,
            "gallery": None,
            "param": None,
            "values": None,
            "metric": "lsa",
            "threads": 1,
            "out": None,
        },
        required=("query", "gallery", "param", "values", "out"),
    )
    raw = opts["values"]
    if isinstance(raw, str):
        parts = [p for p in raw.split(",") if p.strip()]
    else:
        parts = list(raw)
    try:
        values = [int(p) for p in parts]
    except (TypeError, ValueError):
        raise ValidationError(
            f"values must be a comma-separated integer list: {raw!r}"
        ) from None
    if not values:
        raise ValidationError("values must not be empty")
    queries, gallery = _load_pair(opts)
    rows = sweep(
        opts["param"],
        values,
        queries,
        gallery,
        metric=opts["metric"],
        threads=int(opts["threads"]),
    )
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "rank1", "rank5", "rank10", "map"])
        for row in rows:
            writer.writerow([row.value, row.rank1, row.rank5, row.rank10, row.map])
    if not args.no_plot:
        from .figures import save_sweep_curve

        figure = save_sweep_curve(rows, opts["param"], out.with_suffix(".png"))
        print(f"figure: {figure}")
    print(f"wrote {len(rows)} sweep rows to {out}")
    return EXIT_OK


def _cmd_loss_check(args) -> int:
    rows = gradient_check_report()
    width = max(len(r["loss"]) for r in rows)
    print(f"{'loss':<{width}}  seeds  max_rel_err  tolerance  status")
    failed = False
    for r in rows:
        status = "pass" if r["passed"] else "FAIL"
        failed = failed or not r["passed"]
        print(
            f"{r['loss']:<{width}}  {r['seeds']:>5}  {r['max_rel_err']:>11.3e}  "
            f"{r['tolerance']:>9.0e}  {status}"
        )
    return EXIT_VALIDATION if failed else EXIT_OK


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; fold those into validation failures
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        print("error: a command is required", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
