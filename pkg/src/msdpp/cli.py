"""Command-line interface: rerank, eval, sweep, gen, serve.

Outputs are newline-delimited JSON on stdout or ``--out``. Validation
problems exit with status 2 and a message on stderr; unexpected failures
exit 1. ``MSDPP_CONFIG`` supplies a default ``--config`` path and
``MSDPP_LOG_LEVEL`` sets logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .dataio import gen_synthetic, load_gallery, load_queries, load_task_config
from .errors import ValidationError
from .pipeline import (
    METHODS,
    dump_ndjson,
    evaluate_documents,
    grid_search,
    rerank_all,
    theta_sweep,
    weight_sweep,
)

log = logging.getLogger("msdpp")


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MSDPP_LOG_LEVEL", "WARNING").upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msdpp", description=__doc__)
    sub = p.add_subparsers(required=True)
    default_config = os.environ.get("MSDPP_CONFIG")

    def add_common(sp, queries=True):
        sp.add_argument("--gallery", required=True, help="gallery ndjson file")
        if queries:
            sp.add_argument("--queries", required=True, help="queries ndjson file")
        sp.add_argument(
            "--config", required=default_config is None, default=default_config,
            help="task config JSON (default: $MSDPP_CONFIG)",
        )

    sp = sub.add_parser("rerank", help="re-rank every query and emit response documents")
    add_common(sp)
    sp.add_argument("--method", default="msdpp", choices=METHODS)
    sp.add_argument("--out", default="-", help="output path, '-' for stdout")
    sp.add_argument("--jobs", type=int, default=1, help="thread pool size across queries")
    sp.add_argument("--include-diagnostics", action="store_true")
    sp.set_defaults(func=_cmd_rerank)

    sp = sub.add_parser("eval", help="aggregate metrics over rerank output")
    sp.add_argument("--results", required=True, help="rerank output ndjson")
    sp.add_argument("--queries", required=True)
    sp.add_argument(
        "--config", required=default_config is None, default=default_config,
    )
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("sweep", help="sweep a weight or theta grid, or run a full grid search")
    add_common(sp)
    sp.add_argument("--attribute", help="attribute whose weight is swept")
    sp.add_argument("--theta-sweep", action="store_true", help="sweep theta instead of a weight")
    sp.add_argument("--grid-search", action="store_true", help="search theta x weights for best HM")
    sp.add_argument("--grid", help="comma-separated grid values overriding the config")
    sp.add_argument("--tn-mode", choices=("off", "tv", "tv_m"), help="override the TN mode")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("gen", help="generate a synthetic gallery and query file")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--items", type=int, required=True)
    sp.add_argument("--clusters", type=int, required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--queries", type=int, default=4)
    sp.add_argument("--d-appearance", type=int, default=16)
    sp.add_argument("--no-time", action="store_true")
    sp.add_argument("--no-geo", action="store_true")
    sp.set_defaults(func=_cmd_gen)

    sp = sub.add_parser("serve", help="serve the HTTP API over a loaded snapshot")
    add_common(sp)
    sp.add_argument("--bind", default="127.0.0.1:8765", help="HOST:PORT")
    sp.set_defaults(func=_cmd_serve)
    return p


def _load_inputs(args):
    task = load_task_config(args.config)
    records = load_gallery(args.gallery)
    queries = load_queries(args.queries, gallery=records)
    if not queries:
        raise ValidationError(f"no queries in {args.queries}")
    return task, records, queries


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _cmd_rerank(args) -> int:
    task, records, queries = _load_inputs(args)
    docs = rerank_all(
        records, queries, task, args.method,
        include_diagnostics=args.include_diagnostics, jobs=args.jobs,
    )
    _write(dump_ndjson(docs), args.out)
    return 0


def _cmd_eval(args) -> int:
    task = load_task_config(args.config)
    queries = load_queries(args.queries)
    docs = []
    with open(args.results, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(json.loads(line))
    report = evaluate_documents(docs, queries, task)
    _write(json.dumps(report, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def _cmd_sweep(args) -> int:
    task, records, queries = _load_inputs(args)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else None
    overrides = {"tn_mode": args.tn_mode} if args.tn_mode else None
    if args.grid_search:
        doc = grid_search(records, queries, task)
    elif args.theta_sweep:
        doc = theta_sweep(records, queries, task, grid=grid, overrides=overrides)
    elif args.attribute:
        doc = weight_sweep(records, queries, task, args.attribute, grid=grid, overrides=overrides)
    else:
        raise ValidationError("sweep needs --attribute, --theta-sweep, or --grid-search")
    _write(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def _cmd_gen(args) -> int:
    data = gen_synthetic(
        seed=args.seed,
        n_items=args.items,
        d_appearance=args.d_appearance,
        clusters=args.clusters,
        n_queries=args.queries,
        with_time=not args.no_time,
        with_geo=not args.no_geo,
    )
    gpath, qpath = data.write(args.out_dir)
    print(f"wrote {gpath} ({len(data.records)} records) and {qpath} ({len(data.queries)} queries)")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    task, records, queries = _load_inputs(args)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"--bind must be HOST:PORT, got {args.bind!r}")
    app = create_app(records, queries, task)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
