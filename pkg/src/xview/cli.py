"""Command-line interface.

Subcommands: gen-data, canny, train, eval, localize, embed, info.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmark import BENCH_NOISE_STD
from .config import load_stage_config
from .containers import read_checkpoint, read_embeddings, write_embeddings
from .errors import (ConfigError, DataError, DimensionError, NumericAbort,
                     ParameterError, UsageError, XviewError)
from .manifest import load_manifest
from .pnm import read_pnm, write_pnm
from .retrieval import (distance_matrix, geolocalize_curve, recall_report,
                        top_percent_k, write_geo_csv, write_recall_csv)
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .synthproxy import ProxyConfig, canny, to_grayscale
from .training import embed_manifest, run_stage

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="xview", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--complementary-dims", type=int, default=10)
    p.add_argument("--test-per-cluster", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--rho", type=float, default=None,
                   help="materialize synthesized reference images at this fidelity")
    p.add_argument("--proxy-seed", type=int, default=None)

    p = sub.add_parser("canny", help="edge-detect one image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=1.4)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.3)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", required=True,
                   choices=["baseline-ga", "baseline-synth", "joint", "fusion"])
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--warm-start", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--with-edgemap", action="store_true")

    p = sub.add_parser("embed", help="write an embedding container for one view")
    p.add_argument("--stage", required=True, choices=["encoder", "proxy"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--view", choices=["ground", "aerial"], default="ground")
    p.add_argument("--with-edgemap", action="store_true")

    p = sub.add_parser("eval", help="recall table for query vs gallery embeddings")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--gt", default=None,
                   help="CSV query,reference id map; default pairs equal ids")
    p.add_argument("--k", default="1,10")
    p.add_argument("--out", required=True)

    p = sub.add_parser("localize", help="geo-localization accuracy curve")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--thresholds", default="5,10,25,50,100")
    p.add_argument("--out", required=True)

    p = sub.add_parser("info", help="describe a checkpoint")
    p.add_argument("--ckpt", required=True)
    return parser


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(clusters=args.clusters, per_cluster=args.per_cluster,
                         test_per_cluster=args.test_per_cluster,
                         complementary_dims=args.complementary_dims,
                         noise=args.noise, seed=args.seed)
    proxy = None
    if args.rho is not None:
        proxy_seed = args.proxy_seed if args.proxy_seed is not None else args.seed
        proxy = ProxyConfig(rho=args.rho, noise_std=BENCH_NOISE_STD, seed=proxy_seed)
    train_path, test_path = generate_synthetic_dataset(args.out, spec, proxy=proxy)
    print(f"wrote {train_path} and {test_path}")
    return EXIT_OK


def _cmd_canny(args) -> int:
    img = read_pnm(args.input)
    if img.ndim == 3:
        img = to_grayscale(img)
    edges = canny(img, sigma=args.sigma, low=args.low, high=args.high)
    write_pnm(args.out, edges.astype(np.float64))
    print(f"{int(edges.sum())} edge pixels -> {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_stage_config(args.config, args.stage)
    result = run_stage(cfg, args.manifest, args.out, warm_start=args.warm_start,
                       with_edgemap=args.with_edgemap)
    if result.losses:
        print(f"stage {args.stage}: {len(result.losses)} steps, "
              f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    else:
        print(f"stage {args.stage}: 0 steps, checkpoint written")
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _cmd_embed(args) -> int:
    ckpt = read_checkpoint(args.ckpt)
    matrix = embed_manifest(ckpt, args.manifest, source=args.stage,
                            view=args.view, with_edgemap=args.with_edgemap)
    write_embeddings(args.out, matrix)
    print(f"wrote {matrix.n} x {matrix.dim} embeddings to {args.out}")
    return EXIT_OK


def _parse_gt(path, query_ids, gallery_ids) -> list[int]:
    import csv as _csv

    ref_pos = {rid: i for i, rid in enumerate(gallery_ids)}
    if path is None:
        try:
            return [ref_pos[qid] for qid in query_ids]
        except KeyError as exc:
            raise DataError(f"query id {exc.args[0]!r} has no gallery row; "
                            f"supply --gt for non-identity pairing") from exc
    mapping = {}
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["query", "reference"]:
            raise DataError(f"{path}: gt header must be query,reference")
        for rec in reader:
            if len(rec) != 2:
                raise DataError(f"{path}: malformed gt row {rec}")
            mapping[rec[0]] = rec[1]
    out = []
    for qid in query_ids:
        if qid not in mapping:
            raise DataError(f"gt map is missing query {qid!r}")
        rid = mapping[qid]
        if rid not in ref_pos:
            raise DataError(f"gt reference {rid!r} is not in the gallery")
        out.append(ref_pos[rid])
    return out


def _cmd_eval(args) -> int:
    query = read_embeddings(args.query)
    gallery = read_embeddings(args.gallery)
    try:
        ks = sorted({int(k) for k in args.k.split(",") if k.strip()})
    except ValueError:
        raise UsageError(f"--k must be a comma list of integers, got {args.k!r}") from None
    gt = _parse_gt(args.gt, query.ids, gallery.ids)
    dist = distance_matrix(query, gallery)
    report = recall_report(dist, gt, ks=ks)
    for k in ks:
        print(f"recall@{k}: {report.recall_at[k]:.4f}")
    print(f"top-1% (K={top_percent_k(gallery.n)}): {report.top_one_percent:.4f}")
    write_recall_csv(args.out, report)
    return EXIT_OK


def _cmd_localize(args) -> int:
    query = read_embeddings(args.query)
    gallery = read_embeddings(args.gallery)
    man = load_manifest(args.manifest)
    geo_by_id = {g.id: g for g in man.geo_samples()}
    try:
        q_geo = [geo_by_id[i] for i in query.ids]
        r_geo = [geo_by_id[i] for i in gallery.ids]
    except KeyError as exc:
        raise DataError(f"manifest has no geo entry for id {exc.args[0]!r}") from exc
    try:
        thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--thresholds must be a comma list of numbers, "
                         f"got {args.thresholds!r}") from None
    dist = distance_matrix(query, gallery)
    curve = geolocalize_curve(dist, q_geo, r_geo, thresholds)
    for t, acc in curve:
        print(f"<= {t:g} m: {acc:.4f}")
    write_geo_csv(args.out, curve)
    return EXIT_OK


def _cmd_info(args) -> int:
    ckpt = read_checkpoint(args.ckpt)
    print(f"stage: {ckpt.stage}")
    print(f"seed: {ckpt.seed}")
    print(f"config digest: {ckpt.config_digest}")
    print(f"tensors: {len(ckpt.tensors)} ({ckpt.num_values()} values)")
    for name, arr in ckpt.tensors.items():
        print(f"  {name}  {'x'.join(map(str, arr.shape))}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "canny": _cmd_canny,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "eval": _cmd_eval,
    "localize": _cmd_localize,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionError, XviewError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
