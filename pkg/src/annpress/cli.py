"""Command-line pipeline: train, compress, gt, build, search, eval, bench.

Every command reads/writes plain files (fvecs/ivecs datasets, checkpoint and
index binaries, line-oriented reports) inside caller-chosen paths, and run
directories get a manifest recording the tool version and a hash of the
effective config. Reruns with identical inputs and seeds produce
byte-identical artifacts.

Exit codes: 0 success, 1 internal/numeric error, 2 usage/validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .hnsw import HnswConfig, HnswIndex
from .hnsw import build as build_hnsw
from .metrics import FlatIndex, compute_recall_report, measure_qps
from .model import CompressorNet, ModelConfig, load_checkpoint
from .quantizers import IvfIndex, PqIndex, SqIndex
from .training import LossConfig, TrainConfig, TrainingError, train
from .vecio import FormatError, read_fvecs, read_ivecs, write_fvecs, write_ivecs

_INDEX_TYPES = {
    b"HNS1": HnswIndex,
    b"PQC1": PqIndex,
    b"IVF1": IvfIndex,
    b"SQP1": SqIndex,
    b"FLT1": FlatIndex,
}


def _load_index(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    cls = _INDEX_TYPES.get(magic)
    if cls is None:
        raise FormatError(f"{path}: unknown index magic {magic!r}")
    return cls.load(path)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir: str, command: str, config: dict, artifacts: list[str]) -> None:
    manifest = {
        "artifacts": sorted(artifacts),
        "command": command,
        "config": config,
        "config_sha256": _config_hash(config),
        "tool_version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _merged(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    base_path = args.base or config.get("base")
    out_dir = args.out_dir or config.get("out_dir")
    if not base_path or not out_dir:
        raise ValueError("train needs --base and --out-dir (flags or config keys)")
    seed = args.seed if args.seed is not None else config.get("seed", 0)

    data = read_fvecs(base_path)
    model_section = _merged(config.get("model", {}), {"d_out": args.d_out})
    model_section.setdefault("seed", seed)
    model_cfg = ModelConfig(d_in=data.shape[1], **model_section)
    loss_cfg = LossConfig(**config.get("loss", {}))
    train_section = _merged(
        config.get("train", {}),
        {"epochs": args.epochs, "batch_size": args.batch_size, "lr0": args.lr0},
    )
    train_section.setdefault("seed", seed)
    train_cfg = TrainConfig(**train_section)

    os.makedirs(out_dir, exist_ok=True)
    model = CompressorNet(model_cfg)
    report = train(model, data, loss_cfg, train_cfg, log_every=args.log_every)
    checkpoint_path = os.path.join(out_dir, "checkpoint.ckpt")
    report_path = os.path.join(out_dir, "train_report.txt")
    model.save(checkpoint_path)
    report.save(report_path)
    effective = {
        "base": base_path,
        "loss": dataclasses.asdict(loss_cfg),
        "model": model_cfg.to_dict(),
        "seed": seed,
        "train": dataclasses.asdict(train_cfg),
    }
    _write_manifest(out_dir, "train", effective, ["checkpoint.ckpt", "train_report.txt"])
    print(f"wrote {checkpoint_path} (final eval loss {report.final_eval_loss:.6f})")
    return 0


def cmd_compress(args) -> int:
    data = read_fvecs(args.input)
    if data.shape[0] == 0:
        model = load_checkpoint(args.checkpoint)
        write_fvecs(np.zeros((0, model.config.d_out), dtype=np.float32), args.out)
        print(f"wrote {args.out} (0 vectors)")
        return 0
    model = load_checkpoint(args.checkpoint, expect_d_in=data.shape[1])
    write_fvecs(model.compress(data), args.out)
    print(f"wrote {args.out} ({data.shape[0]} vectors, dim {model.config.d_out})")
    return 0


def cmd_gt(args) -> int:
    from .metrics import brute_force_knn

    base = read_fvecs(args.base)
    queries = read_fvecs(args.queries)
    ids = brute_force_knn(base, queries, args.k)
    write_ivecs(ids.astype(np.int32), args.out)
    print(f"wrote {args.out} ({queries.shape[0]} queries, k={ids.shape[1]})")
    return 0


def cmd_build(args) -> int:
    vectors = read_fvecs(args.vectors)
    if args.kind == "hnsw":
        index = build_hnsw(
            vectors,
            HnswConfig(
                M=args.m,
                ef_construction=args.ef_construction,
                ef_search_default=args.ef_search,
                seed=args.seed,
            ),
        )
        if args.search_vectors:
            index.attach_search_vectors(read_fvecs(args.search_vectors))
    elif args.search_vectors:
        raise ValueError(f"--search-vectors applies only to hnsw, not {args.kind}")
    elif args.kind == "pq":
        index = PqIndex.build(vectors, args.pq_m, seed=args.seed)
    elif args.kind == "ivfadc":
        index = IvfIndex.build(vectors, args.nlist, args.pq_m, seed=args.seed)
    elif args.kind == "sq":
        index = SqIndex.build(vectors)
    else:
        index = FlatIndex.build(vectors)
    index.save(args.out)
    print(f"wrote {args.out} ({args.kind}, {vectors.shape[0]} vectors)")
    return 0


def cmd_search(args) -> int:
    index = _load_index(args.index)
    queries = read_fvecs(args.queries)
    if isinstance(index, HnswIndex):
        ids = index.search_batch(queries, args.k, args.ef_search)
    elif isinstance(index, IvfIndex):
        nprobe = args.nprobe if args.nprobe is not None else 1
        ids = index.search_batch(queries, args.k, nprobe)
    else:
        ids = index.search_batch(queries, args.k)
    write_ivecs(ids.astype(np.int32), args.out)
    print(f"wrote {args.out} ({queries.shape[0]} queries, k={args.k})")
    return 0


def cmd_eval(args) -> int:
    results = read_ivecs(args.results)
    truth = read_ivecs(args.gt)
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        params[key] = value
    report = compute_recall_report(results, truth, params=params)
    print(report.to_table())
    lines = report.to_lines()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def cmd_bench(args) -> int:
    index = _load_index(args.index)
    queries = read_fvecs(args.queries)
    if isinstance(index, HnswIndex):
        closure = lambda q: index.search(q, args.k, args.ef_search)
    elif isinstance(index, IvfIndex):
        nprobe = args.nprobe if args.nprobe is not None else 1
        closure = lambda q: index.search(q, args.k, nprobe)
    else:
        closure = lambda q: index.search(q, args.k)
    result = measure_qps(closure, queries, args.repetitions)
    print(
        f"queries_per_second={result.queries_per_second:.2f} "
        f"repetitions={result.repetitions} queries={result.query_count}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annpress",
        description="Neighborhood-preserving compression pipeline for ANN search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a compressor on an fvecs database")
    p.add_argument("--config", help="JSON config with base/out_dir/model/loss/train sections")
    p.add_argument("--base", help="training fvecs file")
    p.add_argument("--out-dir", help="directory for checkpoint/report/manifest")
    p.add_argument("--d-out", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="apply a trained checkpoint to an fvecs file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("gt", help="exact ground-truth neighbors as ivecs")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gt)

    p = sub.add_parser("build", help="build an index file over fvecs vectors")
    p.add_argument("--kind", required=True, choices=["hnsw", "pq", "ivfadc", "sq", "flat"])
    p.add_argument("--vectors", required=True)
    p.add_argument("--search-vectors", help="hnsw only: attach full vectors for search distances")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=16, help="hnsw M")
    p.add_argument("--ef-construction", type=int, default=100)
    p.add_argument("--ef-search", type=int, default=100, help="hnsw default ef_search")
    p.add_argument("--pq-m", type=int, default=8, help="pq/ivfadc subquantizers")
    p.add_argument("--nlist", type=int, default=8, help="ivfadc coarse lists")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("search", help="query an index file, write ivecs results")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef-search", type=int, default=None)
    p.add_argument("--nprobe", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("eval", help="recall of result lists against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="write machine-readable report lines here")
    p.add_argument("--param", action="append", help="key=value echoed into the report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="single-thread queries/second of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef-search", type=int, default=None)
    p.add_argument("--nprobe", type=int, default=None)
    p.add_argument("--repetitions", type=int, default=1)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort mapping
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
