"""Pipeline driver: prepare / train / evaluate / report.

Each stage reads one YAML config and an output directory; artifacts, stage
timings and derived seeds are recorded in `manifest.json` so a finished run
directory is self-describing.  Exit codes: 0 success, 2 configuration
problems, 3 data problems, 4 diverged training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import shutil
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import banksim, reports
from .config import (
    STAGE_PREPARE,
    STAGE_SPLIT,
    STAGE_TRAIN,
    ConfigError,
    ExperimentConfig,
    cache_dir,
    derive_rng,
    derive_seed_sequence,
)
from .features import (
    SCHEME_VERSION,
    FeatureStore,
    build_feature_store,
    dataset_fingerprint,
    scale_matrix,
)
from .metrics import majority_class_scores
from .nnet import load_params
from .training import (
    DivergedChainError,
    EnsembleMember,
    PreparedData,
    build_nets,
    predict,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

SPLITS_REL = "prepared/splits.json"
MANIFEST_REL = "manifest.json"


class DataError(RuntimeError):
    """Missing or inconsistent pipeline inputs."""


# ---------------------------------------------------------------------------
# Run manifest.
# ---------------------------------------------------------------------------


def _atomic_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def _load_manifest(cfg: ExperimentConfig) -> dict:
    path = Path(cfg.output_dir) / MANIFEST_REL
    if path.exists():
        return json.loads(path.read_text())
    return {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "dataset_sha256": None,
        "stages": {},
        "artifacts": [MANIFEST_REL],
        "seeds": {},
    }


def _record_stage(cfg, manifest, name, seconds, artifacts=(), **extra) -> None:
    manifest["stages"][name] = dict(extra, seconds=seconds)
    for rel in artifacts:
        if rel not in manifest["artifacts"]:
            manifest["artifacts"].append(rel)
    _atomic_json(Path(cfg.output_dir) / MANIFEST_REL, manifest)


# ---------------------------------------------------------------------------
# Shared loading.
# ---------------------------------------------------------------------------


def _splits_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / SPLITS_REL


def _read_splits(cfg: ExperimentConfig) -> dict:
    path = _splits_path(cfg)
    if not path.exists():
        raise DataError(f"{path} not found; run `fraudsig prepare` first")
    return json.loads(path.read_text())


def _load_customers(cfg: ExperimentConfig):
    txns = banksim.load_transactions(cfg.dataset_path)
    customers, excluded = banksim.group_customers(txns)
    stats = {
        "n_rows": len(txns),
        "n_fraud_rows": int(sum(t.fraud for t in txns)),
        "n_customers": len(customers) + excluded,
        "n_customers_kept": len(customers),
        "n_customers_excluded": excluded,
        "n_fraud_customers": int(sum(int(cs.frauds.any()) for cs in customers)),
    }
    return customers, stats


def _rebuild_samples(cfg: ExperimentConfig, splits: dict) -> banksim.SampleSet:
    customers, _ = _load_customers(cfg)
    wanted = set(splits["customers"])
    kept = [cs for cs in customers if cs.customer in wanted]
    if len(kept) != len(splits["customers"]):
        raise DataError("dataset no longer matches the prepared customer list")
    samples = banksim.make_samples(kept, cfg.min_prefix)
    if len(samples) != splits["stats"]["n_samples"]:
        raise DataError("dataset no longer matches the prepared sample count")
    return samples


def _cache_path(cfg: ExperimentConfig, subsample: float) -> Path:
    tag = "full" if subsample >= 1.0 else f"sub{subsample:g}"
    return cache_dir(cfg) / f"deg{cfg.sig_degree}_v{SCHEME_VERSION}_{tag}"


def _load_store(cfg, samples, subsample, workers=1) -> tuple[FeatureStore, bool]:
    return build_feature_store(
        samples,
        cfg.sig_degree,
        _cache_path(cfg, subsample),
        dataset_fingerprint(cfg.dataset_path),
        cfg.min_prefix,
        workers,
    )


def _size_index(nl: int, splits: dict) -> int:
    effective = list(splits["labeled_sizes"])
    configured = list(splits["configured_sizes"])
    if nl in effective:
        return effective.index(nl)
    if nl in configured:
        return configured.index(nl)
    raise ConfigError(
        f"--nl {nl} is not one of the prepared sizes {effective} "
        f"(configured: {configured})"
    )


def _condition_codes(
    samples: banksim.SampleSet,
    splits: dict,
    rate_table: dict,
    rows: np.ndarray,
) -> np.ndarray:
    """(len(rows), 3) embedding codes: age, gender, risk bucket."""
    age_map = {a: i for i, a in enumerate(splits["age_vocab"])}
    gender_map = {g: i for i, g in enumerate(splits["gender_vocab"])}
    codes = np.zeros((len(rows), 3), dtype=np.int64)
    risk_cache: dict[int, np.ndarray] = {}
    for k, i in enumerate(rows):
        i = int(i)
        codes[k, 0] = age_map[samples.ages[i]]
        codes[k, 1] = gender_map[samples.genders[i]]
        ci = int(samples.customer_idx[i])
        if ci not in risk_cache:
            risk_cache[ci] = banksim.risk_levels(samples.customers[ci], rate_table)
        codes[k, 2] = risk_cache[ci][int(samples.prefix_len[i]) - 1] - 1
    return codes


def _run_dir(cfg: ExperimentConfig, size: int, rep: int) -> Path:
    return Path(cfg.output_dir) / "runs" / f"nl{size}_rep{rep}"


def _emb_cards(splits: dict) -> tuple[int, int, int]:
    # Risk buckets are a fixed 1..5 scale regardless of which fire.
    return (len(splits["age_vocab"]), len(splits["gender_vocab"]), 5)


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def _cmd_prepare(args) -> int:
    cfg = ExperimentConfig.from_yaml(args.config)
    t0 = time.perf_counter()
    customers, stats = _load_customers(cfg)
    if not 0 < args.subsample <= 1:
        raise ConfigError(f"--subsample must be in (0, 1], got {args.subsample}")
    if args.subsample < 1.0:
        rng = derive_rng(cfg.seed, STAGE_PREPARE, 0)
        n_keep = max(1, round(args.subsample * len(customers)))
        keep = np.sort(rng.choice(len(customers), size=n_keep, replace=False))
        customers = [customers[i] for i in keep]
    samples = banksim.make_samples(customers, cfg.min_prefix)
    stats["n_samples"] = len(samples)
    stats["n_fraud_samples"] = int(samples.labels.sum())

    sizes = cfg.split.scaled_sizes(args.subsample)
    seeds = {"split": derive_seed_sequence(cfg.seed, STAGE_SPLIT)}
    for si in range(len(sizes)):
        for rep in range(cfg.split.repetitions):
            seeds[(si, rep)] = derive_seed_sequence(cfg.seed, STAGE_SPLIT, si, rep)
    split = banksim.split_and_unlabel(
        samples.labels, sizes, cfg.split.repetitions, cfg.split.test_fraction, seeds
    )
    max_sd, max_amt = banksim.training_maxima(samples, split.train_idx)

    store, cache_hit = _load_store(cfg, samples, args.subsample, args.workers)

    splits = {
        "stats": stats,
        "subsample": args.subsample,
        "customers": [cs.customer for cs in samples.customers],
        "max_sd": max_sd,
        "max_amt": max_amt,
        "age_vocab": sorted(set(samples.ages)),
        "gender_vocab": sorted(set(samples.genders)),
        "configured_sizes": list(cfg.split.labeled_sizes),
        "labeled_sizes": list(sizes),
        "repetitions": cfg.split.repetitions,
        "train_idx": split.train_idx.tolist(),
        "test_idx": split.test_idx.tolist(),
        "labeled": {
            f"{si}:{rep}": split.labeled[(sizes[si], rep)].tolist()
            for si in range(len(sizes))
            for rep in range(cfg.split.repetitions)
        },
    }
    _atomic_json(_splits_path(cfg), splits)

    manifest = _load_manifest(cfg)
    manifest["dataset_sha256"] = store.manifest["dataset_sha256"]
    artifacts = [SPLITS_REL]
    try:
        cache_rel = _cache_path(cfg, args.subsample).relative_to(cfg.output_dir)
        artifacts.append(str(cache_rel) + "/")
    except ValueError:
        pass  # cache redirected outside the run directory
    _record_stage(
        cfg, manifest, "prepare", time.perf_counter() - t0,
        artifacts=artifacts, cache_hit=cache_hit, subsample=args.subsample,
        stats=stats,
    )
    print(
        f"prepared {stats['n_samples']} samples from {stats['n_rows']} rows "
        f"({stats['n_customers_kept']} customers kept, "
        f"{stats['n_customers_excluded']} excluded); cache_hit={cache_hit}"
    )
    for size in sizes:
        fr = int(samples.labels[split.labeled[(size, 0)]].sum())
        print(f"  labeled size {size}: {fr} fraud per repetition")

    if args.dump_encoding:
        cust, _, plen = args.dump_encoding.partition(":")
        j = int(plen)
        hit_rows = [
            i
            for i in range(len(samples))
            if samples.customers[int(samples.customer_idx[i])].customer == cust
            and int(samples.prefix_len[i]) == j
        ]
        if not hit_rows:
            raise DataError(f"no sample for customer {cust!r} with prefix {j}")
        vec = scale_matrix(
            store.matrix[hit_rows], store.basis, max_sd, max_amt
        )[0]
        print(" ".join(repr(float(v)) for v in vec))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.from_yaml(args.config)
    t0 = time.perf_counter()
    splits = _read_splits(cfg)
    samples = _rebuild_samples(cfg, splits)
    store, _ = _load_store(cfg, samples, splits["subsample"])

    si = _size_index(args.nl, splits)
    size = splits["labeled_sizes"][si]
    if not 0 <= args.rep < splits["repetitions"]:
        raise ConfigError(f"--rep must be in [0, {splits['repetitions']})")
    labeled_global = np.asarray(splits["labeled"][f"{si}:{args.rep}"], dtype=np.intp)
    train_idx = np.asarray(splits["train_idx"], dtype=np.intp)

    rate_table = banksim.category_rate_table(samples, labeled_global)
    codes = _condition_codes(samples, splits, rate_table, train_idx)
    feats = scale_matrix(
        store.matrix[train_idx], store.basis, splits["max_sd"], splits["max_amt"]
    )
    labeled_pos = np.searchsorted(train_idx, labeled_global)
    data = PreparedData(
        feats=feats,
        codes=codes,
        labels=samples.labels[train_idx].astype(np.int64),
        labeled_idx=labeled_pos,
        emb_cards=_emb_cards(splits),
    )

    if args.seed is not None:
        seed = args.seed
        spawn_key = None
    else:
        spawn_key = [STAGE_TRAIN, si, args.rep]
        seed = int(derive_seed_sequence(cfg.seed, *spawn_key).generate_state(1)[0])

    run_dir = _run_dir(cfg, size, args.rep)
    ckpt = run_dir / "checkpoint"
    resume = args.resume and (ckpt / "state.json").exists()
    if not resume and ckpt.exists():
        shutil.rmtree(ckpt)
    run_dir.mkdir(parents=True, exist_ok=True)

    if args.workers > 1:
        logger.info("chains run sequentially for determinism; --workers ignored")
    result = train(data, cfg.train, seed, checkpoint_dir=ckpt, resume=resume)

    trace_path = run_dir / "trace.csv"
    reports.write_csv(
        trace_path,
        ["epoch", "kind", "chain", "term", "value"],
        [
            {"epoch": e, "kind": k, "chain": c, "term": t, "value": v}
            for e, k, c, t, v in result.trace
        ],
    )

    manifest = _load_manifest(cfg)
    cell = f"nl{size}_rep{args.rep}"
    manifest["seeds"][cell] = {
        "global_seed": cfg.seed,
        "spawn_key": spawn_key,
        "cell_seed": seed,
    }
    _record_stage(
        cfg, manifest, f"train:{cell}", time.perf_counter() - t0,
        artifacts=[f"runs/{cell}/"], resumed=resume, epochs=cfg.train.epochs,
        ensemble_size=len(result.members),
    )
    print(
        f"trained {cell}: {cfg.train.epochs} epochs, "
        f"{len(result.members)} posterior members -> {run_dir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _load_members(ckpt: Path) -> list[EnsembleMember]:
    state = json.loads((ckpt / "state.json").read_text())
    return [
        EnsembleMember(m["chain"], m["epoch"], load_params(ckpt / f"member{i:05d}"))
        for i, m in enumerate(state["members"])
    ]


def _cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.from_yaml(args.config)
    t0 = time.perf_counter()
    splits = _read_splits(cfg)
    samples = _rebuild_samples(cfg, splits)
    store, _ = _load_store(cfg, samples, splits["subsample"])

    test_idx = np.asarray(splits["test_idx"], dtype=np.intp)
    labels = samples.labels[test_idx].astype(np.int64)
    amounts = samples.amounts[test_idx]
    feats = scale_matrix(
        store.matrix[test_idx], store.basis, splits["max_sd"], splits["max_amt"]
    )
    _, disc = build_nets(feats.shape[1], _emb_cards(splits), cfg.train)

    cells: list[reports.CellScores] = []
    n_missing = 0
    for si, size in enumerate(splits["labeled_sizes"]):
        for rep in range(splits["repetitions"]):
            ckpt = _run_dir(cfg, size, rep) / "checkpoint"
            if not (ckpt / "state.json").exists():
                n_missing += 1
                logger.info("no checkpoint for nl%d rep%d; skipping", size, rep)
                continue
            labeled_global = np.asarray(splits["labeled"][f"{si}:{rep}"], dtype=np.intp)
            rate_table = banksim.category_rate_table(samples, labeled_global)
            codes = _condition_codes(samples, splits, rate_table, test_idx)
            pred = predict(disc, _load_members(ckpt), feats, codes)
            cells.append(
                reports.score_cell(
                    "ours", size, rep, labels, pred.mean, pred.width, amounts, cfg.heads
                )
            )
            cells.append(
                reports.score_cell(
                    "majority", size, rep, labels,
                    majority_class_scores(len(labels)), np.zeros(len(labels)),
                    amounts, cfg.heads,
                )
            )
    if not cells:
        raise DataError("no trained cells found; run `fraudsig train` first")

    report_dir = Path(cfg.output_dir) / "reports"
    written = reports.write_cell_reports(report_dir, cells)
    manifest = _load_manifest(cfg)
    _record_stage(
        cfg, manifest, "evaluate", time.perf_counter() - t0,
        artifacts=[f"reports/{name}" for name in written],
        cells=len(cells), missing=n_missing,
    )
    print(f"evaluated {len(cells)} cells ({n_missing} missing) -> {report_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _cmd_report(args) -> int:
    cfg = ExperimentConfig.from_yaml(args.config)
    t0 = time.perf_counter()
    report_dir = Path(cfg.output_dir) / "reports"
    if not (report_dir / reports.GLOBAL_CSV).exists():
        raise DataError("no evaluation tables found; run `fraudsig evaluate` first")
    written = reports.aggregate_reports(report_dir, cfg.split.repetitions)
    manifest = _load_manifest(cfg)
    _record_stage(
        cfg, manifest, "report", time.perf_counter() - t0,
        artifacts=[f"reports/{name}" for name in written],
    )
    for row in reports.read_csv(report_dir / reports.AGGREGATE_CSV):
        if row["metric"] in ("macro_f1", "pr_auc", "cross_entropy"):
            flag = "" if row["complete"] == "1" else "  [incomplete]"
            print(
                f"{row['model']:>9} N_l={row['n_labeled']:>6} "
                f"{row['metric']:<14} {float(row['mean']):.4f} "
                f"+- {float(row['std']):.4f}{flag}"
            )
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraudsig",
        description="Signature-feature fraud pipeline: prepare, train, evaluate, report.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse, split and encode the dataset")
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--workers", type=int, default=1, help="encoder processes")
    p.add_argument(
        "--subsample", type=float, default=1.0,
        help="keep this fraction of customers (labeled sizes scale along)",
    )
    p.add_argument(
        "--dump-encoding", metavar="CUSTOMER:PREFIX", default=None,
        help="print one encoded sample row and exit (debugging aid)",
    )
    p.set_defaults(fn=_cmd_prepare)

    p = sub.add_parser("train", help="train one (labeled size, repetition) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--nl", type=int, required=True, help="labeled-set size")
    p.add_argument("--rep", type=int, required=True, help="repetition index")
    p.add_argument("--seed", type=int, default=None, help="override the derived cell seed")
    p.add_argument("--resume", action="store_true", help="continue from the cell checkpoint")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="score all trained cells on the test split")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("report", help="aggregate evaluation tables (mean +- std)")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedChainError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (banksim.TransactionParseError, DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
