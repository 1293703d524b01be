"""Command-line entry point: ``semsurprise {gen-data,train,probe,diagnose,evaluate}``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .classifier import fit_classifier, kmeans_baseline, parse_components
from .data import FormatError, RiskTier, load_embeddings, load_hierarchy, save_embeddings, save_hierarchy
from .diagnostics import manifold_report
from .pipeline import representatives
from .prototypes import load_bank, save_bank
from .risk import (
    TIER_LABELS,
    CostMatrix,
    binary_metrics,
    evaluate_predictions,
    load_cost_matrix,
    stratified_split,
)
from .ssv import COMPONENTS, fit_global_stats, probe, read_ssv_csv, ssv_path_for, write_ssv_csv
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, embed, format_config, load_config, load_head, save_head, train

log = logging.getLogger("semsurprise")

HEAD_FILE = "head.bin"
BANK_FILE = "bank.pbank"
HIER_FILE = "hierarchy.hier"
MANIFEST_FILE = "manifest.json"


class UsageError(Exception):
    """Bad flags, config or missing inputs (exit code 2)."""


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command, config, seeds, inputs, outputs, started) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "kernel_backend": BACKEND,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
    }
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_report(out_dir: Path, title: str, rows: list[tuple[str, object]], notes=()) -> list[Path]:
    width = max(len(k) for k, _ in rows)
    lines = [title, "=" * len(title)]
    for k, v in rows:
        shown = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{k.ljust(width)}  {shown}")
    lines.extend(notes)
    txt = out_dir / "report.txt"
    txt.write_text("\n".join(lines) + "\n")
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in rows:
            w.writerow([k, repr(v) if isinstance(v, float) else v])
    return [txt, csv_path]


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.perf_counter()
    spec = SyntheticSpec(
        num_superclasses=args.num_superclasses,
        subclasses_per_superclass=args.subclasses_per_superclass,
        samples_per_subclass=args.samples_per_subclass,
        test_samples_per_subclass=args.test_samples_per_subclass,
        dim=args.dim,
        intra_spread=args.intra_spread,
        sibling_offset=args.sibling_offset,
        superclass_offset=args.superclass_offset,
        num_far_clusters=args.num_far_clusters,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = generate_synthetic(spec)
    out = _out_dir(args.out)
    outputs = []
    for s in (data.train, data.id_test, data.near_ood, data.far_ood):
        p = out / f"{s.name}.semb"
        save_embeddings(s, p)
        outputs.append(p)
    hp = out / HIER_FILE
    save_hierarchy(data.hierarchy, hp)
    outputs.append(hp)
    write_manifest(out, "gen-data", spec.to_dict(), {"data": spec.seed}, [], outputs, started)
    log.info("wrote %d files to %s", len(outputs) + 1, out)
    return 0


# -- train ------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    try:
        cfg = load_config(args.config) if args.config else TrainConfig()
        overrides = {}
        for item in args.set or []:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        flag_map = {
            "epochs": args.epochs,
            "seed": args.seed,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "ema_alpha": args.ema_alpha,
            "num_prototypes": args.num_prototypes,
        }
        overrides.update({k: v for k, v in flag_map.items() if v is not None})
        if args.no_hierarchy_loss:
            overrides["hierarchy_loss_enabled"] = False
        return cfg.with_overrides(overrides)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {exc.filename}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"config error: {exc}") from None


def _train_inputs(args):
    if args.data:
        d = Path(args.data)
        return _require_file(d / "train.semb", "training set"), _require_file(d / HIER_FILE, "hierarchy")
    if not (args.train and args.hier):
        raise UsageError("train needs --data DIR or both --train and --hier")
    return _require_file(args.train, "training set"), _require_file(args.hier, "hierarchy")


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = _train_config(args)
    train_path, hier_path = _train_inputs(args)
    hierarchy = load_hierarchy(hier_path)
    data = load_embeddings(train_path, hierarchy)
    head, bank, tlog = train(data, hierarchy, cfg)
    out = _out_dir(args.out)
    outputs = [out / HEAD_FILE, out / BANK_FILE, out / HIER_FILE, out / "train_log.csv", out / "config.txt"]
    save_head(head, outputs[0])
    save_bank(bank, outputs[1])
    save_hierarchy(hierarchy, outputs[2])
    outputs[3].write_text(tlog.to_csv())
    outputs[4].write_text(format_config(cfg))
    config = {k: v for k, v in cfg.flat_items()}
    config["train_path"] = str(train_path)
    write_manifest(out, "train", config, {"train": cfg.seed}, [train_path, hier_path], outputs, started)
    if tlog.epochs:
        log.info("final total loss %.6f (initial %.6f)", tlog.epochs[-1].total, tlog.epochs[0].total)
    return 0


# -- checkpoint helpers -----------------------------------------------------

def _load_checkpoint(path, hier=None):
    ck = Path(path)
    if not ck.is_dir():
        raise UsageError(f"checkpoint not found: {ck}")
    hierarchy = load_hierarchy(_require_file(hier or ck / HIER_FILE, "hierarchy"))
    head = load_head(_require_file(ck / HEAD_FILE, "checkpoint head"))
    bank = load_bank(_require_file(ck / BANK_FILE, "checkpoint bank"), hierarchy)
    return ck, hierarchy, head, bank


def _checkpoint_train_path(ck: Path):
    mpath = ck / MANIFEST_FILE
    if mpath.is_file():
        return json.loads(mpath.read_text()).get("config", {}).get("train_path")
    return None


# -- probe ------------------------------------------------------------------

def cmd_probe(args) -> int:
    started = time.perf_counter()
    ck, hierarchy, head, bank = _load_checkpoint(args.checkpoint, args.hier)
    train_path = args.train or _checkpoint_train_path(ck)
    if not train_path:
        raise UsageError("probe needs --train (ID training features for the global statistics)")
    train_path = _require_file(train_path, "training set")
    train_set = load_embeddings(train_path, hierarchy)
    train_z = embed(head, train_set)
    stats = fit_global_stats(train_z.vectors, args.ridge)
    reps = representatives(bank, train_z, args.representatives)
    out = _out_dir(args.out)
    inputs = [train_path]
    outputs = []
    for f in args.files:
        p = _require_file(f, "embedding file")
        s = load_embeddings(p, hierarchy)
        ssvs = probe(embed(head, s).vectors, stats, reps)
        op = ssv_path_for(out, p.stem)
        write_ssv_csv(op, ssvs, int(s.risk_tier))
        inputs.append(p)
        outputs.append(op)
    config = {"representatives": args.representatives, "ridge": stats.ridge, "checkpoint": str(ck)}
    write_manifest(out, "probe", config, {}, inputs, outputs, started)
    return 0


# -- diagnose ---------------------------------------------------------------

def cmd_diagnose(args) -> int:
    started = time.perf_counter()
    ck, hierarchy, head, bank = _load_checkpoint(args.checkpoint, args.hier)
    emb_path = _require_file(args.embeddings, "embedding file")
    s = load_embeddings(emb_path, hierarchy)
    if s.labels is None:
        raise UsageError("diagnose needs a labelled (ID) embedding file")
    z = embed(head, s)
    report = manifold_report(z.vectors, z.labels, hierarchy, bank.prototypes, source=s.name or "input",
                             sample_pairs=args.sample_pairs, seed=args.seed)
    out = _out_dir(args.out)
    rows = [
        ("compactness", report.compactness),
        ("cohesion", report.cohesion),
        ("separation", report.separation),
        ("intra_super_angle_deg", report.intra_super_angle_deg),
        ("inter_super_angle_deg", report.inter_super_angle_deg),
        ("source", report.source),
        ("pair_sample_seed", "exact" if report.pair_sample_seed is None else report.pair_sample_seed),
    ]
    outputs = _write_report(out, f"Manifold report ({report.source} embeddings)", rows)
    write_manifest(out, "diagnose", {"sample_pairs": args.sample_pairs, "checkpoint": str(ck)},
                   {"pairs": args.seed}, [emb_path], outputs, started)
    return 0


# -- evaluate ---------------------------------------------------------------

def _read_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"true", "pred"} <= set(reader.fieldnames):
            raise UsageError(f"{path}: predictions need 'true,pred' columns")
        t, p = [], []
        for row in reader:
            t.append(int(RiskTier.parse(row["true"])))
            p.append(int(RiskTier.parse(row["pred"])))
    return np.asarray(t, dtype=np.int64), np.asarray(p, dtype=np.int64)


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    if args.cost_matrix:
        cost = load_cost_matrix(_require_file(args.cost_matrix, "cost matrix"))
        cost_note = f"cost matrix: {args.cost_matrix}"
    else:
        cost = CostMatrix.default()
        cost_note = ("cost matrix: built-in default; only C(Near,ID)=5 and C(Far,ID)=6 are fixed, "
                     "other off-diagonal costs are configurable artifact choices")
    try:
        components = parse_components(args.components)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    inputs = []
    rows: list[tuple[str, object]] = []
    if args.predictions:
        p = _require_file(args.predictions, "predictions")
        inputs.append(p)
        y_true, y_pred = _read_predictions(p)
        mode = "injected predictions"
        ssvs = tiers = None
    else:
        if not args.ssv:
            raise UsageError("evaluate needs --ssv files or --predictions")
        blocks, tier_blocks = [], []
        for f in args.ssv:
            p = _require_file(f, "SSV file")
            inputs.append(p)
            s, t = read_ssv_csv(p)
            blocks.append(s)
            tier_blocks.append(t)
        ssvs, tiers = np.concatenate(blocks), np.concatenate(tier_blocks)
        tr, te = stratified_split(tiers, args.test_fraction, args.seed)
        if args.classifier == "ssv":
            clf = fit_classifier(ssvs[tr], tiers[tr], seed=args.seed, components=components)
            y_pred = clf.predict(ssvs[te])
        else:
            y_pred = kmeans_baseline(ssvs[te][:, list(components)], tiers[te], seed=args.seed)
        y_true = tiers[te]
        mode = f"{args.classifier} classifier on {'+'.join(COMPONENTS[c] for c in components)}"
    rep = evaluate_predictions(y_true, y_pred, cost)
    rows.append(("mode", mode))
    rows.append(("n_samples", int(len(y_true))))
    rows.append(("nSR", rep.nsr))
    for label, f in zip(TIER_LABELS, rep.f1):
        rows.append((f"F1_{label}", f))
    rows.append(("macro_F1", rep.macro_f1))
    if args.binary_score and ssvs is not None:
        col = COMPONENTS.index(args.binary_score if args.binary_score.startswith("s_") else f"s_{args.binary_score}")
        fpr, auc = binary_metrics(ssvs[tiers == 0, col], ssvs[tiers != 0, col], higher_is_ood=True)
        rows.append((f"FPR95_{COMPONENTS[col]}", fpr))
        rows.append((f"AUROC_{COMPONENTS[col]}", auc))
    out = _out_dir(args.out)
    cm_lines = ["confusion (rows=true, cols=pred)", "      " + " ".join(f"{t:>6}" for t in TIER_LABELS)]
    for label, row in zip(TIER_LABELS, rep.confusion):
        cm_lines.append(f"{label:>6}" + " ".join(f"{int(v):>6}" for v in row))
    outputs = _write_report(out, "Ternary risk evaluation", rows, ["", cost_note, *cm_lines])
    cm_path = out / "confusion.csv"
    with open(cm_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *TIER_LABELS])
        for label, row in zip(TIER_LABELS, rep.confusion):
            w.writerow([label, *map(int, row)])
    outputs.append(cm_path)
    config = {"classifier": args.classifier, "components": [COMPONENTS[c] for c in components],
              "test_fraction": args.test_fraction, "cost_matrix": cost.costs.tolist()}
    write_manifest(out, "evaluate", config, {"split_and_fit": args.seed}, inputs, outputs, started)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semsurprise", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    d = SyntheticSpec()
    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic hierarchical dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--num-superclasses", type=int, default=d.num_superclasses)
    g.add_argument("--subclasses-per-superclass", type=int, default=d.subclasses_per_superclass)
    g.add_argument("--samples-per-subclass", type=int, default=d.samples_per_subclass)
    g.add_argument("--test-samples-per-subclass", type=int, default=d.test_samples_per_subclass)
    g.add_argument("--num-far-clusters", type=int, default=d.num_far_clusters)
    g.add_argument("--dim", type=int, default=d.dim)
    g.add_argument("--intra-spread", type=float, default=d.intra_spread, help="cap radius (radians)")
    g.add_argument("--sibling-offset", type=float, default=d.sibling_offset, help="sibling angle from superclass center")
    g.add_argument("--superclass-offset", type=float, default=d.superclass_offset, help="minimum superclass separation angle")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the projection head and prototype bank")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--data", help="directory written by gen-data")
    t.add_argument("--train", help="training .semb (alternative to --data)")
    t.add_argument("--hier", help=".hier file (alternative to --data)")
    t.add_argument("--config", help="key=value config file; flags override it")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--ema-alpha", type=float)
    t.add_argument("--num-prototypes", type=int)
    t.add_argument("--no-hierarchy-loss", action="store_true", help="drop the hierarchical prototype loss (ablation)")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", parents=[common], help="write SSV CSVs for embedding files")
    p.add_argument("files", nargs="+", help=".semb files to probe")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", help="ID training .semb for the global statistics (default: from checkpoint manifest)")
    p.add_argument("--hier", help="override the checkpoint hierarchy")
    p.add_argument("--representatives", choices=("prototypes", "centroids"), default="prototypes")
    p.add_argument("--ridge", type=float, default=None, help="covariance ridge (default 1e-3*trace/D)")
    p.set_defaults(func=cmd_probe)

    q = sub.add_parser("diagnose", parents=[common], help="manifold quality report")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--embeddings", required=True, help="labelled .semb (ID test split by default)")
    q.add_argument("--out", required=True)
    q.add_argument("--hier", help="override the checkpoint hierarchy")
    q.add_argument("--sample-pairs", type=int, default=None, help="estimate from N random pairs instead of all")
    q.add_argument("--seed", type=int, default=0, help="pair-sampling seed")
    q.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", parents=[common], help="ternary risk metrics from SSV files or injected predictions")
    e.add_argument("--ssv", nargs="+", help="SSV CSV files (tiers taken from the risk_tier column)")
    e.add_argument("--predictions", help="CSV with true,pred columns; skips classification")
    e.add_argument("--out", required=True)
    e.add_argument("--cost-matrix", help="3x3 CSV with ID,Near,Far header row and column")
    e.add_argument("--components", default="all", help="SSV components, e.g. 'conf,novel' (default all)")
    e.add_argument("--classifier", choices=("ssv", "kmeans"), default="ssv")
    e.add_argument("--test-fraction", type=float, default=0.5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--binary-score", choices=("conf", "novel", "ambig", "s_conf", "s_novel", "s_ambig"),
                   help="also report FPR95/AUROC (ID vs all OOD) for this component")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, FormatError) as exc:
        print(f"semsurprise {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to exit code 1
        log.debug("failure", exc_info=True)
        print(f"semsurprise {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
