"""Batch command line front end.

Exit codes: 0 success, 2 I/O failure, 3 invalid arguments or configuration,
4 data-contract violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import clustering, dataset, debias, evaluation, fusion
from .core import read_embeddings
from .dataset import KIN_TYPES, Template
from .errors import ConfigError, KinrecError, MalformedRecord, MissingSubgroup
from .matcher import cosine_matrix

logger = logging.getLogger("kinrec")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def read_side_info(path, ds) -> clustering.SideInfo:
    rows, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, rec in enumerate(reader, start=1):
            if not rec or (lineno == 1 and rec[0].strip().lower() == "id"):
                continue
            if len(rec) < 2:
                raise MalformedRecord("expected id,class_label", lineno)
            ident, label = rec[0].strip(), rec[1].strip()
            if ident not in ds:
                raise MalformedRecord(f"unknown embedding id {ident!r}", lineno)
            rows.append(ds.index[ident])
            labels.append(label)
    return clustering.SideInfo.from_labels(rows, labels)


def cmd_cluster(args) -> int:
    ds = read_embeddings(args.embeddings)
    side = read_side_info(args.side, ds) if args.side else None
    res = clustering.ssc_kmeans(ds, side, args.k, lam=args.lam, seed=args.seed,
                                max_iter=args.max_iter, tol=args.tol)
    out = _out_dir(args.out)
    labels, conf = res.labels, res.confidence
    order = sorted(range(len(ds)), key=lambda i: (labels[i], -conf[i], ds[i].id))
    with open(out / "partition.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster", "confidence"])
        for i in order:
            w.writerow([ds[i].id, int(labels[i]), repr(float(conf[i]))])

    report = {"K": args.k, "lambda": args.lam, "seed": args.seed, "n": len(ds),
              "n_labeled": side.n_labeled if side else 0, "n_iter": res.n_iter,
              "converged": res.converged, "objective_trace": res.objective_trace,
              "cluster_sizes": np.bincount(labels, minlength=args.k)}
    truth = [getattr(e, args.truth_field) for e in ds]
    if all(t is not None for t in truth):
        _, t_idx = np.unique(truth, return_inverse=True)
        unl = np.ones(len(ds), dtype=bool)
        if side:
            unl[side.member_rows] = False
        report["nmi_all"] = clustering.nmi(t_idx, labels)
        report["nmi_unlabeled"] = clustering.nmi(t_idx[unl], labels[unl]) if unl.any() else None
    evaluation.write_report(out / "report.json", {"cluster": report})
    return EXIT_OK


def _pair_scores(ds, pairs):
    for p in pairs:
        for i in (p.id_a, p.id_b):
            if i not in ds:
                raise MalformedRecord(f"pair references unknown embedding {i!r}")
    A = ds.matrix([p.id_a for p in pairs])
    B = ds.matrix([p.id_b for p in pairs])
    An = A / np.linalg.norm(A, axis=1, keepdims=True)
    Bn = B / np.linalg.norm(B, axis=1, keepdims=True)
    return np.clip(np.einsum("ij,ij->i", An, Bn), -1.0, 1.0)


def _held_out_accuracy(sps, folds):
    """Accuracy with each fold scored at the threshold fitted on the other folds."""
    folds = np.asarray(folds)
    uniq = np.unique(folds)
    if uniq.size < 2:
        theta, acc = evaluation.optimal_threshold(sps)
        return {"theta": theta, "accuracy": acc, "folds": None}
    correct, per_fold = 0, {}
    for f in uniq:
        theta, _ = evaluation.optimal_threshold(sps.subset(folds != f))
        r = evaluation.rates_at_threshold(sps.subset(folds == f), theta)
        per_fold[int(f)] = {"theta": theta, "accuracy": r["accuracy"]}
        correct += r["tp"] + r["tn"]
    return {"accuracy": correct / len(sps), "folds": per_fold}


def cmd_verify(args) -> int:
    ds = read_embeddings(args.embeddings)
    pairs = dataset.read_pairs(args.pairs)
    if not pairs:
        raise MalformedRecord("pairs file is empty")
    scores = _pair_scores(ds, pairs)
    subgroups = None
    if args.mode == "per-subgroup":
        subgroups = [ds[p.id_a].subgroup for p in pairs]
        if any(s is None for s in subgroups):
            raise MissingSubgroup("per-subgroup mode needs a subgroup tag on every embedding")
    sps = evaluation.ScoredPairSet(scores, [p.label for p in pairs], [p.rel for p in pairs],
                                   subgroups)
    folds = [p.fold for p in pairs]
    theta, acc = evaluation.optimal_threshold(sps)
    blocks = {"global": {"n_pairs": len(sps), "n_genuine": int(sps.labels.sum()),
                         "theta": theta, "accuracy": acc,
                         "rates": evaluation.rates_at_threshold(sps, theta),
                         "held_out": _held_out_accuracy(sps, folds)}}
    if args.targets:
        blocks["tar_at_far"] = [{"target_far": t, "theta": th, "tar": tar}
                                for t, th, tar in evaluation.tar_at_far(sps, args.targets)]
    if args.mode == "per-type":
        thetas = {}
        for rel, sub in sps.groups("rel").items():
            thetas[rel] = evaluation.optimal_threshold(sub)[0]
        blocks["per_type"] = evaluation.verification_accuracy_by_type(sps, thetas)
    elif args.mode == "per-subgroup":
        targets = args.targets or [1e-3]
        blocks["per_subgroup"] = {repr(t): evaluation.subgroup_threshold_report(sps, t)
                                  for t in targets}
    out = _out_dir(args.out)
    evaluation.write_report(out / "report.json", blocks)
    evaluation.write_det_csv(out / "det.csv", evaluation.det_curve(sps))
    return EXIT_OK


def read_template_list(path, ds) -> list[Template]:
    """CSV with columns id,subject: embedding id and the template it belongs to."""
    groups = defaultdict(list)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and rec[0].strip().lower() == "id"):
                continue
            if len(rec) < 2:
                raise MalformedRecord("expected id,subject", lineno)
            ident, subject = rec[0].strip(), rec[1].strip()
            if ident not in ds:
                raise MalformedRecord(f"unknown embedding id {ident!r}", lineno)
            groups[subject].append(ds[ident])
    return [Template((s,), tuple(groups[s])) for s in sorted(groups)]


def _family(t: Template):
    fids = {m.fid for m in t.media}
    return fids.pop() if len(fids) == 1 else None


def cmd_retrieve(args) -> int:
    ds = read_embeddings(args.embeddings)
    probes = read_template_list(args.probes, ds)
    gallery = read_template_list(args.gallery, ds)
    if not gallery:
        raise ConfigError("gallery is empty")
    if not probes:
        raise ConfigError("no probes given")
    gal_fid = {t.name: _family(t) for t in gallery}
    if args.fusion == "ta":
        negatives = []
        if args.negatives:
            negatives = [m for t in read_template_list(args.negatives, ds) for m in t.media]
        adapted = fusion.gallery_adapt(gallery, negatives, args.lam)
    lists = []
    for p in probes:
        fid = _family(p)
        relevant = [name for name, f in gal_fid.items() if f is not None and f == fid]
        if args.fusion == "ta":
            lists.append(fusion.rank_gallery(p, adapted, relevant))
        else:
            lists.append(fusion.rank_by_fusion(p, gallery, args.fusion, relevant))
    out = _out_dir(args.out)
    with open(out / "ranked.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe_id", "rank", "gallery_subject", "score"])
        for r in lists:
            for k, (s, sc) in enumerate(zip(r.order, r.scores), start=1):
                w.writerow([r.probe, k, s, repr(float(sc))])
    scored = [r for r in lists if r.relevant]
    report = {"fusion": args.fusion, "n_probes": len(lists), "n_gallery": len(gallery),
              "n_probes_with_relevant": len(scored)}
    if scored:
        curve, at = evaluation.cmc(scored, [1, 5, 10, 20])
        report["map"] = evaluation.mean_average_precision(scored)
        report["ap"] = {r.probe: evaluation.average_precision(r) for r in scored}
        report["cmc_at"] = at
        evaluation.write_cmc_csv(out / "cmc.csv", curve)
    evaluation.write_report(out / "report.json", {"retrieve": report})
    return EXIT_OK


def cmd_build_pairs(args) -> int:
    families = dataset.read_families(args.families)
    types = args.types.split(",") if args.types else KIN_TYPES
    pairs = dataset.build_benchmark(families, k=args.folds, seed=args.seed, types=types)
    out = _out_dir(args.out)
    dataset.write_pairs(out / "pairs.csv", pairs)
    return EXIT_OK


def cmd_debias(args) -> int:
    if args.lam < 0:
        raise ConfigError("lambda must be non-negative")
    ds = read_embeddings(args.features)
    if any(e.mid is None or e.subgroup is None for e in ds):
        raise MalformedRecord("debias features need mid (identity) and subgroup tags")
    ids, y_id = np.unique([f"{e.fid}/{e.mid}" for e in ds], return_inverse=True)
    atts, y_att = np.unique([e.subgroup for e in ds], return_inverse=True)
    X = ds.matrix()
    model, hist = debias.train_debias((X, y_id, y_att), len(ids), len(atts), lam=args.lam,
                                      epochs=args.epochs, lr=args.lr, seed=args.seed,
                                      batch_size=args.batch_size, head_lr=args.head_lr)
    out = _out_dir(args.out)
    model.save(out / "checkpoint.json")
    report = {"lambda": args.lam, "epochs": args.epochs, "lr": args.lr, "seed": args.seed,
              "identities": list(ids), "subgroups": list(atts),
              "loss_id": hist.l_id, "loss_att": hist.l_att}
    if args.probe_epochs > 0:
        popts = dict(hidden=tuple(args.probe_hidden), epochs=args.probe_epochs)
        F = debias.transform(model, X)
        before = debias.leakage_probe(X, y_att, args.folds, args.seed, **popts)
        after = debias.leakage_probe(F, y_att, args.folds, args.seed, **popts)
        report["leakage"] = {"chance": before["chance"], "before": before["accuracy"],
                             "after": after["accuracy"], "drop": before["accuracy"] - after["accuracy"],
                             "confusion_after": after["confusion"]}
    evaluation.write_report(out / "report.json", {"debias": report})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="semi-supervised clustering of embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--side", help="CSV of id,class_label")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--truth-field", choices=("fid", "mid", "subgroup"), default="mid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("verify", help="pair verification metrics")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--mode", choices=("global", "per-type", "per-subgroup"), default="global")
    p.add_argument("--targets", type=_float_list, default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("retrieve", help="template search and retrieval")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--probes", required=True, help="CSV of id,subject")
    p.add_argument("--gallery", required=True, help="CSV of id,subject")
    p.add_argument("--fusion", choices=("score", "feature", "ta"), default="score")
    p.add_argument("--negatives", help="CSV of id,subject used as extra negatives (ta)")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("build-pairs", help="kinship pair lists with family-disjoint folds")
    p.add_argument("--families", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--types", help="comma-separated relationship types")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("debias", help="adversarial subgroup debiasing")
    p.add_argument("--features", "--embeddings", dest="features", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--head-lr", type=float)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--probe-epochs", type=int, default=20)
    p.add_argument("--probe-hidden", type=int, nargs="+", default=[512, 512, 256])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_debias)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"kinrec: {exc}", file=sys.stderr)
        return EXIT_IO
    except KinrecError as exc:
        print(f"kinrec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"kinrec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"kinrec: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
