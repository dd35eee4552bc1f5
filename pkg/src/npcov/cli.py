"""Command-line surface over the library.

Every command reads and writes the package's container formats, prints
one JSON document to stdout, and exits nonzero on any failure. Commands
that involve randomness require an explicit --seed and derive all their
sub-streams from it, so reruns are byte-for-byte reproducible. The
NPC_THREADS environment variable caps the worker count of the
parallelizable stages.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import abstraction as ab
from . import cdp as cdp_mod
from . import comparators as cmp
from . import coverage as cov
from . import metrics as mx
from . import trainkit as tk
from ._util import env_workers
from .errors import GraphModelMismatch, LoadError, ShapeError, TrainingDiverged
from .lrp import relevance
from .model import forward, load_model, save_model


def _int_at_least(minimum):
    def parse(text):
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value
    return parse


def _csv_of(cast):
    def parse(text):
        try:
            return [cast(part) for part in text.split(",") if part != ""]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e))
    return parse


def _emit(doc: dict, path=None) -> None:
    text = json.dumps(doc, indent=2)
    print(text)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")


def _load_graph_with_model(model_path, graph_path):
    params = ab.graph_params(graph_path)
    m = load_model(model_path, include_input=bool(params.get("include_input",
                                                             False)))
    return m, ab.load_graph(graph_path, m)


def _cmd_train_fixture(args) -> int:
    data = tk.make_blobs(dims=args.dims, classes=args.classes,
                         per_class=args.per_class, spread=args.spread,
                         seed=args.seed)
    train, test = tk.split_dataset(data, args.test_fraction, seed=args.seed)
    widths = [args.dims] + args.hidden + [args.classes]
    m = tk.train_sgd(widths, train,
                     tk.TrainConfig(epochs=args.epochs, seed=args.seed))
    model_path = args.out + ".npcm"
    train_path = args.out + ".train.npct"
    test_path = args.out + ".test.npct"
    save_model(m, model_path)
    tk.save_dataset(train, train_path)
    tk.save_dataset(test, test_path)
    _emit({"accuracy": tk.accuracy(m, train),
           "test_accuracy": tk.accuracy(m, test),
           "model": model_path, "train": train_path, "test": test_path,
           "widths": widths}, args.report)
    return 0


def _cmd_build_dg(args) -> int:
    m = load_model(args.model, include_input=args.include_input)
    data = tk.load_dataset(args.data)
    g = ab.build_decision_graph(m, data, alpha=args.alpha, k=args.clusters,
                                beta=args.beta, seed=args.seed,
                                rule=args.rule, buckets=args.buckets,
                                ubound=args.ubound, workers=env_workers())
    ab.save_graph_file(g, args.out)
    classes = []
    for y, per_class in enumerate(g.clusters):
        classes.append({"class": y, "clusters": [
            {"cluster": c.cluster_id, "members": c.member_count(),
             "width": float(np.mean([len(us) / size for us, size
                                     in zip(c.abstract.units, g.layer_sizes)]))}
            for c in per_class]})
    _emit({"out": args.out, "alpha": g.alpha, "clusters": g.k, "beta": g.beta,
           "classes": classes,
           "empty_clusters": len(g.flags["empty_clusters"]),
           "empty_abstract": len(g.flags["empty_abstract"])}, args.report)
    return 0


def _cmd_cover(args) -> int:
    m, g = _load_graph_with_model(args.model, args.dg)
    suite = tk.load_dataset(args.suite)
    config = None
    if args.buckets is not None or args.ubound is not None:
        config = cov.CoverageConfig(
            buckets=args.buckets if args.buckets is not None
            else (g.buckets or cov.BUCKETS_DEFAULT),
            ubound=args.ubound if args.ubound is not None
            else (g.ubound or cov.UBOUND_DEFAULT))
    state = cov.new_state(args.criterion, g, config)
    cov.run_suite(state, m, suite.samples, rule=args.rule,
                  workers=env_workers())
    _emit(cov.report(state), args.report)
    return 0


def _cmd_mask_eval(args) -> int:
    m = load_model(args.model, include_input=args.include_input)
    data = tk.load_dataset(args.data)
    workers = env_workers()
    doc = {"alpha": args.alpha, "samples": len(data)}
    if args.target in ("cdp", "both"):
        doc["inc_cdp"] = cdp_mod.mask_eval(m, data, args.alpha, "cdp",
                                           rule=args.rule, workers=workers)
    if args.target in ("ncdp", "both"):
        doc["inc_ncdp"] = cdp_mod.mask_eval(m, data, args.alpha, "ncdp",
                                            rule=args.rule, workers=workers)
    widths = [cdp_mod.width(cdp_mod.extract_cdp(
        relevance(m, x, rule=args.rule), args.alpha), m)
        for x in data.samples]
    doc["mean_width"] = float(np.mean(widths))
    if args.quintiles:
        doc["quintile_inc"] = cdp_mod.quintile_mask_eval(
            m, data, args.alpha, rule=args.rule, workers=workers)
    _emit(doc, args.report)
    return 0


def _best_setting(rows, cap):
    eligible = [r for r in rows if r["width"] <= cap]
    if not eligible:
        return None
    return max(eligible, key=lambda r: r["inc_cdp"] - r["inc_ncdp"])


def _cmd_tune(args) -> int:
    m = load_model(args.model, include_input=args.include_input)
    data = tk.load_dataset(args.data)
    workers = env_workers()

    alpha_rows = []
    for alpha in args.alphas:
        widths = [cdp_mod.width(cdp_mod.extract_cdp(relevance(m, x), alpha), m)
                  for x in data.samples]
        alpha_rows.append({
            "alpha": alpha,
            "width": float(np.mean(widths)),
            "inc_cdp": cdp_mod.mask_eval(m, data, alpha, "cdp",
                                         workers=workers),
            "inc_ncdp": cdp_mod.mask_eval(m, data, alpha, "ncdp",
                                          workers=workers)})
    best_alpha = _best_setting(alpha_rows, args.width_cap)

    cluster_rows = []
    best_cluster = None
    if best_alpha is not None:
        alpha = best_alpha["alpha"]
        for k in args.clusters:
            for beta in args.betas:
                g = ab.build_decision_graph(m, data, alpha=alpha, k=k,
                                            beta=beta, seed=args.seed,
                                            workers=workers)
                rates_c = ab.abstract_mask_eval(m, g, data, target="cdp")
                rates_n = ab.abstract_mask_eval(m, g, data, target="ncdp")
                filled_c = [r for r in rates_c.values() if r is not None]
                filled_n = [r for r in rates_n.values() if r is not None]
                cluster_rows.append({
                    "clusters": k, "beta": beta,
                    "width": ab.abstract_width(g),
                    "inc_cdp": float(np.mean(filled_c)),
                    "inc_ncdp": float(np.mean(filled_n))})
        best_cluster = _best_setting(cluster_rows, args.width_cap)

    recommended = None
    if best_alpha is not None:
        recommended = {"alpha": best_alpha["alpha"]}
        if best_cluster is not None:
            recommended["clusters"] = best_cluster["clusters"]
            recommended["beta"] = best_cluster["beta"]
    _emit({"width_cap": args.width_cap, "alpha_table": alpha_rows,
           "cluster_table": cluster_rows, "recommended": recommended},
          args.report)
    return 0


def _cmd_baseline(args) -> int:
    m = load_model(args.model)
    suite = tk.load_dataset(args.suite)
    ranges = None
    if args.criterion in ("kmnc", "nbc"):
        if not args.train:
            raise ShapeError(f"{args.criterion} needs --train to profile "
                             "activation ranges")
        ranges = cmp.profile_ranges(m, tk.load_dataset(args.train))
    rep = cmp.baseline_report(args.criterion, m, suite.samples, ranges=ranges,
                              threshold=args.threshold, k=args.k,
                              sections=args.sections, workers=env_workers())
    _emit(rep, args.report)
    return 0


def _cmd_attack(args) -> int:
    m = load_model(args.model)
    data = tk.load_dataset(args.data)
    if data.labels is None:
        raise ShapeError("attack needs a labeled dataset")
    children = np.random.SeedSequence(args.seed).spawn(len(data))
    adv = np.empty_like(data.samples)
    fooled = 0
    for i, x in enumerate(data.samples):
        child_seed = int(children[i].generate_state(1)[0])
        out, flipped = tk.pgd_attack(m, x, int(data.labels[i]), eps=args.eps,
                                     step=args.step, iters=args.iters,
                                     seed=child_seed)
        adv[i] = out
        fooled += int(flipped)
    tk.save_dataset(tk.LabeledDataset(samples=adv, labels=data.labels.copy()),
                    args.out)
    _emit({"out": args.out, "eps": args.eps, "samples": len(data),
           "fooled": fooled, "fooled_rate": fooled / len(data)}, args.report)
    return 0


def _cmd_impartiality(args) -> int:
    m = load_model(args.model)
    suite = tk.load_dataset(args.suite)
    if len(suite) == 0:
        raise ShapeError("impartiality needs a nonempty suite")
    preds = [forward(m, x).predicted_class for x in suite.samples]
    counts = np.bincount(np.asarray(preds), minlength=m.class_count)
    _emit({"impartiality": mx.output_impartiality(preds, m.class_count),
           "class_counts": counts.tolist(), "samples": len(preds)},
          args.report)
    return 0


def _cmd_similarity(args) -> int:
    m, g = _load_graph_with_model(args.model, args.dg)
    data = tk.load_dataset(args.data)
    paths = [cdp_mod.extract_cdp(relevance(m, x), g.alpha)
             for x in data.samples]
    rep = mx.similarity_stats(g, paths, sample_cap=args.cap, seed=args.seed)
    _emit(rep.as_dict(), args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npcov",
        description="Decision-logic coverage for feed-forward networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-fixture",
                       help="train a small blob-classifier fixture")
    p.add_argument("--out", required=True,
                   help="path prefix for the model and dataset files")
    p.add_argument("--dataset", choices=["blobs"], default="blobs")
    p.add_argument("--dims", type=_int_at_least(1), default=2)
    p.add_argument("--classes", type=_int_at_least(2), default=3)
    p.add_argument("--per-class", type=_int_at_least(1), default=140)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--hidden", type=_csv_of(int), default=[16, 16],
                   help="comma-separated hidden layer widths")
    p.add_argument("--epochs", type=_int_at_least(1), default=60)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train_fixture)

    p = sub.add_parser("build-dg", help="cluster critical paths into a "
                                        "decision graph")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--clusters", type=_int_at_least(1), required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rule", choices=["epsilon", "zplus"], default="epsilon")
    p.add_argument("--include-input", action="store_true")
    p.add_argument("--buckets", type=_int_at_least(1), default=None,
                   help="stamp a default bucket count into the graph")
    p.add_argument("--ubound", type=float, default=None,
                   help="stamp a default distance bound into the graph")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_build_dg)

    p = sub.add_parser("cover", help="coverage of a test suite")
    p.add_argument("--model", required=True)
    p.add_argument("--dg", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--criterion", choices=["snpc", "anpc"], required=True)
    p.add_argument("--buckets", type=_int_at_least(1), default=None)
    p.add_argument("--ubound", type=float, default=None)
    p.add_argument("--rule", choices=["epsilon", "zplus"], default="epsilon")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_cover)

    p = sub.add_parser("mask-eval", help="prediction change when masking "
                                         "critical paths")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--target", choices=["cdp", "ncdp", "both"], default="both")
    p.add_argument("--rule", choices=["epsilon", "zplus"], default="epsilon")
    p.add_argument("--include-input", action="store_true")
    p.add_argument("--quintiles", action="store_true",
                   help="also mask relevance-ranked fifths of each path")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_mask_eval)

    p = sub.add_parser("tune", help="sweep alpha and clustering settings")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alphas", type=_csv_of(float), default=[0.7, 0.8, 0.9, 1.0])
    p.add_argument("--clusters", type=_csv_of(int), default=[2, 4])
    p.add_argument("--betas", type=_csv_of(float), default=[0.5, 0.7])
    p.add_argument("--width-cap", type=float, default=0.5)
    p.add_argument("--include-input", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("baseline", help="neuron-level baseline criteria")
    p.add_argument("--model", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--criterion", choices=["nc", "kmnc", "nbc"], required=True)
    p.add_argument("--train", help="training data for range profiling")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--k", type=_int_at_least(1),
                   default=cmp.KMNC_SECTIONS_DEFAULT)
    p.add_argument("--sections", type=_int_at_least(1),
                   default=cmp.NBC_SECTIONS_DEFAULT)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("attack", help="projected gradient attack on a "
                                      "labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--iters", type=_int_at_least(1), default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("impartiality", help="class balance of predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_impartiality)

    p = sub.add_parser("similarity", help="path similarity within and "
                                          "across classes")
    p.add_argument("--model", required=True)
    p.add_argument("--dg", required=True)
    p.add_argument("--data", required=True,
                   help="the dataset the graph was built from")
    p.add_argument("--cap", type=_int_at_least(2),
                   default=mx.SAMPLE_CAP_DEFAULT)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_similarity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ShapeError, LoadError, GraphModelMismatch, TrainingDiverged,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
