"""Command-line front end.

Exit status: 0 on success, 1 on usage errors, 2 on data or validation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import data, oracles
from .data import DataError, build_dataset
from .evalsuite import evaluate
from .gmad import gmad_pairs
from .listrank import train_list
from .pairgen import chain_dils, generate_dips, load_dils, load_dips, save_dils, save_dips
from .pairrank import TrainConfig, train
from .pipeline import DemoConfig, calibrate_percentiles, pmap, raw_oracle_scores, run_demo, synthesize
from .qnet import ModelError, forward, load_model, save_model

log = logging.getLogger("qrank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad architecture {text!r}") from None
    return dims + (1,)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qrank", description="Learning-to-rank blind image quality toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="synthesize sources and WN/BLUR versions; write images and features")
    s.add_argument("--sources", type=int, default=200, help="number of pristine sources (default 200)")
    s.add_argument("--side", type=int, default=64, help="image side in pixels (default 64)")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--out", required=True, help="output directory (images.npz, features.csv)")
    s.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")

    s = sub.add_parser("score", help="score images with full-reference oracles; write scores.csv")
    s.add_argument("--images", required=True, help="images.npz written by synth")
    s.add_argument("--oracles", default="psnr,ssim", help="comma-separated oracles (default psnr,ssim)")
    s.add_argument("--calibrate", choices=("percentile", "none"), default="percentile",
                   help="map raw scores onto [0,100] (default percentile)")
    s.add_argument("--anchors", action="append", default=[], metavar="ORACLE=CSV",
                   help="calibrate ORACLE with raw,mos anchor rows from CSV (overrides --calibrate)")
    s.add_argument("--out", required=True, help="output scores.csv")
    s.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")

    s = sub.add_parser("gen-pairs", help="generate DIPs (or chained DILs) from scores.csv")
    s.add_argument("--scores", required=True, help="scores.csv")
    s.add_argument("--tc", type=float, default=20.0, help="uncertainty cutoff Tc (default 20)")
    s.add_argument("--t-min", type=float, default=0.0, help="drop pairs with gap below this (default 0)")
    s.add_argument("--budget", type=int, default=None, help="number of candidate pairs to sample (default all)")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--lists", action="store_true", help="chain pairs into 3-element lists and write dils.csv")
    s.add_argument("--bucket-width", type=float, default=0.05, help="uncertainty bucket width for chaining (default 0.05)")
    s.add_argument("--list-budget", type=int, default=None, help="number of lists to sample (default all)")
    s.add_argument("--out", required=True, help="output dips.csv (dils.csv with --lists)")

    s = sub.add_parser("train", help="train a scoring network on pairs or lists")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--pairs", help="dips.csv (pairwise training)")
    g.add_argument("--lists", help="dils.csv (listwise training)")
    s.add_argument("--features", required=True, help="features.csv")
    s.add_argument("--scores", required=True, help="scores.csv (source layout for the validation split)")
    s.add_argument("--arch", type=_dims, default=None,
                   help="input and hidden widths, e.g. 16,256,128,3 (default d,256,128,3); output 1 is implied")
    s.add_argument("--batch", type=int, default=512, help="batch size (default 512)")
    s.add_argument("--lr", type=float, default=1e-4, help="learning rate (default 1e-4)")
    s.add_argument("--momentum", type=float, default=0.9, help="momentum (default 0.9)")
    s.add_argument("--wd", type=float, default=5e-4, help="weight decay (default 5e-4)")
    s.add_argument("--epochs", type=int, default=1, help="passes over the training items (default 1)")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--val-frac", type=float, default=0.1, help="fraction of sources held out (default 0.1)")
    s.add_argument("--log-interval", type=int, default=50, help="batches between validations (default 50)")
    s.add_argument("--no-standardize", action="store_true", help="do not fit an input standardization")
    s.add_argument("--out", required=True, help="output model.json")
    s.add_argument("--log", default=None, help="training log CSV (batch_index,train_loss,val_loss)")

    s = sub.add_parser("predict", help="score feature rows with a trained model; write id,score CSV")
    s.add_argument("--model", required=True, help="model.json")
    s.add_argument("--features", required=True, help="features.csv")
    s.add_argument("--out", default="-", help="output CSV (default stdout)")

    s = sub.add_parser("eval", help="evaluate a model: SRCC/PLCC sessions, D-, L- and P-tests")
    s.add_argument("--model", required=True, help="model.json")
    s.add_argument("--features", required=True, help="features.csv")
    s.add_argument("--scores", required=True, help="scores.csv")
    s.add_argument("--mos", default=None, help="mos.csv (enables the session protocol)")
    s.add_argument("--pairs", default=None, help="evaluation dips.csv (enables the P-test)")
    s.add_argument("--sessions", type=int, default=1000, help="random splits (default 1000)")
    s.add_argument("--split", type=float, default=0.8, help="fraction of sources for logistic fitting (default 0.8)")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--report", default="-", help="output report.json (default stdout)")

    s = sub.add_parser("gmad", help="select gMAD pairs from attacker and defender scores")
    s.add_argument("--attacker", required=True, help="attacker id,score CSV")
    s.add_argument("--defender", required=True, help="defender id,score CSV")
    s.add_argument("--levels", type=int, default=5, help="defender quantile levels (default 5)")
    s.add_argument("--eps", type=float, default=0.5, help="defender band half-width (default 0.5)")
    s.add_argument("--out", default="-", help="output CSV (default stdout)")

    s = sub.add_parser("demo", help="run the synthetic end-to-end experiment")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--sources", type=int, default=200, help="number of pristine sources (default 200)")
    s.add_argument("--side", type=int, default=64, help="image side in pixels (default 64)")
    s.add_argument("--budget", type=int, default=200_000, help="candidate pairs sampled for training (default 200000)")
    s.add_argument("--list-budget", type=int, default=100_000, help="lists sampled for training (default 100000)")
    s.add_argument("--sessions", type=int, default=100, help="sessions for the correlation protocol (default 100)")
    s.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    return p


def _open_out(path):
    return sys.stdout if path == "-" else open(path, "w", newline="")


def _close(fh):
    if fh is not sys.stdout:
        fh.close()


def cmd_synth(a):
    if a.sources < 1 or a.side < 16:
        raise UsageError("--sources must be >= 1 and --side >= 16")
    os.makedirs(a.out, exist_ok=True)
    images, layout = synthesize(a.sources, a.side, a.seed, a.threads)
    np.savez_compressed(
        os.path.join(a.out, "images.npz"),
        images=np.stack(images),
        source_id=np.array([r[0] for r in layout]),
        distortion=np.array([r[1] for r in layout]),
        level=np.array([r[2] for r in layout]),
    )
    feats = np.array(pmap(data.extract_features, images, a.threads))
    ds = build_dataset(layout, feats)
    data.save_dataset(ds, features_path=os.path.join(a.out, "features.csv"))


def _read_anchors(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["raw", "mos"]:
        raise DataError(f"{path}: expected header raw,mos")
    try:
        return [(float(r[0]), float(r[1])) for r in rows[1:] if r]
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed anchor row") from None


def cmd_score(a):
    names = tuple(n.strip() for n in a.oracles.split(",") if n.strip())
    unknown = [n for n in names if n not in oracles.ORACLES]
    if unknown or not names:
        raise UsageError(f"unknown oracle(s) {unknown}; available: {sorted(oracles.ORACLES)}")
    with np.load(a.images) as z:
        images = list(z["images"])
        layout = list(zip(z["source_id"].tolist(), z["distortion"].tolist(), z["level"].tolist()))
    ds = build_dataset(layout, np.zeros((len(images), 0)), raw_oracle_scores(images, layout, names, a.threads))
    anchors = {}
    for item in a.anchors:
        name, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--anchors expects ORACLE=CSV, got {item!r}")
        anchors[name] = _read_anchors(path)
    if anchors:
        for name, pts in anchors.items():
            ds = oracles.calibrate(ds, name, pts)
    elif a.calibrate == "percentile":
        ds = calibrate_percentiles(ds)
    data.save_dataset(ds, scores_path=a.out)


def cmd_gen_pairs(a):
    ds = data.load_dataset(None, a.scores)
    dips = generate_dips(ds, Tc=a.tc, T_min=a.t_min, budget=a.budget, seed=a.seed)
    if a.lists:
        save_dils(chain_dils(dips, a.bucket_width, a.list_budget, a.seed), a.out)
    else:
        save_dips(dips, a.out)


def cmd_train(a):
    ds = data.load_dataset(a.features, a.scores)
    cfg = TrainConfig(
        batch_size=a.batch, momentum=a.momentum, weight_decay=a.wd, learning_rate=a.lr,
        epochs=a.epochs, seed=a.seed, validation_fraction=a.val_frac,
        log_interval=a.log_interval, standardize=not a.no_standardize,
    )
    if a.arch is not None and a.arch[0] != ds.feature_dim:
        raise DataError(f"--arch input width {a.arch[0]} does not match feature dimension {ds.feature_dim}")
    if a.pairs:
        model, tlog = train(ds, load_dips(a.pairs), cfg, layer_dims=a.arch)
    else:
        model, tlog = train_list(ds, load_dils(a.lists), cfg, layer_dims=a.arch)
    save_model(model, a.out)
    if a.log:
        tlog.write_csv(a.log)
    log.info("best validation loss %.6g at batch %d", tlog.best_val_loss, tlog.best_batch)


def _feature_table(path):
    feats = data.read_features(path)
    n = len(feats)
    if sorted(feats) != list(range(n)):
        raise DataError(f"{path}: ids must be dense 0..{n - 1}")
    return np.array([feats[k] for k in range(n)]).reshape(n, -1)


def _check_model_dim(model, x, path):
    if x.shape[1] != model.input_dim:
        raise DataError(f"{path}: features have dimension {x.shape[1]}, model expects {model.input_dim}")


def cmd_predict(a):
    model = load_model(a.model)
    x = _feature_table(a.features)
    _check_model_dim(model, x, a.features)
    scores = forward(model, x)
    fh = _open_out(a.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score"])
        for k, v in enumerate(scores.tolist()):
            w.writerow([k, repr(v)])
    finally:
        _close(fh)


def cmd_eval(a):
    model = load_model(a.model)
    ds = data.load_dataset(a.features, a.scores, a.mos, require_complete=False)
    _check_model_dim(model, ds.features, a.features)
    dips = load_dips(a.pairs) if a.pairs else None
    if dips is not None and len(dips) and max(dips.i.max(), dips.j.max()) >= len(ds):
        raise DataError(f"{a.pairs}: pair references an id outside the dataset")
    rep = evaluate(ds, forward(model, ds.features), dips=dips, sessions=a.sessions, split=a.split, seed=a.seed)
    fh = _open_out(a.report)
    try:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        _close(fh)


def _score_vector(path):
    values = data.read_id_values(path)
    n = len(values)
    if sorted(values) != list(range(n)):
        raise DataError(f"{path}: ids must be dense 0..{n - 1}")
    return np.array([values[k] for k in range(n)])


def cmd_gmad(a):
    attacker, defender = _score_vector(a.attacker), _score_vector(a.defender)
    if len(attacker) != len(defender):
        raise DataError("attacker and defender score different image sets")
    pairs = gmad_pairs(attacker, defender, a.levels, a.eps)
    fh = _open_out(a.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["best_id", "worst_id", "defender_level"])
        w.writerows(pairs)
    finally:
        _close(fh)


def cmd_demo(a):
    cfg = DemoConfig(
        seed=a.seed, sources=a.sources, side=a.side, budget=a.budget,
        list_budget=a.list_budget, sessions=a.sessions, threads=a.threads,
    )
    report = run_demo(a.out, cfg)
    for name, entry in report["models"].items():
        print(f"{name}: SRCC(psnr)={entry['oracle_srcc'].get('psnr')} L_s={entry['L_s']} P={entry['P']} D={entry['D']}")


COMMANDS = {
    "synth": cmd_synth,
    "score": cmd_score,
    "gen-pairs": cmd_gen_pairs,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gmad": cmd_gmad,
    "demo": cmd_demo,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qrank {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, ModelError, ValueError, KeyError, OSError) as exc:
        print(f"qrank {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
