"""Command-line interface.

Exit status is 0 on success, 1 for invalid input (including a failed
``validate``) and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .align import AlignOptions, DistanceWeights, alignment_distance, distance_matrix
from .classify import LabeledDataset, ncc_classify, ncc_train, nn_classify, grid_search_lambda
from .errors import InputError, NumericalError
from .frechet import MeanOptions, frechet_mean
from .kernel import Kernel
from .klds import EstimationOptions, estimate, validate
from .synth import SynthSpec, synth_dataset

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    p.add_argument("--kernel", choices=[k.value for k in Kernel], default=Kernel.CHI2.value)


def _align_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-a", type=float, default=0.25, help="transition weight (default 0.25)")
    p.add_argument("--lambda-mu", type=float, default=0.0, help="bias weight (default 0)")
    p.add_argument("--inits", type=int, default=4, help="random starts per component of O(n)")
    p.add_argument("--batch-size", type=int, default=8, help="random candidates per start")
    p.add_argument("--tol", type=float, default=1e-10, help="relative rho gain per sweep to stop")
    p.add_argument("--max-sweeps", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for distance matrices")


def _order_arg(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--order", type=int, required=required,
                   help="state dimension n (needed when estimating from stream CSVs)")
    p.add_argument("--stability-margin", type=float, default=1e-4)


def _weights(a) -> DistanceWeights:
    return DistanceWeights(a.lambda_a, a.lambda_mu)


def _align_opts(a) -> AlignOptions:
    return AlignOptions(tol=a.tol, max_sweeps=a.max_sweeps, n_init=a.inits,
                        batch_size=a.batch_size, seed=a.seed)


def _est_opts(a) -> EstimationOptions:
    if a.order is None:
        raise InputError("--order is required to estimate descriptors from stream files")
    return EstimationOptions(n=a.order, stability_margin=a.stability_margin)


def _load_item(path: Path, a):
    if path.suffix.lower() == ".json":
        return sio.read_descriptor(path)
    try:
        return estimate(sio.read_stream(path), _est_opts(a), Kernel(a.kernel))
    except NumericalError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _load_dataset(manifest, a) -> LabeledDataset:
    entries = sio.read_manifest(manifest)  # fails early on missing files
    return LabeledDataset([(_load_item(p, a), lab) for p, lab in entries],
                          {"manifest": str(manifest)})


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1))


# -- subcommands ---------------------------------------------------------------

def cmd_estimate(a) -> int:
    opts = _est_opts(a)
    kernel = Kernel(a.kernel)
    if (a.input is None) == (a.manifest is None):
        raise InputError("give exactly one of --input and --manifest")
    if a.input is not None:
        if a.output is None:
            raise InputError("--output is required with --input")
        theta = estimate(sio.read_stream(a.input), opts, kernel)
        sio.write_descriptor(theta, a.output)
        _emit({"output": str(a.output), **validate(theta).as_dict()})
        return EXIT_OK
    entries = sio.read_manifest(a.manifest)
    out_dir = Path(a.output or Path(a.manifest).parent / "descriptors")
    streams = [(p, lab, sio.read_stream(p)) for p, lab in entries]
    written = []
    for p, lab, Y in streams:
        try:
            theta = estimate(Y, opts, kernel)
        except NumericalError as exc:
            raise type(exc)(f"{p}: {exc}") from exc
        target = out_dir / (p.stem + ".json")
        sio.write_descriptor(theta, target)
        written.append((target.name, lab))
    sio.write_manifest(written, out_dir / "manifest.json")
    _emit({"manifest": str(out_dir / "manifest.json"), "count": len(written)})
    return EXIT_OK


def cmd_dist(a) -> int:
    t1, t2 = sio.read_descriptor(a.a), sio.read_descriptor(a.b)
    r = alignment_distance(t1, t2, _weights(a), _align_opts(a))
    _emit({"dist_sq": r.dist_sq, "sweeps": r.sweeps, "converged": r.converged,
           "det_sign": r.det_sign})
    return EXIT_OK


def cmd_distmat(a) -> int:
    ds = _load_dataset(a.manifest, a)
    D = distance_matrix(ds.descriptors, None, _weights(a), _align_opts(a), n_jobs=a.jobs)
    names = [f"{i}:{lab}" for i, lab in enumerate(ds.labels)]
    if a.output:
        sio.write_matrix_csv(D, a.output, header=names, row_labels=names)
    else:
        for row in D:
            print(",".join(repr(float(v)) for v in row))
    return EXIT_OK


def cmd_mean(a) -> int:
    ds = _load_dataset(a.manifest, a)
    mopts = MeanOptions(n_bar=a.landmarks, seed=a.seed, max_outer=a.max_outer,
                        outer_tol=a.outer_tol)
    res = frechet_mean(ds.descriptors, _weights(a), mopts, _align_opts(a))
    sio.write_descriptor(res.mean, a.output)
    trace = a.trace or str(Path(a.output).with_suffix("")) + "_cost.csv"
    sio.write_rows_csv(["iteration", "cost"], [(i, float(g)) for i, g in enumerate(res.cost_trace)],
                       trace)
    _emit({"output": str(a.output), "cost_trace": trace, "cost": res.cost,
           "iterations": len(res.cost_trace), "converged": res.converged})
    return EXIT_OK


def cmd_classify(a) -> int:
    train = _load_dataset(a.train, a)
    same = Path(a.test).resolve() == Path(a.train).resolve()
    test = train if same else _load_dataset(a.test, a)
    if a.exclude_self and not same:
        raise InputError("--exclude-self requires --test to be the same manifest as --train")
    if a.exclude_self and a.mode != "nn":
        raise InputError("--exclude-self applies to --mode nn only")
    w, opts = _weights(a), _align_opts(a)
    if a.mode == "nn":
        res = nn_classify(train, test, w, opts, exclude_self=a.exclude_self, n_jobs=a.jobs)
    else:
        mopts = MeanOptions(n_bar=a.landmarks, seed=a.seed)
        model = ncc_train(train, w, mopts, opts, a.center)
        res = ncc_classify(model, test, w, opts)
    out = Path(a.output_dir) if a.output_dir else None
    if out is not None:
        sio.write_rows_csv(["index", "true", "predicted"],
                           [(i, t, p) for i, (t, p) in enumerate(zip(test.labels, res.labels))],
                           out / "labels.csv")
        sio.write_matrix_csv(res.confusion, out / "confusion.csv", header=res.classes,
                             row_labels=res.classes, corner="true\\predicted")
    _emit({"mode": a.mode, "center": a.center if a.mode == "ncc" else None,
           "accuracy": res.accuracy, "classes": res.classes,
           "confusion": res.confusion.tolist()})
    return EXIT_OK


def cmd_cv(a) -> int:
    train = _load_dataset(a.train, a)
    best, table = grid_search_lambda(train, a.folds, a.lambda_a_grid, a.lambda_mu_grid,
                                     _align_opts(a), seed=a.seed, n_jobs=a.jobs)
    if a.output:
        sio.write_rows_csv(["lambda_a", "lambda_mu", "accuracy"], table, a.output)
    _emit({"best_lambda_a": best.lambda_A, "best_lambda_mu": best.lambda_mu,
           "table": [list(r) for r in table]})
    return EXIT_OK


def cmd_synth(a) -> int:
    per_class = a.per_class + a.test_per_class
    spec = SynthSpec(n_classes=a.classes, per_class=per_class, p=a.p, N=a.N, n=a.n, seed=a.seed,
                     within_class_noise=a.noise, between_class_separation=a.separation)
    data = synth_dataset(spec)
    out = Path(a.out_dir)
    entries = {"train": [], "test": []}
    for k, (lab, Y) in enumerate(data):
        local = k % per_class
        name = f"{lab}_{local:03d}.csv"
        sio.write_stream(Y, out / "streams" / name)
        split = "train" if local < a.per_class else "test"
        entries[split].append((f"streams/{name}", lab))
    sio.write_manifest(entries["train"], out / "train.json")
    result = {"train": str(out / "train.json"), "count": len(data)}
    if entries["test"]:
        sio.write_manifest(entries["test"], out / "test.json")
        result["test"] = str(out / "test.json")
    _emit(result)
    return EXIT_OK


def cmd_validate(a) -> int:
    report = validate(sio.read_descriptor(a.input)).as_dict()
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sobalign", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="identify descriptors from stream CSVs")
    _common(p)
    _order_arg(p)
    p.add_argument("--input", help="stream CSV")
    p.add_argument("--manifest", help="manifest of stream CSVs; writes a descriptor manifest")
    p.add_argument("--output", help="descriptor JSON (with --input) or output directory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("dist", help="alignment distance between two descriptors")
    _common(p)
    _align_args(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("distmat", help="pairwise distance matrix of a manifest")
    _common(p)
    _align_args(p)
    _order_arg(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", help="CSV path (default: stdout, no labels)")
    p.set_defaults(func=cmd_distmat)

    p = sub.add_parser("mean", help="Fréchet mean of a manifest")
    _common(p)
    _align_args(p)
    _order_arg(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--landmarks", type=int, default=0, help="k-means landmarks (0: all samples)")
    p.add_argument("--max-outer", type=int, default=50)
    p.add_argument("--outer-tol", type=float, default=1e-8)
    p.add_argument("--output", required=True, help="descriptor JSON of the mean")
    p.add_argument("--trace", help="cost trace CSV (default: <output>_cost.csv)")
    p.set_defaults(func=cmd_mean)

    p = sub.add_parser("classify", help="1-NN or nearest-class-center classification")
    _common(p)
    _align_args(p)
    _order_arg(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", choices=["nn", "ncc"], default="nn")
    p.add_argument("--center", choices=["frechet", "medoid"], default="frechet")
    p.add_argument("--landmarks", type=int, default=0)
    p.add_argument("--exclude-self", action="store_true",
                   help="leave-one-out 1-NN when train and test are the same manifest")
    p.add_argument("--output-dir", help="write labels.csv and confusion.csv here")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("cv", help="cross-validated grid search over the weights")
    _common(p)
    _align_args(p)
    _order_arg(p)
    p.add_argument("--train", required=True)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--lambda-a-grid", type=_floats, default=[0.25])
    p.add_argument("--lambda-mu-grid", type=_floats, default=[0.0])
    p.add_argument("--output", help="table CSV")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("synth", help="generate a labeled synthetic stream dataset")
    _common(p)
    p.set_defaults(seed=42)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=10, help="training streams per class")
    p.add_argument("--test-per-class", type=int, default=0, help="extra test streams per class")
    p.add_argument("--p", type=int, default=16, help="histogram bins")
    p.add_argument("--N", type=int, default=60, help="time steps per stream")
    p.add_argument("--n", type=int, default=4, help="latent dimension of the generator")
    p.add_argument("--noise", type=float, default=0.3, help="within-class noise")
    p.add_argument("--separation", type=float, default=1.0, help="between-class separation")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a descriptor's invariants")
    _common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"sobalign: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"sobalign: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
