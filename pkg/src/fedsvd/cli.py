"""Command line entry point: ``fedsvd {simulate,sweep,serve,join,predict,make-blobs}``.

Exit codes: 0 success, 1 runtime error, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    PartitionMode,
    encode_targets,
    iter_csv_chunks,
    load_csv,
    make_blobs,
    minmax_scale,
    replicate,
    write_csv,
)
from .errors import FedSvdError
from .model import AggregateState, ModelWeights, add_bias, classify, fit_client, incorporate
from .numeric import ActivationKind, ActivationSpec
from .simulator import (
    SWEEP_COLUMNS,
    SimulationConfig,
    default_workers,
    run_experiment,
    sweep_clients,
    sweep_rows,
    training_size,
)
from .wire import AgentStats, Coordinator, run_client_agent, send_update

SCHEMA_VERSION = 1
log = logging.getLogger("fedsvd")


class UsageError(Exception):
    """Invalid flag combination; reported with exit code 2."""


# -- documents ----------------------------------------------------------------


def weights_to_dict(weights: ModelWeights, classes=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "activation": {"kind": weights.activation.kind.value,
                       "epsilon_clip": weights.activation.epsilon_clip},
        "lambda": weights.lambda_used,
        "classes": None if classes is None else [str(c) for c in classes],
        "w": weights.w.tolist(),
    }


def weights_from_dict(doc: dict) -> tuple[ModelWeights, list | None]:
    act = doc.get("activation", {})
    spec = ActivationSpec(ActivationKind(act.get("kind", "logistic")), act.get("epsilon_clip", 0.05))
    w = np.asarray(doc["w"], dtype=np.float64)
    if w.ndim != 2:
        raise FedSvdError("weights file holds a malformed weight matrix")
    return ModelWeights(w, spec, float(doc.get("lambda", 0.0))), doc.get("classes")


def save_weights(path, weights: ModelWeights, classes=None) -> None:
    Path(path).write_text(json.dumps(weights_to_dict(weights, classes), indent=1) + "\n")


def load_weights(path) -> tuple[ModelWeights, list | None]:
    try:
        return weights_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, ValueError) as exc:
        raise FedSvdError(f"cannot read weights from {path}: {exc}") from exc


def _write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")


# -- argument handling -----------------------------------------------------------


def _label_column(text: str | None):
    if text is None:
        return None
    try:
        return int(text)
    except ValueError:
        return text


def _counts(text: str) -> list[int]:
    try:
        counts = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid client count list {text!r}") from None
    if not counts:
        raise argparse.ArgumentTypeError("empty client count list")
    return counts


def _classes(text: str) -> tuple[str, ...]:
    return tuple(c.strip() for c in text.split(",") if c.strip())


def _add_data_args(p: argparse.ArgumentParser, labeled: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file, optionally .gz/.bz2/.xz compressed")
    p.add_argument("--label-column", default="-1" if labeled else None,
                   help="label column index or header name"
                        + (" (default: last)" if labeled else " (omit for unlabeled data)"))
    p.add_argument("--header", action="store_true", help="first row is a header")


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--partition", default="iid-shuffle",
                   help="iid-shuffle (alias iid) or label-sorted (alias non-iid)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--watts", type=float, default=65.0, help="power draw of one device")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--replicate", type=int, default=1,
                   help="stack the dataset k times in memory before splitting")
    p.add_argument("--minmax", action="store_true", help="min-max scale features (off by default)")
    p.add_argument("--parallel", action="store_true", help="fit clients on a thread pool")
    p.add_argument("--workers", type=int, default=None,
                   help="thread pool size (default: $FEDSVD_WORKERS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsvd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one federated experiment in-process")
    _add_data_args(p)
    _add_experiment_args(p)
    p.add_argument("--clients", type=int, default=1)
    p.add_argument("--out", help="write the metrics report (JSON) here")
    p.add_argument("--weights-out", help="write the first repeat's weights (JSON) here")

    p = sub.add_parser("sweep", help="repeat the experiment over several client counts")
    _add_data_args(p)
    _add_experiment_args(p)
    p.add_argument("--counts", type=_counts, required=True, help="comma-separated, e.g. 1,10,100")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", help="also write all reports as one JSON document")

    p = sub.add_parser("serve", help="run a single-round coordinator over TCP")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--classes", type=_classes, help="class labels to record in the weights file")
    p.add_argument("--weights-out", help="write the global weights (JSON) here")

    p = sub.add_parser("join", help="fit a local shard and join a coordinator's round")
    _add_data_args(p)
    p.add_argument("--connect", required=True, help="coordinator host:port")
    p.add_argument("--classes", type=_classes,
                   help="task-wide class list (default: classes found in --data)")
    p.add_argument("--chunk-rows", type=int, help="stream the file in chunks of this many rows")
    p.add_argument("--timeout", type=float, default=None, help="socket timeout in seconds")
    p.add_argument("--weights-out", help="write the received weights (JSON) here")

    p = sub.add_parser("predict", help="apply a weights file to a dataset")
    _add_data_args(p, labeled=False)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", help="write one predicted label per line here")

    p = sub.add_parser("make-blobs", help="write a synthetic Gaussian-cluster dataset")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--features", type=int, default=2)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _config(args, num_clients: int) -> SimulationConfig:
    try:
        mode = PartitionMode.parse(args.partition)
    except ValueError:
        raise UsageError(f"unknown partition mode {args.partition!r}") from None
    if args.replicate < 1:
        raise UsageError("--replicate must be >= 1")
    if args.workers is not None and args.workers < 1:
        raise UsageError("--workers must be >= 1")
    if not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie in (0, 1)")
    try:
        return SimulationConfig(
            num_clients=num_clients, partition_mode=mode, lam=args.lam, seed=args.seed,
            repeats=args.repeats, device_watts=args.watts, train_fraction=args.train_fraction,
            parallel_clients=args.parallel, max_workers=args.workers or default_workers(),
        )
    except FedSvdError as exc:
        raise UsageError(str(exc)) from None


def _load_experiment_data(args) -> Dataset:
    ds = load_csv(args.data, _label_column(args.label_column), args.header)
    if ds.labels is None:
        raise UsageError("experiments need a label column")
    ds = replicate(ds, args.replicate)
    if args.minmax:
        (ds,) = minmax_scale(ds)
    return ds


def _check_clients(ds: Dataset, cfg: SimulationConfig, counts) -> None:
    n_train = training_size(ds, cfg.train_fraction)
    for c in counts:
        if not 1 <= c <= n_train:
            raise UsageError(f"client count {c} must lie in [1, {n_train}] (training set size)")


def _summary(report) -> str:
    return (f"clients={report.num_clients} accuracy_test={report.accuracy_test:.4f} "
            f"training_time_s={report.training_time_seconds:.6f} "
            f"watt_hours={report.watt_hours:.6g}")


def cmd_simulate(args) -> int:
    if args.clients < 1:
        raise UsageError("--clients must be >= 1")
    cfg = _config(args, args.clients)
    ds = _load_experiment_data(args)
    _check_clients(ds, cfg, [cfg.num_clients])
    report = run_experiment(ds, cfg)
    if args.out:
        _write_json(args.out, {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "dataset": {"path": str(args.data), "samples": ds.num_samples,
                        "features": ds.num_features, "classes": list(ds.class_list)},
            "report": report.to_dict(),
        })
    if args.weights_out:
        save_weights(args.weights_out, report.weights, ds.class_list)
    print(_summary(report))
    return 0


def cmd_sweep(args) -> int:
    if any(c < 1 for c in args.counts):
        raise UsageError("client counts must be >= 1")
    cfg = _config(args, 1)
    ds = _load_experiment_data(args)
    _check_clients(ds, cfg, args.counts)
    reports = sweep_clients(ds, cfg, args.counts)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in sweep_rows(reports):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    if args.report:
        _write_json(args.report, {
            "schema_version": SCHEMA_VERSION,
            "command": "sweep",
            "dataset": {"path": str(args.data), "samples": ds.num_samples},
            "reports": [r.to_dict() for r in reports],
        })
    for r in reports:
        print(_summary(r))
    return 0


def cmd_serve(args) -> int:
    if args.clients < 1:
        raise UsageError("--clients must be >= 1")
    if args.lam < 0:
        raise UsageError("--lambda must be >= 0")
    coord = Coordinator(args.listen, args.clients, args.lam).start()
    host, port = coord.address
    print(f"listening on {host}:{port}", flush=True)
    weights = coord.wait()
    if args.weights_out:
        save_weights(args.weights_out, weights, args.classes)
    accepted = sum(c.accepted for c in coord.connections)
    print(f"round complete: {accepted} updates incorporated, "
          f"{weights.num_features_with_bias} x {weights.num_classes} weights")
    return 0


def cmd_join(args) -> int:
    label_column = _label_column(args.label_column)
    if label_column is None:
        raise UsageError("join needs a label column")
    stats = AgentStats()
    if args.chunk_rows is not None:
        if not args.classes:
            raise UsageError("--chunk-rows requires --classes")
        classes = args.classes
        state = AggregateState()
        for chunk in iter_csv_chunks(args.data, args.chunk_rows, classes, label_column, args.header):
            d = encode_targets(chunk.labels, classes)
            state = incorporate(state, fit_client(add_bias(chunk.features), d))
        weights = send_update(args.connect, state.as_update(), stats, args.timeout)
    else:
        shard = load_csv(args.data, label_column, args.header)
        classes = args.classes or shard.class_list
        weights = run_client_agent(args.connect, shard, class_list=classes,
                                   stats=stats, timeout=args.timeout)
    if args.weights_out:
        save_weights(args.weights_out, weights, classes)
    print(f"received weights: sent {stats.bytes_sent} bytes, received {stats.bytes_received} bytes")
    return 0


def cmd_predict(args) -> int:
    weights, classes = load_weights(args.weights)
    ds = load_csv(args.data, _label_column(args.label_column), args.header)
    if classes is None:
        classes = [str(k) for k in range(weights.num_classes)]
    predicted = classify(ds.features, weights, classes)
    if args.out:
        Path(args.out).write_text("".join(f"{p}\n" for p in predicted))
    if ds.labels is not None:
        acc = float(np.mean(predicted == ds.labels.astype(str)))
        print(f"accuracy: {acc:.6f}")
    elif not args.out:
        sys.stdout.write("".join(f"{p}\n" for p in predicted))
    return 0


def cmd_make_blobs(args) -> int:
    if args.samples < 1 or args.features < 1 or args.classes < 2:
        raise UsageError("need --samples >= 1, --features >= 1 and --classes >= 2")
    try:
        ds = make_blobs(args.samples, args.features, args.classes, args.separation,
                        args.noise, args.seed)
    except FedSvdError as exc:
        raise UsageError(str(exc)) from None
    write_csv(ds, args.out)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "serve": cmd_serve,
    "join": cmd_join,
    "predict": cmd_predict,
    "make-blobs": cmd_make_blobs,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fedsvd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FedSvdError, OSError) as exc:
        print(f"fedsvd {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
