"""Command-line entry point.

Subcommands: analyze, verify-theorem, train, energy, cobweb-export.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import zlib
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint
from .config import RunConfig, load_config, replace_section
from .data import DatasetHandle, generate_blobs, load_idx
from .dynamics import (
    classify_fixed_points,
    classify_region,
    cobweb_trajectory,
    phase_portrait_samples,
    u_min,
    write_cobweb_csv,
    write_phase_csv,
)
from .energy import EnergyConstants, estimate_energy, merge_rates
from .errors import (
    ConfigError,
    IncompleteRecord,
    InvalidParams,
    MalformedHeader,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedData,
)
from .estimator import SpikingClassifier
from .io import atomic_write_text
from .network import NetworkSpec, network_forward
from .surrogate import monte_carlo_moments, qif_window, theorem1_stats

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def component_seed(seed: int, label: str) -> int:
    """Deterministic 32-bit seed for one component of a run."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]).generate_state(1)[0])


# --- analyze / cobweb-export ---------------------------------------------------

def _trajectories(cfg: RunConfig):
    p = cfg.neuron.qif_params()
    a = cfg.analyze
    return [cobweb_trajectory(u0, p, a.max_steps, a.conv_tol, a.div_bound) for u0 in a.initial_conditions]


def _grid(cfg: RunConfig):
    a = cfg.analyze
    if a.grid is not None:
        return list(a.grid)
    return np.linspace(a.grid_min, a.grid_max, a.grid_points).tolist()


def _csv_text(writer_fn, payload) -> str:
    buf = io.StringIO(newline="")
    writer_fn(buf, payload)
    return buf.getvalue()


def analysis_payload(cfg: RunConfig) -> dict:
    p = cfg.neuron.qif_params()
    verdicts = classify_fixed_points(p, cfg.analyze.tol)
    trajs = _trajectories(cfg)
    return {
        "params": {k: getattr(p, k) for k in ("a", "u_r", "u_c", "u_1", "u_2", "u_th", "u_reset")},
        "fixed_points": [
            {"u": v.fixed_point, "derivative": v.derivative, "label": v.label.value} for v in verdicts
        ],
        "u_min": u_min(p),
        "trajectories": [
            {"u0": t.points[0][1], "steps": len(t.points) - 1, "terminated": t.terminated.value,
             "region0": classify_region(t.points[0][1], p).value, "final": t.points[-1][1]}
            for t in trajs
        ],
    }


def cmd_analyze(cfg: RunConfig, out: Path) -> int:
    payload = analysis_payload(cfg)
    p = cfg.neuron.qif_params()
    atomic_write_text(out / "stability.json", json.dumps(payload, indent=2))
    atomic_write_text(out / "cobweb.csv", _csv_text(write_cobweb_csv, _trajectories(cfg)))
    atomic_write_text(out / "phase.csv", _csv_text(write_phase_csv, phase_portrait_samples(_grid(cfg), p)))
    for fp in payload["fixed_points"]:
        print(f"fixed point {fp['u']!r}: g = {fp['derivative']!r} ({fp['label']})")
    return EXIT_OK


def cmd_cobweb_export(cfg: RunConfig, out: Path) -> int:
    trajs = _trajectories(cfg)
    atomic_write_text(out / "cobweb.csv", _csv_text(write_cobweb_csv, trajs))
    atomic_write_text(out / "phase.csv",
                      _csv_text(write_phase_csv, phase_portrait_samples(_grid(cfg), cfg.neuron.qif_params())))
    print(f"wrote {len(trajs)} trajectories to {out / 'cobweb.csv'}")
    return EXIT_OK


# --- verify-theorem -------------------------------------------------------------

def verify_theorem(cfg: RunConfig) -> dict:
    p = cfg.neuron.qif_params()
    n, k = cfg.verify.n, cfg.verify.se_multiple
    if n < 10_000:
        raise ConfigError(f"[verify] n must be >= 10000, got {n}")
    mu, var = theorem1_stats(p)
    mc_seed = component_seed(cfg.run.seed, "monte_carlo")
    mc = monte_carlo_moments(p, n, mc_seed)
    mean_ok = abs(mc["mean"] - mu) <= k * mc["se_mean"]
    var_ok = abs(mc["var"] - var) <= k * mc["se_var"]
    return {
        "mu_u": mu,
        "sigma_u": math.sqrt(var),
        "sigma2_u": var,
        "mc_mean": mc["mean"],
        "mc_var": mc["var"],
        "se_mean": mc["se_mean"],
        "se_var": mc["se_var"],
        "se_multiple": k,
        "n": n,
        "seed": cfg.run.seed,
        "mc_seed": mc_seed,
        "window": [qif_window(p).lower, qif_window(p).upper],
        "verdict": "PASS" if mean_ok and var_ok else "FAIL",
    }


def cmd_verify_theorem(cfg: RunConfig, out: Path) -> int:
    result = verify_theorem(cfg)
    atomic_write_text(out / "theorem.json", json.dumps(result, indent=2, sort_keys=True))
    print(f"{result['verdict']}: mean {result['mc_mean']:.6f} vs {result['mu_u']:.6f}, "
          f"var {result['mc_var']:.6f} vs {result['sigma2_u']:.6f}")
    return EXIT_OK


# --- train / energy ---------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> DatasetHandle:
    d = cfg.data
    if d.source == "blobs":
        return generate_blobs(d.classes, d.n_per_class, d.dim, component_seed(cfg.run.seed, "data"),
                              separation=d.separation, test_fraction=d.test_fraction)
    paths = [d.train_images, d.train_labels, d.test_images, d.test_labels]
    if any(p is None for p in paths):
        raise ConfigError("[data] source = idx needs train_images, train_labels, test_images, test_labels")
    try:
        return load_idx(*paths)
    except OSError as exc:
        raise DataError(str(exc)) from exc


def make_estimator(cfg: RunConfig) -> SpikingClassifier:
    t, n = cfg.training, cfg.network
    spec = None
    if n.spec_file:
        try:
            spec = NetworkSpec.from_text(Path(n.spec_file).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read network spec: {exc}") from exc
    return SpikingClassifier(
        architecture=n.architecture, neuron=cfg.neuron.kind, surrogate=cfg.surrogate.resolve(cfg.neuron.kind),
        alpha=cfg.surrogate.alpha, timesteps=t.timesteps, hidden=n.hidden, channels=n.channels,
        qif_params=cfg.neuron.qif_params(), lif_params=cfg.neuron.lif_params(), optimizer=t.optimizer,
        learning_rate=t.learning_rate, momentum=t.momentum, weight_decay=t.weight_decay, epochs=t.epochs,
        batch_size=t.batch_size, scheduler=t.scheduler, dropout=t.dropout, grad_clip=t.grad_clip,
        random_state=cfg.run.seed, network_spec=spec,
    )


# Wall-clock time stays out of the log so reruns are byte-identical.
LOG_HEADER = ("epoch", "loss", "train_acc", "test_acc")


def format_log(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for row in history:
        writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_HEADER[1:]])
    return buf.getvalue()


def cmd_train(cfg: RunConfig, out: Path) -> int:
    data = load_dataset(cfg)
    clf = make_estimator(cfg)
    clf.fit(data.x_train, data.y_train, eval_set=(data.x_test, data.y_test))
    atomic_write_text(out / "log.csv", format_log(clf.history_))
    checkpoint.save(out / "checkpoint.bin", checkpoint.pack_network(clf.network_))
    atomic_write_text(out / "network.txt", clf.spec_.to_text())
    best = max(row["test_acc"] for row in clf.history_)
    seconds = sum(row["seconds"] for row in clf.history_)
    print(f"trained {len(clf.history_)} epochs in {seconds:.1f} s")
    print(f"best test accuracy: {best:.4f} (final {clf.history_[-1]['test_acc']:.4f})")
    return EXIT_OK


def cmd_energy(cfg: RunConfig, out: Path, checkpoint_path: Path | None) -> int:
    data = load_dataset(cfg)
    ckpt = checkpoint_path or out / "checkpoint.bin"
    try:
        net = checkpoint.unpack_network(checkpoint.load(ckpt))
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    expected = make_estimator(cfg)._build_spec(data.input_shape, data.n_classes)
    if expected.to_text() != net.spec.to_text():
        raise DataError("checkpoint/spec mismatch: the checkpoint was trained with a different network config")
    records = [network_forward(net, data.x_test[i : i + 256]) for i in range(0, len(data.x_test), 256)]
    rates = merge_rates(records)
    constants = EnergyConstants(cfg.energy.e_mac, cfg.energy.e_ac)
    report = estimate_energy(net, rates, constants, cfg.network.architecture, data.name)
    atomic_write_text(out / "energy.json", report.to_json())
    atomic_write_text(out / "energy.csv", report.to_csv())
    print(f"energy {report.total_j * 1e3:.6g} mJ, QIF overhead {report.qif_overhead_j * 1e3:.6g} mJ "
          f"({report.qif_overhead_percent:.3g}%)")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qifsnn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    common.add_argument("--threads", type=int, help="BLAS threads (overrides [run] threads)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="fixed points, stability, cobweb and phase data")
    sub.add_parser("verify-theorem", parents=[common], help="Monte-Carlo check of the membrane statistics")
    sub.add_parser("train", parents=[common], help="train a network and write log + checkpoint")
    energy = sub.add_parser("energy", parents=[common], help="energy report for a trained checkpoint")
    energy.add_argument("--checkpoint", type=Path, help="defaults to OUT/checkpoint.bin")
    sub.add_parser("cobweb-export", parents=[common], help="cobweb and phase-portrait CSVs only")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("out", str(args.out) if args.out else None),
                                   ("threads", args.threads)) if v is not None}
    if overrides:
        cfg = replace_section(cfg, "run", **overrides)
    if cfg.run.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.run.out)
        with threadpool_limits(limits=cfg.run.threads):
            if args.command == "analyze":
                return cmd_analyze(cfg, out)
            if args.command == "verify-theorem":
                return cmd_verify_theorem(cfg, out)
            if args.command == "train":
                return cmd_train(cfg, out)
            if args.command == "energy":
                return cmd_energy(cfg, out, args.checkpoint)
            return cmd_cobweb_export(cfg, out)
    except (ConfigError, InvalidParams) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MalformedHeader, TruncatedData, ShapeMismatch, IncompleteRecord, FileNotFoundError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteValue, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
