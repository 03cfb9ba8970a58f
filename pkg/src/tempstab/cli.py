"""Command-line interface: ``tempstab <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, io, plotting
from .signals import CorruptionSpec, MOTION_MODELS, corrupt
from .models import TASKS, task_sequence


def _shape(text):
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("shape must be C,H,W")
    return parts


def _corruption(text):
    try:
        return CorruptionSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _load_config(path):
    from .trainer import ExperimentConfig
    return ExperimentConfig.from_dict(io.read_json(path)) if path else ExperimentConfig()


def _add_corruption(p):
    p.add_argument("--corruption", type=_corruption, action="append", default=[],
                   metavar="KIND:PARAMS:SEED",
                   help="extra corruption, e.g. frame_drop:p=0.1:3 (repeatable)")


def _apply_cli_corruptions(config, specs):
    if specs:
        config.corruption = [s.to_dict() for s in specs]
    return config


# -- subcommands --------------------------------------------------------------------------

def cmd_synth(args):
    seq = task_sequence(args.task, args.scene_seed, args.tau, args.shape, args.motion, args.speed)
    if args.corruption:
        seq = corrupt(seq, args.corruption)
    manifest = io.save_sequence(seq, args.out)
    print(f"wrote {manifest}")
    if args.preview:
        print(f"wrote {plotting.plot_frames(seq.frames, Path(args.out).with_suffix('.svg'))}")
    return 0


def cmd_train_base(args):
    from .trainer import Dataset, prepare_base
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    dataset = Dataset(config.data_config())
    model, tlog = prepare_base(config, dataset)
    ckpt = io.save_model(model, out / "base")
    io.write_csv(tlog.rows, out / "base_log.csv")
    io.write_json({"config": config.to_dict(), "log": tlog.to_dict(), "checkpoint": str(ckpt)},
                  out / "base_summary.json")
    print(f"wrote {ckpt}")
    return 0


def cmd_train_stab(args):
    from .models import freeze
    from .trainer import Dataset, evaluate, train_stabilizer
    config = _apply_cli_corruptions(_load_config(args.config), args.corruption)
    if args.lam is not None:
        config.lam = args.lam
    out = Path(args.out)
    base = io.load_model(args.base)
    freeze(base)
    dataset = Dataset(config.data_config())
    extra = config.corruption_specs() or None
    base_report = evaluate(base, dataset, extra)
    stab = config.attach(base)
    stab, tlog = train_stabilizer(stab, dataset, config.train_config(), extra)
    report = evaluate(stab, dataset, extra)
    ckpt = io.save_stabilizer(stab, out / "stabilizer", base_checkpoint=Path(args.base).resolve())
    tlog.checkpoint = str(ckpt)
    io.write_csv(tlog.rows, out / "stab_log.csv")
    io.write_json({"config": config.to_dict(), "log": tlog.to_dict(), "base": base_report,
                   "stabilized": report}, out / "stab_summary.json")
    plotting.plot_training(tlog.rows, out / "stab_log.svg")
    print(f"wrote {ckpt}")
    print(f"base        PSNR {base_report.psnr:.3f} dB  instability {base_report.instability:.5g}")
    print(f"stabilized  PSNR {report.psnr:.3f} dB  instability {report.instability:.5g}")
    return 0


def cmd_sweep(args):
    from .trainer import evaluate, sweep, Dataset
    config = _apply_cli_corruptions(_load_config(args.config), args.corruption)
    out = Path(args.out)
    base = io.load_model(args.base) if args.base else None
    if base is None:
        from .trainer import prepare_base
        base, _ = prepare_base(config)
    result = sweep(config, args.lams, base=base, workers=args.workers)
    ds = Dataset(config.data_config())
    base_report = evaluate(base, ds, config.corruption_specs() or None)
    io.write_csv(result.rows, out / "sweep.csv")
    io.write_json({"config": config.to_dict(), **result.to_dict(), "base": base_report},
                  out / "sweep.json")
    plotting.plot_frontier(result.rows, out / "frontier.svg",
                           {"psnr": base_report.psnr, "instability": base_report.instability})
    for r in sorted(result.rows, key=lambda r: r["lam"]):
        print(f"lam {r['lam']:<6g} PSNR {r['psnr']:.3f} dB  instability {r['instability']:.5g}")
    if not result.monotone:
        print("note: instability is not monotone in lam across this sweep")
    return 0


def cmd_eval(args):
    from .models import freeze
    from .trainer import Dataset, evaluate
    config = _load_config(args.config)
    if args.tau_eval:
        config.data = dict(config.data, tau=args.tau_eval)
    model = io.load_model(args.model)
    freeze(model)
    if args.stabilizer:
        model = io.load_stabilizer(args.stabilizer, base=model)
    dataset = Dataset(config.data_config())
    report = evaluate(model, dataset, args.corruption or None)
    out = Path(args.out)
    io.write_json(report.to_dict(), out.with_suffix(".json"))
    io.write_csv(report.per_sequence, out.with_suffix(".csv"))
    print(json.dumps({"psnr": report.psnr, "instability": report.instability,
                      "robustness_error": report.robustness_error}))
    return 0


def cmd_verify_bounds(args):
    out = Path(args.out)
    checks = ["oracle", "collapse", "convexity", "landscape"] if args.check == "all" else [args.check]
    ok = True
    summary = {}
    if "oracle" in checks:
        lam = 0.4 if args.lam is None else args.lam
        rep = bounds.verify_oracle_bound(args.n, lam, seed=args.seed)
        summary["oracle"] = rep.to_dict()
        ok &= rep.passed
        print(f"oracle bound    lam={lam:g}: {rep.n_pass}/{rep.n_instances} ground truth")
    if "collapse" in checks:
        rep = bounds.verify_collapse_bound(args.n, args.lam, seed=args.seed)
        summary["collapse"] = rep.to_dict()
        ok &= rep.passed
        print(f"collapse bound  lam={'tau' if args.lam is None else args.lam}: "
              f"{rep.n_pass}/{rep.n_instances} collapsed")
    if "convexity" in checks:
        rng = np.random.default_rng(args.seed)
        reps = []
        for norm in bounds.NORM_KINDS:
            inst = bounds.BoundInstance(rng.standard_normal((5, 2)), 0.4 if args.lam is None else args.lam, norm)
            reps.append(bounds.verify_convexity(inst, 1000, seed=args.seed))
        summary["convexity"] = [r.to_dict() for r in reps]
        ok &= all(r.passed for r in reps)
        print(f"convexity: {sum(r.violations for r in reps)} violations in {sum(r.n_pairs for r in reps)} pairs")
    if "landscape" in checks:
        lams = args.lams or [0.0, 0.4, 2.5]
        summary["landscape"] = []
        for lam in lams:
            inst = bounds.figure_instance(lam)
            land = bounds.landscape_grid(inst, res=args.resolution)
            tag = f"landscape_lam{lam:g}"
            # the argmin uses the full grid; the CSV keeps at most 201 points per axis
            k = max(1, -(-(len(land.p2) - 1) // 200))
            io.write_matrix_csv(land.u[::k, ::k], out / f"{tag}.csv", land.p3[::k], land.p2[::k])
            plotting.plot_landscape(land, out / f"{tag}.svg", inst.y[:, 0])
            summary["landscape"].append(land.to_dict())
            print(f"landscape lam={lam:g}: argmin (p2, p3) = {land.argmin}")
    io.write_json(summary, out / "bounds_report.json")
    return 0 if ok else 1


def cmd_transport(args):
    from .transport import transport_distance
    a = io.load_array(args.a)
    b = io.load_array(args.b)
    if a.shape != b.shape:
        print(f"error: shapes {a.shape} and {b.shape} differ", file=sys.stderr)
        return 2
    diff = a - b
    maps = [diff] if diff.ndim == 2 else list(diff.reshape(-1, *diff.shape[-2:]))
    costs, tables = [], []
    for ch, m in enumerate(maps):
        cost, sol = transport_distance(m, args.gamma)
        costs.append(cost)
        for row in sol.flows_table():
            tables.append({"channel": ch, "src_y": int(row[0]), "src_x": int(row[1]),
                           "dst_y": int(row[2]), "dst_x": int(row[3]), "amount": row[4]})
    total = float(sum(costs))
    if args.flows:
        io.write_csv(tables, args.flows, ["channel", "src_y", "src_x", "dst_y", "dst_x", "amount"])
    if args.out:
        io.write_json({"gamma": args.gamma, "cost": total, "per_channel": costs}, args.out)
    print(f"{total:.10g}")
    return 0


# -- parser ---------------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="tempstab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--task", choices=TASKS, default="denoise")
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--tau", type=int, default=32)
    p.add_argument("--shape", type=_shape, default=(1, 32, 32))
    p.add_argument("--motion", choices=MOTION_MODELS, default="translating_shapes")
    p.add_argument("--speed", type=int, default=1)
    p.add_argument("--preview", action="store_true", help="also write an SVG frame grid")
    p.add_argument("--out", required=True, help="output stem (writes .json + .bin)")
    _add_corruption(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-base", help="train the frame-wise base model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("train-stab", help="train stabilizers on a frozen base model")
    p.add_argument("--config")
    p.add_argument("--base", required=True, help="base model checkpoint manifest")
    p.add_argument("--lam", type=float)
    p.add_argument("--out", required=True)
    _add_corruption(p)
    p.set_defaults(func=cmd_train_stab)

    p = sub.add_parser("sweep", help="train one stabilizer per lam and tabulate the frontier")
    p.add_argument("--config")
    p.add_argument("--base")
    p.add_argument("--lams", type=_floats, default=[0.1, 0.2, 0.4, 0.8, 8.0])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_corruption(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a base or stabilized model")
    p.add_argument("--config")
    p.add_argument("--model", required=True, help="base model checkpoint manifest")
    p.add_argument("--stabilizer", help="stabilizer checkpoint manifest")
    p.add_argument("--tau-eval", type=int, help="evaluation sequence length")
    p.add_argument("--out", required=True, help="report stem (writes .json + .csv)")
    _add_corruption(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bounds", help="numeric checks of the oracle/collapse bounds")
    p.add_argument("--check", choices=["oracle", "collapse", "convexity", "landscape", "all"],
                   default="all")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--lam", type=float)
    p.add_argument("--lams", type=_floats, help="landscape lam values")
    p.add_argument("--resolution", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("transport", help="transport distance between two maps")
    p.add_argument("--a", required=True, help="array manifest or .npy")
    p.add_argument("--b", required=True, help="array manifest or .npy")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--flows", help="CSV of moved mass")
    p.add_argument("--out", help="JSON summary")
    p.set_defaults(func=cmd_transport)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
