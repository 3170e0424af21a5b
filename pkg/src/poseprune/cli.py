"""Command-line entry point: ``poseprune {prune,infer,flops,eval,train-toy}``.

Settings resolve as command defaults < ``--config`` file < command-line flags.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, tpc
from .config import MIXSTE_LIKE, PIPELINES, PRUNE_STRATEGIES, RECOVER_STRATEGIES, TOY, ModelConfig, default_knn
from .data import toy_sequences
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .flops import model_flops, sweep_reduction
from .host import HostModel, model_from_bytes, model_to_bytes, mpjpe_loss

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

# flag name -> (ModelConfig field, parser)
_MODEL_KEYS = {
    "frames": ("frames", int),
    "joints": ("joints", int),
    "channels": ("channels", int),
    "blocks": ("blocks", int),
    "heads": ("heads", int),
    "tra_heads": ("tra_heads", int),
    "block": ("prune_after", int),
    "tokens": ("tokens", int),
    "recovered": ("recovered", int),
    "knn": ("knn", int),
    "pipeline": ("pipeline", str),
    "strategy": ("prune_strategy", str),
    "recover": ("recover_strategy", str),
}
_RUN_KEYS = {"seed": int, "lr": float, "steps": int, "batch": int, "sequences": int}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_model_flags(p, shape=True):
    p.add_argument("--config", type=Path, help="flat key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=PRUNE_STRATEGIES)
    p.add_argument("--recover", choices=RECOVER_STRATEGIES)
    p.add_argument("--pipeline", choices=PIPELINES)
    p.add_argument("--frames", type=int, help="input frames F")
    p.add_argument("--tokens", type=int, help="representative tokens f")
    p.add_argument("--block", type=int, help="prune after block n")
    p.add_argument("--knn", type=int, help="neighbours k for density")
    p.add_argument("--out", type=Path, default=Path("out"))
    if shape:
        p.add_argument("--joints", type=int)
        p.add_argument("--channels", type=int)
        p.add_argument("--blocks", type=int, help="transformer blocks L")
        p.add_argument("--heads", type=int)
        p.add_argument("--tra-heads", type=int)
        p.add_argument("--recovered", type=int, help="recovered tokens f'")


def build_parser():
    parser = _Parser(prog="poseprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prune", help="select representative frames of pose sequences")
    p.add_argument("input", type=Path)
    p.add_argument("--model", type=Path, help="cluster host tokens after block n instead of raw poses")
    _add_model_flags(p, shape=False)

    p = sub.add_parser("infer", help="lift 2D pose sequences to 3D with a saved model")
    p.add_argument("input", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--no-prune", action="store_true", help="run the unpruned host")
    _add_model_flags(p, shape=False)

    p = sub.add_parser("flops", help="analytic FLOPs / parameter report")
    p.add_argument("--sweep", action="store_true", help="emit an (n, f) grid of reductions")
    p.add_argument("--n-values", default="1,2,3,4,5,6,7")
    p.add_argument("--f-values", default="9,16,27,61,81,121,135")
    _add_model_flags(p)

    p = sub.add_parser("eval", help="MPJPE / PCK / AUC report")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--selection", type=Path)
    p.add_argument("--detected2d", type=Path, help="detected 2D poses (for frame noise)")
    p.add_argument("--gt2d", type=Path, help="ground-truth 2D poses (for frame noise)")
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("train-toy", help="train the host on synthetic sinusoidal motion")
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--sequences", type=int)
    _add_model_flags(p)
    return parser


def resolve(args, base: ModelConfig, run_defaults=None):
    """Merge defaults, the config file and flags into (ModelConfig, run settings)."""
    settings = {}
    if getattr(args, "config", None) is not None:
        settings.update(io.read_config(args.config))
    for key in (*_MODEL_KEYS, *_RUN_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    unknown = set(settings) - set(_MODEL_KEYS) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    changes, run = {}, dict(run_defaults or {})
    try:
        for key, value in settings.items():
            if key in _MODEL_KEYS:
                field, conv = _MODEL_KEYS[key]
                changes[field] = conv(value)
            else:
                run[key] = _RUN_KEYS[key](value)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    return base.replace(**changes), run


# -- commands -------------------------------------------------------------

def _prune_one(seq, settings, model):
    frames = len(seq)
    f = int(settings.get("tokens", max(1, frames // 3)))
    strategy = settings.get("strategy", "tpc")
    if strategy not in PRUNE_STRATEGIES:
        raise ConfigError(f"strategy must be one of {PRUNE_STRATEGIES}")
    record = {"frames": frames, "strategy": strategy}
    if strategy == "uniform":
        idx = tpc.select_uniform(frames, f)
    elif strategy == "motion":
        scores = tpc.motion_scores(seq[..., :2])
        idx = tpc.top_indexes(scores, f)
        record["motion"] = scores.tolist()
    elif strategy == "attention":
        if model is None:
            raise ConfigError("attention pruning needs --model")
        scores = model.temporal_attention_scores(seq, int(settings.get("block", model.cfg.prune_after)))
        idx = tpc.select_by_attention(scores, f, frames)
        record["attention"] = scores.astype(np.float64).tolist()
    else:
        if model is None:
            tokens = seq
        else:
            block = int(settings.get("block", model.cfg.prune_after))
            x, _ = model.embed(seq[None])
            for b in model.blocks[:block]:
                x, _ = b.forward(x)
            tokens = x[0]
        k = int(settings["knn"]) if "knn" in settings else default_knn(frames)
        res = tpc.cluster_tokens(tpc.spatial_pool(tokens), f, k)
        idx = res.selected
        record.update(
            density=res.density.tolist(), delta=res.delta.tolist(),
            score=res.score.tolist(), labels=res.labels.tolist(),
        )
    record["selected"] = idx.tolist()
    return idx, record


def cmd_prune(args):
    sequences = io.read_poses(args.input)
    settings = io.read_config(args.config) if args.config else {}
    for key in ("tokens", "knn", "block", "strategy"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    model = None
    if args.model is not None:
        model = _load_model(args.model)
    runs, records = [], []
    for seq in sequences:
        idx, record = _prune_one(seq, settings, model)
        runs.append(idx)
        records.append(record)
    frames = max(len(s) for s in sequences)
    hist, raster = metrics.selection_stats(runs, frames)
    out = args.out
    io.write_selections(out / "selection.txt", runs)
    io.write_jsonl(out / "clusters.jsonl", records)
    io.atomic_write(out / "histogram.csv", "frame,count\n" + "".join(f"{t},{c}\n" for t, c in enumerate(hist)))
    io.atomic_write(out / "raster.txt", "".join("".join(map(str, row)) + "\n" for row in raster))
    for idx in runs:
        print(" ".join(map(str, idx)))
    return 0


def _load_model(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from None
    return model_from_bytes(blob)


def _reconfigure(model, cfg):
    """Rebuild ``model`` under ``cfg``, keeping its weights; shapes must agree."""
    if cfg == model.cfg:
        return model
    fresh = HostModel(cfg)
    old, new = model.parameters(), fresh.parameters()
    if len(old) != len(new) or any(a.shape != b.shape for a, b in zip(old, new)):
        raise ConfigError("requested configuration does not match the model file's parameters")
    for a, b in zip(old, new):
        b.data = a.data.copy()
    return fresh


def cmd_infer(args):
    model = _load_model(args.model)
    cfg, _ = resolve(args, model.cfg)
    model = _reconfigure(model, cfg)
    sequences = io.read_poses(args.input)
    outputs, selections = [], []
    for seq in sequences:
        if seq.shape != (cfg.frames, cfg.joints, 2):
            raise ConfigError(f"input {seq.shape} does not match model F={cfg.frames}, J={cfg.joints}")
        pred, cache = model.forward(seq, prune=not args.no_prune)
        if not np.all(np.isfinite(pred)):
            raise NumericalError("non-finite prediction")
        outputs.append(pred)
        sel = cache.get("selected") if cfg.pipeline == "seq2seq" else cache["samples"][0].get("selected")
        if sel is not None:
            selections.append(sel[0])
    io.write_poses(args.out / "poses3d.txt", outputs)
    if selections:
        io.write_selections(args.out / "selection.txt", selections)
    print(f"wrote {len(outputs)} sequence(s) to {args.out / 'poses3d.txt'}")
    return 0


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def format_flops_table(report):
    rows = [
        ("baseline", report.baseline_total),
        ("pruned", report.pruned_total),
    ]
    lines = [f"{'config':<10}{'FLOPs':>18}{'GFLOPs':>10}"]
    lines += [f"{name:<10}{v:>18d}{v / 1e9:>10.2f}" for name, v in rows]
    lines.append(f"reduction {report.reduction:.4f} ({100 * report.reduction:.1f}%)")
    lines.append(f"params    host {report.host_params}  tra {report.tra_params}")
    return "\n".join(lines) + "\n"


def cmd_flops(args):
    cfg, _ = resolve(args, MIXSTE_LIKE)
    out = args.out
    if args.sweep:
        n_values, f_values = _int_list(args.n_values), _int_list(args.f_values)
        grid = sweep_reduction(cfg, n_values, f_values)
        header = "n\\f," + ",".join(map(str, f_values))
        body = "".join(
            f"{n}," + ",".join(f"{v:.6f}" for v in row) + "\n" for n, row in zip(n_values, grid)
        )
        io.atomic_write(out / "sweep.csv", header + "\n" + body)
        io.write_json(out / "sweep.json", {
            "config": cfg.as_dict(), "n_values": n_values, "f_values": f_values,
            "reduction": grid.tolist(),
        })
        print(header)
        print(body, end="")
        return 0
    report = model_flops(cfg)
    table = format_flops_table(report)
    io.atomic_write(out / "flops.txt", table)
    io.write_json(out / "flops.json", report.as_record())
    print(table, end="")
    return 0


def cmd_eval(args):
    preds, gts = io.read_poses(args.pred), io.read_poses(args.gt)
    selections = io.read_selections(args.selection) if args.selection else None
    report = metrics.evaluate(preds, gts, selections)
    if args.detected2d or args.gt2d:
        if not (args.detected2d and args.gt2d and selections is not None):
            raise ConfigError("frame noise needs --detected2d, --gt2d and --selection")
        det, gt2 = io.read_poses(args.detected2d), io.read_poses(args.gt2d)
        if len(det) != len(gt2) or len(det) != len(selections):
            raise ShapeError("2D files and selection must have the same record count")
        total = sum(tpc.frame_noise(s, d, g) * len(s) for s, d, g in zip(selections, det, gt2))
        report.frame_noise = total / sum(len(s) for s in selections)
    record = report.as_record()
    io.write_json(args.out / "eval.json", record)
    for key, value in record.items():
        if value is not None:
            print(f"{key:<15}{value:.6f}")
    return 0


def train_toy(cfg, seed=0, lr=0.05, steps=500, batch=4, sequences=16):
    """Seeded toy run; returns (model, per-step losses, initial, final MPJPE)."""
    rng = np.random.default_rng([seed, 1])
    poses2d, poses3d = toy_sequences(rng, sequences, cfg.frames, cfg.joints)
    model = HostModel(cfg, seed)

    def training_mpjpe():
        pred = model.predict(poses2d)
        gt = poses3d if cfg.pipeline == "seq2seq" else poses3d[:, cfg.frames // 2:cfg.frames // 2 + 1]
        return mpjpe_loss(pred, gt)[0]

    initial = training_mpjpe()
    losses = []
    for step in range(steps):
        start = (step * batch) % sequences
        rows = np.arange(start, start + batch) % sequences
        losses.append(model.train_step(poses2d[rows], poses3d[rows], lr))
    return model, losses, initial, training_mpjpe()


def cmd_train_toy(args):
    cfg, run = resolve(args, TOY, {"seed": 0, "lr": 0.05, "steps": 500, "batch": 4, "sequences": 16})
    model, losses, initial, final = train_toy(
        cfg, run["seed"], run["lr"], run["steps"], run["batch"], run["sequences"],
    )
    out = args.out
    io.atomic_write(out / "model.bin", model_to_bytes(model))
    io.atomic_write(out / "loss.csv", "step,loss\n" + "".join(f"{i},{v:.9g}\n" for i, v in enumerate(losses)))
    io.write_json(out / "train.json", {
        "config": cfg.as_dict(), **run,
        "initial_mpjpe": initial, "final_mpjpe": final, "ratio": final / initial,
    })
    print(f"training MPJPE {initial:.6f} -> {final:.6f} (ratio {final / initial:.4f})")
    return 0


COMMANDS = {
    "prune": cmd_prune, "infer": cmd_infer, "flops": cmd_flops,
    "eval": cmd_eval, "train-toy": cmd_train_toy,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
