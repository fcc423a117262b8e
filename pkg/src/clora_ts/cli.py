"""Command-line entry point: ``clora-ts <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__, checkpoint
from .adapters import extra_param_count
from .backbone import ModelConfig
from .dataio import DataError, SynthConfig, generate_synthetic, load_csv, prepare, write_csv
from .experiments import (capacity_gap_report, evaluate, format_table, improvement_report,
                          param_comparison, shuffle_test, sweep, to_json)
from .numkernel import ShapeError
from .training import DivergenceError, TrainConfig, finetune_adapters, fit, fresh_adapters

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

MIXING = {"none": "none", "mlp": "mlp_mix", "attention": "attention"}
EMBEDDING = {"shared": "shared", "per-channel": "per_channel"}

# option name -> (type, default); these may also come from --config / --manifest
OPTIONS: dict[str, tuple[Any, Any]] = {
    "data": (str, None),
    "has_time_column": (bool, False),
    "lookback": (int, 96),
    "horizon": (int, 24),
    "embed_dim": (int, 64),
    "adapt_dim": (int, 16),
    "rank": (int, 4),
    "layers": (int, 2),
    "mixing": (str, "none"),
    "embedding": (str, "shared"),
    "adapter": (str, "off"),
    "epochs": (int, 50),
    "batch": (int, 32),
    "lr": (float, 1e-3),
    "seed": (int, 0),
    "patience": (int, 5),
    "freeze_backbone": (bool, False),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path: str) -> dict[str, Any]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: Any) -> Any:
    typ = OPTIONS[key][0]
    if value is None:
        return None
    try:
        return _bool(value) if typ is bool else typ(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """defaults < --manifest < --config < explicit flags."""
    resolved = {k: d for k, (_, d) in OPTIONS.items()}
    if getattr(args, "manifest", None):
        resolved.update(json.loads(Path(args.manifest).read_text())["resolved_config"])
    if getattr(args, "config", None):
        resolved.update(read_config_file(args.config))
    for key in OPTIONS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    resolved = {k: _coerce(k, v) for k, v in resolved.items()}
    if resolved["mixing"] not in MIXING:
        raise UsageError(f"--mixing must be one of {sorted(MIXING)}")
    if resolved["embedding"] not in EMBEDDING:
        raise UsageError(f"--embedding must be one of {sorted(EMBEDDING)}")
    if resolved["adapter"] not in ("on", "off"):
        raise UsageError("--adapter must be on or off")
    return resolved


def model_config(opts: dict[str, Any], C: int) -> ModelConfig:
    try:
        return ModelConfig(
            T=opts["lookback"], H=opts["horizon"], C=C, D=opts["embed_dim"], d=opts["adapt_dim"],
            r=opts["rank"], L=opts["layers"], embedding_mode=EMBEDDING[opts["embedding"]],
            mixing_mode=MIXING[opts["mixing"]], adapter_enabled=opts["adapter"] == "on",
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def train_config(opts: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(epochs=opts["epochs"], batch_size=opts["batch"], learning_rate=opts["lr"],
                           seed=opts["seed"], freeze_backbone=opts["freeze_backbone"],
                           early_stop_patience=opts["patience"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_data(opts: dict[str, Any]):
    if not opts["data"]:
        raise UsageError("--data is required")
    return load_csv(opts["data"], has_time_column=opts["has_time_column"])


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _epoch_logger(fh):
    def log(entry: dict) -> None:
        line = json.dumps(entry)
        print(line, flush=True)
        fh.write(line + "\n")
        fh.flush()
    return log


def write_manifest(out: Path, opts: dict[str, Any], ds, artifacts: dict[str, str], command: str) -> None:
    manifest = {
        "tool": "clora-ts",
        "version": __version__,
        "command": command,
        "resolved_config": opts,
        "seed": opts["seed"],
        "data_fingerprint": ds.fingerprint(),
        "artifacts": artifacts,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands -----------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig(C=args.channels, T_total=args.length, seed=args.seed, hetero_amp=args.hetero_amp,
                      shared_amp=args.shared_amp, noise_sigma=args.noise, period=args.period,
                      phase_shift=args.phase_shift)
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    print(f"wrote {ds.length}x{ds.n_channels} series to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    opts = resolve(args)
    ds = _load_data(opts)
    mc, tc = model_config(opts, ds.n_channels), train_config(opts)
    data = prepare(ds, mc.T, mc.H)
    out = _out_dir(args)
    artifacts = {"checkpoint": "model.ckpt.json", "record": "record.jsonl", "metrics": "metrics.json"}
    write_manifest(out, opts, ds, artifacts, "train")
    with open(out / "record.jsonl", "w", encoding="utf-8") as fh:
        params, _ = fit(data.train, data.val, mc, tc, log=_epoch_logger(fh))
    checkpoint.save(params, out / "model.ckpt.json")
    _write(out / "metrics.json", to_json(evaluate(params, data.test)))
    return EXIT_OK


def _checked_checkpoint(path: str, ds):
    params = checkpoint.load(path)
    if params.config.C != ds.n_channels:
        raise DataError(f"checkpoint expects {params.config.C} channels but the dataset has {ds.n_channels}")
    return params


def cmd_eval(args) -> int:
    opts = resolve(args)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ds = _load_data(opts)
    params = _checked_checkpoint(args.checkpoint, ds)
    data = prepare(ds, params.config.T, params.config.H)
    split = {"train": data.train, "val": data.val, "test": data.test}[args.split]
    text = to_json(evaluate(params, split))
    _write(_out_dir(args) / "metrics.json", text)
    print(text, end="")
    return EXIT_OK


def cmd_finetune(args) -> int:
    opts = resolve(args)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ds = _load_data(opts)
    pre = checkpoint.load(args.checkpoint)
    tc = train_config(opts)
    data = prepare(ds, pre.config.T, pre.config.H)
    out = _out_dir(args)
    artifacts = {"checkpoint": "model.ckpt.json", "adapters": "adapters.ckpt.json",
                 "record": "record.jsonl", "metrics": "metrics.json"}
    write_manifest(out, opts, ds, artifacts, "finetune")
    zero_shot = evaluate(fresh_adapters(pre, tc.seed, ds.n_channels), data.test)
    with open(out / "record.jsonl", "w", encoding="utf-8") as fh:
        params, _ = finetune_adapters(pre, data.train, data.val, tc, log=_epoch_logger(fh))
    tuned = evaluate(params, data.test)
    checkpoint.save(params, out / "model.ckpt.json")
    checkpoint.save(params, out / "adapters.ckpt.json", adapters_only=True)
    _write(out / "metrics.json", to_json({"zero_shot": zero_shot.to_dict(), "finetuned": tuned.to_dict(),
                                          "improvement": improvement_report(zero_shot, tuned)}))
    return EXIT_OK


def cmd_shuffle(args) -> int:
    opts = resolve(args)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ds = _load_data(opts)
    params = _checked_checkpoint(args.checkpoint, ds)
    data = prepare(ds, params.config.T, params.config.H)
    result = shuffle_test(params, data.test, seed=opts["seed"], n_permutations=args.permutations)
    _write(_out_dir(args) / "shuffle.json", to_json(result))
    print(f"baseline_mse {result.baseline.mse:.6f}")
    print(f"median_delta {result.median_delta:.6f}")
    print(f"mean_delta {result.mean_delta:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    opts = resolve(args)
    ds = _load_data(opts)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated integers, got {args.values!r}") from None
    mc, tc = model_config(opts, ds.n_channels), train_config(opts)
    out = _out_dir(args)
    write_manifest(out, opts, ds, {"csv": "sweep.csv", "json": "sweep.json"}, f"sweep --axis {args.axis}")
    try:
        result = sweep(args.axis, values, ds, mc, tc)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    _write(out / "sweep.csv", result.to_csv())
    _write(out / "sweep.json", to_json(result))
    print(result.to_csv(), end="")
    return EXIT_OK


def cmd_param_count(args) -> int:
    extras = extra_param_count(args.channels, args.rank, args.embed_dim, args.adapt_dim)
    print(f"adapter_extras {extras}")
    cfg = ModelConfig(T=args.lookback, H=args.horizon, C=args.channels, D=args.embed_dim, d=args.adapt_dim,
                      r=args.rank, L=args.layers, mixing_mode=MIXING[args.mixing])
    print(format_table(param_comparison(cfg), ["embedding", "total"]), end="")
    return EXIT_OK


def cmd_capacity_gap(args) -> int:
    opts = resolve(args)
    ds = _load_data(opts)
    base = model_config(opts, ds.n_channels)
    tc = train_config(opts)
    data = prepare(ds, base.T, base.H)
    out = _out_dir(args)
    write_manifest(out, opts, ds, {"json": "capacity_gap.json", "text": "capacity_gap.txt"}, "capacity-gap")
    models = {}
    for name, on in (("adapter_off", False), ("adapter_on", True)):
        models[name], _ = fit(data.train, data.val, base.replace(adapter_enabled=on), tc)
    report = capacity_gap_report(models, data.train, data.test)
    _write(out / "capacity_gap.json", to_json(report))
    table = format_table(report["rows"])
    _write(out / "capacity_gap.txt", table)
    print(table, end="")
    print(f"adapter_narrows_gap {report.get('adapter_narrows_gap')}")
    return EXIT_OK


def _model_flags(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--data")
    p.add_argument("--has-time-column", dest="has_time_column", action="store_const", const=True, default=None)
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--manifest", help="reuse the resolved configuration of an earlier run")
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--adapt-dim", dest="adapt_dim", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--mixing", choices=sorted(MIXING))
    p.add_argument("--embedding", choices=sorted(EMBEDDING))
    p.add_argument("--adapter", choices=["on", "off"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--freeze-backbone", dest="freeze_backbone", action="store_const", const=True, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clora-ts", description="Channel-aware low-rank adaptation for forecasting.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic multichannel CSV")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--length", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hetero-amp", dest="hetero_amp", type=float, default=1.0)
    p.add_argument("--shared-amp", dest="shared_amp", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--period", type=float)
    p.add_argument("--phase-shift", dest="phase_shift", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model and write checkpoint, record and metrics")
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _model_flags(p, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("finetune", help="train fresh adapters on a target set with the backbone frozen")
    _model_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("shuffle-test", help="channel-permutation test of a trained checkpoint")
    _model_flags(p, training=False)
    p.add_argument("--checkpoint")
    p.add_argument("--permutations", type=int, default=20)
    p.set_defaults(func=cmd_shuffle)

    p = sub.add_parser("sweep", help="train one model per rank or look-back value")
    _model_flags(p)
    p.add_argument("--axis", choices=["rank", "lookback"], required=True)
    p.add_argument("--values", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("param-count", help="parameter counts of the compared strategies")
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=64)
    p.add_argument("--adapt-dim", dest="adapt_dim", type=int, default=16)
    p.add_argument("--lookback", type=int, default=96)
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--mixing", choices=sorted(MIXING), default="none")
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("capacity-gap", help="train adapter on/off twins and compare train/test error")
    _model_flags(p)
    p.set_defaults(func=cmd_capacity_gap)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
