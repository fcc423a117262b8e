"""Rank and look-back sweeps; writes one CSV and one JSON per axis.

    python3 scripts/sweeps.py --axis rank --values 1 2 4 8 16
    python3 scripts/sweeps.py --axis lookback --values 12 24 48 96 --period 24 --noise 0
"""

import argparse
from pathlib import Path

from clora_ts.backbone import ModelConfig
from clora_ts.dataio import SynthConfig, generate_synthetic
from clora_ts.experiments import sweep, to_json
from clora_ts.training import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=["rank", "lookback"], required=True)
    ap.add_argument("--values", type=int, nargs="+", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--period", type=int, default=None)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--mixing", default="none")
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    args = ap.parse_args()

    ds = generate_synthetic(SynthConfig(C=8, T_total=4096, seed=args.seed, period=args.period, noise_sigma=args.noise))
    res = sweep(args.axis, args.values, ds, ModelConfig(C=8, mixing_mode=args.mixing, adapter_enabled=True),
                TrainConfig(seed=args.seed))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / f"sweep_{args.axis}.csv").write_text(res.to_csv())
    (args.out_dir / f"sweep_{args.axis}.json").write_text(to_json(res.to_dict()))
    print(res.to_csv(), end="")


if __name__ == "__main__":
    main()
