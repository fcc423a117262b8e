"""Adapter-on vs adapter-off twins on heterogeneous synthetic data, several seeds.

    python3 scripts/twin_comparison.py --seeds 0 1 2 3 4 --out results/twins.json
"""

import argparse
import statistics
from pathlib import Path

from clora_ts.backbone import ModelConfig
from clora_ts.dataio import SynthConfig
from clora_ts.experiments import improvement_report, to_json, twin_runs
from clora_ts.training import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--mixing", nargs="+", default=["none", "mlp_mix", "attention"])
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--length", type=int, default=4096)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--out", type=Path, default=Path("results/twins.json"))
    args = ap.parse_args()

    synth = SynthConfig(C=args.channels, T_total=args.length)
    summary = {}
    for mixing in args.mixing:
        runs = twin_runs(synth, ModelConfig(C=args.channels, mixing_mode=mixing), TrainConfig(epochs=args.epochs), args.seeds)
        rows = [{"seed": r.seed, "off": r.test_off.to_dict(), "on": r.test_on.to_dict(),
                 **improvement_report(r.test_off, r.test_on)} for r in runs]
        summary[mixing] = {"runs": rows, "wins": sum(r.test_on.mse < r.test_off.mse for r in runs),
                           "median_imp_mse": statistics.median(r.improvement for r in runs)}
        print(f"{mixing:10s} wins {summary[mixing]['wins']}/{len(runs)}  "
              f"median MSE improvement {summary[mixing]['median_imp_mse']:.2f}%")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(to_json(summary))


if __name__ == "__main__":
    main()
