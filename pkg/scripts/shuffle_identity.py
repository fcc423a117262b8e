"""Channel-shuffle test: does a trained model depend on which channel is which?

Trains an adapter-off model and its adapter-on twin (no mixing) and reports the
test-MSE change under random channel permutations of the inputs.
"""

import argparse
from pathlib import Path

from clora_ts.backbone import ModelConfig
from clora_ts.dataio import SynthConfig
from clora_ts.experiments import shuffle_test, to_json, twin_runs
from clora_ts.training import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--permutations", type=int, default=20)
    ap.add_argument("--out", type=Path, default=Path("results/shuffle.json"))
    args = ap.parse_args()

    run = twin_runs(SynthConfig(C=8, T_total=4096), ModelConfig(C=8), TrainConfig(), [args.seed])[0]
    out = {}
    for name, params in (("adapter_off", run.adapter_off), ("adapter_on", run.adapter_on)):
        res = shuffle_test(params, run.data.test, seed=args.seed, n_permutations=args.permutations)
        out[name] = res.to_dict()
        print(f"{name:12s} median delta {res.median_delta:+.5f}  mean delta {res.mean_delta:+.5f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(to_json(out))


if __name__ == "__main__":
    main()
