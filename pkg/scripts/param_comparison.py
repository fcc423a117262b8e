"""Parameter counts of the CD, CInd and C-LoRA strategies at a given scale."""

import argparse
from pathlib import Path

from clora_ts.adapters import extra_param_count
from clora_ts.backbone import ModelConfig
from clora_ts.experiments import format_table, param_comparison, to_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--channels", type=int, default=321)
    ap.add_argument("--lookback", type=int, default=96)
    ap.add_argument("--embed-dim", type=int, default=128)
    ap.add_argument("--adapt-dim", type=int, default=16)
    ap.add_argument("--rank", type=int, default=4)
    ap.add_argument("--mixing", default="mlp_mix")
    ap.add_argument("--out", type=Path, default=Path("results/params.json"))
    args = ap.parse_args()

    cfg = ModelConfig(T=args.lookback, C=args.channels, D=args.embed_dim, d=args.adapt_dim, r=args.rank,
                      mixing_mode=args.mixing)
    table = param_comparison(cfg)
    print("adapter extras", extra_param_count(cfg.C, cfg.r, cfg.D, cfg.d))
    print(format_table(table))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(to_json(table))


if __name__ == "__main__":
    main()
