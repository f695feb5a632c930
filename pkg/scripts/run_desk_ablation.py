#!/usr/bin/env python3
"""End-to-end desk-scale ablation: synthesize data, run the fusion x weighting
grid, and print the table.

Example:
    python scripts/run_desk_ablation.py --out runs/ablation --scenes 40 --epochs 120
"""

import argparse
import sys
from pathlib import Path

from damagemap.ingest import build_index
from damagemap.model import ModelConfig
from damagemap.pipeline import TrainConfig, ablation_to_csv, run_ablation
from damagemap.synth import SyntheticSpec, generate_synthetic


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True, help="working directory (dataset + results)")
    p.add_argument("--scenes", type=int, default=40, help="total scenes (80%% train / 20%% val)")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--seed", type=int, default=1)
    return p.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    val = max(2, args.scenes // 5)
    spec = SyntheticSpec(
        num_scenes=args.scenes,
        image_size=args.image_size,
        buildings_per_scene=(4, 7),
        seed=args.seed,
        splits={"train": args.scenes - val, "val": val},
    )
    data_dir = out / "dataset"
    print(f"generating {args.scenes} scenes under {data_dir} ...")
    generate_synthetic(spec, data_dir)

    base = TrainConfig(model=ModelConfig(seed=args.seed), epochs=args.epochs, seed=args.seed)
    rows = run_ablation(
        base, build_index(data_dir, "train"), build_index(data_dir, "val"), single_thread=True
    )
    csv_text = ablation_to_csv(rows)
    (out / "ablation.csv").write_text(csv_text)
    print(csv_text)
    print(f"table written to {out / 'ablation.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
