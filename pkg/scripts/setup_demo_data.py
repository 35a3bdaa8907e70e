"""
Demo Data Generator for sdmseg
Creates a desk-scale synthetic dataset and a matching train config
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from core.data_manager import write_json  # noqa: E402
from core.models import VolumeShape  # noqa: E402
from core.synthdata import make_dataset  # noqa: E402

DEMO_SPLIT = (8, 32, 10)
DEMO_SHAPE = VolumeShape(48, 48, 48)


def demo_train_config():
    """Train config sized for a CPU run"""
    return {
        'mode': 'full',
        'total_iters': 500,
        'lr_decay_every': 2500,
        'crop': [32, 32, 32],
        'batch_size': 4,
        'labeled_per_batch': 2,
        'checkpoint_every': 100,
        'validate_every': 100,
        'seed': 1337,
    }


def setup_demo_data(out_dir, seed=0, workers=1):
    """Write the demo dataset and ``train_config.json`` into ``out_dir``"""
    split = make_dataset(sum(DEMO_SPLIT), DEMO_SHAPE, DEMO_SPLIT, seed, out_dir, workers=workers)
    write_json(os.path.join(out_dir, 'train_config.json'), demo_train_config())
    return split


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--out', default=os.path.join('data', 'demo'))
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--workers', type=int, default=1)
    args = parser.parse_args()

    split = setup_demo_data(args.out, seed=args.seed, workers=args.workers)

    print(f"Demo dataset written to {args.out}: "
          f"{len(split.labeled_ids)} labeled, {len(split.unlabeled_ids)} unlabeled, {len(split.val_ids)} val")
    print(f"Train with: python cli.py train --config {os.path.join(args.out, 'train_config.json')} "
          f"--data {args.out} --out runs/demo")
