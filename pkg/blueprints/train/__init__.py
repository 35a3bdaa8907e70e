"""Train blueprint - training runs and ablation presets"""
