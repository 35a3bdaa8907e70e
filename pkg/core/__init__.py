"""
Core module for sdmseg
Contains voxel geometry, synthetic data, networks, losses, training and metrics
"""
