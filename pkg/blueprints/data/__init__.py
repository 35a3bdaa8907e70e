"""Data blueprint - synthetic dataset generation and SDM computation"""
