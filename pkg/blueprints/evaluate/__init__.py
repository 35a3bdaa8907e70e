"""Evaluate blueprint - metric tables and single-volume prediction"""
