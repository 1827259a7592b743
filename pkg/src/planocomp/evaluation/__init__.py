"""Metrics, synthetic datasets and the dataset runner."""
