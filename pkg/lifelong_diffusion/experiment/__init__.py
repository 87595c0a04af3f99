"""Experiment driver: run layout, pre-training and the subcommands."""
