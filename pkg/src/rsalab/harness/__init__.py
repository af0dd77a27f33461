"""Experiment configuration, orchestration and the ``rsa-lab`` CLI."""
