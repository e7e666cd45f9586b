"""Desk-scale real-time surgical risk scoring pipeline.

Subsystems: multi-source CSV ingest and admission join (`ingest`),
embedded partitioned commit log (`streambus`), feature engineering
(`features`), additive risk models with Youden-cutoff classification
(`models`, `calibrate`), encrypted keyed persistence (`store`), REST
API (`api`), and the synthetic-cohort generator / benchmark /
orchestrator (`synth`, `pipeline`, `bench`, `cli`).
"""

__version__ = "0.1.0"
