"""Hierarchical LBA inference with variational Bayes and K-fold CVVB model screening."""

from ._core import (
    DataError,
    Dataset,
    ParseError,
    VbDivergence,
    family,
    fit,
    lba_cdf,
    lba_pdf,
    read_csv,
    run_cli,
    screen,
    simulate_fixture,
    spec_info,
)

__all__ = [
    "DataError",
    "Dataset",
    "ParseError",
    "VbDivergence",
    "family",
    "fit",
    "lba_cdf",
    "lba_pdf",
    "read_csv",
    "run_cli",
    "screen",
    "simulate_fixture",
    "spec_info",
]
