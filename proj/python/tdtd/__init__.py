"""Breadth-first constituency-tree generation, reranking and PCFG-oracle evaluation."""

from ._core import (
    Error,
    Grammar,
    ParseError,
    SeqLm,
    TdtdModel,
    TdtdParser,
    Tree,
    bleu,
    bracket_f1,
    delinearize,
    run_cli,
    sample_report,
)

__all__ = [
    "Error",
    "Grammar",
    "ParseError",
    "SeqLm",
    "TdtdModel",
    "TdtdParser",
    "Tree",
    "bleu",
    "bracket_f1",
    "delinearize",
    "run_cli",
    "sample_report",
]
