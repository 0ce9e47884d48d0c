"""Unified multi-scenario summary scoring toolkit.

One small transformer encoder scores a candidate summary against a reference
(SR), against its source document (SD), or against both (SDR), with the three
scenarios distinguished by fixed permutations of one shared continuous-prefix
matrix. Training pairs are built self-supervised from any document-summary
corpus via lead-3 positives and BM25-retrieved sentence-swap negatives, and a
meta-evaluation harness correlates scorer output with human ratings.
"""

__version__ = "0.1.0"
