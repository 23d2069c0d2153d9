"""Multilingual image-sentence retrieval with a shared latent vocabulary.

Desk-scale training and evaluation harness: synthetic multilingual corpora,
vocabulary reduction, a hybrid per-language/latent embedding layer, masked
cross-language alignment losses, a two-branch retrieval model, test-time
cross-language ensembling, and retrieval metrics.
"""

__version__ = "0.1.0"
