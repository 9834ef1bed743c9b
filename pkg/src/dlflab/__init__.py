"""Desk-scale lab for multi-label feature learning.

Implements two classification mechanisms over a shared toy backbone --
a pooled shared-feature baseline and a disentangled per-label feature
model built from cascaded semantic spatial cross-attention -- plus the
closed-form/numeric analysis of the optimal shared-feature angle, the
full multi-label metric zoo, a synthetic spatial dataset generator, and
a deterministic training loop.
"""

__version__ = "0.1.0"
