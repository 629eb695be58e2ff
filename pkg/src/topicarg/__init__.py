"""Topic-enhanced sentence-level argument mining.

A VAE neural topic model, explainable target-relevant topic extraction, a
sentence-target-topics argument classifier, a mutual-learning trainer that
couples the two models, and in-target / cross-target evaluation protocols.
"""

__version__ = "0.1.0"
