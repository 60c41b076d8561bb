"""Event-adaptive fake news detection on propagation graphs.

Trains a graph-convolutional target predictor with adaptive
representation-space augmentation and contrastive learning, an event-only
predictor that captures per-event bias, and removes that bias at inference
by weighted logit subtraction.  Ships with an event-separated splitter and
a synthetic biased-dataset generator for end-to-end validation.
"""

__version__ = "0.1.0"
