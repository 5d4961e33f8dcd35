"""Edge-unlearning inversion toolkit for graph neural networks.

Trains GCN victims, unlearns edges (influence-function, certified-noise,
gradient-ascent or retraining), checks the linear-GCN edge-influence
closed forms, and runs the confidence-trend membership attack locally or
against an HTTP model API.
"""

__version__ = "0.1.0"
