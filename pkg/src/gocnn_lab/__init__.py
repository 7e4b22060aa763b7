"""gocnn-lab: group-orthogonal CNNs at desk scale.

Mask-supervised foreground/background channel groups, representation
diversity metrics, and a synthetic shape corpus to train and probe them on.
"""

__version__ = "0.1.0"
