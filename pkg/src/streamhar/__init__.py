"""Online continual learning for streaming sensor time-series.

A frozen contrastively pre-trained feature extractor feeds a small relation
module that is retrained from a per-class embedding replay buffer whenever new
activity classes appear or the buffer drifts.
"""

__version__ = "0.1.0"
