""" Percentile-criterion (Value-at-Risk) solvers for offline tabular reinforcement learning. """

__version__ = "0.1.0"
