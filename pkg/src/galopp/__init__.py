"""Multi-agent persistent monitoring workbench.

A penalty-decay grid world with anchor/auxiliary agents, Kalman-filter
localization gated by communication connectivity, a graph-convolutional
PPO policy trained on a built-in autodiff kernel, scripted baselines,
and an experiment harness (eval, sweeps, rendering, CLI).
"""

__version__ = "0.1.0"
