"""Trace-driven simulator of edge-assisted real-time video analytics.

A DDQN agent decides per frame whether to track locally or offload, and a
contextual bandit picks the detection model and resolution for every
offloaded block.
"""

__version__ = "0.1.0"
