"""Shielded deep Q-learning for highway lane changes.

A Horn-clause rule engine computes the safe action set each decision;
the DQN agent explores and exploits only inside it.
"""

__version__ = "0.1.0"
