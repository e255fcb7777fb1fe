"""Closed-loop building HVAC control stack.

Online joint state/parameter estimation over a gray-box RC + neural
network model, an energy-minimizing predictive controller built on the
identified model, rule-based and exact-model baselines, and a simulated
multi-zone plant to close the loop against.
"""

__version__ = "0.1.0"
