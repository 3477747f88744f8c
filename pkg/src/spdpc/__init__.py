"""Neural predictive-control policies for stochastic linear systems.

Offline pipeline: sample scenarios, train a control policy by gradient
descent through sampled closed-loop rollouts, then certify the closed-loop
constraint satisfaction probability on held-out scenarios.
"""

__version__ = "0.1.0"
