"""Smart-home energy laboratory: per-appliance load / PV forecasting
(seq2seq and baselines) feeding a Q-learning battery dispatch controller,
with an exact dynamic-programming oracle for verification.
"""

__version__ = "0.1.0"
