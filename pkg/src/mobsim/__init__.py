"""Trace-driven Memory Order Buffer simulator with randomized partial-address dependence prediction."""
