"""Cost-constrained channel pruning planner."""
