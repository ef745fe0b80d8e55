"""Closed-loop strategies in optimal control, classical and quantum mechanics."""
