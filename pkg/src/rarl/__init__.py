"""Ranking-aware RL for joint ordinal regression and ranking."""
