"""Systemic risk of overlapping bank portfolios."""
