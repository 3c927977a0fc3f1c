"""
Figures for evaluation artifacts.
"""
