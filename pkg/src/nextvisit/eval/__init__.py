"""
Pretraining evaluation, zero-shot risk forecasting, and rank metrics.
"""
