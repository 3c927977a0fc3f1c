"""
Synthetic longitudinal cohorts and their on-disk record format.
"""
