"""
Miscellaneous programming utilities used by other modules.
"""
