"""
Package data files, such as the default configuration.
"""
