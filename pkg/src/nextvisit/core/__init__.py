"""
Program entry point, configuration, and the pipeline commands.
"""
