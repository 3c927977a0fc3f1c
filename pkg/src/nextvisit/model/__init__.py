"""
Training sequence assembly, attention masks, and the transformer itself.
"""
