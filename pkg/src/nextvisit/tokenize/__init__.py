"""
Vocabulary construction and trajectory tokenization.
"""
