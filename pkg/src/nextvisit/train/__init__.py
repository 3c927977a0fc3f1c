"""
Loss, optimizer, learning rate schedule, and the training loop.
"""
