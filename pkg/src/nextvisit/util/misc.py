"""
Small helpers without a better home.
"""

__all__ = [
    'cachedproperty',
    'userpath',
    'format_counts',
]

import functools
import os


def cachedproperty(func):
    """
    Property whose value is computed once per instance and stored in
    ``instance._<name>``. It can be assigned to, e.g. to share an artifact
    between sessions, and deleted to force recomputation.
    """
    key = '_' + func.__name__

    @functools.wraps(func)
    def fget(self):
        if key not in self.__dict__:
            self.__dict__[key] = func(self)
        return self.__dict__[key]

    def fset(self, value):
        self.__dict__[key] = value

    def fdel(self):
        self.__dict__.pop(key, None)

    return property(fget, fset, fdel)


def userpath(path):
    """Absolute path with ``~`` and environment variables expanded."""
    return os.path.abspath(os.path.expandvars(os.path.expanduser(path)))


def format_counts(counts):
    """``key=value`` list of the non-zero entries of a counter, sorted by
    key."""
    return ', '.join('{}={}'.format(k, v) for k, v in sorted(counts.items())
                     if v)
