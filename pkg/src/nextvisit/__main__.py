"""
Run the nextvisit command line.

This module is invoked when calling ``python -m nextvisit``.

For more information on the command line parameters, see
:mod:`nextvisit.core.app`.
"""

__all__ = []

from nextvisit.core.app import main


if __name__ == '__main__':
    main()
