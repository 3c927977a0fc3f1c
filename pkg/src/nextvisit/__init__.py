"""
nextvisit pretrains a decoder-only transformer on longitudinal clinical event
sequences by predicting the full set of events of a patient's next visit, and
uses the pretrained model for zero-shot disease risk forecasting.

To run the pipeline type at your terminal::

    python -m nextvisit --help

or simply::

    nextvisit --help

In both cases, the command line is handled by the
:func:`nextvisit.core.app.main` function.

The source code is split into several subpackages under the same root
package:

======================= ======================================================
:mod:`nextvisit.core`     program entry point, config, and pipeline commands
:mod:`nextvisit.data`     data files, such as the default config
:mod:`nextvisit.cohort`   synthetic cohorts with planted dynamics, record files
:mod:`nextvisit.tokenize` vocabulary, quantile bins, trajectory tokenization
:mod:`nextvisit.model`    sequence assembly, attention masks, the transformer
:mod:`nextvisit.train`    weighted loss, optimizer, schedule, training loop
:mod:`nextvisit.eval`     next-visit and zero-shot evaluation, metrics
:mod:`nextvisit.plot`     figures for PR curves and decay sweeps
:mod:`nextvisit.util`     miscellaneous programming utilities
======================= ======================================================
"""

__version__ = '0.3.0'

__title__ = 'nextvisit'
__summary__ = ('Generative next-visit pretraining for longitudinal clinical '
               'event sequences.')


def get_copyright_notice() -> str:
    """Return nextvisit license information."""
    from importlib_resources import read_text
    return read_text('nextvisit.data', 'COPYING.txt')
