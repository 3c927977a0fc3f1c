"""
Static figures of evaluation results, rendered to image files without a
display (Agg canvas).
"""

__all__ = [
    'plot_pr_curves',
    'plot_sweep',
    'save_figure',
]

import logging
import os

from matplotlib.figure import Figure
from matplotlib.backends.backend_agg import FigureCanvasAgg

from nextvisit.util.yaml import load_resource

CONFIG = load_resource(__package__, 'figures.yml')


def new_figure():
    fig = Figure(**CONFIG['figure'])
    FigureCanvasAgg(fig)
    return fig


def save_figure(fig, filename):
    folder = os.path.dirname(filename)
    if folder:
        os.makedirs(folder, exist_ok=True)
    fig.savefig(filename)
    logging.info("Wrote {!r}".format(filename))


def plot_pr_curves(curves, filename, title=None):
    """
    Plot precision against recall.

    :param dict curves: ``{label: rows}`` with rows ``(threshold, precision,
        recall, optimal)`` as returned by
        :func:`nextvisit.eval.metrics.pr_curve`
    """
    fig = new_figure()
    ax = fig.add_subplot(1, 1, 1)
    styles = CONFIG['pr_curve_style']
    for i, (label, rows) in enumerate(curves.items()):
        style = styles[i % len(styles)]
        recall = [r[2] for r in rows]
        precision = [r[1] for r in rows]
        ax.plot(recall, precision, label=label, **style)
        for r in rows:
            if int(r[3]):
                ax.plot([r[2]], [r[1]], color=style.get('color'),
                        **CONFIG['optimal_style'])
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc='upper right')
    save_figure(fig, filename)
    return fig


def plot_sweep(rows, filename, title=None):
    """
    Plot the decay sweep: precision and recall against the decay factor on
    the left axis, the on-time rate (dashed) on the right axis.

    :param list rows: dicts with keys ``delta``, ``precision``, ``recall``
        and ``on_time_rate``; ``None`` values are skipped
    """
    rows = sorted(rows, key=lambda r: float(r['delta']))
    fig = new_figure()
    ax = fig.add_subplot(1, 1, 1)
    twin = ax.twinx()
    style = CONFIG['sweep_style']
    lines = []
    for name, axes in (('precision', ax), ('recall', ax),
                       ('on_time_rate', twin)):
        xy = [(float(r['delta']), float(r[name]))
              for r in rows if r.get(name) not in (None, '')]
        if xy:
            x, y = zip(*xy)
            lines += axes.plot(x, y, label=name.replace('_', ' '),
                               **style[name])
    ax.set_xlabel("decay factor")
    ax.set_ylabel("precision / recall")
    twin.set_ylabel("on-time rate")
    if title:
        ax.set_title(title)
    ax.legend(lines, [line.get_label() for line in lines], loc='best')
    save_figure(fig, filename)
    return fig
