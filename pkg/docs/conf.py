# Sphinx configuration for the nextvisit documentation.
# See http://www.sphinx-doc.org/en/master/config for all options.

import nextvisit


project = 'nextvisit'
copyright = '2024-2026, the nextvisit developers'
author = 'the nextvisit developers'
version = release = nextvisit.__version__


def setup(app):
    # regenerate the API reference on every build
    from sphinx.ext import apidoc
    app.connect('builder-inited', lambda _: apidoc.main([
        '-o', './api', '-d2', '-feMT', '../src/nextvisit',
    ]))


extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
    'sphinx.ext.githubpages',
    'autodocsumm',
]

autodoc_default_options = {
    'autosummary': True,
}
autodata_content = 'both'

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = ['_build', 'api/modules.rst']
pygments_style = None


# -- HTML --------------------------------------------------------------------

import sphinx_rtd_theme
html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_static_path = []
htmlhelp_basename = 'nextvisitdoc'


# -- Other builders ----------------------------------------------------------

latex_documents = [
    (master_doc, 'nextvisit.tex', 'nextvisit Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'nextvisit', 'nextvisit Documentation', [author], 1),
]


intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'torch': ('https://pytorch.org/docs/stable', None),
}
