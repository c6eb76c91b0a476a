# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Path setup --------------------------------------------------------------

import bidan


# -- Project information -----------------------------------------------------

project = 'bidan-nmt'
copyright = '2024, The bidan-nmt developers'
author = 'The bidan-nmt developers'

# The short X.Y version
version = bidan.__version__
# The full version, including alpha/beta/rc tags
release = bidan.__version__


# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
    'sphinx_autodoc_typehints',
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}

templates_path = ['_templates']

exclude_patterns = ['_build']

default_role = 'any'

# -- Options for HTML output -------------------------------------------------

html_theme = 'furo'
html_title = f'bidan-nmt {version}'

autoclass_content = 'both'
