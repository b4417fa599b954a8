# -*- coding: utf-8 -*-
#
# pulmcal documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sys
import os

import sphinx_rtd_theme

# Add to sys.path the top-level directory where the package is located.
sys.path.insert(0, os.path.abspath(".."))

# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "numpydoc",
]

# see https://github.com/numpy/numpydoc/issues/69
numpydoc_show_class_members = False

autodoc_default_options = {"members": True, "inherited-members": True}

templates_path = ["_templates"]

autosummary_generate = True

source_suffix = ".rst"

master_doc = "index"

project = u"pulmcal"

# The short X.Y version and the full version, including alpha/beta/rc tags.
from pulmcal import __version__

version = __version__
release = __version__

exclude_patterns = ["_build", "_templates"]

pygments_style = "sphinx"

# -- Options for HTML output ----------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]

htmlhelp_basename = "pulmcaldoc"

# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    ("index", "pulmcal.tex", u"pulmcal Documentation", u"pulmcal developers", "manual"),
]

man_pages = [("index", "pulmcal", u"pulmcal Documentation", [u"pulmcal developers"], 1)]

# intersphinx configuration
intersphinx_mapping = {
    "python": ("https://docs.python.org/{.major}".format(sys.version_info), None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "pandas": ("https://pandas.pydata.org/docs/", None),
    "sklearn": ("https://scikit-learn.org/stable", None),
    "joblib": ("https://joblib.readthedocs.io/en/latest/", None),
}
