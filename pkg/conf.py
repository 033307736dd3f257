# -*- coding: utf-8 -*-
#
# varmdp documentation build configuration file.

import sys
import os

sys.path.insert(0, os.path.abspath('src'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',  # Support automatic documentation
    'sphinx.ext.coverage', # Automatically check if functions are documented
    'sphinx.ext.mathjax',  # Allow support for algebra
    'sphinx.ext.viewcode', # Include the source code in documentation
    'numpydoc'             # Support NumPy style docstrings
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'varmdp'
copyright = u'The varmdp contributors'

version = '0.1'
release = '0.1.0'

exclude_patterns = ['_build', 'src', 'examples']
pygments_style = 'sphinx'

numpydoc_show_class_members = False

# -- Options for HTML output ----------------------------------------------

htmlhelp_basename = 'varmdpdoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    ('index', 'varmdp', u'varmdp Documentation',
     [u'The varmdp contributors'], 1)
]
