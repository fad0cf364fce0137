import os
import sys

sys.path.insert(0, os.path.abspath('..'))

project = 'IRS C-RAN simulator'
copyright = '2024, Anna'
author = 'Anna'
release = '1.0'

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.mathjax', 'sphinx.ext.viewcode']

autodoc_mock_imports = ['cvxpy', 'clarabel', 'scs']
autodoc_member_order = 'bysource'
autodoc_typehints = 'description'
autodoc_default_options = {
    'show-inheritance': True,
    'exclude-members': 'model_config, model_fields, model_computed_fields',
}

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

html_theme = 'nature'
html_static_path = ['_static']
html_title = f'{project} {release}'
