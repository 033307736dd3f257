import os

import yaml


def load_fixtures(name):
    """ The list of cases stored in fixtures/<name>.yaml """
    with open(os.path.join(os.path.dirname(__file__), 'fixtures', name + '.yaml')) as fixtures_file:
        return yaml.safe_load(fixtures_file)
