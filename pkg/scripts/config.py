import os

import yaml

__app_name__ = "localized_trajectories"
__app_author__ = "localtraj"

DATA_DIR = "data"
WORK_DIR = os.path.join(os.getcwd(), "work")
CONFIG_FILE = "config.yaml"

# synth defaults
PRESET = "local_vs_global"
VIDEOS = 60
SUBJECTS = 4
FRAMES = 24


try:
    with open(CONFIG_FILE) as f:
        _config = yaml.safe_load(f) or {}
except (OSError, yaml.YAMLError):
    _config = {}


def config(*keys):
    def safeget(dct, *keys):
        for key in keys:
            try:
                dct = dct[key]
            except (KeyError, TypeError):
                return None
        return dct

    return safeget(_config, *keys)
