"""Named scenario presets shipped with the package (one YAML file each)."""

from importlib import resources

import yaml

from ..experiments import config_from_dict


def _root():
    return resources.files(__name__)


def list_presets():
    names = [p.name[:-5] for p in _root().iterdir() if p.name.endswith(".yaml")]
    return sorted(names)


def load_preset(name):
    path = _root() / f"{name}.yaml"
    if not path.is_file():
        raise KeyError(f"no preset named {name!r}; available: {list_presets()}")
    data = yaml.safe_load(path.read_text())
    return config_from_dict(data)
