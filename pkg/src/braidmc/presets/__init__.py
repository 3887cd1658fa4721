import os

__all__ = ("PRESET_DIR", "list_presets", "preset_path", "install")

PRESET_DIR = os.path.dirname(os.path.abspath(__file__))


def list_presets():
    """Names of the shipped run configurations, sorted."""
    return sorted(f[:-5] for f in os.listdir(PRESET_DIR) if f.endswith(".toml"))


def preset_path(name):
    """Path of the shipped preset ``name`` (with or without '.toml')."""
    if name.endswith(".toml"):
        name = name[:-5]
    if name not in list_presets():
        raise ValueError("no preset named '{}'. Available presets are {}".format(name, list_presets()))
    return os.path.join(PRESET_DIR, name + ".toml")


def install(name, directory=None, overwrite=False):
    """Copy a preset into ``directory`` (default the working directory) and return the new path."""
    lines = _copy(preset_path(name))
    target = os.path.join(directory or os.getcwd(), os.path.basename(preset_path(name)))
    if os.path.exists(target) and not overwrite:
        raise FileExistsError("'{}' exists. Pass overwrite=True to replace it".format(target))
    with open(target, "wb") as f:
        f.writelines(lines)
    return target


def _copy(path):
    with open(path, "rb") as f:
        return f.readlines()
