"""Bundled scenario files."""

from importlib import resources

__all__ = ["names", "path"]


def names() -> list:
    """Names of the bundled scenarios (without the .cfg suffix)."""
    out = []
    for entry in resources.files(__package__).iterdir():
        if entry.name.endswith(".cfg"):
            out.append(entry.name[:-4])
    return sorted(out)


def path(name: str) -> str:
    """Filesystem path of a bundled scenario by name (with or without .cfg)."""
    if not name.endswith(".cfg"):
        name = name + ".cfg"
    candidate = resources.files(__package__) / name
    if not candidate.is_file():
        raise FileNotFoundError(f"no bundled scenario {name!r}; have {names()}")
    return str(candidate)
