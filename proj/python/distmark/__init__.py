"""Marker protection and black-box provenance checks for distilled datasets."""

try:
    from ._distmark import *  # noqa: F401,F403  (installed wheel layout)
    from ._distmark import __version__  # noqa: F401
except ImportError:
    from _distmark import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
    from _distmark import __version__  # noqa: F401
