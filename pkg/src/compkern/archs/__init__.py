"""Bundled architecture files (.arch), one layer per line.

Load by path, e.g.::

    from importlib.resources import files
    from compkern import load_arch

    arch = load_arch(files("compkern.archs") / "myrtle5.arch")
"""
