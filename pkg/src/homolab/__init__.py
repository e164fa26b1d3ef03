"""homolab: numerical laboratory for diffusions in small random environments.

Submodules are imported on demand so the command line can configure the
thread pool before the JIT runtime loads.
"""

__version__ = "0.1.0"
