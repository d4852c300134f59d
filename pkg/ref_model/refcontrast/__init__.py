"""Reference external saliency model.

The real entry point is ``serve.py`` next to this file, launched as a
standalone script by the framework's manifest; this package exists so the
server and its manifest can be versioned, installed, and tested like any
other project. Nothing here imports the framework: the only coupling is the
wire protocol itself.
"""

__version__ = "0.1.0"
