"""Cold-starting of echo state networks from short observation windows."""

__version__ = "0.1.0"
