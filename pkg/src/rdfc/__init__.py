"""Two-branch RGB-D indoor depth completion."""
__version__ = "0.1.0"
