"""Quality-guided restoration of images with several stacked degradations."""

__version__ = "0.1.0"
