"""Quality control for five-view microscope images of low-density foam targets."""

__version__ = "0.1.0"
