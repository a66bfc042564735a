"""seiseg: weakly-supervised segmentation of seismic images into geologic units."""

__version__ = "0.1.0"
