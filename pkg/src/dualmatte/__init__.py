"""dualmatte: temporal dual-backdrop matting pipeline.

Exact triangulation over alternating known backings, synthetic dual-frame
dataset generation, a one-encoder/two-decoder matting network, tiled
inference with overlap blending, spill-corrected composition, matting
metrics, and a time-duplex studio schedule simulator.
"""

__version__ = "0.1.0"
