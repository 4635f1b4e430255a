"""Multi-population evolutionary multitasking with a learned, attention-
routed knowledge-transfer controller, trained by clipped-surrogate policy
optimization on a generated multitask benchmark distribution."""

__version__ = "0.1.0"
