"""Tell HDR images fused from exposure brackets (mHDR) from ones expanded by
inverse tone mapping (iHDR), with a from-scratch numpy CNN and hand-crafted
baselines."""

__version__ = "0.1.0"
