"""Two-stream semantic scene completion: volumetric encodings, a dilated 3D CNN
with a hand-written reverse-mode engine, training and masked IoU evaluation."""
import os

# TBB in this image is too old for numba; pick a layer that is always present.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
