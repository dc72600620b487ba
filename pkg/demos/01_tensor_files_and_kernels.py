"""
Tensor files and numeric kernels
================================

The building blocks everything else uses: the ABST tensor container,
temperature softmax, L2 normalization, and bicubic resampling with the
pinned Catmull-Rom kernel.
"""

import tempfile
from pathlib import Path

import numpy as np

from abselect import bicubic_resample_2d, l2_normalize, read_tensor, softmax, write_tensor

# ABST files round-trip bit-exactly and are shared with the export tooling
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.abst"
    tensor = np.arange(12, dtype=np.float32).reshape(3, 4)
    write_tensor(tensor, path)
    back = read_tensor(path)
    print(f"round trip ok: {np.array_equal(tensor, back)}, file is {path.stat().st_size} bytes")

# softmax with an explicit temperature; lower = sharper
for tau in (1.0, 0.1):
    print(f"softmax([1,2,3], tau={tau}) = {softmax([1.0, 2.0, 3.0], tau).round(4)}")

print("l2_normalize([3,4]) =", l2_normalize([3.0, 4.0]))

# bicubic resampling: constants are preserved, equal sizes are exact copies
plane = np.outer(np.linspace(0, 1, 5), np.linspace(1, 2, 4))
up = bicubic_resample_2d(plane, 10, 8)
print(f"resampled {plane.shape} -> {up.shape}; corners {up[0, 0]:.3f} .. {up[-1, -1]:.3f}")
print("identity resize exact:", np.array_equal(bicubic_resample_2d(plane, 5, 4), plane))
