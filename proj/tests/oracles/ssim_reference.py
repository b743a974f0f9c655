"""Freezes SSIM reference values computed with scikit-image.

The image pairs come from a splitmix64 stream that tests/test_metrics.cpp
reproduces bit-for-bit, so only the scores need to be stored.

    python3 tests/oracles/ssim_reference.py > tests/oracles/ssim_reference.hpp
"""
import numpy as np
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1
PAIRS = 20


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def make_pair(index):
    """Width, height and two HxWx3 images for pair `index`."""
    state = 0x5EED0000 + index
    state, r = splitmix64(state)
    width = 16 + r % 17
    state, r = splitmix64(state)
    height = 16 + r % 17
    state, r = splitmix64(state)
    mix = (r >> 11) * 2.0**-53
    n = width * height * 3
    a = np.empty(n)
    b = np.empty(n)
    for i in range(n):
        state, r = splitmix64(state)
        a[i] = (r >> 11) * 2.0**-53
        state, r = splitmix64(state)
        u = (r >> 11) * 2.0**-53
        b[i] = (1.0 - mix) * a[i] + mix * u
    if index % 5 == 4:
        b = 1.0 - a
    return width, height, a.reshape(height, width, 3), b.reshape(height, width, 3)


def main():
    print("// Generated by tests/oracles/ssim_reference.py; do not edit.")
    print("#pragma once")
    print()
    print(f"inline constexpr double kSsimReference[{PAIRS}] = {{")
    for k in range(PAIRS):
        _, _, a, b = make_pair(k)
        s = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                  use_sample_covariance=False, channel_axis=2)
        print(f"    {float(s)!r},")
    print("};")


if __name__ == "__main__":
    main()
