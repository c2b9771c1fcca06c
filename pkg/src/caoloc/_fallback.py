"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built. Outputs are bit-identical to the
compiled path because both perform the same scalar operations in the
same order.
"""

import numpy as np


def sosfilt(sos, x, zi):
    sos = np.asarray(sos, dtype=np.float64)
    zi = np.asarray(zi, dtype=np.float64)
    if zi.shape != (sos.shape[0], 2):
        raise ValueError(f"zi shape {zi.shape} does not match {sos.shape[0]} sections")
    y = [float(v) for v in x]
    zf = zi.copy()
    for k in range(sos.shape[0]):
        b0, b1, b2, _, a1, a2 = (float(c) for c in sos[k])
        z1, z2 = float(zf[k, 0]), float(zf[k, 1])
        for i, xi in enumerate(y):
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            y[i] = yi
        zf[k, 0] = z1
        zf[k, 1] = z2
    return np.asarray(y, dtype=np.float64), zf


def local_maxima(x, min_distance):
    x = np.asarray(x, dtype=np.float64)
    out = []
    last = -1
    for i in range(1, len(x) - 1):
        if x[i] > x[i - 1] and x[i] >= x[i + 1] and x[i] > 0.0:
            if last >= 0 and i - last < min_distance:
                if x[i] > x[last]:
                    out[-1] = i
                    last = i
            else:
                out.append(i)
                last = i
    return np.asarray(out, dtype=np.intp)
