"""Independent brute-force oracles for the numeric kernels and mask ops.

Everything here is deliberately written as plain nested loops over
window membership, sharing no code with the package implementations.
"""

import numpy as np


def conv2d_loops(x, w, b, geom):
    c_out, c_in, kh, kw = w.shape
    out_h, out_w = geom.out_size(x.shape[1], x.shape[2])
    out = np.zeros((c_out, out_h, out_w), dtype=np.float64)
    for o in range(c_out):
        for a in range(out_h):
            for bb in range(out_w):
                acc = 0.0
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            r = a * geom.stride_h + i * geom.dilation_h - geom.pad_h
                            s = bb * geom.stride_w + j * geom.dilation_w - geom.pad_w
                            if 0 <= r < x.shape[1] and 0 <= s < x.shape[2]:
                                acc += float(x[c, r, s]) * float(w[o, c, i, j])
                out[o, a, bb] = acc + float(b[o])
    return out


def pool2d_loops(x, geom, mode):
    out_h, out_w = geom.out_size(x.shape[1], x.shape[2])
    out = np.zeros((x.shape[0], out_h, out_w), dtype=np.float64)
    for c in range(x.shape[0]):
        for a in range(out_h):
            for bb in range(out_w):
                vals = []
                for i in range(geom.kernel_h):
                    for j in range(geom.kernel_w):
                        r = a * geom.stride_h + i * geom.dilation_h - geom.pad_h
                        s = bb * geom.stride_w + j * geom.dilation_w - geom.pad_w
                        if 0 <= r < x.shape[1] and 0 <= s < x.shape[2]:
                            vals.append(float(x[c, r, s]))
                        else:
                            vals.append(-np.inf if mode == "max" else 0.0)
                out[c, a, bb] = max(vals) if mode == "max" else sum(vals) / len(vals)
    return out


def dense_loops(x, w, b):
    out = np.zeros(w.shape[0], dtype=np.float64)
    for m in range(w.shape[0]):
        acc = 0.0
        for n in range(w.shape[1]):
            acc += float(w[m, n]) * float(x[n])
        out[m] = acc + float(b[m])
    return out


def attribution_window_loops(mask, geom):
    """Fraction of unmasked cells among in-bounds window positions."""
    out_h, out_w = geom.out_size(mask.shape[0], mask.shape[1])
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for a in range(out_h):
        for bb in range(out_w):
            members = []
            for i in range(geom.kernel_h):
                for j in range(geom.kernel_w):
                    r = a * geom.stride_h + i * geom.dilation_h - geom.pad_h
                    s = bb * geom.stride_w + j * geom.dilation_w - geom.pad_w
                    if 0 <= r < mask.shape[0] and 0 <= s < mask.shape[1]:
                        members.append(mask[r, s] > 0)
            out[a, bb] = sum(members) / len(members) if members else 0.0
    return out


def upsample_index_loops(mask, factor):
    h, w = mask.shape
    out = np.zeros((h * factor, w * factor), dtype=mask.dtype)
    for r in range(h * factor):
        for s in range(w * factor):
            out[r, s] = mask[r // factor, s // factor]
    return out
