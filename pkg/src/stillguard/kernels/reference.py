"""Pure-numpy fallback for the compiled kernels.

conv3d uses one tensordot per kernel offset (no im2col temporaries);
block_match accumulates SADs in the same (u, v) order as the Cython loop so
both backends produce bitwise-identical displacement fields.
"""

import numpy as np


def _pad(x, pt, ph, pw):
    return np.pad(x, ((0, 0), (pt, 0), (ph, ph), (pw, pw)))


def conv3d_forward(x, w, bias, st, sh, sw, pt, ph, pw):
    C_out, C_in, kt, kh, kw = w.shape
    T, H, W = x.shape[1:]
    To = (T + pt - kt) // st + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    xp = _pad(x, pt, ph, pw)
    y = np.empty((C_out, To, Ho, Wo))
    y[:] = bias[:, None, None, None]
    for jt in range(kt):
        for jh in range(kh):
            for jw in range(kw):
                sl = xp[:, jt:jt + st * To:st, jh:jh + sh * Ho:sh, jw:jw + sw * Wo:sw]
                y += np.tensordot(w[:, :, jt, jh, jw], sl, axes=([1], [0]))
    return y


def conv3d_grad_input(gy, w, st, sh, sw, pt, ph, pw, T, H, W):
    C_out, C_in, kt, kh, kw = w.shape
    To, Ho, Wo = gy.shape[1:]
    gxp = np.zeros((C_in, T + pt, H + 2 * ph, W + 2 * pw))
    for jt in range(kt):
        for jh in range(kh):
            for jw in range(kw):
                contrib = np.tensordot(w[:, :, jt, jh, jw], gy, axes=([0], [0]))
                gxp[:, jt:jt + st * To:st, jh:jh + sh * Ho:sh, jw:jw + sw * Wo:sw] += contrib
    return np.ascontiguousarray(gxp[:, pt:pt + T, ph:ph + H, pw:pw + W])


def conv3d_grad_weight(gy, x, st, sh, sw, pt, ph, pw, kt, kh, kw):
    C_out = gy.shape[0]
    C_in, T, H, W = x.shape
    To, Ho, Wo = gy.shape[1:]
    xp = _pad(x, pt, ph, pw)
    gw = np.empty((C_out, C_in, kt, kh, kw))
    for jt in range(kt):
        for jh in range(kh):
            for jw in range(kw):
                sl = xp[:, jt:jt + st * To:st, jh:jh + sh * Ho:sh, jw:jw + sw * Wo:sw]
                gw[:, :, jt, jh, jw] = np.tensordot(gy, sl, axes=([1, 2, 3], [1, 2, 3]))
    return gw


def block_match(a, b, cand_dy, cand_dx, patch_r):
    H, W = a.shape
    R = patch_r + int(max(np.abs(cand_dy).max(), np.abs(cand_dx).max()))
    ap = np.pad(a, patch_r, mode="edge")
    bp = np.pad(b, R, mode="edge")
    flow = np.zeros((H, W, 2), dtype=np.int64)
    best = None
    for dy, dx in zip(cand_dy, cand_dx):
        sad = np.zeros((H, W))
        for u in range(-patch_r, patch_r + 1):
            for v in range(-patch_r, patch_r + 1):
                asl = ap[patch_r + u:patch_r + u + H, patch_r + v:patch_r + v + W]
                bsl = bp[R + dy + u:R + dy + u + H, R + dx + v:R + dx + v + W]
                sad += np.abs(asl - bsl)
        if best is None:
            best = sad
            flow[:, :, 0] = dy
            flow[:, :, 1] = dx
        else:
            better = sad < best
            best = np.where(better, sad, best)
            flow[:, :, 0] = np.where(better, dy, flow[:, :, 0])
            flow[:, :, 1] = np.where(better, dx, flow[:, :, 1])
    return flow
