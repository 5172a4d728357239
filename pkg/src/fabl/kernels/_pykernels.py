"""Pure numpy versions of the compiled kernels.

Every reduction runs sequentially in index order so results are bit-identical
to ``_ckernels`` and independent of batch size.
"""
import numpy as np

_CHUNK = 8192


def group_sq_norms(W, group_id, n_groups):
    W = np.ascontiguousarray(W, dtype=np.float64)
    group_id = np.ascontiguousarray(group_id, dtype=np.intp)
    if group_id.shape[0] != W.shape[0]:
        raise ValueError("group_id length does not match W rows")
    out = np.zeros((n_groups, W.shape[1]))
    for j in range(W.shape[1]):
        out[:, j] = np.bincount(group_id, weights=W[:, j] * W[:, j], minlength=n_groups)
    return out


def channel_histograms(stream, lo, hi, bins):
    stream = np.asarray(stream, dtype=np.float64)
    L, s, ch = stream.shape
    pos = np.floor((stream - lo) / (hi - lo) * bins)
    idx = np.clip(pos, 0, bins - 1).astype(np.intp)
    flat = (np.arange(s)[:, None] * ch + np.arange(ch)[None, :]) * bins + idx
    counts = np.bincount(flat.ravel(), minlength=s * ch * bins).astype(np.float64)
    return counts.reshape(s, ch, bins)


def affine_scores(X, W, b):
    X = np.ascontiguousarray(X, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n, d = X.shape
    if W.shape[0] != d or b.shape[0] != W.shape[1]:
        raise ValueError("shape mismatch between X, W and b")
    out = np.empty((n, W.shape[1]))
    for start in range(0, n, _CHUNK):
        Xc = X[start:start + _CHUNK]
        acc = np.repeat(b[None, :], Xc.shape[0], axis=0)
        for k in range(d):
            acc += Xc[:, k, None] * W[k]
        out[start:start + _CHUNK] = acc
    return out
