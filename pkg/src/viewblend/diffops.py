"""Differentiable geometry/tensor plumbing composed from autodiff primitives.

Everything here mirrors a plain-numpy counterpart in scene.py; these
versions run on the tape so gradients reach feature maps, volumes, blend
inputs, and (for mesh tuning) 3D points.  Selection indices are always
detached; only values and interpolation weights carry gradients.
"""

import numpy as np

from .autodiff import (
    Tensor,
    add,
    broadcast_to,
    concat,
    div,
    gather,
    matmul,
    mul,
    relu,
    reshape,
    sub,
    sum_reduce,
    mean_reduce,
)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def clamp01(x):
    # relu(x) - relu(x - 1); flat outside [0, 1], identity inside.
    return sub(relu(x), relu(sub(x, Tensor(1.0))))


def clamp_range(x, lo, hi):
    span = hi - lo
    unit = clamp01(mul(sub(x, Tensor(float(lo))), Tensor(1.0 / span)))
    return add(mul(unit, Tensor(float(span))), Tensor(float(lo)))


# ---------------------------------------------------------------------------
# Projection


def project_points_t(camera, pts):
    """Differentiable pinhole projection of (N, 3) points.

    Returns (uv Tensor (N,2), depth Tensor (N,1), valid ndarray (N,)).
    Behind-camera depths are replaced by 1 in the divide; such entries are
    already false in the mask, which is computed on detached values.
    """
    pts = as_tensor(pts)
    R = Tensor(camera.pose[:3, :3])
    t = Tensor(camera.pose[:3, 3][None, :])
    cam = matmul(sub(pts, broadcast_to(t, pts.shape)), R)
    z = cam[:, 2:3]
    z_np = z.numpy()[:, 0]
    front = z_np > 1e-9
    safe = np.where(front, 1.0, 0.0)
    # z_safe = z*m + (1 - m): exactly z where valid, 1 where not
    z_safe = add(mul(z, Tensor(safe[:, None])), Tensor((1.0 - safe)[:, None]))
    inv_z = div(Tensor(np.ones((pts.shape[0], 1))), z_safe)
    u = add(mul(mul(cam[:, 0:1], inv_z), Tensor(camera.fx)), Tensor(camera.cx))
    v = add(mul(mul(cam[:, 1:2], inv_z), Tensor(camera.fy)), Tensor(camera.cy))
    uv = concat([u, v], axis=1)
    uv_np = uv.numpy()
    valid = (
        front
        & (uv_np[:, 0] >= 0.0)
        & (uv_np[:, 0] <= camera.width - 1.0)
        & (uv_np[:, 1] >= 0.0)
        & (uv_np[:, 1] <= camera.height - 1.0)
    )
    return uv, z, valid


# ---------------------------------------------------------------------------
# Interpolated gathers


def bilinear_gather(image, uv):
    """Bilinear sample of (H, W, C) at (N, 2) coords; out-of-range uv are
    clamped (callers mask invalid rows, see project_points_t)."""
    img = as_tensor(image)
    H, W, C = img.shape
    uv = as_tensor(uv)
    u = clamp_range(uv[:, 0:1], 0.0, W - 1.0)
    v = clamp_range(uv[:, 1:2], 0.0, H - 1.0)
    u_np = u.numpy()[:, 0]
    v_np = v.numpy()[:, 0]
    x0 = np.minimum(np.floor(u_np), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(v_np), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fu = sub(u, Tensor(x0[:, None].astype(np.float64)))
    fv = sub(v, Tensor(y0[:, None].astype(np.float64)))
    one = Tensor(np.ones((uv.shape[0], 1)))
    gu = sub(one, fu)
    gv = sub(one, fv)
    flat = reshape(img, (H * W, C))
    p00 = gather(flat, y0 * W + x0)
    p01 = gather(flat, y0 * W + x1)
    p10 = gather(flat, y1 * W + x0)
    p11 = gather(flat, y1 * W + x1)
    top = add(mul(p00, gu), mul(p01, fu))
    bot = add(mul(p10, gu), mul(p11, fu))
    return add(mul(top, gv), mul(bot, fv))


def trilinear_gather(volume, pts_vox):
    """Trilinear sample of (X, Y, Z, C) at (N, 3) voxel-center coords."""
    vol = as_tensor(volume)
    X, Y, Z, C = vol.shape
    p = as_tensor(pts_vox)
    axes = []
    for d, n in zip(range(3), (X, Y, Z)):
        axes.append(clamp_range(p[:, d : d + 1], 0.0, n - 1.0))
    idx0, frac, gfrac = [], [], []
    one = Tensor(np.ones((p.shape[0], 1)))
    for a, n in zip(axes, (X, Y, Z)):
        a_np = a.numpy()[:, 0]
        i0 = np.minimum(np.floor(a_np), max(n - 2, 0)).astype(np.int64)
        idx0.append(i0)
        f = sub(a, Tensor(i0[:, None].astype(np.float64)))
        frac.append(f)
        gfrac.append(sub(one, f))
    x0, y0, z0 = idx0
    x1 = np.minimum(x0 + 1, X - 1)
    y1 = np.minimum(y0 + 1, Y - 1)
    z1 = np.minimum(z0 + 1, Z - 1)
    flat = reshape(vol, (X * Y * Z, C))
    out = None
    for dx, xs, wx in ((0, x0, gfrac[0]), (1, x1, frac[0])):
        for dy, ys, wy in ((0, y0, gfrac[1]), (1, y1, frac[1])):
            for dz, zs, wz in ((0, z0, gfrac[2]), (1, z1, frac[2])):
                corner = gather(flat, (xs * Y + ys) * Z + zs)
                term = mul(corner, mul(mul(wx, wy), wz))
                out = term if out is None else add(out, term)
    return out


# ---------------------------------------------------------------------------
# Convolutions via pad + gather (im2col) + matmul


def pad2d(x, p):
    if p == 0:
        return x
    H, W, C = x.shape
    zc = Tensor(np.zeros((H, p, C)))
    x = concat([zc, x, zc], axis=1)
    zr = Tensor(np.zeros((p, W + 2 * p, C)))
    return concat([zr, x, zr], axis=0)


def pad3d(x, p):
    if p == 0:
        return x
    X, Y, Z, C = x.shape
    za = Tensor(np.zeros((X, Y, p, C)))
    x = concat([za, x, za], axis=2)
    zb = Tensor(np.zeros((X, p, Z + 2 * p, C)))
    x = concat([zb, x, zb], axis=1)
    zc = Tensor(np.zeros((p, Y + 2 * p, Z + 2 * p, C)))
    return concat([zc, x, zc], axis=0)


def _im2col_2d(H, W, k, p):
    Hp, Wp = H + 2 * p, W + 2 * p
    ys, xs = np.mgrid[0:H, 0:W]
    dy, dx = np.mgrid[0:k, 0:k]
    rows = (ys.reshape(-1, 1) + dy.reshape(1, -1)) * Wp
    cols = xs.reshape(-1, 1) + dx.reshape(1, -1)
    return (rows + cols).reshape(-1)


def _im2col_3d(X, Y, Z, k, p):
    Xp, Yp, Zp = X + 2 * p, Y + 2 * p, Z + 2 * p
    xs, ys, zs = np.mgrid[0:X, 0:Y, 0:Z]
    dx, dy, dz = np.mgrid[0:k, 0:k, 0:k]
    base = (xs.reshape(-1, 1) + dx.reshape(1, -1)) * Yp
    base = (base + ys.reshape(-1, 1) + dy.reshape(1, -1)) * Zp
    return (base + zs.reshape(-1, 1) + dz.reshape(1, -1)).reshape(-1)


def conv2d(x, weight, bias=None, k=3, pad=1):
    """x (H, W, Cin) * weight ((k*k*Cin), Cout): same-size convolution.

    Weight rows are ordered (ky, kx, cin)."""
    H, W, C = x.shape
    xp = pad2d(x, pad)
    Hp, Wp = H + 2 * pad, W + 2 * pad
    flat = reshape(xp, (Hp * Wp, C))
    patches = gather(flat, _im2col_2d(H, W, k, pad))
    patches = reshape(patches, (H * W, k * k * C))
    out = matmul(patches, weight)
    if bias is not None:
        out = add(out, bias)
    return reshape(out, (H, W, weight.shape[1]))


def conv3d(x, weight, bias=None, k=3, pad=1):
    """x (X, Y, Z, Cin) * weight ((k^3*Cin), Cout); rows ordered (kx, ky, kz, cin)."""
    X, Y, Z, C = x.shape
    xp = pad3d(x, pad)
    flat = reshape(xp, ((X + 2 * pad) * (Y + 2 * pad) * (Z + 2 * pad), C))
    patches = gather(flat, _im2col_3d(X, Y, Z, k, pad))
    patches = reshape(patches, (X * Y * Z, k * k * k * C))
    out = matmul(patches, weight)
    if bias is not None:
        out = add(out, bias)
    return reshape(out, (X, Y, Z, weight.shape[1]))


def avgpool3d(x):
    X, Y, Z, C = x.shape
    r = reshape(x, (X // 2, 2, Y // 2, 2, Z // 2, 2, C))
    return mean_reduce(r, axis=(1, 3, 5))


def upsample3d(x):
    """Nearest-neighbor x2 along the three spatial axes."""
    idx = np.repeat(np.arange(x.shape[0]), 2)
    x = gather(x, idx, axis=0)
    idx = np.repeat(np.arange(x.shape[1]), 2)
    x = gather(x, idx, axis=1)
    idx = np.repeat(np.arange(x.shape[2]), 2)
    return gather(x, idx, axis=2)


def exclusive_cumsum(x):
    """Row-wise cumulative sum shifted right (position j sums entries < j)."""
    n = x.shape[-1]
    L = np.tril(np.ones((n, n)), k=-1).T  # [n, n], col j has ones above j
    return matmul(x, Tensor(L))
