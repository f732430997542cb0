"""Deterministic software rasterizer for ID-tagged 3D Gaussians.

Forward pass: each Gaussian is projected to a 2D Gaussian (pinhole mean,
Jacobian-transformed covariance plus a small isotropic low-pass term), its
footprint is expanded into flat (pixel, gaussian) entries, entries are
sorted front-to-back (ties broken by primitive index), and per-pixel alpha
compositing runs as segmented prefix products.  Identical inputs produce
bit-identical images: the entry order is a pure lexicographic sort and all
reductions are fixed-order numpy sums.

The per-Gaussian opacity kernel is windowed to 3 sigma with a C1 fade:
    alpha = opacity * exp(-q/2) * s(q),  q = d^T Sigma2D^-1 d
where s is 1 below q=8 and descends smoothstep-style to 0 at q=9.  Both the
value and the derivative vanish at the support boundary, so finite
difference checks of the analytic gradients stay clean at any step size.

Backward pass: analytic gradients of the training loss for color, opacity,
mean (including the Jacobian dependence of the 2D covariance), scale, and
rotation, accumulated race-free via fixed-order segmented suffix sums.

Losses (per object k):  L = L_rgb + L_depth + lambda * L_ins with
L_rgb the per-pixel color residual norm, L_depth the absolute depth residual
over valid-depth pixels, and L_ins the absolute difference between the
object's rendered opaque-Gaussian accumulation and its binary instance mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .frames import FrameBundle
from .gaussians import KIND_OPAQUE, GaussianStore
from .quadrics import CameraModel

logger = logging.getLogger(__name__)

Q_MAX = 9.0         # 3-sigma support
Q_FADE_START = 8.0  # C1 window fades over q in [8, 9]
ALPHA_CAP = 0.999
DEPTH_ALPHA_MIN = 1e-4


def _support_window(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C1 fade s(q) and ds/dq: 1 below Q_FADE_START, 0 at Q_MAX."""
    u = np.clip((q - Q_FADE_START) / (Q_MAX - Q_FADE_START), 0.0, 1.0)
    s = 1.0 - u * u * (3.0 - 2.0 * u)
    ds = -6.0 * u * (1.0 - u) / (Q_MAX - Q_FADE_START)
    return s, ds


@dataclass
class RenderConfig:
    lowpass: float = 0.3       # pixels^2 added to the 2D covariance
    max_radius: float = 96.0   # pixel clamp on footprint radius
    z_near: float = 0.05


@dataclass
class RenderOutput:
    color: np.ndarray         # (H,W,3) in [0,1]
    depth: np.ndarray         # (H,W) meters, alpha-normalized, 0 when empty
    instance: np.ndarray      # (H,W) in [0,1], queried-object accumulation
    alpha: np.ndarray         # (H,W) total accumulated opacity
    transmittance: np.ndarray  # (H,W) final transmittance (independent product)


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """(N,4) unit quaternions (w,x,y,z) -> (N,3,3) rotation matrices."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / np.maximum(n, 1e-12)).T
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def project_gaussian_subset(
    store: GaussianStore,
    idx: np.ndarray,
    camera: CameraModel,
    lowpass: float = 0.3,
    z_near: float = 0.05,
    max_radius: float = 96.0,
) -> dict:
    """Project a subset of Gaussians; returns the quantities both passes need."""
    means = store.means[idx]
    R_cw, t_cw = camera.world_to_camera()
    p_cam = means @ R_cw.T + t_cw
    z = p_cam[:, 2]
    valid = z > z_near

    fx, fy = camera.fx, camera.fy
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * p_cam[:, 0] / z + camera.cx
        v = fy * p_cam[:, 1] / z + camera.cy
    means2d = np.stack([u, v], axis=1)

    R3 = quats_to_rotmats(store.quats[idx])
    s2 = store.scales[idx] ** 2
    # Sigma3D = R3 diag(s^2) R3^T, then rotate into camera: B = W Sigma W^T
    sigma = np.einsum("nij,nj,nkj->nik", R3, s2, R3)
    B = np.einsum("ij,njk,lk->nil", R_cw, sigma, R_cw)

    J = np.zeros((len(idx), 2, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        J[:, 0, 0] = fx / z
        J[:, 1, 1] = fy / z
        J[:, 0, 2] = -fx * p_cam[:, 0] / z**2
        J[:, 1, 2] = -fy * p_cam[:, 1] / z**2
    cov2d = np.einsum("nij,njk,nlk->nil", J, B, J)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    valid &= det > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.empty_like(cov2d)
        inv[:, 0, 0] = c / det
        inv[:, 0, 1] = -b / det
        inv[:, 1, 0] = -b / det
        inv[:, 1, 1] = a / det
    tr = 0.5 * (a + c)
    gap = np.sqrt(np.maximum(tr * tr - det, 0.0))
    lam_max = tr + gap
    radii = np.minimum(3.0 * np.sqrt(np.maximum(lam_max, 0.0)) + 0.5, max_radius)

    return {
        "idx": np.asarray(idx),
        "p_cam": p_cam,
        "z": z,
        "means2d": means2d,
        "cov2d": cov2d,
        "inv_cov": inv,
        "radii": radii,
        "valid": valid,
        "R3": R3,
        "B": B,
        "J": J,
        "R_cw": R_cw,
    }


def _flat_entries(proj: dict, opacities: np.ndarray, h: int, w: int):
    """Expand footprints into sorted flat entries with alpha and transmittance.

    Returns None when nothing rasterizes, else a dict of per-entry arrays
    sorted by (pixel, depth, gaussian index).
    """
    valid = proj["valid"]
    rows = np.flatnonzero(valid)
    if len(rows) == 0:
        return None
    u = proj["means2d"][rows, 0]
    v = proj["means2d"][rows, 1]
    r = proj["radii"][rows]
    x0 = np.clip(np.floor(u - r).astype(int), 0, w)
    x1 = np.clip(np.floor(u + r).astype(int) + 1, 0, w)
    y0 = np.clip(np.floor(v - r).astype(int), 0, h)
    y1 = np.clip(np.floor(v + r).astype(int) + 1, 0, h)
    widths = np.maximum(x1 - x0, 0)
    heights = np.maximum(y1 - y0, 0)
    counts = widths * heights
    keep = counts > 0
    rows, x0, y0, widths, heights, counts = (
        rows[keep], x0[keep], y0[keep], widths[keep], heights[keep], counts[keep],
    )
    if len(rows) == 0:
        return None

    total = int(counts.sum())
    entry_row = np.repeat(rows, counts)
    base = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - np.repeat(base, counts)
    w_rep = np.repeat(widths, counts)
    dx = local % w_rep
    dy = local // w_rep
    px = np.repeat(x0, counts) + dx
    py = np.repeat(y0, counts) + dy
    pix = py * w + px

    du = px + 0.5 - proj["means2d"][entry_row, 0]
    dv = py + 0.5 - proj["means2d"][entry_row, 1]
    ia = proj["inv_cov"][entry_row, 0, 0]
    ib = proj["inv_cov"][entry_row, 0, 1]
    ic = proj["inv_cov"][entry_row, 1, 1]
    q = ia * du * du + 2.0 * ib * du * dv + ic * dv * dv

    inside = q < Q_MAX
    if not np.any(inside):
        return None
    entry_row = entry_row[inside]
    pix = pix[inside]
    du, dv, q = du[inside], dv[inside], q[inside]

    G = np.exp(-0.5 * q)
    s_win, ds_win = _support_window(q)
    raw = G * s_win
    draw_dq = G * (-0.5 * s_win + ds_win)
    alpha_unclamped = opacities[entry_row] * raw
    alpha = np.minimum(alpha_unclamped, ALPHA_CAP)
    clamped = alpha_unclamped > ALPHA_CAP

    order = np.lexsort((entry_row, proj["z"][entry_row], pix))
    entry_row = entry_row[order]
    pix = pix[order]
    alpha = alpha[order]
    raw = raw[order]
    draw_dq = draw_dq[order]
    du, dv = du[order], dv[order]
    clamped = clamped[order]

    is_start = np.empty(len(pix), dtype=bool)
    is_start[0] = True
    is_start[1:] = pix[1:] != pix[:-1]
    seg_id = np.cumsum(is_start) - 1
    starts = np.flatnonzero(is_start)
    ends = np.append(starts[1:] - 1, len(pix) - 1)

    lg = np.log1p(-alpha)
    cs = np.cumsum(lg)
    prefix_excl = cs - lg
    seg_base = prefix_excl[starts][seg_id]
    T = np.exp(prefix_excl - seg_base)
    weight = alpha * T
    log_tn = cs[ends][seg_id] - seg_base  # total log transmittance per segment

    return {
        "row": entry_row,
        "pix": pix,
        "alpha": alpha,
        "raw": raw,
        "draw_dq": draw_dq,
        "du": du,
        "dv": dv,
        "clamped": clamped,
        "T": T,
        "weight": weight,
        "seg_id": seg_id,
        "seg_starts": starts,
        "seg_ends": ends,
        "log_tn": log_tn,
    }


def _instance_subset_flags(
    store: GaussianStore,
    entry_row: np.ndarray,
    pix: np.ndarray,
    instance_id: int | None,
    instance_ref: np.ndarray | None,
) -> np.ndarray:
    opaque = store.kinds[entry_row] == KIND_OPAQUE
    ids = store.object_ids[entry_row]
    if instance_id is not None:
        return opaque & (ids == instance_id)
    if instance_ref is not None:
        return opaque & (ids == instance_ref.reshape(-1)[pix])
    return opaque & (ids > 0)


def render(
    store: GaussianStore,
    camera: CameraModel,
    instance_id: int | None = None,
    instance_ref: np.ndarray | None = None,
    config: RenderConfig | None = None,
) -> RenderOutput:
    """Composite the full map into color/depth/instance/alpha images.

    The instance channel accumulates opaque Gaussians of `instance_id` when
    given; with `instance_ref` (an (H,W) id map) each pixel accumulates the
    opaque Gaussians of its reference id; otherwise all foreground objects.
    """
    config = config or RenderConfig()
    h, w = camera.height, camera.width
    hw = h * w
    empty = RenderOutput(
        color=np.zeros((h, w, 3)),
        depth=np.zeros((h, w)),
        instance=np.zeros((h, w)),
        alpha=np.zeros((h, w)),
        transmittance=np.ones((h, w)),
    )
    if len(store) == 0:
        return empty
    proj = project_gaussian_subset(
        store, np.arange(len(store)), camera,
        lowpass=config.lowpass, z_near=config.z_near, max_radius=config.max_radius,
    )
    ent = _flat_entries(proj, store.opacities, h, w)
    if ent is None:
        return empty

    weight = ent["weight"]
    pix = ent["pix"]
    row = ent["row"]
    color = np.zeros((hw, 3))
    for ch in range(3):
        color[:, ch] = np.bincount(pix, weights=weight * store.colors[row, ch], minlength=hw)
    alpha = np.bincount(pix, weights=weight, minlength=hw)
    draw = np.bincount(pix, weights=weight * proj["z"][row], minlength=hw)
    sub = _instance_subset_flags(store, row, pix, instance_id, instance_ref)
    ins = np.bincount(pix, weights=weight * sub, minlength=hw)

    tn = np.ones(hw)
    tn[pix[ent["seg_starts"]]] = np.exp(ent["log_tn"][ent["seg_starts"]])

    depth = np.where(alpha >= DEPTH_ALPHA_MIN, draw / np.maximum(alpha, DEPTH_ALPHA_MIN), 0.0)
    return RenderOutput(
        color=np.clip(color, 0.0, 1.0).reshape(h, w, 3),
        depth=depth.reshape(h, w),
        instance=np.clip(ins, 0.0, 1.0).reshape(h, w),
        alpha=np.clip(alpha, 0.0, 1.0).reshape(h, w),
        transmittance=tn.reshape(h, w),
    )


@dataclass
class GaussianGradients:
    indices: np.ndarray
    means: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    quats: np.ndarray


def _loss_upstream(
    rendered_color: np.ndarray,
    alpha: np.ndarray,
    draw: np.ndarray,
    ins: np.ndarray,
    frame: FrameBundle,
    object_id: int,
    lam: float,
    eps: float = 1e-12,
):
    """Loss value plus per-pixel upstream gradients for each raw channel."""
    hw = alpha.shape[0]
    target_c = frame.rgb.reshape(hw, 3)
    r_c = rendered_color - target_c
    n_c = np.linalg.norm(r_c, axis=1)
    loss_rgb = float(n_c.sum())
    g_color = r_c / np.maximum(n_c, eps)[:, None]

    target_d = frame.depth.reshape(hw)
    valid = target_d > 0
    norm_ok = alpha >= DEPTH_ALPHA_MIN
    depth = np.where(norm_ok, draw / np.maximum(alpha, DEPTH_ALPHA_MIN), 0.0)
    r_d = np.where(valid, depth - target_d, 0.0)
    loss_depth = float(np.abs(r_d).sum())
    g_depth = np.where(valid, r_d / np.maximum(np.abs(r_d), eps), 0.0)
    g_draw = np.where(norm_ok, g_depth / np.maximum(alpha, DEPTH_ALPHA_MIN), 0.0)
    g_alpha = np.where(
        norm_ok, -g_depth * draw / np.maximum(alpha, DEPTH_ALPHA_MIN) ** 2, 0.0
    )

    target_i = (frame.instance.reshape(hw) == object_id).astype(float)
    r_i = ins - target_i
    loss_ins = float(np.abs(r_i).sum())
    g_ins = lam * r_i / np.maximum(np.abs(r_i), eps)

    loss = loss_rgb + loss_depth + lam * loss_ins
    parts = {"rgb": loss_rgb, "depth": loss_depth, "ins": loss_ins}
    return loss, parts, g_color, g_draw, g_alpha, g_ins


def loss_and_gradients(
    store: GaussianStore,
    trainable_idx: np.ndarray,
    frame: FrameBundle,
    lam: float = 0.5,
    object_id: int = 0,
    config: RenderConfig | None = None,
) -> tuple[float, GaussianGradients, dict]:
    """Training loss for one frame plus analytic gradients on the trainable set.

    The forward pass composites every Gaussian in the store (occluders
    matter); gradients are reported only for `trainable_idx`.  Raises
    InvalidArgument-style errors for stale indices.
    """
    config = config or RenderConfig()
    trainable_idx = np.asarray(trainable_idx, dtype=int)
    if len(trainable_idx) and (
        trainable_idx.min() < 0 or trainable_idx.max() >= len(store)
    ):
        raise InvalidParameterError("trainable indices out of range (stale snapshot?)")
    h, w = frame.shape
    if (frame.camera.height, frame.camera.width) != (h, w):
        raise InvalidParameterError("frame camera does not match image size")
    hw = h * w
    n = len(store)

    def empty_grads():
        t = len(trainable_idx)
        return GaussianGradients(
            indices=trainable_idx,
            means=np.zeros((t, 3)),
            colors=np.zeros((t, 3)),
            opacities=np.zeros(t),
            scales=np.zeros((t, 3)),
            quats=np.zeros((t, 4)),
        )

    if n == 0:
        loss, parts, *_ = _loss_upstream(
            np.zeros((hw, 3)), np.zeros(hw), np.zeros(hw), np.zeros(hw),
            frame, object_id, lam,
        )
        return loss, empty_grads(), parts

    proj = project_gaussian_subset(
        store, np.arange(n), camera=frame.camera,
        lowpass=config.lowpass, z_near=config.z_near, max_radius=config.max_radius,
    )
    ent = _flat_entries(proj, store.opacities, h, w)
    if ent is None:
        loss, parts, *_ = _loss_upstream(
            np.zeros((hw, 3)), np.zeros(hw), np.zeros(hw), np.zeros(hw),
            frame, object_id, lam,
        )
        return loss, empty_grads(), parts

    row, pix, weight = ent["row"], ent["pix"], ent["weight"]
    alpha_e, T = ent["alpha"], ent["T"]
    sub = (store.kinds[row] == KIND_OPAQUE) & (store.object_ids[row] == object_id)

    color_img = np.zeros((hw, 3))
    colors_e = store.colors[row]
    for ch in range(3):
        color_img[:, ch] = np.bincount(pix, weights=weight * colors_e[:, ch], minlength=hw)
    alpha_img = np.bincount(pix, weights=weight, minlength=hw)
    z_e = proj["z"][row]
    draw_img = np.bincount(pix, weights=weight * z_e, minlength=hw)
    ins_img = np.bincount(pix, weights=weight * sub, minlength=hw)

    loss, parts, g_color_img, g_draw_img, g_alpha_img, g_ins_img = _loss_upstream(
        color_img, alpha_img, draw_img, ins_img, frame, object_id, lam
    )

    # ---- backward over entries -------------------------------------------
    seg_id = ent["seg_id"]
    ends = ent["seg_ends"]

    def suffix_after(contrib: np.ndarray) -> np.ndarray:
        cs = np.cumsum(contrib)
        return cs[ends][seg_id] - cs

    gc_e = g_color_img[pix]          # (E,3)
    gD_e = g_draw_img[pix]
    gA_e = g_alpha_img[pix]
    gI_e = g_ins_img[pix]

    one_minus = 1.0 - alpha_e
    dL_dalpha = np.zeros(len(row))
    for ch in range(3):
        contrib = weight * colors_e[:, ch]
        dL_dalpha += gc_e[:, ch] * (colors_e[:, ch] * T - suffix_after(contrib) / one_minus)
    contrib_z = weight * z_e
    dL_dalpha += gD_e * (z_e * T - suffix_after(contrib_z) / one_minus)
    dL_dalpha += gA_e * (T - suffix_after(weight) / one_minus)
    contrib_i = weight * sub
    dL_dalpha += gI_e * (sub * T - suffix_after(contrib_i) / one_minus)

    free = ~ent["clamped"]
    raw = ent["raw"]
    opac_e = store.opacities[row]
    dL_do_e = np.where(free, dL_dalpha * raw, 0.0)
    dL_dq_e = np.where(free, dL_dalpha * opac_e * ent["draw_dq"], 0.0)

    ia = proj["inv_cov"][row, 0, 0]
    ib = proj["inv_cov"][row, 0, 1]
    ic = proj["inv_cov"][row, 1, 1]
    Ad0 = ia * ent["du"] + ib * ent["dv"]
    Ad1 = ib * ent["du"] + ic * ent["dv"]

    # per-gaussian accumulations
    grad_color = np.zeros((n, 3))
    for ch in range(3):
        grad_color[:, ch] = np.bincount(row, weights=gc_e[:, ch] * weight, minlength=n)
    grad_opacity = np.bincount(row, weights=dL_do_e, minlength=n)
    grad_mean2d = np.stack(
        [
            np.bincount(row, weights=dL_dq_e * (-2.0) * Ad0, minlength=n),
            np.bincount(row, weights=dL_dq_e * (-2.0) * Ad1, minlength=n),
        ],
        axis=1,
    )
    grad_z_direct = np.bincount(row, weights=gD_e * weight, minlength=n)
    gM = np.zeros((n, 2, 2))
    gM[:, 0, 0] = np.bincount(row, weights=dL_dq_e * (-(Ad0 * Ad0)), minlength=n)
    gM[:, 0, 1] = np.bincount(row, weights=dL_dq_e * (-(Ad0 * Ad1)), minlength=n)
    gM[:, 1, 0] = gM[:, 0, 1]
    gM[:, 1, 1] = np.bincount(row, weights=dL_dq_e * (-(Ad1 * Ad1)), minlength=n)

    # ---- chain projective geometry per gaussian ---------------------------
    fx, fy = frame.camera.fx, frame.camera.fy
    p_cam = proj["p_cam"]
    z = np.maximum(proj["z"], 1e-9)
    J, B, R3, R_cw = proj["J"], proj["B"], proj["R3"], proj["R_cw"]

    grad_pcam = np.einsum("nij,ni->nj", J, grad_mean2d)
    grad_pcam[:, 2] += grad_z_direct

    grad_J = 2.0 * np.einsum("nij,njk,nkl->nil", gM, J, B)
    inv_z2 = 1.0 / z**2
    grad_pcam[:, 0] += grad_J[:, 0, 2] * (-fx * inv_z2)
    grad_pcam[:, 1] += grad_J[:, 1, 2] * (-fy * inv_z2)
    grad_pcam[:, 2] += (
        grad_J[:, 0, 0] * (-fx * inv_z2)
        + grad_J[:, 1, 1] * (-fy * inv_z2)
        + grad_J[:, 0, 2] * (2 * fx * p_cam[:, 0] / z**3)
        + grad_J[:, 1, 2] * (2 * fy * p_cam[:, 1] / z**3)
    )
    grad_mean = grad_pcam @ R_cw

    U = np.einsum("nij,jk->nik", J, R_cw)  # d(p2d cov) / d(world cov)
    grad_sigma = np.einsum("nki,nkl,nlj->nij", U, gM, U)

    s = store.scales
    M3 = np.einsum("nji,njk,nkl->nil", R3, grad_sigma, R3)
    grad_scale = 2.0 * s * np.stack([M3[:, 0, 0], M3[:, 1, 1], M3[:, 2, 2]], axis=1)

    qn = store.quats / np.maximum(np.linalg.norm(store.quats, axis=1, keepdims=True), 1e-12)
    grad_quat = _quat_gradients(grad_sigma, R3, s**2, qn)

    sel = trainable_idx
    grads = GaussianGradients(
        indices=sel,
        means=grad_mean[sel],
        colors=grad_color[sel],
        opacities=grad_opacity[sel],
        scales=grad_scale[sel],
        quats=grad_quat[sel],
    )
    return loss, grads, parts


def _quat_gradients(
    grad_sigma: np.ndarray, R3: np.ndarray, s2: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """d loss / d quaternion via Sigma = R diag(s^2) R^T (unit-quat partials)."""
    w, x, y, z = q.T
    zeros = np.zeros_like(w)
    dR = np.empty((4, len(q), 3, 3))
    dR[0] = 2 * np.stack(
        [
            np.stack([zeros, -z, y], axis=1),
            np.stack([z, zeros, -x], axis=1),
            np.stack([-y, x, zeros], axis=1),
        ],
        axis=1,
    )
    dR[1] = 2 * np.stack(
        [
            np.stack([zeros, y, z], axis=1),
            np.stack([y, -2 * x, -w], axis=1),
            np.stack([z, w, -2 * x], axis=1),
        ],
        axis=1,
    )
    dR[2] = 2 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=1),
            np.stack([x, zeros, z], axis=1),
            np.stack([-w, z, -2 * y], axis=1),
        ],
        axis=1,
    )
    dR[3] = 2 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=1),
            np.stack([w, -2 * z, y], axis=1),
            np.stack([x, y, zeros], axis=1),
        ],
        axis=1,
    )
    DRt = np.einsum("nj,nkj->njk", s2, R3)  # diag(s2) @ R^T
    out = np.empty((len(q), 4))
    for j in range(4):
        A = np.einsum("nij,njk->nik", dR[j], DRt)
        out[:, j] = 2.0 * np.einsum("nij,nij->n", grad_sigma, A)
    # project out the radial direction (unit-norm constraint)
    out -= np.sum(out * q, axis=1, keepdims=True) * q
    return out


@dataclass
class TrainConfig:
    iters: int = 30
    lam: float = 0.5
    lr_mean: float = 0.004      # meters per (rms-normalized) step
    lr_color: float = 0.04
    lr_opacity: float = 0.02
    lr_scale: float = 0.001
    lr_quat: float = 0.01
    momentum: float = 0.7
    optimize_scale_rot: bool = True
    render: RenderConfig = field(default_factory=RenderConfig)


def optimize_object(
    store: GaussianStore,
    object_id: int,
    frames: list[FrameBundle],
    trainable_idx: np.ndarray,
    config: TrainConfig | None = None,
) -> list[float]:
    """Momentum descent on the trainable Gaussians of one object.

    Each step accumulates gradients over the frame window, takes an
    RMS-normalized step per parameter group, and rejects (reverts, halves
    the rate, resets momentum) any step that increases the loss, so the
    returned trace of accepted losses is non-increasing.
    """
    config = config or TrainConfig()
    trainable_idx = np.asarray(trainable_idx, dtype=int)
    if len(trainable_idx) == 0:
        logger.warning("optimize_object %d: no trainable Gaussians, skipping", object_id)
        return []
    if not frames:
        return []

    def total_loss_grads(need_grads: bool):
        loss = 0.0
        acc = None
        for frame in frames:
            f_loss, grads, _ = loss_and_gradients(
                store, trainable_idx, frame, lam=config.lam,
                object_id=object_id, config=config.render,
            )
            loss += f_loss
            if need_grads:
                if acc is None:
                    acc = grads
                else:
                    acc.means += grads.means
                    acc.colors += grads.colors
                    acc.opacities += grads.opacities
                    acc.scales += grads.scales
                    acc.quats += grads.quats
        return loss, acc

    sel = trainable_idx
    vel = {
        "means": np.zeros((len(sel), 3)),
        "colors": np.zeros((len(sel), 3)),
        "opacities": np.zeros(len(sel)),
        "scales": np.zeros((len(sel), 3)),
        "quats": np.zeros((len(sel), 4)),
    }
    lrs = {
        "means": config.lr_mean,
        "colors": config.lr_color,
        "opacities": config.lr_opacity,
        "scales": config.lr_scale if config.optimize_scale_rot else 0.0,
        "quats": config.lr_quat if config.optimize_scale_rot else 0.0,
    }
    scale_down = 1.0
    loss, _ = total_loss_grads(False)
    trace = [loss]

    for _ in range(config.iters):
        _, grads = total_loss_grads(True)
        backup = {
            "means": store.means[sel].copy(),
            "colors": store.colors[sel].copy(),
            "opacities": store.opacities[sel].copy(),
            "scales": store.scales[sel].copy(),
            "quats": store.quats[sel].copy(),
        }
        for name, g in (
            ("means", grads.means),
            ("colors", grads.colors),
            ("opacities", grads.opacities),
            ("scales", grads.scales),
            ("quats", grads.quats),
        ):
            rms = float(np.sqrt(np.mean(g**2)))
            if rms < 1e-15 or lrs[name] == 0.0:
                continue
            step = -(lrs[name] * scale_down) * g / rms
            vel[name] = config.momentum * vel[name] + step
            _apply_update(store, sel, name, vel[name])
        store.clamp_parameters()
        new_loss, _ = total_loss_grads(False)
        if new_loss <= trace[-1]:
            trace.append(new_loss)
        else:
            for name, val in backup.items():
                _apply_set(store, sel, name, val)
            for name in vel:
                vel[name][:] = 0.0
            scale_down *= 0.5
            trace.append(trace[-1])
            if scale_down < 1e-4:
                break
    return trace


def _apply_update(store: GaussianStore, sel: np.ndarray, name: str, delta) -> None:
    if name == "means":
        store.means[sel] += delta
    elif name == "colors":
        store.colors[sel] += delta
    elif name == "opacities":
        store.opacities[sel] += delta
    elif name == "scales":
        store.scales[sel] += delta
    elif name == "quats":
        store.quats[sel] += delta


def _apply_set(store: GaussianStore, sel: np.ndarray, name: str, value) -> None:
    if name == "means":
        store.means[sel] = value
    elif name == "colors":
        store.colors[sel] = value
    elif name == "opacities":
        store.opacities[sel] = value
    elif name == "scales":
        store.scales[sel] = value
    elif name == "quats":
        store.quats[sel] = value


def dump_render_pngs(out: RenderOutput, prefix: str) -> list[str]:
    """Debug dump: 8-bit color, 16-bit depth in millimeters, 8-bit instance."""
    from .png import write_png

    paths = []
    color8 = np.round(np.clip(out.color, 0, 1) * 255).astype(np.uint8)
    write_png(f"{prefix}_color.png", color8)
    paths.append(f"{prefix}_color.png")
    depth16 = np.clip(np.round(out.depth * 1000.0), 0, 65535).astype(np.uint16)
    write_png(f"{prefix}_depth.png", depth16)
    paths.append(f"{prefix}_depth.png")
    inst8 = np.round(np.clip(out.instance, 0, 1) * 255).astype(np.uint8)
    write_png(f"{prefix}_instance.png", inst8)
    paths.append(f"{prefix}_instance.png")
    return paths
