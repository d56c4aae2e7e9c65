"""
Tile-based Gaussian splat rasterization with an exact backward pass.

Primitives are projected with the EWA approximation (a first-order Jacobian
of the pinhole projection applied to the 3D covariance), binned into 16x16
pixel tiles by their 3-sigma screen footprint, sorted front to back by depth
and alpha-composited per pixel. Pixel (col, row) is sampled at integer
coordinates (u, v) = (col, row).

Compositing per pixel follows the usual rules: alpha = min(o * G, 0.99), and a
primitive is dropped, together with every primitive behind it, as soon as
including it would push the transmittance below 1e-4.

The backward pass recomputes each tile's forward quantities and applies the
analytic adjoint, reducing per-tile gradients in tile order so that results
do not depend on thread scheduling.
"""

from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from splat_autolabel.constants import (
    ALPHA_MAX,
    LOW_PASS,
    MAX_CONDITION,
    NEAR_PLANE,
    TILE_SIZE,
    TRANSMITTANCE_MIN,
)
from splat_autolabel.errors import CountMismatch, ShapeMismatch, StaleRecord
from splat_autolabel.geometry import Intrinsics, Pose, quaternion_to_rotation
from splat_autolabel.nn import Tensor, custom
from splat_autolabel.util import parallel_map


@dataclass(frozen=True)
class CameraView:
    """
    A camera-to-world pose, pinhole intrinsics and a normalized timestamp.
    """

    pose: Pose
    intrinsics: Intrinsics
    time: float = 0.0
    name: str = ""

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height


@dataclass(frozen=True)
class RenderConfig:
    tile_size: int = TILE_SIZE
    white_background: bool = False
    threads: int = 1
    debug: bool = False

    @property
    def background(self) -> np.ndarray:
        return np.ones(3) if self.white_background else np.zeros(3)


@dataclass
class Splats:
    """
    Attributes of the primitives to draw, one row each.

    rotation need not be normalized; opacity is the decoded opacity in [0, 1]
    and color is clamped to [0, 1] when drawn. `owner` is any object with a
    `version` attribute (typically the scene) that must not change between a
    render and its backward pass.
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    owner: Any = None

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64).reshape(-1, 3)
        n = len(self.position)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(-1, 4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(-1, 3)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(-1)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(-1, 3)
        for name in ("rotation", "log_scale", "opacity", "color"):
            if len(getattr(self, name)) != n:
                msg = f"{n} positions but {len(getattr(self, name))} rows of {name}"
                raise CountMismatch(msg)

    def __len__(self) -> int:
        return len(self.position)

    @classmethod
    def empty(cls) -> "Splats":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))


@dataclass
class SplatProjection:
    """
    Screen-space splats for the primitives that survived culling.

    `rows` indexes the input primitives; every other array is aligned with it.
    The remaining fields are intermediates kept for the backward pass.
    """

    rows: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    radius: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    camera_points: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)
    cov3d: np.ndarray = field(repr=False)
    unit_rotation: np.ndarray = field(repr=False)
    quat_norm: np.ndarray = field(repr=False)
    rotation_matrix: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class RenderedImage:
    pixels: np.ndarray
    alpha: np.ndarray

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass
class CompositingRecord:
    splats: Splats
    view: CameraView
    cfg: RenderConfig
    projection: SplatProjection
    tiles: List[Tuple[int, np.ndarray]]
    owner_version: Optional[int]


@dataclass
class SplatGradients:
    """
    Gradients per input primitive; culled primitives get zeros.

    `mean2d_norm` is the norm of the gradient with respect to the projected
    mean in normalized device coordinates, the densification statistic.
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    mean2d_norm: np.ndarray
    visible: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SplatGradients":
        return cls(
            np.zeros((n, 3)),
            np.zeros((n, 4)),
            np.zeros((n, 3)),
            np.zeros(n),
            np.zeros((n, 3)),
            np.zeros(n),
            np.zeros(n, dtype=bool),
        )


def _world_to_camera(view: CameraView) -> Tuple[np.ndarray, np.ndarray]:
    rotation = view.pose.rotation.T
    return rotation, -rotation @ view.pose.translation


def project_gaussians(splats: Splats, view: CameraView) -> SplatProjection:
    """
    Project every primitive and keep those in front of the near plane, with a
    well-conditioned footprint that overlaps the image.
    """
    k = view.intrinsics
    w_rot, w_trans = _world_to_camera(view)
    t = splats.position @ w_rot.T + w_trans
    front = t[:, 2] > NEAR_PLANE
    rows = np.flatnonzero(front)
    t = t[rows]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]

    quat_norm = np.linalg.norm(splats.rotation[rows], axis=1)
    quat_norm = np.where(quat_norm > 0, quat_norm, 1.0)
    unit = splats.rotation[rows] / quat_norm[:, None]
    rmat = quaternion_to_rotation(unit)
    scale = np.exp(splats.log_scale[rows])
    m = rmat * scale[:, None, :]
    cov3d = m @ np.swapaxes(m, 1, 2)

    jac = np.zeros((len(rows), 2, 3))
    jac[:, 0, 0] = k.fx / z
    jac[:, 0, 2] = -k.fx * x / (z * z)
    jac[:, 1, 1] = k.fy / z
    jac[:, 1, 2] = -k.fy * y / (z * z)
    mw = jac @ w_rot
    cov2d = mw @ cov3d @ np.swapaxes(mw, 1, 2)
    cov2d[:, 0, 0] += LOW_PASS
    cov2d[:, 1, 1] += LOW_PASS

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    spread = np.sqrt(np.maximum(mid * mid - det, 0.0))
    big = mid + spread
    small = mid - spread
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.where(small > 0, big / small, np.inf)
    radius = np.ceil(3.0 * np.sqrt(np.maximum(big, 0.0)))
    mean2d = np.stack([k.fx * x / z + k.cx, k.fy * y / z + k.cy], axis=1)

    keep = (det > 0) & (condition <= MAX_CONDITION)
    keep &= (mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius <= k.width - 1)
    keep &= (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius <= k.height - 1)

    conic = np.zeros((len(rows), 3))
    ok = det > 0
    conic[ok, 0] = c[ok] / det[ok]
    conic[ok, 1] = -b[ok] / det[ok]
    conic[ok, 2] = a[ok] / det[ok]

    return SplatProjection(
        rows=rows[keep],
        mean2d=mean2d[keep],
        cov2d=cov2d[keep],
        conic=conic[keep],
        depth=z[keep],
        radius=radius[keep],
        opacity=splats.opacity[rows][keep],
        color=splats.color[rows][keep],
        camera_points=t[keep],
        jacobian=jac[keep],
        cov3d=cov3d[keep],
        unit_rotation=unit[keep],
        quat_norm=quat_norm[keep],
        rotation_matrix=rmat[keep],
        scale=scale[keep],
    )


def project_gaussian(
    position: np.ndarray,
    rotation: np.ndarray,
    log_scale: np.ndarray,
    view: CameraView,
    opacity: float = 1.0,
    color: Sequence[float] = (1.0, 1.0, 1.0),
) -> Optional[SplatProjection]:
    """
    Project a single primitive; None when it is culled.
    """
    splats = Splats(position, rotation, log_scale, np.array([opacity]), np.asarray(color, dtype=np.float64))
    projection = project_gaussians(splats, view)
    return projection if len(projection) else None


def _bin_tiles(projection: SplatProjection, k: Intrinsics, tile_size: int) -> List[Tuple[int, np.ndarray]]:
    """
    Map each touched tile to the depth-sorted indices (into the projection)
    of the splats whose footprint overlaps it. Equal depths keep input order.
    """
    n = len(projection)
    if n == 0:
        return []
    tiles_x = (k.width + tile_size - 1) // tile_size
    tiles_y = (k.height + tile_size - 1) // tile_size
    order = np.lexsort((projection.rows, projection.depth))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    lo = projection.mean2d - projection.radius[:, None]
    hi = projection.mean2d + projection.radius[:, None]
    x0 = np.clip(np.floor(lo[:, 0] / tile_size), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor(hi[:, 0] / tile_size), 0, tiles_x - 1).astype(np.int64) + 1
    y0 = np.clip(np.floor(lo[:, 1] / tile_size), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor(hi[:, 1] / tile_size), 0, tiles_y - 1).astype(np.int64) + 1
    span_x = x1 - x0
    counts = span_x * (y1 - y0)
    owner = np.repeat(np.arange(n), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile = (y0[owner] + local // span_x[owner]) * tiles_x + x0[owner] + local % span_x[owner]

    key = np.lexsort((rank[owner], tile))
    tile = tile[key]
    owner = owner[key]
    starts = np.flatnonzero(np.r_[True, tile[1:] != tile[:-1]])
    ends = np.r_[starts[1:], len(tile)]
    return [(int(tile[s]), owner[s:e]) for s, e in zip(starts, ends)]


def _tile_pixels(tile: int, k: Intrinsics, tile_size: int) -> Tuple[slice, slice, np.ndarray, np.ndarray]:
    tiles_x = (k.width + tile_size - 1) // tile_size
    ty, tx = divmod(tile, tiles_x)
    rows = slice(ty * tile_size, min((ty + 1) * tile_size, k.height))
    cols = slice(tx * tile_size, min((tx + 1) * tile_size, k.width))
    vv, uu = np.mgrid[rows, cols]
    return rows, cols, uu.reshape(-1).astype(np.float64), vv.reshape(-1).astype(np.float64)


@dataclass
class _TileForward:
    dx: np.ndarray
    dy: np.ndarray
    gauss: np.ndarray
    raw: np.ndarray
    alpha: np.ndarray
    trans: np.ndarray
    final: np.ndarray
    color: np.ndarray
    pixels: np.ndarray


def _tile_forward(
    projection: SplatProjection, members: np.ndarray, u: np.ndarray, v: np.ndarray, background: np.ndarray
) -> _TileForward:
    mean = projection.mean2d[members]
    conic = projection.conic[members]
    dx = u[:, None] - mean[None, :, 0]
    dy = v[:, None] - mean[None, :, 1]
    power = -0.5 * (conic[:, 0] * dx * dx + conic[:, 2] * dy * dy) - conic[:, 1] * dx * dy
    gauss = np.exp(np.minimum(power, 0.0))
    raw = projection.opacity[members] * gauss
    alpha = np.minimum(raw, ALPHA_MAX)
    after = np.cumprod(1.0 - alpha, axis=1)
    alpha = np.where(after >= TRANSMITTANCE_MIN, alpha, 0.0)
    after = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((len(u), 1)), after[:, :-1]], axis=1)
    final = after[:, -1]
    color = np.clip(projection.color[members], 0.0, 1.0)
    pixels = (trans * alpha) @ color + final[:, None] * background
    return _TileForward(dx, dy, gauss, raw, alpha, trans, final, color, pixels)


def render(splats: Splats, view: CameraView, cfg: Optional[RenderConfig] = None) -> Tuple[RenderedImage, CompositingRecord]:
    """
    Alpha-composite the splats front to back into an H x W x 3 image.
    """
    cfg = cfg or RenderConfig()
    k = view.intrinsics
    background = cfg.background
    pixels = np.empty((k.height, k.width, 3))
    pixels[:] = background
    alpha = np.zeros((k.height, k.width))
    projection = project_gaussians(splats, view)
    tiles = _bin_tiles(projection, k, cfg.tile_size)

    def work(item: Tuple[int, np.ndarray]) -> Tuple[slice, slice, np.ndarray, np.ndarray]:
        tile, members = item
        rows, cols, u, v = _tile_pixels(tile, k, cfg.tile_size)
        fwd = _tile_forward(projection, members, u, v, background)
        if cfg.debug:
            weights = (fwd.trans * fwd.alpha).sum(axis=1)
            assert np.all(weights <= 1.0 + 1e-9), "composited weights exceed one"  # noqa: S101
            assert np.all((fwd.trans >= 0.0) & (fwd.trans <= 1.0)), "transmittance out of range"  # noqa: S101
        return rows, cols, fwd.pixels, 1.0 - fwd.final

    for rows, cols, block, acc in parallel_map(work, tiles, cfg.threads):
        h, w = rows.stop - rows.start, cols.stop - cols.start
        pixels[rows, cols] = block.reshape(h, w, 3)
        alpha[rows, cols] = acc.reshape(h, w)

    owner_version = getattr(splats.owner, "version", None)
    record = CompositingRecord(splats, view, cfg, projection, tiles, owner_version)
    return RenderedImage(pixels, alpha), record


def _tile_backward(
    projection: SplatProjection,
    members: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    background: np.ndarray,
    grad_pixels: np.ndarray,
    grad_alpha: Optional[np.ndarray],
) -> Tuple[np.ndarray, ...]:
    fwd = _tile_forward(projection, members, u, v, background)
    weights = fwd.trans * fwd.alpha
    d_color = weights.T @ grad_pixels
    d_color *= ((projection.color[members] >= 0.0) & (projection.color[members] <= 1.0)).astype(np.float64)

    shade = grad_pixels @ fwd.color.T
    contrib = weights * shade
    behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
    tail = fwd.final * (grad_pixels @ background)
    if grad_alpha is not None:
        tail = tail - grad_alpha * fwd.final
    d_alpha = fwd.trans * shade - (behind + tail[:, None]) / (1.0 - fwd.alpha)
    live = (fwd.alpha > 0.0) & (fwd.raw < ALPHA_MAX)
    d_alpha = np.where(live, d_alpha, 0.0)

    d_opacity = (d_alpha * fwd.gauss).sum(axis=0)
    d_power = d_alpha * fwd.alpha
    conic = projection.conic[members]
    d_mean_x = (d_power * (conic[:, 0] * fwd.dx + conic[:, 1] * fwd.dy)).sum(axis=0)
    d_mean_y = (d_power * (conic[:, 1] * fwd.dx + conic[:, 2] * fwd.dy)).sum(axis=0)
    d_conic_a = (d_power * (-0.5 * fwd.dx * fwd.dx)).sum(axis=0)
    d_conic_b = (d_power * (-fwd.dx * fwd.dy)).sum(axis=0)
    d_conic_c = (d_power * (-0.5 * fwd.dy * fwd.dy)).sum(axis=0)
    return d_color, d_opacity, d_mean_x, d_mean_y, d_conic_a, d_conic_b, d_conic_c


def _quaternion_backward(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """
    Gradient w.r.t. a unit quaternion (w, x, y, z) given dL/dR for R(q).
    """
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty_like(q)
    out[:, 0] = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    out[:, 1] = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
        - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    out[:, 2] = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
        + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    out[:, 3] = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
        - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return out


def render_backward(
    record: CompositingRecord, grad_pixels: np.ndarray, grad_alpha: Optional[np.ndarray] = None
) -> SplatGradients:
    """
    Exact gradients of a loss with respect to every primitive attribute, given
    the loss gradient with respect to the rendered image (and optionally the
    accumulated alpha).
    """
    splats = record.splats
    if record.owner_version is not None and getattr(splats.owner, "version", None) != record.owner_version:
        msg = "the scene changed after this image was rendered"
        raise StaleRecord(msg)
    k = record.view.intrinsics
    grad_pixels = np.asarray(grad_pixels, dtype=np.float64)
    if grad_pixels.shape != (k.height, k.width, 3):
        msg = f"image gradient has shape {grad_pixels.shape}, expected {(k.height, k.width, 3)}"
        raise ShapeMismatch(msg)
    if grad_alpha is not None:
        grad_alpha = np.asarray(grad_alpha, dtype=np.float64)
        if grad_alpha.shape != (k.height, k.width):
            msg = f"alpha gradient has shape {grad_alpha.shape}, expected {(k.height, k.width)}"
            raise ShapeMismatch(msg)

    out = SplatGradients.zeros(len(splats))
    proj = record.projection
    n = len(proj)
    if n == 0:
        return out
    out.visible[proj.rows] = True
    background = record.cfg.background
    tile_size = record.cfg.tile_size

    def work(item: Tuple[int, np.ndarray]) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
        tile, members = item
        rows, cols, u, v = _tile_pixels(tile, k, tile_size)
        g = grad_pixels[rows, cols].reshape(-1, 3)
        ga = None if grad_alpha is None else grad_alpha[rows, cols].reshape(-1)
        return members, _tile_backward(proj, members, u, v, background, g, ga)

    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)
    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    for members, parts in parallel_map(work, record.tiles, record.cfg.threads):
        dc, do, dmx, dmy, da, db, dcc = parts
        d_color[members] += dc
        d_opacity[members] += do
        d_mean[members, 0] += dmx
        d_mean[members, 1] += dmy
        d_conic[members, 0] += da
        d_conic[members, 1] += db
        d_conic[members, 2] += dcc

    # conic Q = inverse(cov2d); the off-diagonal entry appears twice in the quadratic form
    q = np.stack(
        [np.stack([proj.conic[:, 0], proj.conic[:, 1]], -1), np.stack([proj.conic[:, 1], proj.conic[:, 2]], -1)], 1
    )
    g_q = np.stack(
        [np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1), np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1)], 1
    )
    g_cov2d = -q @ g_q @ q

    w_rot, _ = _world_to_camera(record.view)
    mw = proj.jacobian @ w_rot
    g_cov3d = np.swapaxes(mw, 1, 2) @ g_cov2d @ mw
    g_mw = 2.0 * g_cov2d @ mw @ proj.cov3d
    g_jac = g_mw @ w_rot.T

    x, y, z = proj.camera_points[:, 0], proj.camera_points[:, 1], proj.camera_points[:, 2]
    fx, fy = k.fx, k.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = d_mean[:, 0] * fx / z + g_jac[:, 0, 2] * (-fx / (z * z))
    g_t[:, 1] = d_mean[:, 1] * fy / z + g_jac[:, 1, 2] * (-fy / (z * z))
    g_t[:, 2] = (
        -d_mean[:, 0] * fx * x / (z * z)
        - d_mean[:, 1] * fy * y / (z * z)
        + g_jac[:, 0, 0] * (-fx / (z * z))
        + g_jac[:, 0, 2] * (2.0 * fx * x / z**3)
        + g_jac[:, 1, 1] * (-fy / (z * z))
        + g_jac[:, 1, 2] * (2.0 * fy * y / z**3)
    )
    d_position = g_t @ w_rot

    m = proj.rotation_matrix * proj.scale[:, None, :]
    g_m = 2.0 * g_cov3d @ m
    d_log_scale = (g_m * proj.rotation_matrix).sum(axis=1) * proj.scale
    g_rot = g_m * proj.scale[:, None, :]
    g_unit = _quaternion_backward(proj.unit_rotation, g_rot)
    radial = (g_unit * proj.unit_rotation).sum(axis=1, keepdims=True)
    d_rotation = (g_unit - proj.unit_rotation * radial) / proj.quat_norm[:, None]

    rows = proj.rows
    out.position[rows] = d_position
    out.rotation[rows] = d_rotation
    out.log_scale[rows] = d_log_scale
    out.opacity[rows] = d_opacity
    out.color[rows] = d_color
    out.mean2d_norm[rows] = np.hypot(d_mean[:, 0] * 0.5 * k.width, d_mean[:, 1] * 0.5 * k.height)
    return out


@dataclass
class RenderResult:
    """
    The output of `render_op`: a graph node for the image and the record.

    `gradients` holds the most recent SplatGradients produced by a backward
    pass through `image`, for densification statistics.
    """

    image: Tensor
    rendered: RenderedImage
    record: CompositingRecord
    gradients: Optional[SplatGradients] = None


def render_op(
    position: Tensor,
    rotation: Tensor,
    log_scale: Tensor,
    opacity: Tensor,
    color: Tensor,
    view: CameraView,
    cfg: Optional[RenderConfig] = None,
    owner: Any = None,
) -> RenderResult:
    """
    Render as a differentiable graph operation over its five attribute inputs.
    """
    splats = Splats(position.value, rotation.value, log_scale.value, opacity.value, color.value, owner)
    rendered, record = render(splats, view, cfg)

    def backward(g: np.ndarray) -> List[Optional[np.ndarray]]:
        grads = render_backward(record, g)
        result.gradients = grads
        return [
            grads.position,
            grads.rotation,
            grads.log_scale,
            grads.opacity.reshape(opacity.shape),
            grads.color,
        ]

    image = custom(rendered.pixels, (position, rotation, log_scale, opacity, color), backward)
    result = RenderResult(image, rendered, record)
    return result
