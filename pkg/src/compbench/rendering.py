"""Small orthographic rasters for policy image input.

Painter's-algorithm rendering onto a fixed-size RGB grid: primitives
(surfaces, mark cells, bodies, bore mouths, arm links) are projected onto a
camera plane, sorted far-to-near, and filled with vectorized half-plane
tests. Deterministic: pixels are a pure function of world state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import quat_rotate, quat_to_matrix
from .world import World

BACKGROUND = np.array([26, 30, 36], dtype=np.uint8)
ARM_COLOR = (96, 102, 114)
MARK_COLOR = (186, 52, 52)
HOLE_COLOR = (22, 22, 26)
IMAGE_SIZE = 64


@dataclass
class Camera:
    """Orthographic camera: `scale` meters of world span the image width.
    Wrist cameras (wrist_arm set) re-anchor to the arm's EE each render."""

    name: str
    center: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    scale: float = 0.5
    wrist_arm: str | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        self.up = np.asarray(self.up, dtype=float)
        self.forward = np.asarray(self.forward, dtype=float)


def _frame_from_forward(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    up_hint = np.array([0.0, 0.0, 1.0])
    if abs(f @ up_hint) > 0.95:
        up_hint = np.array([1.0, 0.0, 0.0])
    right = np.cross(up_hint, f)
    right /= np.linalg.norm(right)
    return right, np.cross(f, right)


def _wrist_view(world: World, cam: Camera) -> Camera:
    arm = world.arms[cam.wrist_arm]
    ee = world.ee_pose(cam.wrist_arm)
    # tool axis: the EE offset direction expressed in the world frame
    axis = np.asarray(arm.chain.ee_offset.position, dtype=float)
    axis = axis / np.linalg.norm(axis)
    f = quat_rotate(ee.orientation, axis)
    right, up = _frame_from_forward(f)
    return Camera(cam.name, ee.position + 0.08 * f, right, up, f,
                  scale=cam.scale)


def _static_camera(center, forward, scale: float) -> Camera:
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    right, up = _frame_from_forward(f)
    return Camera("front", center=center, right=right, up=up, forward=f,
                  scale=scale)


def default_cameras(world: World) -> list[Camera]:
    """One static view plus one wrist camera per arm. The static camera sits
    oblique to the arm plane so links don't silhouette over the workpieces."""
    if len(world.arms) == 1:
        static = _static_camera([0.42, 0.0, 0.25], [1.0, -0.45, -0.55], 0.50)
    else:
        static = _static_camera([0.35, 0.0, 0.42], [-1.0, 0.3, -0.45], 0.70)
    cams = [static]
    for arm_id in world.arms:
        cams.append(Camera(f"wrist_{arm_id}", center=[0, 0, 0],
                           right=[1, 0, 0], up=[0, 1, 0], forward=[0, 0, 1],
                           scale=0.18, wrist_arm=arm_id))
    return cams


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _convex_hull(uv: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain on (M, 2) points."""
    pts = uv[np.lexsort((uv[:, 1], uv[:, 0]))]

    def build(points):
        out = []
        for p in points:
            while len(out) >= 2 and _cross2(out[-1] - out[-2],
                                            p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


class _Raster:
    def __init__(self, cam: Camera, size: int):
        self.cam = cam
        self.size = size
        self.img = np.empty((size, size, 3), dtype=np.uint8)
        self.img[:] = BACKGROUND
        px = cam.scale / size
        axis = (np.arange(size) + 0.5 - size / 2) * px
        self.u = axis[None, :]                      # columns
        self.v = -axis[:, None]                     # rows, +v up
        self.prims: list = []                       # (depth, layer, fn)

    def project(self, pts: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(pts) - self.cam.center
        return np.column_stack([rel @ self.cam.right, rel @ self.cam.up])

    def depth(self, pts: np.ndarray) -> float:
        return float(((np.atleast_2d(pts) - self.cam.center)
                      @ self.cam.forward).min())

    def add_polygon(self, uv: np.ndarray, color, depth: float, layer: int):
        if len(uv) < 3:
            return
        area = 0.5 * float(_cross2(uv[:-1] - uv[0], uv[1:] - uv[0]).sum())
        if abs(area) < 1e-12:
            return
        if area < 0:
            uv = uv[::-1]

        def fill(img, u, v):
            mask = np.ones(img.shape[:2], dtype=bool)
            for a, b in zip(uv, np.roll(uv, -1, axis=0)):
                e = b - a
                mask &= (e[0] * (v - a[1]) - e[1] * (u - a[0])) >= 0
            img[mask] = color

        self.prims.append((depth, layer, fill))

    def add_disc(self, center_uv, r: float, color, depth: float, layer: int):
        cu, cv = center_uv

        def fill(img, u, v):
            img[(u - cu) ** 2 + (v - cv) ** 2 <= r * r] = color

        self.prims.append((depth, layer, fill))

    def add_segment(self, a_uv, b_uv, width: float, color, depth: float,
                    layer: int):
        d = b_uv - a_uv
        n = np.linalg.norm(d)
        if n < 1e-9:
            self.add_disc(a_uv, width / 2, color, depth, layer)
            return
        perp = np.array([-d[1], d[0]]) / n * (width / 2)
        quad = np.array([a_uv + perp, b_uv + perp, b_uv - perp, a_uv - perp])
        self.add_polygon(quad, color, depth, layer)

    def compose(self) -> np.ndarray:
        # surfaces are backdrops (constant painter depth is too coarse for
        # an oblique plane); everything else far to near, layer breaks ties
        back = [p for p in self.prims if p[1] == 0]
        front = [p for p in self.prims if p[1] != 0]
        ordered = (sorted(back, key=lambda p: -p[0])
                   + sorted(front, key=lambda p: (-p[0], p[1])))
        for _, _, fill in ordered:
            fill(self.img, self.u, self.v)
        return self.img


def _draw_surface(r: _Raster, surf) -> None:
    n = surf.normal
    if abs(float(n @ r.cam.forward)) < 0.2:
        return                          # edge-on: invisible at this scale
    t1, t2 = _frame_from_forward(n)
    # anchor the quad at the camera center projected onto the plane
    p0 = r.cam.center - float((r.cam.center - surf.point) @ n) * n
    quad = np.array([p0 + a * t1 + b * t2
                     for a, b in ((-2, -2), (2, -2), (2, 2), (-2, 2))])
    r.add_polygon(r.project(quad), surf.color, r.depth(p0), layer=0)


def _draw_body(r: _Raster, body) -> None:
    pts = body.corner_points()
    hull = _convex_hull(r.project(pts))
    r.add_polygon(hull, body.color, r.depth(pts), layer=2)


def _draw_bore(r: _Raster, fixture) -> None:
    mouth = fixture.mouth_pose()
    rot = quat_to_matrix(mouth.orientation)
    ang = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    if fixture.hole_shape == "round":
        ring = fixture.hole_r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        h = fixture.hole_r
        ring = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    pts = mouth.position + ring @ rot[:, :2].T
    r.add_polygon(r.project(pts), HOLE_COLOR, r.depth(pts) - 1e-4, layer=3)


def _draw_arm(r: _Raster, world: World, arm_id: str) -> None:
    arm = world.arms[arm_id]
    frames = arm.chain.joint_frames(arm.q)
    pts = np.array([f.position for f in frames])
    base = np.asarray(arm.chain.base.position, dtype=float)
    chain_pts = np.vstack([base, pts])
    uv = r.project(chain_pts)
    depth = r.depth(chain_pts)
    for a, b in zip(uv, uv[1:]):
        r.add_segment(a, b, 0.016, ARM_COLOR, depth, layer=4)
    # EE marker encodes gripper opening: red shut, green open
    g = float(arm.gripper)
    color = (int(230 - 170 * g), int(60 + 170 * g), 70)
    r.add_disc(uv[-1], 0.011, color, depth - 1e-4, layer=5)


def render(world: World, camera: Camera, size: int = IMAGE_SIZE) -> np.ndarray:
    """Rasterize one camera view to (size, size, 3) uint8."""
    cam = _wrist_view(world, camera) if camera.wrist_arm else camera
    r = _Raster(cam, size)
    for surf in world.surfaces:
        _draw_surface(r, surf)
    if world.marks is not None:
        half = world.marks.cell_size / 2
        surf = next(s for s in world.surfaces
                    if s.name == world.marks.surface)
        t1, t2 = _frame_from_forward(surf.normal)
        for center, wiped in zip(world.marks.centers, world.marks.wiped):
            if wiped:
                continue
            quad = np.array([center + a * t1 + b * t2
                             for a, b in ((-half, -half), (half, -half),
                                          (half, half), (-half, half))])
            r.add_polygon(r.project(quad), MARK_COLOR,
                          r.depth(center) - 1e-4, layer=1)
    for body in world.bodies.values():
        _draw_body(r, body)
    for fixture in world.fixtures.values():
        _draw_bore(r, fixture)
    for arm_id in world.arms:
        _draw_arm(r, world, arm_id)
    return r.compose()


def render_all(world: World, cameras: list[Camera] | None = None,
               size: int = IMAGE_SIZE) -> list[np.ndarray]:
    return [render(world, cam, size)
            for cam in (cameras or default_cameras(world))]
