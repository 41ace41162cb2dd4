"""Episode recording: a self-describing binary container with bit-exact
round trips.

Layout of an episode file (little-endian throughout):

    magic "CPAK" | version u16 | header_len u32 | header JSON (utf-8)
    | records: N x stride float32 | crc32 u32 over all preceding bytes

The header carries the task metadata and a named field layout, so readers
never recompute offsets. Images go to a "CPIM" sidecar of raw uint8
rasters (same framing: magic, version, JSON header, per-camera tracks,
crc32). Records hold frame indices into those tracks.

Per-arm record fields: observation (EE position, quaternion, wrench,
gripper, active stiffness as a Cholesky 12-vector, joint positions) and
action (target position, axis-angle, gripper command, commanded stiffness
as a Cholesky 12-vector) — 19 action numbers per arm.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import cholesky_encode, quat_to_rotvec

MAGIC = b"CPAK"
IMAGE_MAGIC = b"CPIM"
FORMAT_VERSION = 1
ACTION_PER_ARM = 19                     # pos 3 + axis-angle 3 + grip 1 + chol 12
PROPRIO_PER_ARM = 8                     # pos 3 + quat 4 + grip 1
EPS_STD = 1e-2


class EpisodeError(ValueError):
    pass


def _build_layout(arm_ids, nq, cameras):
    """Named (offset, size) spans into one record, in write order."""
    layout = {}
    cursor = 0

    def put(name, size):
        nonlocal cursor
        layout[name] = (cursor, size)
        cursor += size

    put("t", 1)
    put("flag", 1)
    for arm in arm_ids:
        put(f"{arm}/obs_pos", 3)
        put(f"{arm}/obs_quat", 4)
        put(f"{arm}/obs_wrench", 6)
        put(f"{arm}/obs_gripper", 1)
        put(f"{arm}/obs_chol", 12)
        put(f"{arm}/obs_q", nq[arm])
    for arm in arm_ids:
        put(f"{arm}/act_pos", 3)
        put(f"{arm}/act_rotvec", 3)
        put(f"{arm}/act_gripper", 1)
        put(f"{arm}/act_chol", 12)
    if cameras:
        put("frames", len(cameras))
    return layout, cursor


def _frame(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True).encode()
    body = magic + struct.pack("<HI", FORMAT_VERSION, len(head)) + head
    body += payload
    return body + struct.pack("<I", zlib.crc32(body))


def _unframe(blob: bytes, magic: bytes) -> tuple[dict, bytes]:
    if len(blob) < 14 or blob[:4] != magic:
        raise EpisodeError(f"not a {magic.decode()} file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise EpisodeError("checksum mismatch: file is corrupt or truncated")
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise EpisodeError(f"unsupported format version {version}")
    header = json.loads(blob[10:10 + hlen].decode())
    return header, blob[10 + hlen:-4]


class EpisodeWriter:
    """Buffers steps in memory and writes the file pair on finalize, so a
    crashed run leaves no half-written episodes behind."""

    def __init__(self, path, task: str, seed: int, arm_ids, nq: dict,
                 cameras=(), record_rate: float = 20.0,
                 mode_pairs: dict | None = None, image_size: int = 64):
        self.path = Path(path)
        self.arm_ids = list(arm_ids)
        self.cameras = list(cameras)
        self.layout, self.stride = _build_layout(self.arm_ids, nq,
                                                 self.cameras)
        self.meta = {
            "task": task, "seed": seed, "record_rate": record_rate,
            "arms": [{"id": a, "nq": int(nq[a])} for a in self.arm_ids],
            "cameras": self.cameras, "image_size": image_size,
            "mode_pairs": mode_pairs or {},
        }
        self._rows: list[np.ndarray] = []
        self._tracks: dict[str, list[np.ndarray]] = {c: [] for c in
                                                     self.cameras}
        self._finalized = False

    def record_step(self, obs, actions: dict, images=None,
                    flagged: bool = False) -> None:
        """One step: `obs` is a runtime Observation, `actions` maps arm id
        to the ControllerTarget commanded at this instant."""
        if self._finalized:
            raise EpisodeError("episode already finalized")
        row = np.zeros(self.stride, dtype=np.float32)

        def put(name, value):
            off, size = self.layout[name]
            row[off:off + size] = value

        put("t", obs.time)
        put("flag", 1.0 if flagged else 0.0)
        for arm in self.arm_ids:
            a = obs.arms[arm]
            put(f"{arm}/obs_pos", a.ee_pose.position)
            put(f"{arm}/obs_quat", a.ee_pose.orientation)
            put(f"{arm}/obs_wrench", a.wrench.as_array())
            put(f"{arm}/obs_gripper", a.gripper)
            put(f"{arm}/obs_chol", cholesky_encode(a.stiffness))
            put(f"{arm}/obs_q", a.q)
        for arm in self.arm_ids:
            tgt = actions[arm]
            put(f"{arm}/act_pos", tgt.pose.position)
            put(f"{arm}/act_rotvec", quat_to_rotvec(tgt.pose.orientation))
            grip = tgt.gripper
            put(f"{arm}/act_gripper",
                obs.arms[arm].gripper if grip is None else grip)
            put(f"{arm}/act_chol", cholesky_encode(tgt.stiffness))
        if self.cameras:
            if images is None or len(images) != len(self.cameras):
                raise EpisodeError("need one image per configured camera")
            for cam, img in zip(self.cameras, images):
                self._tracks[cam].append(np.ascontiguousarray(
                    img, dtype=np.uint8))
            put("frames", [len(self._tracks[c]) - 1 for c in self.cameras])
        self._rows.append(row)

    def _header(self, success: bool, aborted: bool) -> dict:
        return dict(self.meta, success=bool(success), aborted=bool(aborted),
                    records=len(self._rows), stride=self.stride,
                    layout={k: list(v) for k, v in self.layout.items()})

    def _payload(self) -> np.ndarray:
        return (np.vstack(self._rows) if self._rows
                else np.zeros((0, self.stride), dtype=np.float32))

    def snapshot(self, success: bool, aborted: bool = False) -> "Episode":
        """The episode as recorded so far, without touching disk.
        Image tracks are not carried over."""
        return Episode(self._header(success, aborted), self._payload().copy())

    def finalize(self, success: bool, aborted: bool = False) -> Path:
        if self._finalized:
            raise EpisodeError("episode already finalized")
        self._finalized = True
        header = self._header(success, aborted)
        payload = self._payload()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(_frame(MAGIC, header, payload.tobytes()))
        if self.cameras:
            counts = {c: len(t) for c, t in self._tracks.items()}
            img_header = {"cameras": self.cameras, "frames": counts,
                          "size": self.meta["image_size"]}
            blob = b"".join(np.concatenate(self._tracks[c]).tobytes()
                            if self._tracks[c] else b""
                            for c in self.cameras)
            self.image_path.write_bytes(_frame(IMAGE_MAGIC, img_header, blob))
        return self.path

    @property
    def image_path(self) -> Path:
        return self.path.with_suffix(".cpim")


class Episode:
    """Read-only view of one recorded episode."""

    def __init__(self, header: dict, data: np.ndarray, path=None):
        self.header = header
        self.data = data
        self.path = Path(path) if path else None
        self.layout = {k: tuple(v) for k, v in header["layout"].items()}
        self.arm_ids = [a["id"] for a in header["arms"]]
        self.cameras = list(header["cameras"])
        self._image_tracks = None

    @classmethod
    def load(cls, path) -> "Episode":
        header, payload = _unframe(Path(path).read_bytes(), MAGIC)
        data = np.frombuffer(payload, dtype="<f4").reshape(
            header["records"], header["stride"]).copy()
        return cls(header, data, path)

    def __len__(self) -> int:
        return len(self.data)

    def field(self, name: str) -> np.ndarray:
        off, size = self.layout[name]
        return self.data[:, off:off + size]

    @property
    def t(self) -> np.ndarray:
        return self.field("t")[:, 0]

    @property
    def flags(self) -> np.ndarray:
        return self.field("flag")[:, 0]

    @property
    def success(self) -> bool:
        return bool(self.header["success"])

    def actions(self) -> np.ndarray:
        """(N, 19 * arms): per arm [pos, axis-angle, gripper, cholesky]."""
        cols = [self.field(f"{a}/{f}") for a in self.arm_ids
                for f in ("act_pos", "act_rotvec", "act_gripper",
                          "act_chol")]
        return np.concatenate(cols, axis=1)

    def proprio(self) -> np.ndarray:
        """(N, 8 * arms): per arm [pos, quat, gripper]."""
        cols = [self.field(f"{a}/{f}") for a in self.arm_ids
                for f in ("obs_pos", "obs_quat", "obs_gripper")]
        return np.concatenate(cols, axis=1)

    def ft(self) -> np.ndarray:
        """(N, 6 * arms): measured wrenches."""
        return np.concatenate([self.field(f"{a}/obs_wrench")
                               for a in self.arm_ids], axis=1)

    def joint_positions(self, arm_id: str) -> np.ndarray:
        return self.field(f"{arm_id}/obs_q")

    def frame_indices(self) -> np.ndarray:
        if not self.cameras:
            return np.zeros((len(self), 0), dtype=int)
        return self.field("frames").astype(int)

    def images(self, camera: str) -> np.ndarray:
        """(frames, size, size, 3) uint8 track for one camera."""
        if self._image_tracks is None:
            if self.path is None:
                raise EpisodeError("episode has no image sidecar")
            header, blob = _unframe(
                self.path.with_suffix(".cpim").read_bytes(), IMAGE_MAGIC)
            size = header["size"]
            stride = size * size * 3
            self._image_tracks = {}
            offset = 0
            for cam in header["cameras"]:
                count = header["frames"][cam]
                raw = np.frombuffer(blob, dtype=np.uint8,
                                    count=count * stride, offset=offset)
                self._image_tracks[cam] = raw.reshape(count, size, size, 3)
                offset += count * stride
        return self._image_tracks[camera]

    def step_images(self, step: int) -> list[np.ndarray]:
        refs = self.frame_indices()[step]
        return [self.images(cam)[idx]
                for cam, idx in zip(self.cameras, refs)]


def dump_lines(episode: Episode):
    """Line-delimited text rendering for inspection tooling."""
    yield json.dumps({k: v for k, v in episode.header.items()
                      if k != "layout"}, sort_keys=True)
    for i in range(len(episode)):
        row = {"step": i, "t": round(float(episode.t[i]), 6)}
        for name in episode.layout:
            if name in ("t", "flag"):
                continue
            row[name] = [round(float(x), 6)
                         for x in episode.field(name)[i]]
        yield json.dumps(row, sort_keys=True)


@dataclass
class NormStats:
    """Per-dimension standardization with a floored scale, so constant
    dimensions stay finite and near-constant ones don't explode."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_data(cls, x: np.ndarray) -> "NormStats":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or len(x) == 0:
            raise EpisodeError("norm stats need a non-empty (N, D) array")
        return cls(mean=x.mean(axis=0),
                   std=np.maximum(x.std(axis=0), EPS_STD))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.std

    def unnormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.std + self.mean

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(),
                           "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        raw = json.loads(text)
        return cls(np.array(raw["mean"]), np.array(raw["std"]))


def compute_norm_stats(episodes, stream: str = "actions") -> NormStats:
    """Stack one stream ("actions", "proprio", or "ft") across a dataset."""
    if not episodes:
        raise EpisodeError("empty dataset")
    rows = [getattr(ep, stream)() for ep in episodes]
    return NormStats.from_data(np.concatenate(rows, axis=0))


class ChunkDataset:
    """Training samples: (observation at t, normalized actions t..t+n-1).

    Chunks running past the episode end repeat the last action and mark the
    padding in the mask; honoring the mask reconstructs the exact stream.
    """

    def __init__(self, episodes, chunk: int, action_stats: NormStats,
                 proprio_stats: NormStats | None = None,
                 ft_stats: NormStats | None = None):
        if chunk < 1:
            raise EpisodeError("chunk size must be >= 1")
        self.episodes = list(episodes)
        self.chunk = chunk
        self.action_stats = action_stats
        self.proprio_stats = proprio_stats
        self.ft_stats = ft_stats
        self._index = [(e, i) for e, ep in enumerate(self.episodes)
                       for i in range(len(ep))]
        self._actions = [self.action_stats.normalize(ep.actions())
                         for ep in self.episodes]
        self._proprio = [ep.proprio() if proprio_stats is None
                         else proprio_stats.normalize(ep.proprio())
                         for ep in self.episodes]
        self._ft = [ep.ft() if ft_stats is None
                    else ft_stats.normalize(ep.ft())
                    for ep in self.episodes]

    def __len__(self) -> int:
        return len(self._index)

    def sample(self, idx: int) -> dict:
        ep_idx, step = self._index[idx]
        episode = self.episodes[ep_idx]
        acts = self._actions[ep_idx]
        n = len(acts)
        take = min(self.chunk, n - step)
        chunk = np.empty((self.chunk, acts.shape[1]), dtype=np.float64)
        chunk[:take] = acts[step:step + take]
        chunk[take:] = acts[step + take - 1]
        mask = np.zeros(self.chunk, dtype=bool)
        mask[:take] = True
        return {
            "proprio": self._proprio[ep_idx][step],
            "ft": self._ft[ep_idx][step],
            "actions": chunk,
            "mask": mask,
            "images": episode.step_images(step) if episode.cameras else [],
        }


def load_chunks(episodes, chunk: int, action_stats: NormStats | None = None,
                proprio_stats: NormStats | None = None,
                ft_stats: NormStats | None = None) -> ChunkDataset:
    if action_stats is None:
        action_stats = compute_norm_stats(episodes, "actions")
    return ChunkDataset(episodes, chunk, action_stats, proprio_stats, ft_stats)
