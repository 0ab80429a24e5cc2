"""BVH reading and writing.

Rotations are stored internally as quaternions. On output every joint uses
``Zrotation Xrotation Yrotation`` channel order; joints that had position
channels on input get ``Xposition Yposition Zposition`` first. Joint names,
offsets, topology and end sites are written back unchanged.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .clip import MotionClip, Skeleton


class BVHError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_ROT = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


def euler_to_quat(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler angles (degrees, BVH channel order) to ``(w, x, y, z)``."""
    shape = angles_deg.shape[:-1]
    xyzw = Rotation.from_euler(order.upper(), angles_deg.reshape(-1, 3), degrees=True).as_quat()
    return np.roll(xyzw, 1, axis=-1).reshape(shape + (4,))


def quat_to_euler(q: np.ndarray, order: str = "ZXY") -> np.ndarray:
    shape = q.shape[:-1]
    rot = Rotation.from_quat(np.roll(q.reshape(-1, 4), -1, axis=-1))
    return rot.as_euler(order.upper(), degrees=True).reshape(shape + (3,))


def parse_bvh(text: str, *, hips: str = "", spine: str = "", head: str = "",
              style: str = "", source_id: str = "", scale: float = 1.0) -> MotionClip:
    """Parse BVH text; ``scale`` converts file length units to meters (0.01 for cm)."""
    lines = text.splitlines()
    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    channels: list[list[str]] = []
    end_sites: dict[int, list[float]] = {}
    stack: list[int] = []
    pending: int | None = None  # joint index awaiting its "{"
    in_end = False
    i = 0

    def tokens(k):
        return lines[k].split()

    while i < len(lines) and not lines[i].strip():
        i += 1
    if i >= len(lines) or lines[i].strip() != "HIERARCHY":
        raise BVHError("expected HIERARCHY", i + 1)
    i += 1
    while i < len(lines):
        tok = tokens(i)
        lineno = i + 1
        i += 1
        if not tok:
            continue
        key = tok[0]
        if key in ("ROOT", "JOINT"):
            if (key == "ROOT") != (not stack and not names):
                raise BVHError(f"unexpected {key}", lineno)
            if len(tok) < 2:
                raise BVHError(f"{key} without a name", lineno)
            names.append(" ".join(tok[1:]))
            parents.append(stack[-1] if stack else -1)
            offsets.append([0.0, 0.0, 0.0])
            channels.append([])
            pending = len(names) - 1
        elif key == "End":
            if not stack:
                raise BVHError("End Site outside a joint", lineno)
            in_end = True
            pending = None
        elif key == "{":
            if in_end:
                continue
            if pending is None:
                raise BVHError("unexpected '{'", lineno)
            stack.append(pending)
            pending = None
        elif key == "}":
            if in_end:
                in_end = False
                continue
            if not stack:
                raise BVHError("unbalanced '}'", lineno)
            stack.pop()
        elif key == "OFFSET":
            try:
                vals = [float(v) for v in tok[1:4]]
            except ValueError:
                raise BVHError("malformed OFFSET", lineno) from None
            if len(vals) != 3:
                raise BVHError("OFFSET needs 3 values", lineno)
            if in_end:
                end_sites[stack[-1]] = vals
            elif stack:
                offsets[stack[-1]] = vals
            else:
                raise BVHError("OFFSET outside a joint", lineno)
        elif key == "CHANNELS":
            if not stack:
                raise BVHError("CHANNELS outside a joint", lineno)
            try:
                n = int(tok[1])
            except (IndexError, ValueError):
                raise BVHError("malformed CHANNELS", lineno) from None
            chans = tok[2:]
            if len(chans) != n:
                raise BVHError(f"CHANNELS declares {n} but lists {len(chans)}", lineno)
            for c in chans:
                if c not in _ROT and c not in _POS:
                    raise BVHError(f"unknown channel {c!r}", lineno)
            channels[stack[-1]] = chans
        elif key == "MOTION":
            break
        else:
            raise BVHError(f"unexpected token {key!r}", lineno)
    else:
        raise BVHError("missing MOTION section", len(lines))
    if stack or not names:
        raise BVHError("unterminated hierarchy", i)

    def header_value(prefix):
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or not lines[i].strip().startswith(prefix):
            raise BVHError(f"expected '{prefix}'", i + 1)
        try:
            value = lines[i].split(":", 1)[1].strip()
        except IndexError:
            raise BVHError(f"malformed '{prefix}'", i + 1) from None
        i += 1
        return value

    try:
        n_frames = int(header_value("Frames"))
        frame_time = float(header_value("Frame Time"))
    except ValueError as e:
        if isinstance(e, BVHError):
            raise
        raise BVHError("malformed MOTION header", i) from None
    if frame_time <= 0:
        raise BVHError("Frame Time must be positive", i)

    width = sum(len(c) for c in channels)
    rows = []
    for k in range(i, len(lines)):
        tok = lines[k].split()
        if not tok:
            continue
        if len(tok) != width:
            raise BVHError(f"expected {width} channel values, found {len(tok)}", k + 1)
        try:
            rows.append([float(v) for v in tok])
        except ValueError:
            raise BVHError("non-numeric channel value", k + 1) from None
    if len(rows) != n_frames:
        raise BVHError(f"frame count mismatch: header declares {n_frames}, found {len(rows)}")
    data = np.asarray(rows, dtype=float).reshape(n_frames, width)

    J = len(names)
    positions = np.broadcast_to(np.asarray(offsets, dtype=float), (n_frames, J, 3)).copy()
    rotations = np.zeros((n_frames, J, 4))
    rotations[..., 0] = 1.0
    col = 0
    for j, chans in enumerate(channels):
        rot_cols, order = [], ""
        for c in chans:
            if c in _POS:
                positions[:, j, _POS[c]] = data[:, col]
            else:
                rot_cols.append(col)
                order += _ROT[c]
            col += 1
        if rot_cols:
            if len(rot_cols) != 3:
                raise BVHError(f"joint {names[j]!r} needs 3 rotation channels, has {len(rot_cols)}")
            rotations[:, j] = euler_to_quat(data[:, rot_cols], order)

    positions *= scale
    fps = 1.0 / frame_time
    if abs(fps - round(fps)) < 1e-2:
        fps = float(round(fps))
    skeleton = Skeleton(
        names=names, parents=np.asarray(parents), offsets=np.asarray(offsets) * scale,
        hips=hips, spine=spine, head=head,
        has_position=[any(c in _POS for c in ch) for ch in channels],
        end_sites={k: np.asarray(v) * scale for k, v in end_sites.items()},
    )
    return MotionClip(skeleton, positions, rotations, fps=fps, style=style, source_id=source_id)


def write_bvh(clip: MotionClip, scale: float = 1.0) -> str:
    """Serialize ``clip``; lengths are divided by ``scale`` (the parse-time factor)."""
    skel = clip.skeleton
    children: dict[int, list[int]] = {j: [] for j in range(skel.num_joints)}
    for j, p in enumerate(skel.parents):
        if p >= 0:
            children[int(p)].append(j)
    out = ["HIERARCHY"]
    order: list[int] = []

    def fmt(v):
        return " ".join(f"{x:.6f}" for x in v)

    def emit(j, depth):
        pad = "\t" * depth
        order.append(j)
        out.append(f"{pad}{'ROOT' if j == 0 else 'JOINT'} {skel.names[j]}")
        out.append(f"{pad}{{")
        out.append(f"{pad}\tOFFSET {fmt(skel.offsets[j] / scale)}")
        if skel.has_position[j]:
            out.append(f"{pad}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation")
        else:
            out.append(f"{pad}\tCHANNELS 3 Zrotation Xrotation Yrotation")
        for c in children[j]:
            emit(c, depth + 1)
        if j in skel.end_sites:
            out.append(f"{pad}\tEnd Site")
            out.append(f"{pad}\t{{")
            out.append(f"{pad}\t\tOFFSET {fmt(skel.end_sites[j] / scale)}")
            out.append(f"{pad}\t}}")
        out.append(f"{pad}}}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.num_frames}")
    out.append(f"Frame Time: {1.0 / clip.fps:.8f}")
    euler = quat_to_euler(clip.rotations, "ZXY")
    cols = []
    # channel columns follow hierarchy (depth-first) order
    for j in order:
        if skel.has_position[j]:
            cols.append(clip.positions[:, j] / scale)
        cols.append(euler[:, j])
    frames = np.concatenate(cols, axis=1)
    out.extend(fmt(row) for row in frames)
    return "\n".join(out) + "\n"


def read_bvh(path, **kwargs) -> MotionClip:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    kwargs.setdefault("source_id", str(path))
    return parse_bvh(text, **kwargs)
