"""Plain-file formats: PFM/PGM rasters, KITTI pose lists, match lists, intrinsics.

A sequence directory holds, for every frame ``i`` (zero-padded to six
digits), ``image_i.pfm`` (authoritative float image), ``image_i.pgm``
(8-bit preview) and ``depth_i.pfm``; plus ``poses.txt`` (camera-to-world,
KITTI layout), ``intrinsics.txt`` and match files
``matches_c_s.txt`` whose ``p`` lies in frame ``c`` and ``p'`` in ``s``.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import MalformedLine
from .geometry import Intrinsics, Pose, compose, invert, pose_to_params
from .objective import SnippetInput
from .sparse import MatchSet

FLOAT_FMT = "%.17g"                                # shortest exact round trip for float64


# -- rasters -----------------------------------------------------------------

def write_pfm(path, data):
    """Float32 PFM, little-endian, rows stored bottom-to-top."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim == 3:
        if a.shape[0] != 3:
            raise ValueError("colour PFM needs exactly 3 channels")
        header, body = "PF", np.moveaxis(a, 0, -1)
    elif a.ndim == 2:
        header, body = "Pf", a
    else:
        raise ValueError(f"cannot store an array of shape {a.shape} as PFM")
    h, w = a.shape[-2:]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(body[::-1]).astype("<f4").tobytes())


def _tokens(f, n):
    out = []
    while len(out) < n:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.split(b"#")[0]
        out.extend(line.split())
    return out


def read_pfm(path):
    """Array ``(H, W)`` or ``(3, H, W)`` as float64."""
    with open(path, "rb") as f:
        kind, w, h, scale = _tokens(f, 4)
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file")
        w, h, scale = int(w), int(h), float(scale)
        nc = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * nc:
        raise ValueError(f"{path}: expected {w * h * nc} samples, found {data.size}")
    a = data.reshape(h, w, nc)[::-1].astype(np.float64)
    return np.moveaxis(a, -1, 0) if nc == 3 else a[..., 0]


def write_pgm(path, img):
    """8-bit binary PGM of an image in [0, 1] (channels averaged)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(0)
    q = np.clip(np.round(a * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        kind, w, h, maxval = _tokens(f, 4)
        if kind != b"P5":
            raise ValueError(f"{path}: only binary PGM (P5) is supported")
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = np.uint8 if maxval < 256 else ">u2"
        data = np.frombuffer(f.read(), dtype=dtype)
    return data[: w * h].reshape(h, w).astype(np.float64) / maxval


# -- poses -------------------------------------------------------------------

def format_pose_line(pose):
    return " ".join(FLOAT_FMT % v for v in pose.matrix()[:3].ravel())


def parse_pose_line(line, lineno=1):
    parts = line.split()
    if len(parts) != 12:
        raise MalformedLine(lineno, f"expected 12 numbers, found {len(parts)}")
    try:
        vals = np.array([float(p) for p in parts])
    except ValueError as e:
        raise MalformedLine(lineno, str(e)) from None
    if not np.all(np.isfinite(vals)):
        raise MalformedLine(lineno, "non-finite value")
    m = vals.reshape(3, 4)
    r = m[:, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) <= 0:
        raise MalformedLine(lineno, "rotation block is not a rotation")
    return Pose(r, m[:, 3])


def write_poses(path, poses):
    """One ``3x4`` row-major ``[R|t]`` per line, KITTI odometry layout."""
    with open(path, "w") as f:
        for p in poses:
            f.write(format_pose_line(p) + "\n")


def read_poses(path):
    poses = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                poses.append(parse_pose_line(line, n))
    return poses


def read_snippet_groups(path, size=3):
    """Poses of a file holding consecutive ``size``-line snippets."""
    poses = read_poses(path)
    if len(poses) % size:
        raise MalformedLine(len(poses), f"{len(poses)} poses do not split into {size}-frame snippets")
    return [poses[i:i + size] for i in range(0, len(poses), size)]


def pose_from_euler(translation, angles):
    """Pose from a translation and ``(rx, ry, rz)`` Euler angles, ``R = Rx Ry Rz``."""
    r = Rotation.from_euler("XYZ", np.asarray(angles, dtype=np.float64)).as_matrix()
    return Pose(r, translation)


def params_from_euler(translation, angles):
    return pose_to_params(pose_from_euler(translation, angles)).as_array()


# -- matches and intrinsics --------------------------------------------------

_HEADER = re.compile(r"#\s*frames\s+(-?\d+)\s+(-?\d+)\s*$")


def write_matches(path, frame_a, frame_b, pairs):
    with open(path, "w") as f:
        f.write(f"# frames {frame_a} {frame_b}\n")
        for row in np.asarray(pairs, dtype=np.float64).reshape(-1, 4):
            f.write(" ".join(FLOAT_FMT % v for v in row) + "\n")


def read_matches(path, width=None, height=None):
    """``(frame_a, frame_b, pairs (N, 4))``; bounds are checked when given."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not _HEADER.match(lines[0].strip()):
        raise MalformedLine(1, "expected header '# frames A B'")
    a, b = (int(g) for g in _HEADER.match(lines[0].strip()).groups())
    rows = []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MalformedLine(n, f"expected 4 numbers, found {len(parts)}")
        try:
            row = [float(p) for p in parts]
        except ValueError as e:
            raise MalformedLine(n, str(e)) from None
        if width is not None and not (0 <= row[0] <= width - 1 and 0 <= row[2] <= width - 1):
            raise MalformedLine(n, "u coordinate outside the image")
        if height is not None and not (0 <= row[1] <= height - 1 and 0 <= row[3] <= height - 1):
            raise MalformedLine(n, "v coordinate outside the image")
        rows.append(row)
    return a, b, np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_intrinsics(path, k):
    with open(path, "w") as f:
        f.write("# fx fy cx cy\n")
        f.write(" ".join(FLOAT_FMT % v for v in (k.fx, k.fy, k.cx, k.cy)) + "\n")


def read_intrinsics(path):
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise MalformedLine(n, f"expected fx fy cx cy, found {len(parts)} values")
            try:
                return Intrinsics(*(float(p) for p in parts))
            except ValueError as e:
                raise MalformedLine(n, str(e)) from None
    raise MalformedLine(0, "no intrinsics found")


# -- sequence directories ----------------------------------------------------

def frame_name(kind, i, ext):
    return f"{kind}_{i:06d}.{ext}"


def match_name(c, s):
    return f"matches_{c:06d}_{s:06d}.txt"


def write_sequence(directory, images, depths, poses, intrinsics, matches=()):
    """Write a sequence; ``matches`` is an iterable of ``(c, s, pairs)``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (img, dep) in enumerate(zip(images, depths, strict=True)):
        write_pfm(d / frame_name("image", i, "pfm"), img)
        write_pgm(d / frame_name("image", i, "pgm"), img)
        write_pfm(d / frame_name("depth", i, "pfm"), dep)
    write_poses(d / "poses.txt", poses)
    write_intrinsics(d / "intrinsics.txt", intrinsics)
    for c, s, pairs in matches:
        write_matches(d / match_name(c, s), c, s, pairs)


def sequence_length(directory):
    return len(list(Path(directory).glob("image_*.pfm")))


def load_snippet(directory, center=1, refine=False, mask_config=None):
    """Snippet around frame ``center`` of a sequence directory.

    Relative poses are derived from the camera-to-world ``poses.txt``.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no sequence directory at {d}")
    idx = (center - 1, center, center + 1)
    for i in idx:
        for kind in ("image", "depth"):
            if not (d / frame_name(kind, i, "pfm")).exists():
                raise FileNotFoundError(f"missing {frame_name(kind, i, 'pfm')} in {d}")
    imgs = [read_pfm(d / frame_name("image", i, "pfm")) for i in idx]
    imgs = np.stack([im if im.ndim == 3 else im[None] for im in imgs])
    depths = np.stack([read_pfm(d / frame_name("depth", i, "pfm")) for i in idx])
    poses = read_poses(d / "poses.txt")
    if len(poses) <= idx[-1]:
        raise ValueError(f"poses.txt has {len(poses)} entries; frame {idx[-1]} needed")
    params = np.stack([pose_to_params(compose(invert(poses[s]), poses[center])).as_array()
                       for s in (idx[0], idx[2])])
    k = read_intrinsics(d / "intrinsics.txt")
    h, w = depths.shape[-2:]
    sets = []
    for s in (idx[0], idx[2]):
        path = d / match_name(center, s)
        if path.exists():
            a, b, pairs = read_matches(path, w, h)
            if (a, b) != (center, s):
                raise ValueError(f"{path.name} declares frames {a} {b}, expected {center} {s}")
            sets.append(MatchSet(pairs))
        else:
            sets.append(MatchSet(np.zeros((0, 4))))
    extra = {} if mask_config is None else {"mask_config": mask_config}
    return SnippetInput(imgs, depths, params, tuple(sets), k, refine=refine, **extra)
