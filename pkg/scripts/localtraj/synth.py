"""Synthetic RGB-D sequences with exact ground-truth flow, scene flow and skeletons.

Every joint carries a fronto-parallel textured square that moves rigidly in
metric space. Since the texture is attached to the square, the motion of every
rendered pixel is known in closed form, which makes the rendered flow fields
exact rather than estimated.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import ParameterError, SequenceTooShortError
from .flow import DepthFrame, FlowField2D, FrameGray, SceneFlowField
from .geometry import CameraIntrinsics
from .utils import derive_rng

log = logging.getLogger(__name__)

MOTION_KINDS = ("static", "linear", "depth_linear", "lateral", "radial", "triangle")

PRESETS = ("local_vs_global", "radial", "background")


@dataclass(frozen=True)
class MotionProgram:
    """One additive motion component of a joint.

    Attributes:
        kind: static, linear (constant image-plane velocity), depth_linear (constant
            velocity along the optical axis), lateral (image-plane sinusoid), radial
            (sinusoid along the optical axis) or triangle (image-plane triangle wave).
        direction: Image-plane direction (dx, dy) of linear, lateral and triangle motion.
        amplitude: Pixels at the rest depth (linear: px/frame), meters for radial
            (depth_linear: m/frame).
        period: Frames per cycle.
        phase: Radians.
    """

    kind: str = "static"
    direction: Tuple[float, float] = (1.0, 0.0)
    amplitude: float = 0.0
    period: float = 10.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise ParameterError(f"Unknown motion kind {self.kind!r}, expected one of {MOTION_KINDS}")
        if self.period <= 0:
            raise ParameterError(f"Motion period must be positive, got {self.period}")

    def _unit(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        return d / n if n > 0 else d

    def offset(self, t: int, rest_depth: float, k: CameraIntrinsics) -> np.ndarray:
        """Metric displacement (dX, dY, dZ) from the rest position at frame t."""
        if self.kind == "static":
            return np.zeros(3)
        angle = 2 * math.pi * t / self.period + self.phase
        if self.kind == "depth_linear":
            return np.array([0.0, 0.0, self.amplitude * t])
        if self.kind == "radial":
            return np.array([0.0, 0.0, self.amplitude * math.sin(angle)])
        if self.kind == "linear":
            pixels = self.amplitude * t
        elif self.kind == "lateral":
            pixels = self.amplitude * math.sin(angle)
        else:
            cycle = (t / self.period + self.phase / (2 * math.pi)) % 1.0
            pixels = self.amplitude * (2 * abs(2 * cycle - 1) - 1)
        dx, dy = self._unit() * pixels
        return np.array([dx * rest_depth / k.fx, dy * rest_depth / k.fy, 0.0])


@dataclass(frozen=True)
class JointSpec:
    """A skeleton joint (or, with in_skeleton False, a distractor) and its patch."""

    joint_id: int
    x: float
    y: float
    depth: float = 2.0
    half_size: float = 8.0
    motions: Tuple[MotionProgram, ...] = ()
    in_skeleton: bool = True
    name: str = ""


@dataclass
class SynthSpec:
    width: int = 128
    height: int = 72
    frames: int = 24
    fx: float = 100.0
    fy: float = 100.0
    background_intensity: float = 0.5
    background_depth: float = 3.0
    joints: List[JointSpec] = field(default_factory=list)
    label: str = ""
    subject: int = 0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, (self.width - 1) / 2, (self.height - 1) / 2)

    @property
    def skeleton_joints(self) -> List[JointSpec]:
        return [j for j in self.joints if j.in_skeleton]


@dataclass
class SynthSequence:
    frames: List[FrameGray]
    depths: List[DepthFrame]
    flows: List[FlowField2D]
    scene_flows: List[SceneFlowField]
    skeletons: List[dict]
    label: str
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class _Texture:
    """Sum of sinusoidal gratings over metric patch coordinates."""

    amplitudes: Tuple[float, ...]
    frequencies: Tuple[float, ...]
    angles: Tuple[float, ...]
    phases: Tuple[float, ...]

    @classmethod
    def random(cls, rng: np.random.Generator, components: int = 3) -> "_Texture":
        wavelengths = rng.uniform(0.08, 0.16, components)
        base = rng.uniform(0, math.pi)
        return cls(
            amplitudes=tuple(rng.uniform(0.1, 0.15, components)),
            frequencies=tuple(2 * math.pi / wavelengths),
            angles=tuple(base + math.pi * np.arange(components) / components),
            phases=tuple(rng.uniform(0, 2 * math.pi, components)),
        )

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        value = np.full(a.shape, 0.5)
        for amp, freq, angle, phase in zip(self.amplitudes, self.frequencies, self.angles, self.phases):
            value += amp * np.sin(freq * (a * math.cos(angle) + b * math.sin(angle)) + phase)
        return np.clip(value, 0.0, 1.0)


def _rest_position(joint: JointSpec, k: CameraIntrinsics) -> np.ndarray:
    return np.array(
        [(joint.x - k.cx) * joint.depth / k.fx, (joint.y - k.cy) * joint.depth / k.fy, joint.depth]
    )


def joint_position(joint: JointSpec, t: int, k: CameraIntrinsics) -> np.ndarray:
    position = _rest_position(joint, k)
    for motion in joint.motions:
        position = position + motion.offset(t, joint.depth, k)
    return position


def _render(spec: SynthSpec, centres: np.ndarray, texture: _Texture):
    """Intensity, depth and owning patch index (-1 for background) of one frame."""
    k = spec.intrinsics
    rows, cols = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    intensity = np.full((spec.height, spec.width), spec.background_intensity)
    depth = np.full((spec.height, spec.width), spec.background_depth)
    owner = np.full((spec.height, spec.width), -1)
    for index, (joint, centre) in enumerate(zip(spec.joints, centres)):
        Z = centre[2]
        half = joint.half_size * joint.depth / k.fx
        a = (cols - k.cx) * Z / k.fx - centre[0]
        b = (rows - k.cy) * Z / k.fy - centre[1]
        inside = (np.abs(a) <= half) & (np.abs(b) <= half) & (Z < depth)
        intensity[inside] = texture(a[inside], b[inside])
        depth[inside] = Z
        owner[inside] = index
    return intensity, depth, owner


def _motion_fields(spec: SynthSpec, depth: np.ndarray, owner: np.ndarray, omegas: np.ndarray):
    k = spec.intrinsics
    rows, cols = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    u = np.zeros_like(depth)
    v = np.zeros_like(depth)
    sf = np.zeros(depth.shape + (3,))
    for index, omega in enumerate(omegas):
        mask = owner == index
        if not mask.any():
            continue
        Z = depth[mask]
        X = (cols[mask] - k.cx) * Z / k.fx + omega[0]
        Y = (rows[mask] - k.cy) * Z / k.fy + omega[1]
        Z = Z + omega[2]
        u[mask] = X * k.fx / Z + k.cx - cols[mask]
        v[mask] = Y * k.fy / Z + k.cy - rows[mask]
        sf[mask] = omega
    return FlowField2D(u, v), SceneFlowField(sf[..., 0], sf[..., 1], sf[..., 2])


def synth_sequence(spec: SynthSpec, seed: int, L: int = 15) -> SynthSequence:
    """Render spec.frames frames with exact ground-truth fields; deterministic per seed."""
    if spec.frames <= L:
        raise SequenceTooShortError(f"Need more than {L} frames, spec asks for {spec.frames}")
    if not spec.joints:
        raise ParameterError("A synthetic sequence needs at least one joint")
    k = spec.intrinsics
    texture = _Texture.random(derive_rng(seed, 0))
    centres = np.array(
        [[joint_position(j, t, k) for j in spec.joints] for t in range(spec.frames)]
    )
    frames, depths, flows, scene_flows, skeletons = [], [], [], [], []
    for t in range(spec.frames):
        intensity, depth, owner = _render(spec, centres[t], texture)
        frames.append(FrameGray(intensity))
        depths.append(DepthFrame(depth))
        if t + 1 < spec.frames:
            flow, scene_flow = _motion_fields(spec, depth, owner, centres[t + 1] - centres[t])
            flows.append(flow)
            scene_flows.append(scene_flow)
        joints = []
        for joint, (X, Y, Z) in zip(spec.joints, centres[t]):
            if not joint.in_skeleton:
                continue
            joints.append(
                {
                    "id": joint.joint_id,
                    "x": float(X * k.fx / Z + k.cx),
                    "y": float(Y * k.fy / Z + k.cy),
                    "X": float(X),
                    "Y": float(Y),
                    "Z": float(Z),
                }
            )
        skeletons.append({"frame": t, "joints": joints})
    return SynthSequence(frames, depths, flows, scene_flows, skeletons, spec.label, k)


# presets


def _sway(rng: np.random.Generator, direction, amplitude: float = 3.0) -> MotionProgram:
    return MotionProgram(
        "lateral",
        direction,
        amplitude * rng.uniform(0.8, 1.2),
        rng.uniform(8.0, 12.0),
        rng.uniform(0, 2 * math.pi),
    )


def _bob(rng: np.random.Generator, amplitude: float = 0.04) -> MotionProgram:
    return MotionProgram(
        "radial",
        (0.0, 0.0),
        amplitude * rng.uniform(0.8, 1.2),
        rng.uniform(8.0, 12.0),
        rng.uniform(0, 2 * math.pi),
    )


_PATTERNS = {"horizontal": (1.0, 0.0), "vertical": (0.0, 1.0), "diagonal": (1.0, 1.0)}


def _body(head, left, right, moves: Dict[int, Tuple[MotionProgram, ...]]) -> List[JointSpec]:
    names = {1: "head", 2: "left_hand", 3: "right_hand"}
    return [
        JointSpec(joint_id, x, y, motions=moves.get(joint_id, ()), name=names[joint_id])
        for joint_id, (x, y) in zip((1, 2, 3), (head, left, right))
    ]


def preset_classes(name: str) -> List[str]:
    if name in ("local_vs_global", "background"):
        return [f"{hand}_{pattern}" for hand in ("left", "right") for pattern in _PATTERNS]
    if name == "radial":
        return ["left_horizontal", "left_horizontal_radial", "right_vertical", "right_vertical_radial"]
    raise ParameterError(f"Unknown preset {name!r}, expected one of {PRESETS}")


def preset_spec(name: str, label: str, rng: np.random.Generator, subject: int = 0, frames: int = 24) -> SynthSpec:
    """One video of a preset class; rng draws the per-video motion jitter."""
    if label not in preset_classes(name):
        raise ParameterError(f"Preset {name!r} has no class {label!r}")
    hand, _, rest = label.partition("_")
    joint_id = 2 if hand == "left" else 3
    if name == "radial":
        pattern = rest.replace("_radial", "")
        moves = [_sway(rng, _PATTERNS[pattern])]
        if rest.endswith("_radial"):
            moves.append(_bob(rng))
        joints = _body((63.5, 13.5), (49.5, 35.5), (77.5, 35.5), {joint_id: tuple(moves)})
    else:
        joints = _body((22.0, 14.0), (12.0, 46.0), (34.0, 46.0), {joint_id: (_sway(rng, _PATTERNS[rest]),)})
    if name == "background":
        distractor = MotionProgram("triangle", (1.0, 0.0), 8.0, 2.0, 0.0)
        joints.append(
            JointSpec(0, 100.0, 36.0, half_size=24.0, motions=(distractor,), in_skeleton=False, name="distractor")
        )
    return SynthSpec(frames=frames, joints=joints, label=label, subject=subject)


def preset_dataset(name: str, videos: int, seed: int, subjects: int = 4, frames: int = 24) -> List[Tuple[str, SynthSpec]]:
    """(video id, spec) pairs cycling through the preset's classes."""
    classes = preset_classes(name)
    if videos < len(classes):
        raise ParameterError(f"Preset {name!r} needs at least {len(classes)} videos, got {videos}")
    dataset = []
    for index in range(videos):
        label = classes[index % len(classes)]
        subject = (index // len(classes)) % subjects
        spec = preset_spec(name, label, derive_rng(seed, 1, index), subject, frames)
        dataset.append((f"v{index:04d}", spec))
    log.info(f"Prepared {videos} {name} videos over {len(classes)} classes")
    return dataset


def subject_split(specs: Sequence[Tuple[str, SynthSpec]], subjects: int = 4) -> Dict[str, List[str]]:
    """Cross-subject protocol: the first half of the subjects trains, the rest tests."""
    train_subjects = set(range((subjects + 1) // 2))
    train = [vid for vid, spec in specs if spec.subject in train_subjects]
    test = [vid for vid, spec in specs if spec.subject not in train_subjects]
    return {"train": train, "test": test}


def inject_noise_trajectories(features, fraction: float, seed: int):
    """Append random descriptor rows assigned to random joints.

    The number of added rows is round(fraction * M) for M existing rows. Rows
    are L1-normalized uniform noise standing in for uninformative trajectories.
    """
    if not 0 <= fraction < 1:
        raise ParameterError(f"Noise fraction must be in [0, 1), got {fraction}")
    count = int(round(fraction * features.count))
    if count == 0 or not len(features.joint_ids):
        return features
    rng = derive_rng(seed, 2)
    joints = rng.choice(np.asarray(features.joint_ids), count)
    descriptors = {}
    for kind, block in features.descriptors.items():
        noise = rng.random((count, block.shape[1]))
        noise /= noise.sum(axis=1, keepdims=True)
        descriptors[kind] = np.concatenate([block, noise.astype(block.dtype)])
    points = np.zeros((count,) + features.points.shape[1:])
    pixel_track = None
    if features.pixel_track is not None:
        pixel_track = np.concatenate([features.pixel_track, np.zeros((count,) + features.pixel_track.shape[1:])])
    return replace(
        features,
        t0=np.concatenate([features.t0, np.zeros(count, dtype=features.t0.dtype)]),
        points=np.concatenate([features.points, points]),
        pixel_track=pixel_track,
        assignment=np.concatenate([features.assignment, joints.astype(features.assignment.dtype)]),
        distances=np.concatenate([features.distances, np.zeros(count)]),
        descriptors=descriptors,
    )
